//! Signal processing: analysis, phase-reconstruction vocoder, f0 extraction and
//! editing, and evaluation metrics.

pub mod edit;
pub mod f0;
pub mod mel;
pub mod metrics;
pub mod stft;
pub mod vocoder;
pub mod wav;

pub use edit::{apply_f0_edits, F0Edit, F0EditScript};
pub use f0::extract_f0;
pub use mel::{mel_analyze, MelSpectrogram, N_MELS};
pub use metrics::{f0_rmse_vuv, mcd, mcd_waveform};
pub use vocoder::vocode;
pub use wav::Waveform;
