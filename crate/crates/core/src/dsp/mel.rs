//! 128-band log-amplitude mel spectrograms and the `SVSMEL1` file format.

use std::path::Path;
use std::sync::OnceLock;

use super::stft::{self, N_BINS, N_FFT};
use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::score::SAMPLE_RATE;

pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 11_025.0;
pub const LOG_FLOOR: f32 = 1e-5;
pub const MEL_MAGIC: &[u8; 7] = b"SVSMEL1";

/// Natural log of the amplitude floor; silent frames sit exactly here.
pub fn log_floor() -> f32 {
    LOG_FLOOR.ln()
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

pub fn hz_to_mel(hz: f64) -> f64 {
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (logstep * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Band edge frequencies: `n_mels + 2` points evenly spaced on the mel scale.
pub fn band_edges(n_mels: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filter response of band `b` at frequency `hz`, area-normalised.
pub fn filter_weight(edges: &[f64], b: usize, hz: f64) -> f64 {
    let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
    let rise = (hz - lo) / (mid - lo);
    let fall = (hi - hz) / (hi - mid);
    rise.min(fall).max(0.0) * 2.0 / (hi - lo)
}

/// `[N_MELS × N_BINS]` filterbank, row-major.
pub fn filterbank() -> &'static [f32] {
    static FB: OnceLock<Vec<f32>> = OnceLock::new();
    FB.get_or_init(|| {
        let edges = band_edges(N_MELS);
        let mut fb = vec![0.0f32; N_MELS * N_BINS];
        for b in 0..N_MELS {
            for k in 0..N_BINS {
                let hz = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                fb[b * N_BINS + k] = filter_weight(&edges, b, hz) as f32;
            }
        }
        fb
    })
}

/// Log-amplitude mel spectrogram, `[L × N_MELS]`, 22,050 Hz, hop 256, window 1024.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(Error::shape("mel", "[L, n_mels]", frames.shape()));
        }
        frames.check_finite("mel")?;
        Ok(Self { frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, l: usize) -> &[f32] {
        self.frames.row(l)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(15 + 4 * self.frames.len());
        b.extend_from_slice(MEL_MAGIC);
        b.extend_from_slice(&(self.n_frames() as u32).to_le_bytes());
        b.extend_from_slice(&(self.n_mels() as u32).to_le_bytes());
        for &x in self.frames.data() {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 15 || &bytes[..7] != MEL_MAGIC {
            return Err(Error::Format("not a mel file (bad magic)".into()));
        }
        let l = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
        let m = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes")) as usize;
        let body = &bytes[15..];
        if l == 0 || m == 0 || body.len() != l * m * 4 {
            return Err(Error::Format(format!(
                "mel file declares {l}x{m} but carries {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(Tensor::new(&[l, m], data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Magnitude spectrum per frame projected onto the filterbank, then `ln(max(·, 1e-5))`.
pub fn mel_analyze(w: &Waveform) -> Result<MelSpectrogram> {
    if w.samples.len() < stft::WIN {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for analysis, got {}",
            stft::WIN,
            w.samples.len()
        )));
    }
    let spec = stft::stft(&w.samples);
    let fb = filterbank();
    let l = spec.len();
    let mut data = vec![0.0f32; l * N_MELS];
    for (row, bins) in data.chunks_mut(N_MELS).zip(&spec) {
        let mag: Vec<f32> = bins.iter().map(|c| c.norm()).collect();
        for (b, out) in row.iter_mut().enumerate() {
            let w = &fb[b * N_BINS..(b + 1) * N_BINS];
            let e: f32 = w.iter().zip(&mag).map(|(a, m)| a * m).sum();
            *out = e.max(LOG_FLOOR).ln();
        }
    }
    MelSpectrogram::new(Tensor::new(&[l, N_MELS], data)?)
}
