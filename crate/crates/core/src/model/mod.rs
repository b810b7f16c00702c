//! The acoustic model, its training loop, the synthetic corpus and the reconstruction
//! analysis.

pub mod acoustic;
pub mod analysis;
pub mod config;
pub mod corpus;
pub mod train;

pub use acoustic::{AcousticModel, Branches, Conditioning, SynthesisResult, TokenOverride};
pub use analysis::{reconstruct, reconstruction_analysis, reconstruction_analysis_on, ReconstructionReport};
pub use config::ModelConfig;
pub use corpus::{generate_synthetic_corpus, generate_synthetic_corpus_with, render_plain, CorpusOptions, SyntheticSong};
pub use train::{Example, StepReport, Trainer};
