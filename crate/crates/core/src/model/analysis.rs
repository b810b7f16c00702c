use serde::Serialize;

use super::acoustic::{AcousticModel, Conditioning};
use super::corpus::generate_synthetic_corpus;
use crate::dpe::PitchPath;
use crate::dsp::vocoder::{vocode_seeded, DEFAULT_ITERATIONS};
use crate::dsp::{extract_f0, f0_rmse_vuv, mcd, MelSpectrogram};
use crate::error::Result;
use crate::score::{MusicScore, PhonemeInventory};

/// Averages over the analysed songs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub mcd_db: f64,
    pub f0_rmse_hz: f64,
    pub vuv_percent: f64,
    pub samples: usize,
}

/// Outputs of one generate → extract → regenerate round.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub first: MelSpectrogram,
    pub second: MelSpectrogram,
    pub mcd_db: f64,
    pub f0_rmse_hz: f64,
    pub vuv_percent: f64,
}

/// Generates via the MIDI path, extracts f0 from the vocoded result, regenerates via the
/// f0 path and compares the two outputs.
pub fn reconstruct(model: &AcousticModel, score: &MusicScore, seed: u64) -> Result<Reconstruction> {
    let inputs = score.expand(&PhonemeInventory::default())?;
    let none = Conditioning::default();
    let first = model.synthesize(&inputs, PitchPath::Midi, None, &none, seed)?;
    let w1 = vocode_seeded(&first.mel, DEFAULT_ITERATIONS, seed)?;
    let f0_first = extract_f0(&w1);
    let second = model.synthesize(&inputs, PitchPath::F0, Some(&f0_first), &none, seed)?;
    let w2 = vocode_seeded(&second.mel, DEFAULT_ITERATIONS, seed)?;
    let f0_second = extract_f0(&w2);
    let (rmse, vuv) = f0_rmse_vuv(&f0_first, &f0_second)?;
    Ok(Reconstruction {
        mcd_db: mcd(&first.mel, &second.mel)?,
        first: first.mel,
        second: second.mel,
        f0_rmse_hz: rmse,
        vuv_percent: vuv,
    })
}

/// Runs [`reconstruct`] on `n_samples` corpus scores drawn from `seed` and averages.
pub fn reconstruction_analysis(
    model: &AcousticModel,
    n_samples: usize,
    seed: u64,
) -> Result<ReconstructionReport> {
    let songs = generate_synthetic_corpus(n_samples, seed)?;
    let scores: Vec<MusicScore> = songs.into_iter().map(|s| s.score).collect();
    reconstruction_analysis_on(model, &scores, seed)
}

pub fn reconstruction_analysis_on(
    model: &AcousticModel,
    scores: &[MusicScore],
    seed: u64,
) -> Result<ReconstructionReport> {
    let runs = crate::par::map_slice(scores, |s| reconstruct(model, s, seed));
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let n = runs.len().max(1) as f64;
    Ok(ReconstructionReport {
        mcd_db: runs.iter().map(|r| r.mcd_db).sum::<f64>() / n,
        f0_rmse_hz: runs.iter().map(|r| r.f0_rmse_hz).sum::<f64>() / n,
        vuv_percent: runs.iter().map(|r| r.vuv_percent).sum::<f64>() / n,
        samples: runs.len(),
    })
}
