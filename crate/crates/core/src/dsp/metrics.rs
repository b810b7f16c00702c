//! Mel-cepstral distortion and f0 error metrics on aligned frame grids.

use super::mel::{mel_analyze, MelSpectrogram};
use super::wav::Waveform;
use crate::dpe::F0Contour;
use crate::error::{Error, Result};

pub const N_CEPS: usize = 13;

/// Coefficients `c1..c13` of the orthonormal DCT-II of one log-mel frame.
pub fn mel_cepstrum(frame: &[f32]) -> [f64; N_CEPS] {
    let n = frame.len() as f64;
    let scale = (2.0 / n).sqrt();
    let mut c = [0.0; N_CEPS];
    for (i, ci) in c.iter_mut().enumerate() {
        let k = (i + 1) as f64;
        *ci = scale
            * frame
                .iter()
                .enumerate()
                .map(|(j, &x)| x as f64 * (std::f64::consts::PI * k * (2.0 * j as f64 + 1.0) / (2.0 * n)).cos())
                .sum::<f64>();
    }
    c
}

/// Mean over frames of `(10 / ln 10) · √(2 Σ (c_i − c'_i)²)`, in dB.
pub fn mcd(reference: &MelSpectrogram, estimate: &MelSpectrogram) -> Result<f64> {
    if reference.frames.shape() != estimate.frames.shape() {
        return Err(Error::shape("mcd", reference.frames.shape(), estimate.frames.shape()));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let l = reference.n_frames();
    let total: f64 = (0..l)
        .map(|t| {
            let a = mel_cepstrum(reference.frame(t));
            let b = mel_cepstrum(estimate.frame(t));
            let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            k * (2.0 * d2).sqrt()
        })
        .sum();
    Ok(total / l as f64)
}

pub fn mcd_waveform(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    mcd(&mel_analyze(reference)?, &mel_analyze(estimate)?)
}

/// `(rmse_hz, vuv_percent)`. RMSE covers frames voiced in both contours and is 0 when
/// there are none.
pub fn f0_rmse_vuv(reference: &F0Contour, estimate: &F0Contour) -> Result<(f64, f64)> {
    if reference.len() != estimate.len() {
        return Err(Error::shape("f0_rmse_vuv", reference.len(), estimate.len()));
    }
    if reference.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut sq = 0.0;
    let mut both = 0usize;
    let mut mismatch = 0usize;
    for (&a, &b) in reference.values.iter().zip(&estimate.values) {
        match (a > 0.0, b > 0.0) {
            (true, true) => {
                sq += (a - b) * (a - b);
                both += 1;
            }
            (x, y) if x != y => mismatch += 1,
            _ => {}
        }
    }
    let rmse = if both > 0 { (sq / both as f64).sqrt() } else { 0.0 };
    Ok((rmse, 100.0 * mismatch as f64 / reference.len() as f64))
}
