//! Mel-to-waveform inversion: pseudo-inverse of the filterbank, then Griffin-Lim phase
//! reconstruction.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rustfft::num_complex::Complex32;

use super::mel::{filterbank, log_floor, MelSpectrogram, N_MELS};
use super::stft::{self, N_BINS};
use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::nn::rng::seeded;

pub const DEFAULT_ITERATIONS: usize = 32;
pub const DEFAULT_PHASE_SEED: u64 = 0;

/// `[N_BINS × N_MELS]` Moore–Penrose pseudo-inverse of the filterbank.
fn inverse_filterbank() -> &'static [f32] {
    static INV: OnceLock<Vec<f32>> = OnceLock::new();
    INV.get_or_init(|| {
        let fb = filterbank();
        let m = DMatrix::from_fn(N_MELS, N_BINS, |r, c| fb[r * N_BINS + c] as f64);
        let pinv = m
            .pseudo_inverse(1e-10)
            .expect("filterbank pseudo-inverse");
        let mut out = vec![0.0f32; N_BINS * N_MELS];
        for k in 0..N_BINS {
            for b in 0..N_MELS {
                out[k * N_MELS + b] = pinv[(k, b)] as f32;
            }
        }
        out
    })
}

/// Approximate linear magnitudes per frame. Bands at the log floor count as silent.
pub fn mel_to_linear(m: &MelSpectrogram) -> Result<Vec<Vec<f32>>> {
    if m.n_mels() != N_MELS {
        return Err(Error::shape("vocode", [m.n_frames(), N_MELS], m.frames.shape()));
    }
    let inv = inverse_filterbank();
    let floor = log_floor();
    Ok((0..m.n_frames())
        .map(|l| {
            let amp: Vec<f32> = m
                .frame(l)
                .iter()
                .map(|&v| if v <= floor { 0.0 } else { v.exp() })
                .collect();
            (0..N_BINS)
                .map(|k| {
                    let row = &inv[k * N_MELS..(k + 1) * N_MELS];
                    row.iter().zip(&amp).map(|(a, b)| a * b).sum::<f32>().max(0.0)
                })
                .collect()
        })
        .collect())
}

/// Inverts a mel spectrogram with `iterations` rounds of Griffin-Lim.
/// Output length is `(L − 1) · 256` samples.
pub fn vocode(m: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    vocode_seeded(m, iterations, DEFAULT_PHASE_SEED)
}

pub fn vocode_seeded(m: &MelSpectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    let mags = mel_to_linear(m)?;
    let mut rng = seeded(seed);
    let mut spec: Vec<Vec<Complex32>> = mags
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|&a| Complex32::from_polar(a, rng.gen_range(0.0..std::f32::consts::TAU)))
                .collect()
        })
        .collect();
    let mut signal = stft::istft(&spec);
    for _ in 0..iterations {
        let rebuilt = stft::stft(&signal);
        for ((frame, target), est) in spec.iter_mut().zip(&mags).zip(&rebuilt) {
            for ((c, &a), e) in frame.iter_mut().zip(target).zip(est) {
                let n = e.norm();
                *c = if n > 1e-12 {
                    e * (a / n)
                } else {
                    Complex32::new(a, 0.0)
                };
            }
        }
        signal = stft::istft(&spec);
    }
    Ok(Waveform::clipped(signal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn floor_mel_is_silent() {
        let m = MelSpectrogram::new(Tensor::full(&[20, N_MELS], log_floor())).unwrap();
        let w = vocode(&m, 4).unwrap();
        assert!(w.rms() < 1e-3);
    }

    #[test]
    fn output_length_contract() {
        let m = MelSpectrogram::new(Tensor::full(&[11, N_MELS], -3.0)).unwrap();
        let w = vocode(&m, 2).unwrap();
        assert_eq!(w.len(), 10 * 256);
    }

    #[test]
    fn wrong_band_count_rejected() {
        let m = MelSpectrogram::new(Tensor::full(&[4, 80], -3.0)).unwrap();
        assert!(vocode(&m, 1).is_err());
    }
}
