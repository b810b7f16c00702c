//! Frame-wise f0 estimation with the cumulative-mean-normalised difference function
//! (YIN). The integration window (the first half of each analysis frame) is centered on
//! `l · 256` like the mel analysis, so contour and mel frames describe the same instant.

use super::wav::Waveform;
use crate::dpe::{F0Contour, F0_MAX, F0_MIN};
use crate::par;
use crate::score::{HOP, SAMPLE_RATE};

/// Analysis frame length; the difference function integrates over half of it.
pub const FRAME: usize = 2048;
pub const THRESHOLD: f64 = 0.15;
/// Frames whose mean-square energy falls below this are unvoiced without further analysis.
pub const SILENCE_POWER: f64 = 1e-10;

pub fn extract_f0(w: &Waveform) -> F0Contour {
    let n = w.len() / HOP + 1;
    let sr = SAMPLE_RATE as f64;
    let tau_min = (sr / F0_MAX).floor() as usize;
    let tau_max = ((sr / F0_MIN).ceil() as usize).min(FRAME / 2 - 1);
    let values = par::map_range(n, |l| {
        let center = (l * HOP) as isize;
        let frame: Vec<f64> = (0..FRAME)
            .map(|i| {
                let s = center - (FRAME / 4) as isize + i as isize;
                if s >= 0 && (s as usize) < w.len() {
                    w.samples[s as usize] as f64
                } else {
                    0.0
                }
            })
            .collect();
        estimate(&frame, tau_min, tau_max)
            .map(|tau| sr / tau)
            .filter(|f| (F0_MIN..=F0_MAX).contains(f))
            .unwrap_or(0.0)
    });
    F0Contour { values }
}

/// Fractional period in samples, or `None` when the frame is not periodic enough.
fn estimate(frame: &[f64], tau_min: usize, tau_max: usize) -> Option<f64> {
    let win = frame.len() / 2;
    let power = frame[..win].iter().map(|x| x * x).sum::<f64>() / win as f64;
    if power < SILENCE_POWER {
        return None;
    }
    let mut d = vec![0.0; tau_max + 2];
    for (tau, dv) in d.iter_mut().enumerate().skip(1) {
        *dv = frame[..win]
            .iter()
            .zip(&frame[tau..tau + win])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    let mut cmnd = vec![1.0; tau_max + 2];
    let mut running = 0.0;
    for tau in 1..tau_max + 2 {
        running += d[tau];
        cmnd[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min.max(2);
    while tau <= tau_max {
        if cmnd[tau] < THRESHOLD {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            return Some(refine(&cmnd, tau));
        }
        tau += 1;
    }
    None
}

/// Parabolic interpolation around a local minimum.
fn refine(y: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= y.len() {
        return tau as f64;
    }
    let (a, b, c) = (y[tau - 1], y[tau], y[tau + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-12 {
        tau as f64
    } else {
        tau as f64 + 0.5 * (a - c) / denom
    }
}
