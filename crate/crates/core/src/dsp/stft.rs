//! Centered short-time Fourier transform (Hann window, zero padding) and its
//! overlap-add inverse.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use crate::par;

pub const N_FFT: usize = 1024;
pub const WIN: usize = 1024;
pub const HOP: usize = 256;
pub const N_BINS: usize = N_FFT / 2 + 1;

struct Plans {
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
}

fn plans() -> &'static Plans {
    static PLANS: OnceLock<Plans> = OnceLock::new();
    PLANS.get_or_init(|| {
        let mut planner = FftPlanner::new();
        Plans {
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
            window: hann(WIN),
        }
    })
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Number of centered frames for `len` samples.
pub fn frame_count(len: usize) -> usize {
    len / HOP + 1
}

/// Complex spectrum per frame, `frame_count(len)` rows of [`N_BINS`] bins.
/// Frame `l` is centered on sample `l · HOP`.
pub fn stft(samples: &[f32]) -> Vec<Vec<Complex32>> {
    let p = plans();
    let n = frame_count(samples.len());
    let half = (N_FFT / 2) as isize;
    par::map_range(n, |l| {
        let center = (l * HOP) as isize;
        let mut buf: Vec<Complex32> = (0..N_FFT)
            .map(|i| {
                let s = center - half + i as isize;
                let x = if s >= 0 && (s as usize) < samples.len() {
                    samples[s as usize]
                } else {
                    0.0
                };
                Complex32::new(x * p.window[i], 0.0)
            })
            .collect();
        p.forward.process(&mut buf);
        buf.truncate(N_BINS);
        buf
    })
}

/// Inverse of [`stft`] by windowed overlap-add, returning `(frames − 1) · HOP` samples.
pub fn istft(spec: &[Vec<Complex32>]) -> Vec<f32> {
    let p = plans();
    let frames = spec.len();
    if frames == 0 {
        return Vec::new();
    }
    let padded = (frames - 1) * HOP + N_FFT;
    let blocks: Vec<Vec<f32>> = par::map_slice(spec, |bins| {
        let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
        buf[..N_BINS].copy_from_slice(&bins[..N_BINS]);
        for k in 1..N_FFT / 2 {
            buf[N_FFT - k] = bins[k].conj();
        }
        p.inverse.process(&mut buf);
        let scale = 1.0 / N_FFT as f32;
        buf.iter()
            .zip(&p.window)
            .map(|(c, w)| c.re * scale * w)
            .collect()
    });
    let mut out = vec![0.0f32; padded];
    let mut norm = vec![0.0f32; padded];
    for (l, block) in blocks.iter().enumerate() {
        let off = l * HOP;
        for i in 0..N_FFT {
            out[off + i] += block[i];
            norm[off + i] += p.window[i] * p.window[i];
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-8 {
            *o /= n;
        }
    }
    let start = N_FFT / 2;
    out[start..start + (frames - 1) * HOP].to_vec()
}
