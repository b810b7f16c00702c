//! Central-difference gradient verification.
//!
//! Checks run at `f64`: the graph code is generic over [`Scalar`], and `f32` central
//! differences cannot resolve a 1e-3 relative error on small gradient entries.

use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::rng::seeded;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// (input index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Largest total input size [`grad_check`] accepts without sub-sampling.
pub const MAX_ELEMENTS: usize = 1000;

/// Compares reverse-mode gradients of the scalar returned by `f` against central
/// differences for every element of `inputs`.
pub fn grad_check<F>(name: &str, f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync,
{
    let total: usize = inputs.iter().map(Tensor::len).sum();
    if total > MAX_ELEMENTS {
        return Err(Error::InvalidArgument(format!(
            "{name}: {total} input elements exceeds {MAX_ELEMENTS}; use grad_check_sampled"
        )));
    }
    let coords = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect::<Vec<_>>();
    grad_check_at(name, &f, inputs, eps, &coords)
}

/// Like [`grad_check`], but checks at most `max_coords` coordinates drawn with `seed`.
pub fn grad_check_sampled<F>(
    name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync,
{
    let all = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect::<Vec<_>>();
    let n = max_coords.min(MAX_ELEMENTS).min(all.len());
    let mut idx = sample(&mut seeded(seed), all.len(), n).into_vec();
    idx.sort_unstable();
    let coords: Vec<_> = idx.into_iter().map(|i| all[i]).collect();
    grad_check_at(name, &f, inputs, eps, &coords)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::shape("grad_check", [1], t.shape()));
    }
    Ok(t.data()[0])
}

/// Checks the listed `(input index, element index)` coordinates against one analytic pass.
pub fn grad_check_at<F>(
    name: &str,
    f: &F,
    inputs: &[Tensor<f64>],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync,
{
    if !(1e-5..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "{name}: eps {eps} outside [1e-5, 1e-3]"
        )));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar(&g, out)?;
    let grads = g.backward(out).map_err(|e| match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{name}: {op}"),
        },
        other => other,
    })?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let numeric = crate::par::map_slice(coords, |&(i, j)| {
        let mut work = inputs.to_vec();
        let x0 = work[i].data()[j];
        let mut at = |d: f64| {
            work[i].data_mut()[j] = x0 + d;
            eval(f, &work)
        };
        let (fp2, fp, fm, fm2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
        // Fourth-order central difference.
        Ok::<_, Error>((8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * eps))
    });
    for (&(i, j), numeric) in coords.iter().zip(numeric) {
        let numeric = numeric?;
        let a = analytic[i].data()[j];
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{name}: gradient of input {i} element {j}"),
            });
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((i, j));
        }
        report.checked += 1;
    }
    Ok(report)
}
