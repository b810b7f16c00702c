//! Layer descriptions. Layers hold names and dimensions only; their tensors live in a
//! [`ParamStore`] so that checkpointing, optimisation and precision casts work on one table.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Padding, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named parameter table, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    map: BTreeMap<String, Arc<Tensor<T>>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), Arc::new(t));
    }

    pub fn get(&self, name: &str) -> Result<&Arc<Tensor<T>>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Zeroes every parameter whose name starts with `prefix`; returns how many were hit.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, v) in self.map.iter_mut() {
            if k.starts_with(prefix) {
                Arc::make_mut(v).data_mut().fill(T::zero());
                n += 1;
            }
        }
        n
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.cast())))
                .collect(),
        }
    }

    pub(crate) fn var(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(g.param(name, self.get(name)?))
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (1.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Plain 1D convolution (used for output projections).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: Padding,
}

impl Conv1d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        padding: Padding,
    ) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel_size,
            padding,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        let fan_in = self.in_channels * self.kernel_size;
        let w = uniform_init(
            rng,
            &[self.out_channels, self.in_channels, self.kernel_size],
            fan_in,
        );
        let b = uniform_init(rng, &[self.out_channels], fan_in);
        params.insert(self.weight_name(), w);
        params.insert(self.bias_name(), b);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = p.var(g, &self.weight_name())?;
        let b = p.var(g, &self.bias_name())?;
        g.conv1d(x, w, b, self.padding)
    }

    /// Number of past frames (inclusive of the current one) an output depends on.
    pub fn receptive_field(&self) -> usize {
        self.kernel_size
    }
}

/// 1D convolution with a gated linear unit: the convolution produces `2·out` channels
/// `[a; b]` and the layer returns `a ⊗ σ(b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGlu {
    pub conv: Conv1d,
}

impl ConvGlu {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        padding: Padding,
    ) -> Self {
        Self {
            conv: Conv1d::new(name, in_channels, 2 * out_channels, kernel_size, padding),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels / 2
    }

    pub fn kernel_size(&self) -> usize {
        self.conv.kernel_size
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        self.conv.init(params, rng);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        g.glu(h)
    }
}

/// Stack of [`ConvGlu`] layers. With `residual`, layers whose input and output widths agree
/// add their input back.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGluStack {
    pub layers: Vec<ConvGlu>,
    pub residual: bool,
}

impl ConvGluStack {
    /// Builds `kernels.len()` layers: `in_channels → width → … → width`.
    pub fn new(
        name: &str,
        in_channels: usize,
        width: usize,
        kernels: &[usize],
        padding: Padding,
        residual: bool,
    ) -> Self {
        let layers = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let cin = if i == 0 { in_channels } else { width };
                ConvGlu::new(format!("{name}.{i}"), cin, width, k, padding)
            })
            .collect();
        Self { layers, residual }
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let y = l.forward(g, p, h)?;
            h = if self.residual && l.in_channels() == l.out_channels() {
                g.add(h, y)?
            } else {
                y
            };
        }
        Ok(h)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, ConvGlu::out_channels)
    }

    /// Causal receptive field of the stack in frames.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| l.kernel_size() - 1)
            .sum::<usize>()
    }
}

/// Lookup table producing channels-first sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            vocab,
            dim,
        }
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        params.insert(self.name.clone(), uniform_init(rng, &[self.vocab, self.dim], 1));
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        ids: &[usize],
    ) -> Result<Var> {
        let table = p.var(g, &self.name)?;
        g.embedding(table, ids)
    }
}

/// Row-wise affine map `x[R × in] · W[in × out] + b[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        params.insert(
            format!("{}.weight", self.name),
            uniform_init(rng, &[self.in_dim, self.out_dim], self.in_dim),
        );
        params.insert(
            format!("{}.bias", self.name),
            uniform_init(rng, &[self.out_dim], self.in_dim),
        );
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = p.var(g, &format!("{}.weight", self.name))?;
        let b = p.var(g, &format!("{}.bias", self.name))?;
        let y = g.matmul(x, w)?;
        g.add_row_bias(y, b)
    }
}

/// Applies one ConvGLU layer to a concrete tensor outside any training graph.
pub fn conv_glu_forward<T: Scalar>(
    layer: &ConvGlu,
    params: &ParamStore<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.rows() != layer.in_channels() {
        return Err(Error::shape(
            "conv_glu_forward",
            format!("[{}, L]", layer.in_channels()),
            x.shape(),
        ));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = layer.forward(&mut g, params, xv)?;
    Ok(g.value(y).clone())
}
