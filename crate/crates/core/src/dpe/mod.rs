//! Dual-path pitch encoder: a MIDI encoder and an f0 encoder with the same stack shape,
//! interchangeable in the model's pitch slot.

pub mod contour;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use contour::{F0Contour, F0_MAX, F0_MIN};

use crate::error::{Error, Result};
use crate::nn::{ConvGluStack, Embedding, Graph, Padding, ParamStore, Scalar, Tensor, Var};
use crate::score::PITCH_VOCAB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchPath {
    Midi,
    F0,
}

impl std::fmt::Display for PitchPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PitchPath::Midi => "midi",
            PitchPath::F0 => "f0",
        })
    }
}

impl std::str::FromStr for PitchPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midi" => Ok(PitchPath::Midi),
            "f0" => Ok(PitchPath::F0),
            _ => Err(Error::InvalidArgument(format!(
                "pitch path must be `midi` or `f0`, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMode {
    Train,
    Infer,
}

/// Training draws MIDI with probability 0.5 from `rng`; inference returns `forced`.
pub fn select_path(
    mode: PathMode,
    rng: Option<&mut ChaCha8Rng>,
    forced: Option<PitchPath>,
) -> Result<PitchPath> {
    match mode {
        PathMode::Train => {
            let rng = rng.ok_or_else(|| {
                Error::InvalidArgument("training path selection needs an rng".into())
            })?;
            Ok(if rng.gen_bool(0.5) {
                PitchPath::Midi
            } else {
                PitchPath::F0
            })
        }
        PathMode::Infer => forced.ok_or_else(|| {
            Error::InvalidArgument("inference needs an explicit pitch path".into())
        }),
    }
}

/// Two input channels per frame: `log2(f0 / 440) / 4` clamped to `[-1, 1]` (0 when
/// unvoiced) and the voiced flag. Channels-first `[2 × L]`.
pub fn f0_features<T: Scalar>(c: &F0Contour) -> Result<Tensor<T>> {
    c.validate()?;
    let l = c.len();
    let mut data = vec![T::zero(); 2 * l];
    for (t, &v) in c.values.iter().enumerate() {
        if v > 0.0 {
            data[t] = T::of(((v / 440.0).log2() / 4.0).clamp(-1.0, 1.0));
            data[l + t] = T::one();
        }
    }
    Tensor::new(&[2, l], data)
}

/// Layer definitions for both pitch paths. Weights live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct DualPitchEncoder {
    pub midi_embedding: Embedding,
    pub midi: ConvGluStack,
    pub f0: ConvGluStack,
}

impl DualPitchEncoder {
    pub fn new(name: &str, d_pitch: usize, kernels: &[usize]) -> Self {
        Self {
            midi_embedding: Embedding::new(format!("{name}.midi.embedding"), PITCH_VOCAB, d_pitch),
            midi: ConvGluStack::new(
                &format!("{name}.midi.convs"),
                d_pitch,
                d_pitch,
                kernels,
                Padding::Same,
                true,
            ),
            f0: ConvGluStack::new(&format!("{name}.f0.convs"), 2, d_pitch, kernels, Padding::Same, true),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.midi.out_channels()
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        self.midi_embedding.init(params, rng);
        self.midi.init(params, rng);
        self.f0.init(params, rng);
    }

    /// `[d_pitch × L]` from MIDI ids (0–127, 128 = rest).
    pub fn forward_midi<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        ids: &[usize],
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty pitch sequence".into()));
        }
        let e = self.midi_embedding.forward(g, p, ids)?;
        self.midi.forward(g, p, e)
    }

    /// `[d_pitch × L]` from an f0 contour.
    pub fn forward_f0<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        contour: &F0Contour,
    ) -> Result<Var> {
        if contour.is_empty() {
            return Err(Error::InvalidArgument("empty f0 contour".into()));
        }
        let x = g.constant(f0_features(contour)?);
        self.f0.forward(g, p, x)
    }

    /// MIDI path output as `[L × d_pitch]`.
    pub fn encode_midi<T: Scalar>(&self, p: &ParamStore<T>, ids: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let y = self.forward_midi(&mut g, p, ids)?;
        Ok(g.value(y).transpose2())
    }

    /// f0 path output as `[L × d_pitch]`.
    pub fn encode_f0<T: Scalar>(&self, p: &ParamStore<T>, contour: &F0Contour) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let y = self.forward_f0(&mut g, p, contour)?;
        Ok(g.value(y).transpose2())
    }
}
