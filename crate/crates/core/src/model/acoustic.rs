//! Source–filter acoustic model: `M̂ = D_F(E_t, [E_s; T_t]) + D_S(E_m, E_p, [E_s; T_p])`.
//!
//! All sequences inside the graph are channels-first `[C × L]`. The filter decoder sees
//! text content, singer and text-side style tokens; the source decoder sees the embedded
//! previous mel frame, the pitch encoding, singer and pitch-side style tokens. Both are
//! causal ConvGLU stacks, so free-running decoding only needs a window of
//! [`ModelConfig::source_receptive_field`] frames per step.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::dpe::{DualPitchEncoder, F0Contour, PitchPath};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::lst::{LocalStyleTokens, Side, StyleScore, StyleScores};
use crate::nn::rng::seeded;
use crate::nn::{
    Checkpoint, Conv1d, ConvGlu, ConvGluStack, Embedding, Graph, Padding, ParamStore, Scalar,
    Tensor, Var,
};
use crate::score::FrameInputs;

/// Scale applied to previous mel frames before the source prenet.
pub const PREV_FRAME_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub text_embedding: Embedding,
    pub text_encoder: ConvGluStack,
    pub singer_embedding: Embedding,
    pub singer_proj: Conv1d,
    pub pitch: DualPitchEncoder,
    pub text_lst: Option<LocalStyleTokens>,
    pub pitch_lst: Option<LocalStyleTokens>,
    pub filter: ConvGluStack,
    pub filter_out: Conv1d,
    pub prenet: ConvGlu,
    pub source: ConvGluStack,
    pub source_out: Conv1d,
}

/// Channels-first token sequences replacing `T` on each side.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenOverride {
    pub text: Tensor<f32>,
    pub pitch: Option<Tensor<f32>>,
}

/// Optional replacements for the style path during decoding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Conditioning<'a> {
    /// Replaces `S`; `T` is recomputed as `S·V`.
    pub style: Option<&'a StyleScores>,
    /// Replaces `T` directly, bypassing `S`.
    pub tokens: Option<&'a TokenOverride>,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Branches {
    pub filter: Var,
    pub source: Var,
    pub total: Var,
    pub text_scores: Option<Var>,
    pub pitch_scores: Option<Var>,
}

struct Encoded {
    filter: Var,
    source_cond: Var,
    text_scores: Option<Var>,
    pitch_scores: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub mel: MelSpectrogram,
    /// Scores that produced the style tokens; `None` without style tokens.
    pub style_scores: Option<StyleScores>,
    pub pitch_path: PitchPath,
    pub seed: u64,
    /// Filter-decoder branch `[L × n_mels]`.
    pub filter: Tensor<f32>,
    /// Source-decoder branch `[L × n_mels]`.
    pub source: Tensor<f32>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: ModelConfig,
}

const CHECKPOINT_KIND: &str = "svs-acoustic-model";

impl AcousticModel {
    /// Layer layout without parameters.
    pub fn layout(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let w = c.decoder_width;
        let dec_kernels = vec![c.decoder_kernel; c.decoder_layers];
        let text_lst = c.use_lst.then(|| {
            LocalStyleTokens::new(
                "lst.text",
                Side::Text,
                c.d_text,
                c.d_singer,
                c.d_style,
                c.n_tokens,
                &c.style_kernels,
            )
        });
        let pitch_lst = (c.use_lst && c.pitch_side_lst).then(|| {
            LocalStyleTokens::new(
                "lst.pitch",
                Side::Pitch,
                c.d_pitch,
                c.d_singer,
                c.d_style,
                c.n_tokens,
                &c.style_kernels,
            )
        });
        let style_t = if text_lst.is_some() { c.d_style } else { 0 };
        let style_p = if pitch_lst.is_some() { c.d_style } else { 0 };
        Ok(Self {
            text_embedding: Embedding::new("text.embedding", c.n_phonemes, c.d_text),
            text_encoder: ConvGluStack::new(
                "text.convs",
                c.d_text,
                c.d_text,
                &c.encoder_kernels,
                Padding::Same,
                true,
            ),
            singer_embedding: Embedding::new("singer.embedding", c.n_singers, c.d_singer),
            singer_proj: Conv1d::new("singer.proj", c.d_singer, c.d_singer, 1, Padding::Same),
            pitch: DualPitchEncoder::new("pitch", c.d_pitch, &c.encoder_kernels),
            text_lst,
            pitch_lst,
            filter: ConvGluStack::new(
                "decoder.filter.convs",
                c.d_text + c.d_singer + style_t,
                w,
                &dec_kernels,
                Padding::Causal,
                true,
            ),
            filter_out: Conv1d::new("decoder.filter.out", w, c.n_mels, 1, Padding::Causal),
            prenet: ConvGlu::new("decoder.source.prenet", c.n_mels, w, 1, Padding::Causal),
            source: ConvGluStack::new(
                "decoder.source.convs",
                w + c.d_pitch + c.d_singer + style_p,
                w,
                &dec_kernels,
                Padding::Causal,
                true,
            ),
            source_out: Conv1d::new("decoder.source.out", w, c.n_mels, 1, Padding::Causal),
            params: ParamStore::new(),
            config,
        })
    }

    /// Freshly initialised model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::layout(config)?;
        let mut rng = seeded(seed);
        let mut p = ParamStore::new();
        m.text_embedding.init(&mut p, &mut rng);
        m.text_encoder.init(&mut p, &mut rng);
        m.singer_embedding.init(&mut p, &mut rng);
        m.singer_proj.init(&mut p, &mut rng);
        m.pitch.init(&mut p, &mut rng);
        if let Some(l) = &m.text_lst {
            l.init(&mut p, &mut rng);
        }
        if let Some(l) = &m.pitch_lst {
            l.init(&mut p, &mut rng);
        }
        m.filter.init(&mut p, &mut rng);
        m.filter_out.init(&mut p, &mut rng);
        m.prenet.init(&mut p, &mut rng);
        m.source.init(&mut p, &mut rng);
        m.source_out.init(&mut p, &mut rng);
        m.params = p;
        Ok(m)
    }

    /// Parameter-name prefix of each decoder branch.
    pub const FILTER_PREFIX: &'static str = "decoder.filter.";
    pub const SOURCE_PREFIX: &'static str = "decoder.source.";

    fn check_inputs(
        &self,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
    ) -> Result<()> {
        let l = inputs.len();
        if l == 0 {
            return Err(Error::InvalidArgument("empty frame inputs".into()));
        }
        if inputs.midi_pitch.len() != l {
            return Err(Error::shape("frame inputs", l, inputs.midi_pitch.len()));
        }
        if inputs.singer_id >= self.config.n_singers {
            return Err(Error::OutOfRange {
                what: "singer id",
                index: inputs.singer_id,
                limit: self.config.n_singers,
            });
        }
        if let Some(&bad) = inputs.phoneme_ids.iter().find(|&&p| p >= self.config.n_phonemes) {
            return Err(Error::OutOfRange {
                what: "phoneme id",
                index: bad,
                limit: self.config.n_phonemes,
            });
        }
        if path == PitchPath::F0 {
            let c = f0.ok_or_else(|| {
                Error::InvalidArgument("pitch path f0 needs an f0 contour".into())
            })?;
            if c.len() != l {
                return Err(Error::InvalidArgument(format!(
                    "f0 contour has {} frames but the score has {l}",
                    c.len()
                )));
            }
        }
        Ok(())
    }

    fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
        cond: &Conditioning,
    ) -> Result<Encoded> {
        self.check_inputs(inputs, path, f0)?;
        let l = inputs.len();
        let e_t = self.text_embedding.forward(g, p, &inputs.phoneme_ids)?;
        let e_t = self.text_encoder.forward(g, p, e_t)?;
        let e_s = self.singer_embedding.forward(g, p, &vec![inputs.singer_id; l])?;
        let e_s = self.singer_proj.forward(g, p, e_s)?;
        let e_p = match path {
            PitchPath::Midi => self.pitch.forward_midi(g, p, &inputs.midi_pitch)?,
            PitchPath::F0 => self.pitch.forward_f0(g, p, f0.expect("checked"))?,
        };

        let mut filter_in = vec![e_t, e_s];
        let mut source_cond = vec![e_p, e_s];
        let mut text_scores = None;
        let mut pitch_scores = None;
        if let Some(lst) = &self.text_lst {
            let (s, t) = self.style_side(g, p, lst, e_t, e_s, cond, Side::Text)?;
            text_scores = Some(s);
            filter_in.push(t);
        }
        if let Some(lst) = &self.pitch_lst {
            let (s, t) = self.style_side(g, p, lst, e_p, e_s, cond, Side::Pitch)?;
            pitch_scores = Some(s);
            source_cond.push(t);
        }
        let x = g.concat(&filter_in)?;
        let h = self.filter.forward(g, p, x)?;
        let filter = self.filter_out.forward(g, p, h)?;
        let source_cond = g.concat(&source_cond)?;
        Ok(Encoded {
            filter,
            source_cond,
            text_scores,
            pitch_scores,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn style_side<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        lst: &LocalStyleTokens,
        content: Var,
        singer: Var,
        cond: &Conditioning,
        side: Side,
    ) -> Result<(Var, Var)> {
        let style = cond.style.and_then(|s| s.get(side));
        if cond.style.is_some() && style.is_none() {
            return Err(Error::InvalidArgument(format!(
                "style override lacks the {side} side"
            )));
        }
        let (s, t) = lst.forward(g, p, content, singer, style)?;
        if let Some(tok) = cond.tokens {
            let over = match side {
                Side::Text => Some(&tok.text),
                Side::Pitch => tok.pitch.as_ref(),
            }
            .ok_or_else(|| {
                Error::InvalidArgument(format!("token override lacks the {side} side"))
            })?;
            if over.shape() != g.shape(t) {
                return Err(Error::shape("token override", g.shape(t), over.shape()));
            }
            return Ok((s, g.constant(over.cast())));
        }
        Ok((s, t))
    }

    fn source_branch<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        prev: Var,
        cond: Var,
    ) -> Result<Var> {
        let e_m = self.prenet.forward(g, p, prev)?;
        let x = g.concat(&[e_m, cond])?;
        let h = self.source.forward(g, p, x)?;
        self.source_out.forward(g, p, h)
    }

    /// Previous-frame input `[n_mels × L]`: a zero go-frame, then the scaled frames
    /// `0 .. L−1` of `mel`.
    pub fn previous_frames<T: Scalar>(mel: &MelSpectrogram) -> Tensor<T> {
        let (l, m) = (mel.n_frames(), mel.n_mels());
        let k = T::of(PREV_FRAME_SCALE);
        Tensor::from_fn(&[m, l], |i| {
            let (b, t) = (i / l, i % l);
            if t == 0 {
                T::zero()
            } else {
                T::of(mel.frames.at(t - 1, b) as f64) * k
            }
        })
    }

    /// Teacher-forced pass: the source decoder sees the ground-truth previous frames.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_teacher<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
        target: &MelSpectrogram,
        cond: &Conditioning,
    ) -> Result<Branches> {
        if target.n_frames() != inputs.len() || target.n_mels() != self.config.n_mels {
            return Err(Error::shape(
                "target mel",
                [inputs.len(), self.config.n_mels],
                target.frames.shape(),
            ));
        }
        let enc = self.encode(g, p, inputs, path, f0, cond)?;
        let prev = g.constant(Self::previous_frames(target));
        let source = self.source_branch(g, p, prev, enc.source_cond)?;
        let total = g.add(enc.filter, source)?;
        Ok(Branches {
            filter: enc.filter,
            source,
            total,
            text_scores: enc.text_scores,
            pitch_scores: enc.pitch_scores,
        })
    }

    /// Teacher-forced L1 loss graph.
    pub fn loss_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
        target: &MelSpectrogram,
    ) -> Result<Var> {
        let b = self.forward_teacher(g, p, inputs, path, f0, target, &Conditioning::default())?;
        let t: Tensor<T> = target.frames.transpose2().cast();
        g.l1_loss(b.total, &t)
    }

    /// Teacher-forced output `[L × n_mels]` in f32.
    pub fn predict_teacher(
        &self,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
        target: &MelSpectrogram,
    ) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let mut g = Graph::new();
        let b = self.forward_teacher(
            &mut g,
            &self.params,
            inputs,
            path,
            f0,
            target,
            &Conditioning::default(),
        )?;
        Ok((
            g.value(b.total).transpose2(),
            g.value(b.filter).transpose2(),
            g.value(b.source).transpose2(),
        ))
    }

    /// Free-running synthesis: each step feeds the frame generated before it.
    pub fn synthesize(
        &self,
        inputs: &FrameInputs,
        path: PitchPath,
        f0: Option<&F0Contour>,
        cond: &Conditioning,
        seed: u64,
    ) -> Result<SynthesisResult> {
        let p = &self.params;
        let mut g = Graph::<f32>::new();
        let enc = self.encode(&mut g, p, inputs, path, f0, cond)?;
        let l = inputs.len();
        let n_mels = self.config.n_mels;
        let filter = g.value(enc.filter).clone();
        let cond_t = g.value(enc.source_cond).clone();
        let c = cond_t.rows();
        let rf = self.config.source_receptive_field();
        let k = PREV_FRAME_SCALE as f32;

        let mut total = vec![0.0f32; l * n_mels];
        let mut source = vec![0.0f32; l * n_mels];
        for t in 0..l {
            let w0 = (t + 1).saturating_sub(rf);
            let wl = t + 1 - w0;
            let prev = Tensor::from_fn(&[n_mels, wl], |i| {
                let (b, j) = (i / wl, w0 + i % wl);
                if j == 0 {
                    0.0
                } else {
                    total[(j - 1) * n_mels + b] * k
                }
            });
            let win = Tensor::from_fn(&[c, wl], |i| cond_t.at(i / wl, w0 + i % wl));
            let mut sg = Graph::<f32>::new();
            let pv = sg.constant(prev);
            let cv = sg.constant(win);
            let out = self.source_branch(&mut sg, p, pv, cv)?;
            let out = sg.value(out);
            for b in 0..n_mels {
                let s = out.at(b, wl - 1);
                source[t * n_mels + b] = s;
                total[t * n_mels + b] = filter.at(b, t) + s;
            }
        }
        let mel = MelSpectrogram::new(Tensor::new(&[l, n_mels], total)?)?;

        let edited = |side: Side| {
            cond.style
                .and_then(|s| s.get(side))
                .map_or(false, |s| s.edited)
        };
        let to_score = |v: Var, side: Side| {
            let scores = match cond.style.and_then(|s| s.get(side)) {
                Some(s) => s.scores.clone(),
                None => g.value(v).clone(),
            };
            StyleScore {
                side,
                scores,
                edited: edited(side),
            }
        };
        let style_scores = enc.text_scores.map(|ts| StyleScores {
            text: to_score(ts, Side::Text),
            pitch: enc.pitch_scores.map(|ps| to_score(ps, Side::Pitch)),
        });
        Ok(SynthesisResult {
            mel,
            style_scores,
            pitch_path: path,
            seed,
            filter: filter.transpose2(),
            source: Tensor::new(&[l, n_mels], source)?,
        })
    }

    /// Values `V` of a side's style bank.
    pub fn style_values(&self, side: Side) -> Option<&Tensor<f32>> {
        let lst = match side {
            Side::Text => self.text_lst.as_ref(),
            Side::Pitch => self.pitch_lst.as_ref(),
        }?;
        lst.bank.values(&self.params).ok()
    }

    pub fn to_checkpoint(&self, training_step: u64, rng_state: Vec<u8>) -> Checkpoint {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
        };
        Checkpoint {
            params: self.params.clone(),
            training_step,
            rng_state,
            metadata: serde_json::to_string(&meta).expect("metadata serialises"),
            optimizer: None,
        }
    }

    /// Rebuilds a model from a checkpoint, checking every expected parameter and shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&ck.metadata)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "checkpoint holds `{}`, not an acoustic model",
                meta.kind
            )));
        }
        let reference = Self::new(meta.config, 0)?;
        for (name, t) in reference.params.iter() {
            let got = ck.params.get(name).map_err(|_| {
                Error::Format(format!("checkpoint is missing parameter `{name}`"))
            })?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if ck.params.len() != reference.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                ck.params.len(),
                reference.params.len()
            )));
        }
        Ok(Self {
            params: ck.params.clone(),
            ..reference
        })
    }
}
