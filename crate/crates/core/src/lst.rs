//! Local style tokens: a frame-level query from content and singer embeddings attends
//! over a learned key/value bank, giving per-frame style scores `S` and the retrieved
//! token sequence `T = S·V`. Scores are the user-editable control surface.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    kernels, scaled_dot_attention, ConvGluStack, Graph, Padding, ParamStore, Scalar, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Text,
    Pitch,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Text => "text",
            Side::Pitch => "pitch",
        })
    }
}

/// `N` trainable keys and values of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBank {
    pub name: String,
    pub n_tokens: usize,
    pub dim: usize,
}

impl StyleBank {
    pub fn new(name: impl Into<String>, n_tokens: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            n_tokens,
            dim,
        }
    }

    pub fn key_name(&self) -> String {
        format!("{}.key", self.name)
    }

    pub fn value_name(&self) -> String {
        format!("{}.value", self.name)
    }

    /// Standard normal entries scaled by `1/√d`.
    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        let normal = Normal::new(0.0f32, 1.0 / (self.dim as f32).sqrt()).expect("valid std");
        for name in [self.key_name(), self.value_name()] {
            params.insert(
                name,
                Tensor::from_fn(&[self.n_tokens, self.dim], |_| normal.sample(rng)),
            );
        }
    }

    pub fn keys<'a, T: Scalar>(&self, p: &'a ParamStore<T>) -> Result<&'a Tensor<T>> {
        Ok(p.get(&self.key_name())?.as_ref())
    }

    pub fn values<'a, T: Scalar>(&self, p: &'a ParamStore<T>) -> Result<&'a Tensor<T>> {
        Ok(p.get(&self.value_name())?.as_ref())
    }
}

/// Style encoder plus bank for one side of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStyleTokens {
    pub side: Side,
    pub encoder: ConvGluStack,
    pub bank: StyleBank,
}

impl LocalStyleTokens {
    pub fn new(
        name: &str,
        side: Side,
        content_dim: usize,
        singer_dim: usize,
        d_style: usize,
        n_tokens: usize,
        kernels: &[usize],
    ) -> Self {
        Self {
            side,
            encoder: ConvGluStack::new(
                &format!("{name}.encoder"),
                content_dim + singer_dim,
                d_style,
                kernels,
                Padding::Same,
                false,
            ),
            bank: StyleBank::new(format!("{name}.bank"), n_tokens, d_style),
        }
    }

    pub fn init(&self, params: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) {
        self.encoder.init(params, rng);
        self.bank.init(params, rng);
    }

    /// Query `[d × L]` from channels-first content `[d_c × L]` and the singer embedding
    /// broadcast over frames `[d_s × L]`.
    pub fn query<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        content: Var,
        singer: Var,
    ) -> Result<Var> {
        let x = g.concat(&[content, singer])?;
        self.encoder.forward(g, p, x)
    }

    /// Returns `S [L × N]` and channels-first `T [d × L]`. With `override_scores`, `S`
    /// is that constant and only `T = S·V` is computed.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        content: Var,
        singer: Var,
        override_scores: Option<&StyleScore>,
    ) -> Result<(Var, Var)> {
        let v = p.var(g, &self.bank.value_name())?;
        let (s, t) = match override_scores {
            Some(score) => {
                let l = g.shape(content)[1];
                if score.frames() != l || score.n_tokens() != self.bank.n_tokens {
                    return Err(Error::shape(
                        "style override",
                        [l, self.bank.n_tokens],
                        score.scores.shape(),
                    ));
                }
                let s = g.constant(score.scores.cast());
                let t = g.matmul(s, v)?;
                (s, t)
            }
            None => {
                let q = self.query(g, p, content, singer)?;
                let q = g.transpose(q)?;
                let k = p.var(g, &self.bank.key_name())?;
                scaled_dot_attention(g, q, k, v)?
            }
        };
        let t = g.transpose(t)?;
        Ok((s, t))
    }
}

/// Query sequence `[L × d]` for content `[L × d_c]` and singer vector `[d_s]`.
pub fn style_encode<T: Scalar>(
    lst: &LocalStyleTokens,
    p: &ParamStore<T>,
    content: &Tensor<T>,
    singer: &Tensor<T>,
) -> Result<Tensor<T>> {
    if content.rank() != 2 || content.rows() == 0 {
        return Err(Error::shape("style_encode", "[L, d_c]", content.shape()));
    }
    let mut g = Graph::new();
    let c = g.constant(content.transpose2());
    let s = g.constant(singer.clone());
    let s = g.broadcast_cols(s, content.rows())?;
    let q = lst.query(&mut g, p, c, s)?;
    Ok(g.value(q).transpose2())
}

/// Attention of `q [L × d]` over the bank: the score matrix and the retrieved sequence.
pub fn compute_style(
    q: &Tensor<f32>,
    bank: &StyleBank,
    p: &ParamStore<f32>,
    side: Side,
) -> Result<(StyleScore, StyleTokenSequence)> {
    let (s, t) = crate::nn::attention(q, bank.keys(p)?, bank.values(p)?)?;
    Ok((
        StyleScore {
            side,
            scores: s,
            edited: false,
        },
        StyleTokenSequence { tokens: t },
    ))
}

/// `T [L × d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTokenSequence {
    pub tokens: Tensor<f32>,
}

/// `T = S·V` for a (possibly edited) score.
pub fn retrieve(score: &StyleScore, values: &Tensor<f32>) -> Result<StyleTokenSequence> {
    if values.rank() != 2 || values.rows() != score.n_tokens() {
        return Err(Error::shape("retrieve", [score.n_tokens(), 0], values.shape()));
    }
    let (l, n, d) = (score.frames(), score.n_tokens(), values.cols());
    let data = kernels::matmul(score.scores.data(), values.data(), l, n, d);
    Ok(StyleTokenSequence {
        tokens: Tensor::new(&[l, d], data)?,
    })
}

/// Style scores `S [L × N]` for one side.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleScore {
    pub side: Side,
    pub scores: Tensor<f32>,
    pub edited: bool,
}

/// JSON form of a [`StyleScore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleScoreDoc {
    pub side: Side,
    pub n_tokens: usize,
    pub frames: usize,
    pub scores: Vec<Vec<f32>>,
    pub edited: bool,
}

pub const ROW_SUM_TOL: f64 = 1e-6;

impl StyleScore {
    pub fn new(side: Side, scores: Tensor<f32>, edited: bool) -> Result<Self> {
        let s = Self {
            side,
            scores,
            edited,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn frames(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_tokens(&self) -> usize {
        self.scores.cols()
    }

    /// Unedited rows must be on the simplex; edited entries need only be non-negative.
    pub fn validate(&self) -> Result<()> {
        if self.scores.rank() != 2 {
            return Err(Error::shape("style score", "[L, N]", self.scores.shape()));
        }
        for f in 0..self.frames() {
            let row = self.scores.row(f);
            if let Some(n) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "scores[{f}][{n}] = {} must be finite and non-negative",
                    row[n]
                )));
            }
            if !self.edited {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&v| v > 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "scores[{f}] sums to {sum}; unedited rows must sum to 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_edit(&self, token: usize, range: [usize; 2]) -> Result<()> {
        if token >= self.n_tokens() {
            return Err(Error::OutOfRange {
                what: "style token",
                index: token,
                limit: self.n_tokens(),
            });
        }
        let [a, b] = range;
        if a >= b || b > self.frames() {
            return Err(Error::InvalidArgument(format!(
                "frame range [{a}, {b}) is not a non-empty range within {} frames",
                self.frames()
            )));
        }
        Ok(())
    }

    fn check_factor(name: &str, f: f64) -> Result<()> {
        if f.is_finite() && f >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{name} = {f} must be finite and non-negative"
            )))
        }
    }

    /// Multiplies column `token` by `factor` on frames `[a, b)`. No renormalisation.
    pub fn edit_scale_token(&self, token: usize, factor: f64, range: [usize; 2]) -> Result<Self> {
        Self::check_factor("factor", factor)?;
        self.edit_ramp_token(token, factor, factor, range)
    }

    /// Per-frame factor interpolated linearly from `factor_start` on the first frame of the
    /// range to `factor_end` on its last frame.
    pub fn edit_ramp_token(
        &self,
        token: usize,
        factor_start: f64,
        factor_end: f64,
        range: [usize; 2],
    ) -> Result<Self> {
        self.check_edit(token, range)?;
        Self::check_factor("factor_start", factor_start)?;
        Self::check_factor("factor_end", factor_end)?;
        let [a, b] = range;
        let n = b - a;
        let mut out = self.clone();
        for (i, f) in (a..b).enumerate() {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let k = factor_start + (factor_end - factor_start) * t;
            let v = &mut out.scores.row_mut(f)[token];
            *v = (*v as f64 * k) as f32;
        }
        out.edited = true;
        Ok(out)
    }

    /// Rescales every row to sum to one (rows summing to zero become uniform).
    pub fn renormalized(&self) -> Self {
        let mut out = self.clone();
        let n = out.n_tokens();
        for f in 0..out.frames() {
            let row = out.scores.row_mut(f);
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            for v in row.iter_mut() {
                *v = if sum > 0.0 {
                    (*v as f64 / sum) as f32
                } else {
                    1.0 / n as f32
                };
            }
        }
        out.edited = true;
        out
    }

    /// One column as a per-frame curve.
    pub fn column(&self, token: usize) -> Vec<f32> {
        (0..self.frames()).map(|f| self.scores.at(f, token)).collect()
    }

    pub fn to_doc(&self) -> StyleScoreDoc {
        StyleScoreDoc {
            side: self.side,
            n_tokens: self.n_tokens(),
            frames: self.frames(),
            scores: (0..self.frames()).map(|f| self.scores.row(f).to_vec()).collect(),
            edited: self.edited,
        }
    }

    pub fn from_doc(doc: StyleScoreDoc) -> Result<Self> {
        if doc.scores.len() != doc.frames || doc.frames == 0 || doc.n_tokens == 0 {
            return Err(Error::InvalidArgument(format!(
                "scores: expected {} rows, got {}",
                doc.frames,
                doc.scores.len()
            )));
        }
        if let Some(i) = doc.scores.iter().position(|r| r.len() != doc.n_tokens) {
            return Err(Error::InvalidArgument(format!(
                "scores[{i}]: expected {} entries, got {}",
                doc.n_tokens,
                doc.scores[i].len()
            )));
        }
        let data = doc.scores.into_iter().flatten().collect();
        Self::new(doc.side, Tensor::new(&[doc.frames, doc.n_tokens], data)?, doc.edited)
    }
}

/// Style scores for both sides; the pitch side is absent when disabled in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleScores {
    pub text: StyleScore,
    pub pitch: Option<StyleScore>,
}

impl StyleScores {
    pub fn get(&self, side: Side) -> Option<&StyleScore> {
        match side {
            Side::Text => Some(&self.text),
            Side::Pitch => self.pitch.as_ref(),
        }
    }

    /// JSON array with one document per present side.
    pub fn to_json(&self) -> String {
        let docs: Vec<StyleScoreDoc> = std::iter::once(&self.text)
            .chain(self.pitch.as_ref())
            .map(StyleScore::to_doc)
            .collect();
        serde_json::to_string(&docs).expect("scores serialise")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let docs: Vec<StyleScoreDoc> = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidArgument(format!("style document {path}: {}", e.into_inner()))
        })?;
        let mut text_side = None;
        let mut pitch_side = None;
        for (i, d) in docs.into_iter().enumerate() {
            let slot = match d.side {
                Side::Text => &mut text_side,
                Side::Pitch => &mut pitch_side,
            };
            if slot.is_some() {
                return Err(Error::InvalidArgument(format!("[{i}].side: duplicate side")));
            }
            *slot = Some(
                StyleScore::from_doc(d)
                    .map_err(|e| Error::InvalidArgument(format!("[{i}].{e}")))?,
            );
        }
        let text = text_side
            .ok_or_else(|| Error::InvalidArgument("style document has no text side".into()))?;
        if let Some(p) = &pitch_side {
            if p.frames() != text.frames() {
                return Err(Error::InvalidArgument(
                    "text and pitch style scores differ in length".into(),
                ));
            }
        }
        Ok(Self {
            text,
            pitch: pitch_side,
        })
    }
}

/// A scripted style edit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum StyleEdit {
    Scale {
        side: Side,
        token: usize,
        factor: f64,
        range: [usize; 2],
        #[serde(default)]
        renormalize: bool,
    },
    Ramp {
        side: Side,
        token: usize,
        factor_start: f64,
        factor_end: f64,
        range: [usize; 2],
        #[serde(default)]
        renormalize: bool,
    },
}

impl StyleEdit {
    pub fn side(&self) -> Side {
        match *self {
            StyleEdit::Scale { side, .. } | StyleEdit::Ramp { side, .. } => side,
        }
    }

    pub fn apply(&self, score: &StyleScore) -> Result<StyleScore> {
        let (out, renorm) = match *self {
            StyleEdit::Scale {
                token,
                factor,
                range,
                renormalize,
                ..
            } => (score.edit_scale_token(token, factor, range)?, renormalize),
            StyleEdit::Ramp {
                token,
                factor_start,
                factor_end,
                range,
                renormalize,
                ..
            } => (
                score.edit_ramp_token(token, factor_start, factor_end, range)?,
                renormalize,
            ),
        };
        Ok(if renorm { out.renormalized() } else { out })
    }
}

/// Applies edits in order to the matching side.
pub fn apply_style_edits(scores: &StyleScores, edits: &[StyleEdit]) -> Result<StyleScores> {
    let mut out = scores.clone();
    for (i, e) in edits.iter().enumerate() {
        let slot = match e.side() {
            Side::Text => &mut out.text,
            Side::Pitch => out.pitch.as_mut().ok_or_else(|| {
                Error::InvalidArgument(format!("[{i}].side: model has no pitch-side style tokens"))
            })?,
        };
        *slot = e
            .apply(slot)
            .map_err(|err| Error::InvalidArgument(format!("[{i}]: {err}")))?;
    }
    Ok(out)
}

pub fn parse_style_edits(text: &str) -> Result<Vec<StyleEdit>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidArgument(format!("style edit script {path}: {}", e.into_inner()))
    })
}

/// Per-token correlation with frame energy and with silence, for naming tokens.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenStats {
    pub token: usize,
    pub mean_score: f64,
    pub energy_corr: f64,
    pub silence_corr: f64,
}

/// Frame energy is the mean log-mel value of the frame.
pub fn analyze_tokens(
    score: &StyleScore,
    mel: &MelSpectrogram,
    silent: &[bool],
) -> Result<Vec<TokenStats>> {
    if mel.n_frames() != score.frames() || silent.len() != score.frames() {
        return Err(Error::shape(
            "analyze_tokens",
            score.frames(),
            (mel.n_frames(), silent.len()),
        ));
    }
    let energy: Vec<f64> = (0..mel.n_frames())
        .map(|f| mel.frame(f).iter().map(|&v| v as f64).sum::<f64>() / mel.n_mels() as f64)
        .collect();
    let sil: Vec<f64> = silent.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    Ok((0..score.n_tokens())
        .map(|k| {
            let col: Vec<f64> = score.column(k).into_iter().map(f64::from).collect();
            TokenStats {
                token: k,
                mean_score: col.iter().sum::<f64>() / col.len() as f64,
                energy_corr: pearson(&col, &energy),
                silence_corr: pearson(&col, &sil),
            }
        })
        .collect())
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
