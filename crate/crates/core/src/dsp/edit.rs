//! Scripted f0 contour edits. All edits work in the semitone domain and leave unvoiced
//! frames untouched. Ranges are half-open frame intervals `[start, end)`.

use serde::{Deserialize, Serialize};

use crate::dpe::{F0Contour, F0_MAX, F0_MIN};
use crate::error::{Error, Result};
use crate::score::{HOP, SAMPLE_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum F0Edit {
    Shift {
        semitones: f64,
        range: [usize; 2],
    },
    Flatten {
        lambda: f64,
        range: [usize; 2],
    },
    Vibrato {
        rate: f64,
        depth: f64,
        range: [usize; 2],
    },
    Ramp {
        delta_start: f64,
        delta_end: f64,
        range: [usize; 2],
    },
}

impl F0Edit {
    pub fn range(&self) -> [usize; 2] {
        match *self {
            F0Edit::Shift { range, .. }
            | F0Edit::Flatten { range, .. }
            | F0Edit::Vibrato { range, .. }
            | F0Edit::Ramp { range, .. } => range,
        }
    }

    fn validate(&self, index: usize, len: usize) -> Result<()> {
        let [a, b] = self.range();
        if a >= b || b > len {
            return Err(Error::InvalidArgument(format!(
                "[{index}].range: [{a}, {b}) is not a non-empty range within {len} frames"
            )));
        }
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("[{index}].{name}: must be finite")))
            }
        };
        match *self {
            F0Edit::Shift { semitones, .. } => finite("semitones", semitones),
            F0Edit::Flatten { lambda, .. } => {
                if (0.0..=1.0).contains(&lambda) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "[{index}].lambda: {lambda} outside [0, 1]"
                    )))
                }
            }
            F0Edit::Vibrato { rate, depth, .. } => {
                finite("rate", rate)?;
                finite("depth", depth)?;
                if rate < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "[{index}].rate: must be non-negative"
                    )));
                }
                Ok(())
            }
            F0Edit::Ramp {
                delta_start,
                delta_end,
                ..
            } => {
                finite("delta_start", delta_start)?;
                finite("delta_end", delta_end)
            }
        }
    }

    fn apply(&self, f0: &mut [f64]) {
        let [a, b] = self.range();
        match *self {
            F0Edit::Shift { semitones, .. } => {
                let k = (semitones / 12.0).exp2();
                for v in f0[a..b].iter_mut().filter(|v| **v > 0.0) {
                    *v *= k;
                }
            }
            F0Edit::Flatten { lambda, .. } => {
                let slice = &mut f0[a..b];
                let c = F0Contour {
                    values: slice.to_vec(),
                };
                for seg in c.voiced_segments() {
                    let part = &mut slice[seg];
                    let mean = part.iter().sum::<f64>() / part.len() as f64;
                    for v in part {
                        *v = mean + lambda * (*v - mean);
                    }
                }
            }
            F0Edit::Vibrato { rate, depth, .. } => {
                let dt = HOP as f64 / SAMPLE_RATE as f64;
                for (i, v) in f0[a..b].iter_mut().enumerate() {
                    if *v > 0.0 {
                        let phase = std::f64::consts::TAU * rate * i as f64 * dt;
                        *v *= (depth * phase.sin() / 12.0).exp2();
                    }
                }
            }
            F0Edit::Ramp {
                delta_start,
                delta_end,
                ..
            } => {
                let n = b - a;
                for (i, v) in f0[a..b].iter_mut().enumerate() {
                    if *v > 0.0 {
                        let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                        let st = delta_start + (delta_end - delta_start) * t;
                        *v *= (st / 12.0).exp2();
                    }
                }
            }
        }
    }
}

/// Ordered list of edits, serialised as a JSON array.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct F0EditScript {
    pub edits: Vec<F0Edit>,
}

impl F0EditScript {
    pub fn new(edits: Vec<F0Edit>) -> Self {
        Self { edits }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: Vec<RawEdit> = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidArgument(format!("f0 edit script {path}: {}", e.into_inner()))
        })?;
        let edits = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_edit(i))
            .collect::<Result<_>>()?;
        Ok(Self { edits })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serialises")
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        self.edits
            .iter()
            .enumerate()
            .try_for_each(|(i, e)| e.validate(i, len))
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum OpKind {
    Shift,
    Flatten,
    Vibrato,
    Ramp,
}

/// Flat mirror of [`F0Edit`] so parse errors carry the offending field path.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdit {
    op: OpKind,
    range: [usize; 2],
    semitones: Option<f64>,
    lambda: Option<f64>,
    rate: Option<f64>,
    depth: Option<f64>,
    delta_start: Option<f64>,
    delta_end: Option<f64>,
}

impl RawEdit {
    fn into_edit(self, index: usize) -> Result<F0Edit> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                Error::InvalidArgument(format!("f0 edit script [{index}].{name}: missing field"))
            })
        };
        let extra = |allowed: &[&str]| -> Result<()> {
            let present = [
                ("semitones", self.semitones),
                ("lambda", self.lambda),
                ("rate", self.rate),
                ("depth", self.depth),
                ("delta_start", self.delta_start),
                ("delta_end", self.delta_end),
            ];
            match present
                .iter()
                .find(|(n, v)| v.is_some() && !allowed.contains(n))
            {
                Some((n, _)) => Err(Error::InvalidArgument(format!(
                    "f0 edit script [{index}].{n}: not a parameter of this op"
                ))),
                None => Ok(()),
            }
        };
        let range = self.range;
        Ok(match self.op {
            OpKind::Shift => {
                extra(&["semitones"])?;
                F0Edit::Shift { semitones: need("semitones", self.semitones)?, range }
            }
            OpKind::Flatten => {
                extra(&["lambda"])?;
                F0Edit::Flatten { lambda: need("lambda", self.lambda)?, range }
            }
            OpKind::Vibrato => {
                extra(&["rate", "depth"])?;
                F0Edit::Vibrato {
                    rate: need("rate", self.rate)?,
                    depth: need("depth", self.depth)?,
                    range,
                }
            }
            OpKind::Ramp => {
                extra(&["delta_start", "delta_end"])?;
                F0Edit::Ramp {
                    delta_start: need("delta_start", self.delta_start)?,
                    delta_end: need("delta_end", self.delta_end)?,
                    range,
                }
            }
        })
    }
}

/// Applies every edit in order. Voiced results outside the valid band are clamped.
pub fn apply_f0_edits(c: &F0Contour, script: &F0EditScript) -> Result<F0Contour> {
    c.validate()?;
    script.validate(c.len())?;
    let mut values = c.values.clone();
    for e in &script.edits {
        e.apply(&mut values);
    }
    let mut clamped = 0usize;
    for v in values.iter_mut().filter(|v| **v > 0.0) {
        if *v < F0_MIN || *v > F0_MAX {
            *v = v.clamp(F0_MIN, F0_MAX);
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} edited f0 frames clamped into [{F0_MIN}, {F0_MAX}] Hz");
    }
    Ok(F0Contour { values })
}
