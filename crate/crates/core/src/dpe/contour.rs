use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{HOP, SAMPLE_RATE};

pub const F0_MIN: f64 = 40.0;
pub const F0_MAX: f64 = 1500.0;

/// Per-frame fundamental frequency in Hz; `0.0` marks an unvoiced frame.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Contour {
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct F0Doc {
    pub sample_rate: u32,
    pub hop: usize,
    pub f0_hz: Vec<f64>,
}

impl F0Contour {
    /// Validates voiced values in `[40, 1500]` and unvoiced exactly zero.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let c = Self { values };
        c.validate()?;
        Ok(c)
    }

    pub fn unvoiced(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.first_invalid() {
            return Err(Error::InvalidArgument(format!(
                "f0_hz[{i}] = {} is neither 0 (unvoiced) nor within [{F0_MIN}, {F0_MAX}] Hz",
                self.values[i]
            )));
        }
        Ok(())
    }

    /// Index of the first frame violating the value domain.
    pub fn first_invalid(&self) -> Option<usize> {
        self.values
            .iter()
            .position(|&v| !(v == 0.0 || (F0_MIN..=F0_MAX).contains(&v)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_voiced(&self, i: usize) -> bool {
        self.values[i] > 0.0
    }

    pub fn voiced_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Contiguous voiced runs as half-open frame ranges.
    pub fn voiced_segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &v) in self.values.iter().enumerate() {
            match (v > 0.0, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(s..self.values.len());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&F0Doc {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            f0_hz: self.values.clone(),
        })
        .expect("contour serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: F0Doc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    pub(crate) fn from_doc(doc: F0Doc) -> Result<Self> {
        if doc.sample_rate != SAMPLE_RATE || doc.hop != HOP {
            return Err(Error::Format(format!(
                "f0 grid must be {SAMPLE_RATE} Hz / hop {HOP}, got {} / {}",
                doc.sample_rate, doc.hop
            )));
        }
        Self::new(doc.f0_hz)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
