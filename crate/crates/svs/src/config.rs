//! Layered settings: the embedded defaults, then an optional user file on top.
//! Flags and `SVS_*` variables are resolved by the argument parser and win over both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svs_core::dpe::PitchPath;

use crate::diag::Failure;

/// The documented defaults, checked in at `crates/svs/config/default.toml`.
pub const DEFAULT_TOML: &str = include_str!("../config/default.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub ckpt: PathBuf,
    pub seed: u64,
    pub pitch_path: PitchPath,
    pub vocoder_iterations: usize,
    pub train_songs: usize,
    pub corpus_seed: u64,
    pub train_steps: u64,
    pub train_seed: u64,
    pub learning_rate: f64,
    pub log_every: u64,
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub log_level: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_layers(None).expect("embedded defaults are valid")
    }
}

impl Settings {
    /// Defaults overlaid with `user`, a TOML document whose keys must all be known.
    pub fn from_layers(user: Option<&str>) -> Result<Self, Failure> {
        let mut table: toml::Table = DEFAULT_TOML
            .parse()
            .map_err(|e| Failure::internal(format!("embedded defaults: {e}")))?;
        if let Some(text) = user {
            let over: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Failure::validation(format!("config: {}", one_line(&e.to_string()))))?;
            for (k, v) in over {
                if !table.contains_key(&k) {
                    return Err(Failure::validation(format!("config: unknown key `{k}`")));
                }
                table.insert(k, v);
            }
        }
        Self::deserialize(toml::Value::Table(table))
            .map_err(|e| Failure::validation(format!("config: {}", one_line(&e.to_string()))))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Self::from_layers(None),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?;
                Self::from_layers(Some(&text))
            }
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
