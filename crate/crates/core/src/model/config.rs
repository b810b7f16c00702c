use serde::{Deserialize, Serialize};

use crate::dsp::N_MELS;
use crate::error::{Error, Result};
use crate::score::DEFAULT_PHONEMES;

/// Model dimensions and switches. Defaults give the toy-scale model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_phonemes: usize,
    pub n_singers: usize,
    pub d_text: usize,
    pub d_pitch: usize,
    pub d_singer: usize,
    pub d_style: usize,
    pub n_tokens: usize,
    pub n_mels: usize,
    pub encoder_kernels: Vec<usize>,
    pub style_kernels: Vec<usize>,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub decoder_kernel: usize,
    /// Local style tokens on the text side; without them the model is the plain
    /// dual-path system.
    pub use_lst: bool,
    pub pitch_side_lst: bool,
    /// Reserved; must stay `false`.
    pub adversarial: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_phonemes: DEFAULT_PHONEMES.len(),
            n_singers: 4,
            d_text: 64,
            d_pitch: 64,
            d_singer: 16,
            d_style: 64,
            n_tokens: 4,
            n_mels: N_MELS,
            encoder_kernels: vec![5, 5, 5],
            style_kernels: vec![5, 3, 1],
            decoder_layers: 4,
            decoder_width: 64,
            decoder_kernel: 3,
            use_lst: true,
            pitch_side_lst: true,
            adversarial: false,
        }
    }
}

impl ModelConfig {
    /// The dual-path model without style tokens.
    pub fn dual() -> Self {
        Self {
            use_lst: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_phonemes", self.n_phonemes),
            ("n_singers", self.n_singers),
            ("d_text", self.d_text),
            ("d_pitch", self.d_pitch),
            ("d_singer", self.d_singer),
            ("d_style", self.d_style),
            ("n_tokens", self.n_tokens),
            ("n_mels", self.n_mels),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("decoder_kernel", self.decoder_kernel),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("config.{name} must be positive")));
        }
        for (name, ks) in [
            ("encoder_kernels", &self.encoder_kernels),
            ("style_kernels", &self.style_kernels),
        ] {
            if ks.is_empty() {
                return Err(Error::InvalidArgument(format!("config.{name} must not be empty")));
            }
            if let Some(i) = ks.iter().position(|k| k % 2 == 0) {
                return Err(Error::InvalidArgument(format!(
                    "config.{name}[{i}] must be odd for same-length convolution"
                )));
            }
        }
        if self.adversarial {
            return Err(Error::InvalidArgument(
                "config.adversarial: adversarial training is not supported".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let c: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidArgument(format!("model config {path}: {}", e.into_inner()))
        })?;
        c.validate()?;
        Ok(c)
    }

    /// Frames the source decoder looks back, including the current one.
    pub fn source_receptive_field(&self) -> usize {
        1 + self.decoder_layers * (self.decoder_kernel - 1)
    }
}
