#![allow(dead_code)]

use std::path::Path;

use svs_core::model::{generate_synthetic_corpus, AcousticModel, ModelConfig};

/// A narrow model that keeps service tests quick.
pub fn small_model(seed: u64) -> AcousticModel {
    let config = ModelConfig {
        d_text: 16,
        d_pitch: 16,
        d_singer: 8,
        d_style: 16,
        decoder_width: 16,
        decoder_layers: 2,
        encoder_kernels: vec![3, 3],
        ..ModelConfig::default()
    };
    AcousticModel::new(config, seed).unwrap()
}

pub fn write_checkpoint(model: &AcousticModel, path: &Path) {
    model.to_checkpoint(0, Vec::new()).save(path).unwrap();
}

/// Score JSON of one synthetic song.
pub fn score_json(seed: u64) -> String {
    generate_synthetic_corpus(1, seed).unwrap()[0].score.to_json()
}
