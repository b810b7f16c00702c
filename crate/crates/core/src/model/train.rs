use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::acoustic::AcousticModel;
use super::corpus::SyntheticSong;
use crate::dpe::{select_path, F0Contour, PathMode, PitchPath};
use crate::dsp::{mel_analyze, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::rng::{from_state_bytes, seeded, state_bytes};
use crate::nn::{Adam, AdamConfig, Checkpoint, Graph, Tensor};
use crate::par;
use crate::score::{FrameInputs, PhonemeInventory};

/// One paired training example on a common frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: FrameInputs,
    pub f0: F0Contour,
    pub mel: MelSpectrogram,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        let l = self.inputs.len();
        if self.f0.len() != l || self.mel.n_frames() != l {
            return Err(Error::InvalidArgument(format!(
                "example frames disagree: inputs {l}, f0 {}, mel {}",
                self.f0.len(),
                self.mel.n_frames()
            )));
        }
        Ok(())
    }

    /// Pairs a rendered song with its mel analysis and its extracted f0.
    pub fn from_song(song: &SyntheticSong, inventory: &PhonemeInventory) -> Result<Self> {
        let e = Self {
            inputs: song.inputs(inventory)?,
            f0: crate::dsp::extract_f0(&song.waveform),
            mel: mel_analyze(&song.waveform)?,
        };
        e.validate()?;
        Ok(e)
    }
}

/// Model, optimiser and the run's path-selection RNG.
pub struct Trainer {
    pub model: AcousticModel,
    pub optimizer: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

/// Loss of one step plus the path used for each example.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f32,
    pub paths: Vec<PitchPath>,
}

impl Trainer {
    pub fn new(model: AcousticModel, adam: AdamConfig, seed: u64) -> Self {
        Self {
            model,
            optimizer: Adam::new(adam),
            rng: seeded(seed),
            step: 0,
        }
    }

    /// Resumes parameters, step count, RNG and optimiser moments from a checkpoint.
    /// Moments start from zero when the checkpoint carries none.
    pub fn from_checkpoint(ck: &Checkpoint, adam: AdamConfig) -> Result<Self> {
        let model = AcousticModel::from_checkpoint(ck)?;
        let optimizer = match &ck.optimizer {
            Some(state) => Adam::from_state(adam, state, &model.params)?,
            None => Adam::new(adam),
        };
        Ok(Self {
            model,
            optimizer,
            rng: from_state_bytes(&ck.rng_state)?,
            step: ck.training_step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            optimizer: Some(self.optimizer.to_state()),
            ..self.model.to_checkpoint(self.step, state_bytes(&self.rng))
        }
    }

    /// Mean teacher-forced L1 loss over `batch` without updating anything.
    pub fn evaluate(&self, batch: &[Example], paths: &[PitchPath]) -> Result<f32> {
        let losses = par::map_range(batch.len(), |i| {
            let ex = &batch[i];
            let mut g = Graph::new();
            let loss = self.model.loss_graph(
                &mut g,
                &self.model.params,
                &ex.inputs,
                paths[i],
                Some(&ex.f0),
                &ex.mel,
            )?;
            Ok::<_, Error>(g.value(loss).data()[0])
        });
        let losses = losses.into_iter().collect::<Result<Vec<f32>>>()?;
        Ok(losses.iter().sum::<f32>() / losses.len() as f32)
    }

    /// One optimisation step: paths are drawn in example order, per-example gradients are
    /// computed in parallel and summed in example order.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        for (i, ex) in batch.iter().enumerate() {
            ex.validate()
                .map_err(|e| Error::InvalidArgument(format!("batch[{i}]: {e}")))?;
        }
        let paths = batch
            .iter()
            .map(|_| select_path(PathMode::Train, Some(&mut self.rng), None))
            .collect::<Result<Vec<_>>>()?;
        let model = &self.model;
        let results = par::map_range(batch.len(), |i| {
            let ex = &batch[i];
            let mut g = Graph::new();
            let loss = model.loss_graph(&mut g, &model.params, &ex.inputs, paths[i], Some(&ex.f0), &ex.mel)?;
            let value = g.value(loss).data()[0];
            let grads = g.backward(loss)?;
            Ok::<_, Error>((value, grads.into_params()))
        });
        let scale = 1.0 / batch.len() as f32;
        let mut total = 0.0f32;
        let mut sum: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for (i, r) in results.into_iter().enumerate() {
            let (loss, grads) = r?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("training loss at step {} (example {i}, path {})", self.step, paths[i]),
                });
            }
            total += loss;
            for (name, g) in grads {
                match sum.get_mut(&name) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        sum.insert(name, g);
                    }
                }
            }
        }
        for g in sum.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        self.optimizer.update(&mut self.model.params, &sum)?;
        self.step += 1;
        Ok(StepReport {
            loss: total * scale,
            paths,
        })
    }
}
