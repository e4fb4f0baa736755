//! Checkpoint files: the binary container from `derm_core::train` carrying
//! the architecture, training settings and a `[state]` section as text, then
//! the parameters and Adam moments as tensors.

use std::fmt::Write as _;
use std::path::Path;

use derm_core::data::NormalizationStats;
use derm_core::models::{Model, ModelConfig};
use derm_core::train::{Checkpoint, Snapshot, TrainConfig};
use derm_core::{Scalar, Tensor};

use crate::config::{architecture_text, parse_embedded, train_text};
use crate::error::{CliError, CliResult};
use crate::files::atomic_write;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// 0-based epoch the parameters were taken after.
    pub epoch: usize,
    pub best_val_f1: f64,
    pub adam_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: ModelConfig,
    pub stats: NormalizationStats,
    pub train: TrainConfig,
    pub state: TrainState,
    pub params: Vec<(String, Tensor<f32>)>,
    /// `adam.m.<param>` / `adam.v.<param>`.
    pub moments: Vec<(String, Tensor<f32>)>,
}

const MOMENT_PREFIX: &str = "adam.";

impl SavedModel {
    pub fn from_snapshot<T: Scalar>(
        model: &ModelConfig,
        stats: &NormalizationStats,
        train: &TrainConfig,
        snap: &Snapshot<T>,
    ) -> Self {
        SavedModel {
            model: model.clone(),
            stats: *stats,
            train: train.clone(),
            state: TrainState {
                epoch: snap.epoch,
                best_val_f1: snap.val_f1,
                adam_step: snap.adam.step_count(),
            },
            params: snap.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect(),
            moments: snap
                .adam
                .export(&snap.params)
                .into_iter()
                .map(|(n, t)| (n, t.cast()))
                .collect(),
        }
    }

    pub fn config_text(&self) -> String {
        let mut s = architecture_text(&self.model, &self.stats);
        s.push('\n');
        s.push_str(&train_text(&self.train));
        let st = &self.state;
        let _ = write!(
            s,
            "\n[state]\nepoch = {}\nbest_val_f1 = {}\nadam_step = {}\n",
            st.epoch, st.best_val_f1, st.adam_step
        );
        s
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config_text(),
            tensors: self.params.iter().chain(&self.moments).cloned().collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> CliResult<Self> {
        let bad = |m: String| CliError::Checkpoint(format!("embedded configuration: {m}"));
        let (model, stats, train, state) = parse_embedded(&ck.config).map_err(|e| bad(e.to_string()))?;
        let state = state.ok_or_else(|| bad("missing [state] section".into()))?;
        let mut st = TrainState {
            epoch: 0,
            best_val_f1: 0.0,
            adam_step: 0,
        };
        for e in &state.entries {
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {v:?}", e.line)));
            match e.key.as_str() {
                "epoch" => st.epoch = num(&e.value)? as usize,
                "best_val_f1" => st.best_val_f1 = num(&e.value)?,
                "adam_step" => st.adam_step = num(&e.value)? as u64,
                k => return Err(bad(format!("line {}: unknown key {k:?} in [state]", e.line))),
            }
        }
        let (moments, params) = ck.tensors.into_iter().partition(|(n, _)| n.starts_with(MOMENT_PREFIX));
        Ok(SavedModel {
            model,
            stats,
            train,
            state: st,
            params,
            moments,
        })
    }

    pub fn encode(&self) -> CliResult<Vec<u8>> {
        Ok(self.to_checkpoint().encode()?)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        atomic_write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let ck = Checkpoint::decode(&bytes).map_err(|e| CliError::at(path, e))?;
        SavedModel::from_checkpoint(ck).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the network and loads the stored parameters; a checkpoint
    /// that does not fit its own architecture is a checkpoint error.
    pub fn build<T: Scalar>(&self) -> CliResult<Model<T>> {
        let mut model = Model::<T>::new(&self.model, 0).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let tensors: Vec<(String, Tensor<T>)> = self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
        model.params.load(&tensors)?;
        Ok(model)
    }
}
