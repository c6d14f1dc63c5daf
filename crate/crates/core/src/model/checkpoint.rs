//! JSON checkpoints holding the config, step counter, parameters and
//! optimizer moments. Floats are written with round-trip precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerState;
use super::params::Parameters;
use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub first_moment: Vec<TensorRecord>,
    #[serde(default)]
    pub second_moment: Vec<TensorRecord>,
}

fn records(p: &Parameters) -> Vec<TensorRecord> {
    p.tensors()
        .into_iter()
        .map(|t| TensorRecord {
            name: t.name,
            shape: t.shape,
            data: t.data.to_vec(),
        })
        .collect()
}

fn restore(config: &ModelConfig, records: &[TensorRecord]) -> Result<Parameters> {
    let labels = records
        .iter()
        .find(|r| r.name == "heads.classifier.output.bias")
        .map_or(config.num_labels, |r| r.data.len());
    let mut p = Parameters::zeros(&ModelConfig {
        num_labels: labels,
        ..config.clone()
    });
    let tensors = p.tensors_mut();
    if tensors.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            tensors.len()
        )));
    }
    for (t, r) in tensors.into_iter().zip(records) {
        if t.name != r.name || t.shape != r.shape || r.data.len() != t.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint tensor {} {:?} does not match {} {:?}",
                r.name, r.shape, t.name, t.shape
            )));
        }
        t.data.copy_from_slice(&r.data);
    }
    Ok(p)
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, step: u64, params: &Parameters, state: Option<&OptimizerState>, digest: Option<&str>) -> Self {
        Self {
            config: config.clone(),
            step,
            config_digest: digest.map(str::to_owned),
            tensors: records(params),
            first_moment: state.map(|s| records(&s.first_moment)).unwrap_or_default(),
            second_moment: state.map(|s| records(&s.second_moment)).unwrap_or_default(),
        }
    }

    pub fn parameters(&self) -> Result<Parameters> {
        restore(&self.config, &self.tensors)
    }

    /// `None` when the checkpoint was saved without optimizer moments.
    pub fn optimizer_state(&self) -> Result<Option<OptimizerState>> {
        if self.first_moment.is_empty() {
            return Ok(None);
        }
        Ok(Some(OptimizerState {
            first_moment: restore(&self.config, &self.first_moment)?,
            second_moment: restore(&self.config, &self.second_moment)?,
        }))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.config.validate()?;
    Ok(checkpoint)
}
