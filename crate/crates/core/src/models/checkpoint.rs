//! JSON checkpoints: parameters, optimizer state, RNG state and run context.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelKind, SequenceModel};
use crate::digest::config_digest;
use crate::error::{Error, Result};
use crate::numeric::{OptimizerState, ParamStore, Tensor};
use crate::pipeline::RunContext;

pub const CHECKPOINT_FORMAT: &str = "wat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn from_tensor(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub model: ModelConfig,
    pub run: Option<RunContext>,
    pub iteration: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerSnapshot>,
    pub rng: Option<ChaCha8Rng>,
}

impl ModelCheckpoint {
    /// Digest covering the model and run configuration.
    pub fn digest_for(model: &ModelConfig, run: Option<&RunContext>) -> String {
        config_digest(&(model, run))
    }

    pub fn new(
        model: &SequenceModel,
        run: Option<RunContext>,
        optimizer: Option<&OptimizerState>,
        iteration: u64,
        rng: Option<&ChaCha8Rng>,
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(n, t)| NamedTensor::from_tensor(n, t))
            .collect();
        let optimizer = optimizer.map(|o| OptimizerSnapshot {
            lr: o.lr,
            momentum: o.momentum,
            velocity: model
                .params()
                .iter()
                .zip(o.velocity())
                .map(|((n, _), v)| NamedTensor::from_tensor(n, v))
                .collect(),
        });
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_digest: Self::digest_for(model.config(), run.as_ref()),
            model: model.config().clone(),
            run,
            iteration,
            params,
            optimizer,
            rng: rng.cloned(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind
    }

    /// Checks format, version and digest, then that the parameters fit the model.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format '{}'",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let digest = Self::digest_for(&self.model, self.run.as_ref());
        if digest != self.config_digest {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: recorded {}, computed {digest}",
                self.config_digest
            )));
        }
        self.to_model().map(|_| ())
    }

    pub fn to_model(&self) -> Result<SequenceModel> {
        let mut store = ParamStore::default();
        for nt in &self.params {
            store.push(nt.name.clone(), nt.to_tensor()?);
        }
        SequenceModel::from_params(self.model.clone(), store)
    }

    pub fn optimizer_state(&self) -> Result<Option<OptimizerState>> {
        let Some(snap) = &self.optimizer else {
            return Ok(None);
        };
        if snap.velocity.len() != self.params.len() {
            return Err(Error::Checkpoint(
                "velocity count does not match parameters".into(),
            ));
        }
        let mut velocity = Vec::with_capacity(snap.velocity.len());
        for (v, p) in snap.velocity.iter().zip(&self.params) {
            if v.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "velocity {} has the wrong shape",
                    v.name
                )));
            }
            velocity.push(v.to_tensor()?);
        }
        Ok(Some(OptimizerState::from_parts(
            snap.lr,
            snap.momentum,
            velocity,
        )))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(s)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    /// Loads and checks the model kind.
    pub fn load_expecting(path: impl AsRef<Path>, kind: ModelKind) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.kind() != kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, expected {kind}",
                ckpt.kind()
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use rand::{RngCore, SeedableRng};

    use super::*;

    fn sample() -> (SequenceModel, ModelCheckpoint) {
        let m = SequenceModel::new(ModelConfig::new(ModelKind::Rnn, 6, 2)).unwrap();
        let opt = OptimizerState::new(m.params(), 0.01, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u64();
        let c = ModelCheckpoint::new(&m, None, Some(&opt), 17, Some(&rng));
        (m, c)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (m, c) = sample();
        let back = ModelCheckpoint::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_model().unwrap(), m);
        let mut a = c.rng.clone().unwrap();
        let mut b = back.rng.unwrap();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn tampering_is_detected() {
        let (_, mut c) = sample();
        c.model.model_dim = 32;
        let err = ModelCheckpoint::from_json(&c.to_json()).unwrap_err();
        assert!(err.to_string().contains("digest"));
        let (_, mut c) = sample();
        c.params[0].data.pop();
        assert!(ModelCheckpoint::from_json(&c.to_json()).is_err());
        assert!(ModelCheckpoint::from_json("{}").is_err());
    }

    #[test]
    fn kind_is_checked_on_load() {
        let (_, c) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        c.save(&path).unwrap();
        assert!(ModelCheckpoint::load_expecting(&path, ModelKind::Rnn).is_ok());
        assert!(ModelCheckpoint::load_expecting(&path, ModelKind::Lstm).is_err());
    }
}
