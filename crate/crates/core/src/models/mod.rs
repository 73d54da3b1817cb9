//! Sequence classifiers mapping a `[T, input_dim]` feature matrix to 4 logits.

mod checkpoint;
mod recurrent;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Condition;
use crate::error::{Error, Result};
use crate::numeric::{init_uniform, softmax_in_place, Graph, ParamStore, Tensor, Var};

pub use checkpoint::{
    ModelCheckpoint, NamedTensor, OptimizerSnapshot, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transformer,
    Lstm,
    Rnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Transformer, ModelKind::Lstm, ModelKind::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Lstm => "lstm",
            ModelKind::Rnn => "rnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}'")))
    }
}

/// How recurrent models summarise their hidden states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Final,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub model_dim: usize,
    /// Attention heads (transformer only).
    pub heads: usize,
    /// Encoder blocks (transformer only).
    pub layers: usize,
    pub ffn_dim: usize,
    /// Dropout on the positional-encoding output and sublayer outputs (transformer only).
    pub dropout: f64,
    pub num_classes: usize,
    pub max_len: usize,
    pub positional_encoding: bool,
    pub readout: Readout,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, input_dim: usize, seed: u64) -> Self {
        Self {
            kind,
            input_dim,
            model_dim: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 128,
            dropout: 0.5,
            num_classes: Condition::COUNT,
            max_len: crate::features::DEFAULT_MAX_PAIRS,
            positional_encoding: true,
            readout: Readout::Final,
            layer_norm_eps: 1e-5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.model_dim == 0 || self.max_len == 0 {
            return fail("input_dim, model_dim and max_len must be positive".into());
        }
        if self.num_classes != Condition::COUNT {
            return fail(format!(
                "num_classes must be {}, got {}",
                Condition::COUNT,
                self.num_classes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.kind == ModelKind::Transformer {
            if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
                return fail(format!(
                    "model_dim {} is not divisible by {} heads",
                    self.model_dim, self.heads
                ));
            }
            if self.layers == 0 || self.ffn_dim == 0 {
                return fail("transformer needs at least one block and a positive ffn_dim".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![rows, cols],
            init: Init::Uniform { fan_in: rows },
        }
    }

    pub fn bias(name: impl Into<String>, n: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![n],
            init: Init::Zeros,
        }
    }

    pub fn gain(name: impl Into<String>, n: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![n],
            init: Init::Ones,
        }
    }
}

fn declare(config: &ModelConfig) -> Vec<ParamSpec> {
    match config.kind {
        ModelKind::Transformer => transformer::declare(config),
        ModelKind::Lstm => recurrent::declare(config, 4),
        ModelKind::Rnn => recurrent::declare(config, 1),
    }
}

/// Class decision plus the softmax distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub condition: Condition,
    pub probabilities: Vec<f64>,
}

/// Argmax of softmax; ties go to the lowest class code.
pub fn predict_from_logits(logits: &[f64]) -> Prediction {
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    Prediction {
        condition: Condition::from_code(best).expect("4 classes"),
        probabilities: probs,
    }
}

/// A classifier: configuration plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    config: ModelConfig,
    params: ParamStore,
}

impl SequenceModel {
    /// Fresh model, initialised from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        for spec in declare(&config) {
            let t = match spec.init {
                Init::Uniform { fan_in } => init_uniform(&spec.shape, fan_in, &mut rng),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::filled(&spec.shape, 1.0),
            };
            params.push(spec.name, t);
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = declare(&config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} model expects {} parameters, found {}",
                config.kind,
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {name} is not finite")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the forward pass on `graph`; returns `[1, num_classes]` logits and
    /// the parameter leaves in declaration order.
    pub fn build<R: Rng>(
        &self,
        graph: &mut Graph,
        x: &Tensor,
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        let shape = x.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Validation(format!(
                "expected a [T, {}] sequence, got {:?}",
                self.config.input_dim, shape
            )));
        }
        if shape[1] != self.config.input_dim {
            return Err(Error::Validation(format!(
                "feature width {} does not match model input_dim {}",
                shape[1], self.config.input_dim
            )));
        }
        if shape[0] > self.config.max_len {
            return Err(Error::Validation(format!(
                "sequence length {} exceeds max_len {}",
                shape[0], self.config.max_len
            )));
        }
        let p = self.params.register(graph);
        let xv = graph.constant(x.clone());
        let logits = match self.config.kind {
            ModelKind::Transformer => {
                transformer::forward(&self.config, graph, &p, xv, train, rng)?
            }
            ModelKind::Lstm => recurrent::lstm_forward(&self.config, graph, &p, xv)?,
            ModelKind::Rnn => recurrent::rnn_forward(&self.config, graph, &p, xv)?,
        };
        Ok((logits, p))
    }

    pub fn forward<R: Rng>(&self, x: &Tensor, train: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let (logits, _) = self.build(&mut g, x, train, rng)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// Eval-mode logits (dropout off).
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        // The RNG is never consulted when `train` is false.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(x, false, &mut rng)
    }

    /// Cross-entropy loss and per-parameter gradients.
    pub fn loss_and_grads<R: Rng>(
        &self,
        x: &Tensor,
        label: Condition,
        train: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let (logits, p) = self.build(&mut g, x, train, rng)?;
        let loss = g.cross_entropy(logits, label.code())?;
        let grads = g.backward(loss)?;
        Ok((
            g.value(loss).data()[0],
            p.iter().map(|&v| grads.get(v)).collect(),
        ))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        Ok(predict_from_logits(&self.logits(x)?))
    }
}

/// Free-function form of [`SequenceModel::predict`].
pub fn predict(model: &SequenceModel, x: &Tensor) -> Result<Prediction> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(t, w, data).unwrap()
    }

    #[test]
    fn tie_break_and_argmax() {
        let p = predict_from_logits(&[0.0; 4]);
        assert_eq!(p.condition, Condition::Anxiety);
        assert_eq!(p.probabilities, vec![0.25; 4]);
        assert_eq!(
            predict_from_logits(&[0.0, 5.0, 0.0, 0.0]).condition,
            Condition::Depression
        );
        let s: f64 = predict_from_logits(&[0.3, -2.0, 1.0, 7.0])
            .probabilities
            .iter()
            .sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_kind_accepts_every_width() {
        for kind in ModelKind::ALL {
            for w in [100, 36, 64, 200, 72, 128] {
                let m = SequenceModel::new(ModelConfig::new(kind, w, 1)).unwrap();
                assert_eq!(m.logits(&seq(3, w, 2)).unwrap().len(), 4);
            }
        }
    }

    #[test]
    fn empty_and_too_long_sequences_rejected() {
        let m = SequenceModel::new(ModelConfig::new(ModelKind::Rnn, 4, 1)).unwrap();
        assert!(m.logits(&seq(51, 4, 1)).is_err());
        assert!(m.logits(&seq(3, 5, 1)).is_err());
    }

    #[test]
    fn eval_is_deterministic() {
        for kind in ModelKind::ALL {
            let m = SequenceModel::new(ModelConfig::new(kind, 8, 4)).unwrap();
            let x = seq(6, 8, 9);
            assert_eq!(m.logits(&x).unwrap(), m.logits(&x).unwrap());
            assert_eq!(m.logits(&seq(1, 8, 3)).unwrap().len(), 4);
        }
    }

    #[test]
    fn invalid_heads_rejected() {
        let mut c = ModelConfig::new(ModelKind::Transformer, 8, 1);
        c.heads = 5;
        assert!(SequenceModel::new(c).is_err());
    }

    #[test]
    fn from_params_checks_layout() {
        let m = SequenceModel::new(ModelConfig::new(ModelKind::Lstm, 8, 1)).unwrap();
        let wrong = ModelConfig::new(ModelKind::Rnn, 8, 1);
        assert!(SequenceModel::from_params(wrong, m.params().clone()).is_err());
        let same = SequenceModel::from_params(m.config().clone(), m.params().clone()).unwrap();
        assert_eq!(same, m);
    }
}
