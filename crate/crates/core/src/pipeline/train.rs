//! Balanced-sampling SGD training with best-checkpoint selection.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{confusion_on, FailureFlag, FailureReason};
use super::sampling::{balanced_draws, balanced_sample, ClassPools};
use super::Example;
use crate::corpus::{stratified_counts, Condition};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::features::DEFAULT_MAX_PAIRS;
use crate::models::SequenceModel;
use crate::numeric::{clip_global_norm, OptimizerState};

pub const DEFAULT_ITERATIONS: usize = 50_000;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EVAL_EVERY: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub eval_every: usize,
    pub max_pairs: usize,
    pub seed: u64,
    /// Stop after this many evaluations without improvement.
    pub plateau_window: Option<usize>,
    /// Share of each class held out for checkpoint selection.
    pub validation_fraction: f64,
    pub validation_draws: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            eval_every: DEFAULT_EVAL_EVERY,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
            plateau_window: None,
            validation_fraction: 0.1,
            validation_draws: 200,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with `eval_every` clamped to `iterations`.
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            eval_every: DEFAULT_EVAL_EVERY.min(iterations.max(1)),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.eval_every == 0 || self.eval_every > self.iterations {
            return fail(format!(
                "eval_every must lie in 1..={}, got {}",
                self.iterations, self.eval_every
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.validation_draws == 0 || self.max_pairs == 0 {
            return fail("validation_draws and max_pairs must be positive".into());
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return fail("clip_norm must be positive".into());
        }
        if self.plateau_window == Some(0) {
            return fail("plateau_window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

impl LogRow {
    pub fn csv_header() -> &'static str {
        "iteration,loss,val_accuracy"
    }

    pub fn to_csv(&self) -> String {
        let val = self
            .val_accuracy
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        format!("{},{},{}", self.iteration, self.loss, val)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: SequenceModel,
    pub best_iteration: usize,
    pub best_val_accuracy: f64,
    pub best_optimizer: OptimizerState,
    pub final_model: SequenceModel,
    pub final_val_accuracy: Option<f64>,
    pub iterations_run: usize,
    pub log: Vec<LogRow>,
    pub failure: FailureFlag,
    /// Every session id that reached a gradient step.
    pub trained_ids: BTreeSet<String>,
    pub rng: ChaCha8Rng,
}

/// Splits example indices into (fit, validation) per class.
fn validation_split(examples: &[Example], fraction: f64, seed: u64) -> (Vec<usize>, ClassPools) {
    let pools = ClassPools::from_labels(examples.iter().map(|e| e.label));
    if fraction == 0.0 {
        let all = (0..examples.len()).collect();
        return (all, pools);
    }
    let sizes = pools.sizes();
    let take = stratified_counts(&sizes, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit = Vec::new();
    let mut val: [Vec<usize>; Condition::COUNT] = Default::default();
    for c in Condition::ALL {
        let mut members = pools.pool(c).to_vec();
        members.shuffle(&mut rng);
        // Never drain a class's training side.
        let k = take[c.code()].min(members.len().saturating_sub(1));
        val[c.code()] = members[..k].to_vec();
        fit.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    // A class without held-out sessions validates on its training sessions.
    for c in Condition::ALL {
        if val[c.code()].is_empty() {
            val[c.code()] = pools.pool(c).to_vec();
        }
    }
    (fit, ClassPools::new(val))
}

/// Trains `model` on `train_set` with balanced sampling.
///
/// Divergence ends training early with a `nan_divergence` flag and keeps the
/// best checkpoint seen so far.
pub fn train(
    mut model: SequenceModel,
    train_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (fit, val_pools) = validation_split(
        train_set,
        config.validation_fraction,
        derive_seed(config.seed, "validation-split"),
    );
    let fit_pools = ClassPools::from_labels(fit.iter().map(|&i| train_set[i].label));
    fit_pools.check_nonempty("training set")?;
    let mut draw_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "validation-draws"));
    let val_draws = balanced_draws(
        &val_pools,
        config.validation_draws,
        &mut draw_rng,
        "validation set",
    )?;
    let validate = |m: &SequenceModel| -> Result<f64> {
        Ok(confusion_on(m, train_set, &val_draws)?.accuracy())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train"));
    let mut opt = OptimizerState::new(model.params(), config.lr, config.momentum)?;
    let mut best = model.clone();
    let mut best_val = validate(&model)?;
    let mut best_iteration = 0;
    let mut best_optimizer = opt.clone();
    let mut log = Vec::new();
    let mut trained_ids = BTreeSet::new();
    let mut failure = FailureFlag::NONE;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut since_improvement = 0;
    let mut final_val = None;
    let mut iterations_run = 0;
    let mut diverged_at = 0;

    for it in 1..=config.iterations {
        let (_, local) = balanced_sample(&fit_pools, &mut rng)?;
        let ex = &train_set[fit[local]];
        let step = model
            .loss_and_grads(&ex.x, ex.label, true, &mut rng)
            .and_then(|(loss, mut grads)| {
                if let Some(max) = config.clip_norm {
                    clip_global_norm(&mut grads, max);
                }
                opt.step(model.params_mut(), &grads)?;
                Ok(loss)
            });
        trained_ids.insert(ex.session_id.clone());
        let loss = match step {
            Ok(loss) if model.params().iter().all(|(_, t)| t.is_finite()) => loss,
            Ok(_) => {
                failure = FailureFlag::new(FailureReason::NanDivergence);
                diverged_at = it;
                break;
            }
            Err(e) if e.is_divergence() => {
                failure = FailureFlag::new(FailureReason::NanDivergence);
                diverged_at = it;
                break;
            }
            Err(e) => return Err(e.context(format!("iteration {it}"))),
        };
        iterations_run = it;
        loss_sum += loss;
        loss_n += 1;

        if it % config.eval_every == 0 || it == config.iterations {
            let val = match validate(&model) {
                Ok(v) => v,
                Err(e) if e.is_divergence() => {
                    failure = FailureFlag::new(FailureReason::NanDivergence);
                    diverged_at = it;
                    break;
                }
                Err(e) => return Err(e),
            };
            log.push(LogRow {
                iteration: it,
                loss: loss_sum / loss_n as f64,
                val_accuracy: Some(val),
            });
            loss_sum = 0.0;
            loss_n = 0;
            final_val = Some(val);
            if val > best_val {
                best_val = val;
                best = model.clone();
                best_iteration = it;
                best_optimizer = opt.clone();
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            if matches!(config.plateau_window, Some(w) if since_improvement >= w) {
                break;
            }
        }
    }
    if failure.flagged {
        log.push(LogRow {
            iteration: diverged_at,
            loss: f64::NAN,
            val_accuracy: None,
        });
    }
    Ok(TrainOutcome {
        best,
        best_iteration,
        best_val_accuracy: best_val,
        best_optimizer,
        final_model: model,
        final_val_accuracy: final_val,
        iterations_run,
        log,
        failure,
        trained_ids,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelKind};
    use crate::numeric::Tensor;

    fn toy(n_per_class: usize) -> Vec<Example> {
        let mut v = Vec::new();
        for c in Condition::ALL {
            for i in 0..n_per_class {
                let mut x = vec![0.0; 3 * 4];
                for t in 0..3 {
                    x[t * 4 + c.code()] = 1.0;
                }
                v.push(Example {
                    session_id: format!("{c}-{i}"),
                    label: c,
                    x: Tensor::matrix(3, 4, x).unwrap(),
                });
            }
        }
        v
    }

    fn rnn() -> SequenceModel {
        let mut c = ModelConfig::new(ModelKind::Rnn, 4, 7);
        c.model_dim = 8;
        SequenceModel::new(c).unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut cfg = TrainConfig::new(50, 1);
        cfg.lr = 0.0;
        let m = rnn();
        let out = train(m.clone(), &toy(3), &cfg).unwrap();
        assert_eq!(out.final_model.params(), m.params());
    }

    #[test]
    fn deterministic_log() {
        let cfg = TrainConfig {
            eval_every: 10,
            ..TrainConfig::new(40, 2)
        };
        let a = train(rnn(), &toy(3), &cfg).unwrap();
        let b = train(rnn(), &toy(3), &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 4);
        assert_eq!(a.best.params(), b.best.params());
    }

    #[test]
    fn best_is_at_least_final() {
        let cfg = TrainConfig {
            eval_every: 5,
            lr: 0.05,
            ..TrainConfig::new(60, 3)
        };
        let out = train(rnn(), &toy(4), &cfg).unwrap();
        assert!(out.best_val_accuracy >= out.final_val_accuracy.unwrap());
    }

    #[test]
    fn validation_sessions_never_trained() {
        let cfg = TrainConfig {
            validation_fraction: 0.25,
            ..TrainConfig::new(300, 4)
        };
        let ex = toy(4);
        let (fit, val) = validation_split(&ex, 0.25, derive_seed(4, "validation-split"));
        let out = train(rnn(), &ex, &cfg).unwrap();
        for c in Condition::ALL {
            for &i in val.pool(c) {
                assert!(!fit.contains(&i));
                assert!(!out.trained_ids.contains(&ex[i].session_id));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(0, 0).validate().is_err());
        let mut c = TrainConfig::new(10, 0);
        c.eval_every = 11;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::new(200, 0).eval_every, 200);
        assert_eq!(TrainConfig::default().eval_every, 500);
    }

    #[test]
    fn divergence_is_flagged_not_raised() {
        let cfg = TrainConfig {
            lr: 1e308,
            momentum: 0.5,
            eval_every: 1,
            ..TrainConfig::new(20, 5)
        };
        let out = train(rnn(), &toy(2), &cfg).unwrap();
        assert_eq!(out.failure.reason, FailureReason::NanDivergence);
        assert!(out.best.params().iter().all(|(_, t)| t.is_finite()));
    }
}
