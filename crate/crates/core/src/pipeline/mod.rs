//! Training, evaluation and the ablation grid.

mod ablation;
mod evaluate;
mod sampling;
mod train;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::alliance::{score_session_with, InventoryEmbeddings, ScoredSession};
use crate::corpus::{split_corpus, truncate_session, Condition, CorpusSplit, Session};
use crate::embedding::{Embedder, ProviderConfig};
use crate::error::{Error, Result};
use crate::features::{assemble_session, FeatureConfig};
use crate::inventory::Inventory;
use crate::numeric::Tensor;

pub use ablation::{
    format_table, reference_accuracy, run_ablation_grid, AblationConfig, AblationResult, CellKey,
    CellResult, GridSpec, ProviderRun, REFERENCE_PROVIDERS,
};
pub use evaluate::{
    detect_failure, evaluate, Classifier, ConfusionMatrix, Evaluation, FailureFlag, FailureReason,
};
pub use sampling::{balanced_draws, balanced_sample, ClassPools};
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

/// Everything besides the model needed to rebuild a run's features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub feature: FeatureConfig,
    pub provider: ProviderConfig,
    pub inventory: Inventory,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
}

/// One session as classifier input.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub session_id: String,
    pub label: Condition,
    pub x: Tensor,
}

/// Scores every session (first `max_pairs` pairs) with one provider.
pub fn score_corpus(
    sessions: &[Session],
    inventory: &Inventory,
    embedder: &Embedder,
    max_pairs: usize,
) -> Result<Vec<ScoredSession>> {
    let items = InventoryEmbeddings::compute(inventory, embedder)?;
    sessions
        .iter()
        .map(|s| score_session_with(&truncate_session(s, max_pairs), &items, embedder))
        .collect()
}

pub fn build_examples(
    scored: &[ScoredSession],
    feature: &FeatureConfig,
    max_pairs: usize,
) -> Result<Vec<Example>> {
    scored
        .iter()
        .map(|s| {
            let seq = assemble_session(s, feature, max_pairs)?;
            Ok(Example {
                session_id: seq.session_id.clone(),
                label: seq.label,
                x: seq.to_tensor()?,
            })
        })
        .collect()
}

/// Sessions whose ids appear in `ids`, in corpus order.
pub fn select_sessions(sessions: &[Session], ids: &[String]) -> Vec<Session> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    sessions
        .iter()
        .filter(|s| wanted.contains(s.session_id.as_str()))
        .cloned()
        .collect()
}

/// Train and test sessions of the split described by `run`.
pub fn split_for_run(
    sessions: &[Session],
    run: &RunContext,
) -> Result<(CorpusSplit, Vec<Session>, Vec<Session>)> {
    let split = split_corpus(sessions, run.test_fraction, run.split_seed)?;
    let train = select_sessions(sessions, &split.train);
    let test = select_sessions(sessions, &split.test);
    Ok((split, train, test))
}

/// Feature inputs for `sessions` under `run`'s provider, inventory and features.
pub fn prepare_examples(
    sessions: &[Session],
    run: &RunContext,
    embedder: &Embedder,
) -> Result<Vec<Example>> {
    if embedder.dim() != run.feature.embed_dim {
        return Err(Error::Config(format!(
            "provider dimension {} does not match feature embed_dim {}",
            embedder.dim(),
            run.feature.embed_dim
        )));
    }
    let scored = score_corpus(sessions, &run.inventory, embedder, run.train.max_pairs)?;
    build_examples(&scored, &run.feature, run.train.max_pairs)
}
