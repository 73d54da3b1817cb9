//! Ablation grid: classifier × feature type × turn source × provider.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, FailureFlag, FailureReason};
use super::train::{train, TrainConfig};
use super::{build_examples, score_corpus, select_sessions, RunContext};
use crate::alliance::ScoredSession;
use crate::corpus::{split_corpus, Session};
use crate::digest::{config_digest, derive_seed};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureType, TurnSource};
use crate::inventory::Inventory;
use crate::models::{ModelCheckpoint, ModelConfig, ModelKind, SequenceModel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub classifiers: Vec<ModelKind>,
    pub features: Vec<FeatureType>,
    pub sources: Vec<TurnSource>,
}

impl GridSpec {
    pub fn full() -> Self {
        Self {
            classifiers: ModelKind::ALL.to_vec(),
            features: FeatureType::ALL.to_vec(),
            sources: TurnSource::ALL.to_vec(),
        }
    }

    /// Cells in table order: provider, classifier, feature, source.
    pub fn cells(&self, providers: &[String]) -> Vec<CellKey> {
        let mut out = Vec::new();
        for p in providers {
            for &classifier in &self.classifiers {
                for &feature_type in &self.features {
                    for &turn_source in &self.sources {
                        out.push(CellKey {
                            classifier,
                            feature_type,
                            turn_source,
                            provider: p.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub classifier: ModelKind,
    pub feature_type: FeatureType,
    pub turn_source: TurnSource,
    pub provider: String,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.classifier, self.feature_type, self.turn_source, self.provider
        )
    }

    fn file_stem(&self) -> String {
        self.label().replace('/', "_")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub accuracy: Option<f64>,
    pub failure: FailureFlag,
    pub error: Option<String>,
    pub checkpoint_path: Option<PathBuf>,
}

impl CellResult {
    /// Table text: accuracy, `(F)` for flagged runs, `ERR` for errors.
    pub fn display(&self) -> String {
        match (self.accuracy, &self.error) {
            (_, Some(_)) => "ERR".to_string(),
            (Some(a), None) if self.failure.flagged => format!("{a:.1} (F)"),
            (None, None) if self.failure.flagged => "F".to_string(),
            (Some(a), None) => format!("{a:.1}"),
            (None, None) => "-".to_string(),
        }
    }
}

/// One embedding provider entering the grid under `name`.
#[derive(Clone, Debug)]
pub struct ProviderRun {
    pub name: String,
    pub embedder: Arc<Embedder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub master_seed: u64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub eval_samples: usize,
    /// Execution settings; left out of the serialised form and the digest.
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl AblationConfig {
    pub fn new(train: TrainConfig, master_seed: u64) -> Self {
        Self {
            train,
            master_seed,
            test_fraction: 0.2,
            split_seed: master_seed,
            eval_samples: 1000,
            jobs: 1,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub config_digest: String,
    pub providers: Vec<String>,
    pub spec: GridSpec,
    pub cells: Vec<CellResult>,
}

impl AblationResult {
    pub fn cell(&self, key: &CellKey) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.key == key)
    }

    pub fn csv_header() -> &'static str {
        "classifier,feature_type,turn_source,provider,accuracy_pct,failure_flag,checkpoint_path"
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# config_digest={}\n{}\n",
            self.config_digest,
            Self::csv_header()
        );
        for c in &self.cells {
            let acc = c.accuracy.map(|a| a.to_string()).unwrap_or_default();
            let flag = if c.error.is_some() {
                "error"
            } else {
                c.failure.reason.as_str()
            };
            let path = c
                .checkpoint_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{acc},{flag},{path}",
                c.key.classifier, c.key.feature_type, c.key.turn_source, c.key.provider
            );
        }
        out
    }

    /// Text table: one row per (classifier, feature), three source columns per provider.
    pub fn to_table(&self) -> String {
        let mut header = vec!["model".to_string()];
        for p in &self.providers {
            for s in &self.spec.sources {
                header.push(format!("{p}:{s}"));
            }
        }
        let mut rows = Vec::new();
        for &k in &self.spec.classifiers {
            for &f in &self.spec.features {
                let mut row = vec![format!("{k} ({f})")];
                for p in &self.providers {
                    for &s in &self.spec.sources {
                        let key = CellKey {
                            classifier: k,
                            feature_type: f,
                            turn_source: s,
                            provider: p.clone(),
                        };
                        row.push(self.cell(&key).map_or("-".to_string(), CellResult::display));
                    }
                }
                rows.push(row);
            }
        }
        format_table(&header, &rows)
    }
}

/// Left-aligned first column, right-aligned rest.
pub fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (i, cell) in r.iter().enumerate() {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |r: &[String]| {
        let mut s = String::new();
        for (i, cell) in r.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}", w = width[0]);
            } else {
                let _ = write!(s, " | {cell:>w$}", w = width[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 3 * (cols - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Column groups of [`reference_accuracy`].
pub const REFERENCE_PROVIDERS: [&str; 2] = ["sentence_bert", "doc2vec"];

// Published accuracies (%) and failure marks, rows in table order, columns
// patient/therapist/both per provider. Display only.
const REFERENCE: [[(f64, bool); 6]; 9] = [
    [
        (27.6, false),
        (27.0, false),
        (26.0, false),
        (34.1, false),
        (25.7, false),
        (31.9, false),
    ],
    [
        (26.1, false),
        (23.4, false),
        (25.5, false),
        (28.9, false),
        (23.7, false),
        (31.9, false),
    ],
    [
        (24.8, false),
        (24.0, false),
        (25.5, false),
        (31.8, false),
        (26.2, false),
        (29.9, false),
    ],
    [
        (35.0, false),
        (36.9, false),
        (23.3, false),
        (46.0, false),
        (27.7, false),
        (29.6, false),
    ],
    [
        (24.5, false),
        (34.2, false),
        (22.6, false),
        (30.2, false),
        (24.7, true),
        (43.4, false),
    ],
    [
        (23.0, false),
        (36.0, false),
        (22.9, false),
        (44.3, false),
        (31.1, false),
        (31.1, false),
    ],
    [
        (22.8, false),
        (30.6, false),
        (26.8, false),
        (23.0, true),
        (24.9, false),
        (19.1, false),
    ],
    [
        (30.5, false),
        (28.0, true),
        (25.6, true),
        (24.0, true),
        (22.9, false),
        (32.6, false),
    ],
    [
        (25.3, false),
        (27.5, false),
        (29.0, false),
        (33.8, false),
        (29.0, false),
        (26.2, false),
    ],
];

/// Reference accuracy and failure mark for a cell; `provider` indexes [`REFERENCE_PROVIDERS`].
pub fn reference_accuracy(
    classifier: ModelKind,
    feature: FeatureType,
    source: TurnSource,
    provider: usize,
) -> Option<(f64, bool)> {
    if provider >= REFERENCE_PROVIDERS.len() {
        return None;
    }
    let k = ModelKind::ALL.iter().position(|&x| x == classifier)?;
    let f = FeatureType::ALL.iter().position(|&x| x == feature)?;
    let s = TurnSource::ALL.iter().position(|&x| x == source)?;
    Some(REFERENCE[k * 3 + f][provider * 3 + s])
}

struct ProviderData {
    name: String,
    embedder: Arc<Embedder>,
    scored: Result<(Vec<ScoredSession>, Vec<ScoredSession>), String>,
}

/// Runs every cell of `spec` for every provider. Cell failures are recorded,
/// never propagated.
pub fn run_ablation_grid(
    sessions: &[Session],
    inventory: &Inventory,
    providers: &[ProviderRun],
    spec: &GridSpec,
    config: &AblationConfig,
) -> Result<AblationResult> {
    config.train.validate()?;
    if providers.is_empty() {
        return Err(Error::Config("ablation needs at least one provider".into()));
    }
    let names: Vec<String> = providers.iter().map(|p| p.name.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Config(format!("provider name '{n}' used twice")));
        }
    }
    let jobs = config.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;

    let split = split_corpus(sessions, config.test_fraction, config.split_seed)?;
    let train_sessions = select_sessions(sessions, &split.train);
    let test_sessions = select_sessions(sessions, &split.test);
    let max_pairs = config.train.max_pairs;

    let data: Vec<ProviderData> = providers
        .iter()
        .map(|p| {
            let scored =
                score_corpus(&train_sessions, inventory, &p.embedder, max_pairs).and_then(|tr| {
                    Ok((
                        tr,
                        score_corpus(&test_sessions, inventory, &p.embedder, max_pairs)?,
                    ))
                });
            ProviderData {
                name: p.name.clone(),
                embedder: Arc::clone(&p.embedder),
                scored: scored.map_err(|e| e.to_string()),
            }
        })
        .collect();

    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir.join("cells")).map_err(|e| Error::io(dir, e))?;
    }

    let cells = spec.cells(&names);
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|key| {
                let pd = data
                    .iter()
                    .find(|d| d.name == key.provider)
                    .expect("known provider");
                match run_cell(key, pd, inventory, config) {
                    Ok(r) => r,
                    Err(e) => CellResult {
                        key: key.clone(),
                        accuracy: None,
                        failure: FailureFlag::NONE,
                        error: Some(e.to_string()),
                        checkpoint_path: None,
                    },
                }
            })
            .collect()
    });

    let provider_configs: Vec<_> = providers
        .iter()
        .map(|p| (&p.name, p.embedder.config()))
        .collect();
    Ok(AblationResult {
        config_digest: config_digest(&(config, spec, &provider_configs, inventory)),
        providers: names,
        spec: spec.clone(),
        cells: results,
    })
}

fn run_cell(
    key: &CellKey,
    pd: &ProviderData,
    inventory: &Inventory,
    config: &AblationConfig,
) -> Result<CellResult> {
    let (scored_train, scored_test) = pd
        .scored
        .as_ref()
        .map_err(|e| Error::Validation(e.clone()))?;
    let label = key.label();
    let mut feature = FeatureConfig::new(key.feature_type, key.turn_source, pd.embedder.dim());
    feature.inventory_size = inventory.size();
    let max_pairs = config.train.max_pairs;
    let train_set = build_examples(scored_train, &feature, max_pairs)?;
    let test_set = build_examples(scored_test, &feature, max_pairs)?;

    let mut model_cfg = ModelConfig::new(
        key.classifier,
        feature.feature_dim(),
        derive_seed(config.master_seed, &format!("{label}/init")),
    );
    model_cfg.max_len = max_pairs;
    let model = SequenceModel::new(model_cfg)?;
    let train_cfg = TrainConfig {
        seed: derive_seed(config.master_seed, &label),
        ..config.train.clone()
    };
    let outcome = train(model, &train_set, &train_cfg)?;
    let eval = evaluate(
        &outcome.best,
        &test_set,
        config.eval_samples,
        derive_seed(config.master_seed, &format!("{label}/eval")),
    )?;
    let failure = if outcome.failure.flagged {
        FailureFlag::new(FailureReason::NanDivergence)
    } else {
        eval.failure
    };

    let checkpoint_path = match &config.out_dir {
        Some(dir) => {
            let run = RunContext {
                feature,
                provider: pd.embedder.config().clone(),
                inventory: inventory.clone(),
                train: train_cfg,
                test_fraction: config.test_fraction,
                split_seed: config.split_seed,
            };
            let ckpt = ModelCheckpoint::new(
                &outcome.best,
                Some(run),
                Some(&outcome.best_optimizer),
                outcome.best_iteration as u64,
                None,
            );
            let path = cell_path(dir, key);
            ckpt.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(CellResult {
        key: key.clone(),
        accuracy: Some(eval.accuracy),
        failure,
        error: None,
        checkpoint_path,
    })
}

fn cell_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join("cells").join(format!("{}.json", key.file_stem()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn execution_settings_do_not_change_the_digest() {
        let a = AblationConfig::new(TrainConfig::new(10, 1), 4);
        let mut b = a.clone();
        b.jobs = 8;
        b.out_dir = Some(PathBuf::from("/tmp/x"));
        assert_eq!(config_digest(&a), config_digest(&b));
        b.master_seed = 5;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn full_grid_has_27_cells_per_provider() {
        let names = vec!["hash".to_string(), "file".to_string()];
        let cells = GridSpec::full().cells(&names);
        assert_eq!(cells.len(), 54);
        let mut labels: Vec<String> = cells.iter().map(CellKey::label).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 54);
    }

    #[test]
    fn reference_lookup() {
        let r = reference_accuracy(
            ModelKind::Lstm,
            FeatureType::WaEmbedding,
            TurnSource::Patient,
            1,
        );
        assert_eq!(r, Some((46.0, false)));
        let r = reference_accuracy(
            ModelKind::Lstm,
            FeatureType::WaScore,
            TurnSource::Therapist,
            1,
        );
        assert_eq!(r, Some((24.7, true)));
        assert_eq!(
            reference_accuracy(ModelKind::Rnn, FeatureType::Embedding, TurnSource::Both, 2),
            None
        );
    }

    #[test]
    fn cell_display() {
        let key = GridSpec::full().cells(&["hash".into()])[0].clone();
        let mut c = CellResult {
            key,
            accuracy: Some(31.24),
            failure: FailureFlag::NONE,
            error: None,
            checkpoint_path: None,
        };
        assert_eq!(c.display(), "31.2");
        c.failure = FailureFlag::new(FailureReason::SingleClassCollapse);
        assert_eq!(c.display(), "31.2 (F)");
        c.error = Some("boom".into());
        assert_eq!(c.display(), "ERR");
    }

    #[test]
    fn table_layout() {
        let header: Vec<String> = ["a", "bb"].map(String::from).to_vec();
        let t = format_table(&header, &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a   | bb\n--------\nxyz |  1\n");
    }
}
