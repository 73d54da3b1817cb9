//! Per-pair feature assembly for the classifiers.
//!
//! Block order is fixed: within a rater block `[sentence embedding ‖ alliance
//! scores]`, and for `both` the patient block precedes the therapist block.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alliance::ScoredSession;
use crate::corpus::{Condition, Speaker};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Default number of leading pairs fed to a classifier.
pub const DEFAULT_MAX_PAIRS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureType {
    WaEmbedding,
    WaScore,
    Embedding,
}

impl FeatureType {
    pub const ALL: [FeatureType; 3] = [
        FeatureType::WaEmbedding,
        FeatureType::WaScore,
        FeatureType::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureType::WaEmbedding => "wa_embedding",
            FeatureType::WaScore => "wa_score",
            FeatureType::Embedding => "embedding",
        }
    }

    fn uses_embedding(self) -> bool {
        matches!(self, FeatureType::WaEmbedding | FeatureType::Embedding)
    }

    fn uses_scores(self) -> bool {
        matches!(self, FeatureType::WaEmbedding | FeatureType::WaScore)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnSource {
    Patient,
    Therapist,
    Both,
}

impl TurnSource {
    pub const ALL: [TurnSource; 3] = [TurnSource::Patient, TurnSource::Therapist, TurnSource::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            TurnSource::Patient => "patient",
            TurnSource::Therapist => "therapist",
            TurnSource::Both => "both",
        }
    }

    pub fn raters(self) -> &'static [Speaker] {
        match self {
            TurnSource::Patient => &[Speaker::Patient],
            TurnSource::Therapist => &[Speaker::Therapist],
            TurnSource::Both => &Speaker::BOTH,
        }
    }
}

macro_rules! display_from_str {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                <$t>::ALL
                    .into_iter()
                    .find(|x| x.as_str() == s)
                    .ok_or_else(|| Error::Config(format!("unknown {} '{s}'", $what)))
            }
        }
    };
}

display_from_str!(FeatureType, "feature type");
display_from_str!(TurnSource, "turn source");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub feature_type: FeatureType,
    pub turn_source: TurnSource,
    pub embed_dim: usize,
    pub inventory_size: usize,
}

impl FeatureConfig {
    pub fn new(feature_type: FeatureType, turn_source: TurnSource, embed_dim: usize) -> Self {
        Self {
            feature_type,
            turn_source,
            embed_dim,
            inventory_size: crate::inventory::STANDARD_SIZE,
        }
    }

    pub fn block_dim(&self) -> usize {
        let mut w = 0;
        if self.feature_type.uses_embedding() {
            w += self.embed_dim;
        }
        if self.feature_type.uses_scores() {
            w += self.inventory_size;
        }
        w
    }

    pub fn feature_dim(&self) -> usize {
        self.block_dim() * self.turn_source.raters().len()
    }
}

/// What one pair offers to the assembler.
pub trait TurnInputs {
    fn embedding(&self, rater: Speaker) -> &[f64];
    fn scores(&self, rater: Speaker) -> &[f64];
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnFeature {
    pub pair_index: usize,
    pub values: Vec<f64>,
}

pub fn assemble_turn_feature(
    pair_index: usize,
    inputs: &impl TurnInputs,
    config: &FeatureConfig,
) -> Result<TurnFeature> {
    let mut values = Vec::with_capacity(config.feature_dim());
    for &rater in config.turn_source.raters() {
        if config.feature_type.uses_embedding() {
            let e = inputs.embedding(rater);
            if e.len() != config.embed_dim {
                return Err(Error::Validation(format!(
                    "pair {pair_index}: {rater} embedding has dimension {}, expected {}",
                    e.len(),
                    config.embed_dim
                )));
            }
            values.extend_from_slice(e);
        }
        if config.feature_type.uses_scores() {
            let s = inputs.scores(rater);
            if s.len() != config.inventory_size {
                return Err(Error::Validation(format!(
                    "pair {pair_index}: {rater} score vector has length {}, expected {}",
                    s.len(),
                    config.inventory_size
                )));
            }
            values.extend_from_slice(s);
        }
    }
    Ok(TurnFeature { pair_index, values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub session_id: String,
    pub label: Condition,
    pub features: Vec<TurnFeature>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, |f| f.values.len())
    }

    /// `[T, width]` matrix of the sequence.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = self.features.iter().map(|f| f.values.clone()).collect();
        Ok(Tensor::from_rows(&rows)?)
    }
}

struct PairView<'a> {
    scored: &'a ScoredSession,
    index: usize,
}

impl TurnInputs for PairView<'_> {
    fn embedding(&self, rater: Speaker) -> &[f64] {
        self.scored.embeddings(rater)[self.index].as_slice()
    }

    fn scores(&self, rater: Speaker) -> &[f64] {
        &self.scored.trajectory.for_rater(rater)[self.index].scores
    }
}

/// Assembles the first `max_pairs` pairs of per-pair inputs.
pub fn assemble_sequence<I: TurnInputs>(
    session_id: &str,
    label: Condition,
    inputs: &[I],
    config: &FeatureConfig,
    max_pairs: usize,
) -> Result<FeatureSequence> {
    if inputs.is_empty() {
        return Err(Error::Validation(format!(
            "session '{session_id}' has no pairs"
        )));
    }
    let keep = inputs.len().min(max_pairs.max(1));
    let features = inputs[..keep]
        .iter()
        .enumerate()
        .map(|(i, inp)| assemble_turn_feature(i, inp, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSequence {
        session_id: session_id.to_string(),
        label,
        features,
    })
}

pub fn assemble_session(
    scored: &ScoredSession,
    config: &FeatureConfig,
    max_pairs: usize,
) -> Result<FeatureSequence> {
    let views: Vec<PairView> = (0..scored.len())
        .map(|index| PairView { scored, index })
        .collect();
    assemble_sequence(
        &scored.session_id,
        scored.condition,
        &views,
        config,
        max_pairs,
    )
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;

    struct Fixed {
        pe: Vec<f64>,
        te: Vec<f64>,
        ps: Vec<f64>,
        ts: Vec<f64>,
        embedding_reads: Cell<usize>,
    }

    impl Fixed {
        fn new(d: usize) -> Self {
            Self {
                pe: (0..d).map(|i| i as f64).collect(),
                te: (0..d).map(|i| 100.0 + i as f64).collect(),
                ps: vec![0.5; 36],
                ts: vec![-0.5; 36],
                embedding_reads: Cell::new(0),
            }
        }
    }

    impl TurnInputs for Fixed {
        fn embedding(&self, rater: Speaker) -> &[f64] {
            self.embedding_reads.set(self.embedding_reads.get() + 1);
            match rater {
                Speaker::Patient => &self.pe,
                Speaker::Therapist => &self.te,
            }
        }
        fn scores(&self, rater: Speaker) -> &[f64] {
            match rater {
                Speaker::Patient => &self.ps,
                Speaker::Therapist => &self.ts,
            }
        }
    }

    #[test]
    fn widths() {
        let f = Fixed::new(64);
        let cfg = FeatureConfig::new(FeatureType::WaEmbedding, TurnSource::Patient, 64);
        assert_eq!(
            assemble_turn_feature(0, &f, &cfg).unwrap().values.len(),
            100
        );
        let cfg = FeatureConfig::new(FeatureType::WaScore, TurnSource::Both, 64);
        assert_eq!(assemble_turn_feature(0, &f, &cfg).unwrap().values.len(), 72);
    }

    #[test]
    fn both_embedding_is_patient_then_therapist() {
        let f = Fixed::new(64);
        let cfg = FeatureConfig::new(FeatureType::Embedding, TurnSource::Both, 64);
        let v = assemble_turn_feature(0, &f, &cfg).unwrap().values;
        assert_eq!(v.len(), 128);
        assert_eq!(&v[..64], &f.pe[..]);
        assert_eq!(&v[64..], &f.te[..]);
    }

    #[test]
    fn wa_embedding_block_is_embedding_then_scores() {
        let f = Fixed::new(4);
        let cfg = FeatureConfig::new(FeatureType::WaEmbedding, TurnSource::Therapist, 4);
        let v = assemble_turn_feature(0, &f, &cfg).unwrap().values;
        assert_eq!(&v[..4], &f.te[..]);
        assert_eq!(&v[4..], &f.ts[..]);
    }

    #[test]
    fn wa_score_never_reads_embeddings() {
        let inputs: Vec<Fixed> = (0..8).map(|_| Fixed::new(64)).collect();
        for source in TurnSource::ALL {
            let cfg = FeatureConfig::new(FeatureType::WaScore, source, 64);
            let seq = assemble_sequence("s", Condition::Anxiety, &inputs, &cfg, 50).unwrap();
            assert_eq!(seq.len(), 8);
        }
        assert!(inputs.iter().all(|i| i.embedding_reads.get() == 0));
    }

    #[test]
    fn sequence_is_truncated() {
        let inputs: Vec<Fixed> = (0..120).map(|_| Fixed::new(8)).collect();
        let cfg = FeatureConfig::new(FeatureType::Embedding, TurnSource::Patient, 8);
        let seq = assemble_sequence("s", Condition::Anxiety, &inputs, &cfg, 50).unwrap();
        assert_eq!(seq.len(), 50);
        assert_eq!(seq.to_tensor().unwrap().shape(), &[50, 8]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let f = Fixed::new(10);
        let cfg = FeatureConfig::new(FeatureType::Embedding, TurnSource::Patient, 64);
        assert!(assemble_turn_feature(0, &f, &cfg).is_err());
    }
}
