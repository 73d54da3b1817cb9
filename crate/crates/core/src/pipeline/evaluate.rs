//! Balanced-draw evaluation, confusion matrices and failure detection.

use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{balanced_draws, ClassPools};
use super::Example;
use crate::corpus::Condition;
use crate::error::{Error, Result};
use crate::models::SequenceModel;

const K: usize = Condition::COUNT;

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Condition, predicted: Condition) {
        self.counts[truth.code()][predicted.code()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// Percent correct; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.correct() as f64 / t as f64,
        }
    }

    pub fn row_sums(&self) -> [u64; K] {
        std::array::from_fn(|i| self.counts[i].iter().sum())
    }

    pub fn column_sums(&self) -> [u64; K] {
        std::array::from_fn(|j| (0..K).map(|i| self.counts[i][j]).sum())
    }

    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("true\\predicted");
        for c in Condition::ALL {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for c in Condition::ALL {
            out.push_str(c.as_str());
            for n in self.counts[c.code()] {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| Error::Validation("empty confusion CSV".into()))?;
        let cols: Vec<&str> = header.split(',').skip(1).collect();
        let expected: Vec<&str> = Condition::ALL.iter().map(|c| c.as_str()).collect();
        if cols != expected {
            return Err(parse_err(hl, format!("unexpected header '{header}'")));
        }
        let mut m = Self::default();
        for (row, c) in Condition::ALL.iter().enumerate() {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::Validation(format!("missing row for {c}")))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != K + 1 || fields[0] != c.as_str() {
                return Err(parse_err(ln, format!("expected a row for {c}")));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                m.counts[row][j] = f
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad count '{f}': {e}")))?;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>14}", "")?;
        for c in Condition::ALL {
            write!(f, " {:>13}", c.as_str())?;
        }
        writeln!(f)?;
        for c in Condition::ALL {
            write!(f, "{:>14}", c.as_str())?;
            for n in self.counts[c.code()] {
                write!(f, " {n:>13}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    #[default]
    None,
    SingleClassCollapse,
    NanDivergence,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::SingleClassCollapse => "single_class_collapse",
            FailureReason::NanDivergence => "nan_divergence",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FailureFlag {
    pub flagged: bool,
    pub reason: FailureReason,
}

impl FailureFlag {
    pub const NONE: FailureFlag = FailureFlag {
        flagged: false,
        reason: FailureReason::None,
    };

    pub fn new(reason: FailureReason) -> Self {
        Self {
            flagged: reason != FailureReason::None,
            reason,
        }
    }
}

impl fmt::Display for FailureFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.reason.as_str())
    }
}

/// Share of predictions in one class above this marks a collapse...
pub const COLLAPSE_SHARE: f64 = 0.95;
/// ...provided accuracy is within this many points of chance.
pub const COLLAPSE_CHANCE_BAND: f64 = 5.0;

pub fn detect_failure(cm: &ConfusionMatrix) -> FailureFlag {
    let total = cm.total();
    if total == 0 {
        return FailureFlag::NONE;
    }
    let top = *cm.column_sums().iter().max().expect("4 columns");
    let chance = 100.0 / K as f64;
    if top as f64 / total as f64 > COLLAPSE_SHARE
        && (cm.accuracy() - chance).abs() <= COLLAPSE_CHANCE_BAND
    {
        FailureFlag::new(FailureReason::SingleClassCollapse)
    } else {
        FailureFlag::NONE
    }
}

/// Anything that maps an example to a class.
pub trait Classifier {
    fn classify(&self, example: &Example) -> Result<Condition>;
}

impl Classifier for SequenceModel {
    fn classify(&self, example: &Example) -> Result<Condition> {
        Ok(self.predict(&example.x)?.condition)
    }
}

impl<F: Fn(&Example) -> Condition> Classifier for F {
    fn classify(&self, example: &Example) -> Result<Condition> {
        Ok(self(example))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub failure: FailureFlag,
}

/// Confusion matrix over `draws`, predicting each distinct example once.
pub(crate) fn confusion_on<C: Classifier + ?Sized>(
    model: &C,
    examples: &[Example],
    draws: &[(Condition, usize)],
) -> Result<ConfusionMatrix> {
    let mut cache: HashMap<usize, Condition> = HashMap::new();
    let mut cm = ConfusionMatrix::default();
    for &(truth, idx) in draws {
        let pred = match cache.get(&idx) {
            Some(&p) => p,
            None => {
                let p = model.classify(&examples[idx]).map_err(|e| {
                    e.context(format!(
                        "classifying session '{}'",
                        examples[idx].session_id
                    ))
                })?;
                cache.insert(idx, p);
                p
            }
        };
        cm.record(truth, pred);
    }
    Ok(cm)
}

/// `n_samples` balanced draws with replacement from `test`.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    test: &[Example],
    n_samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    if n_samples == 0 {
        return Err(Error::Config("evaluation needs at least one sample".into()));
    }
    let pools = ClassPools::from_labels(test.iter().map(|e| e.label));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = balanced_draws(&pools, n_samples, &mut rng, "test set")?;
    let confusion = confusion_on(model, test, &draws)?;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        failure: detect_failure(&confusion),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn examples() -> Vec<Example> {
        let mut v = Vec::new();
        for (c, n) in Condition::ALL.into_iter().zip([5, 4, 2, 1]) {
            for i in 0..n {
                v.push(Example {
                    session_id: format!("{c}-{i}"),
                    label: c,
                    x: Tensor::matrix(1, 1, vec![c.code() as f64]).unwrap(),
                });
            }
        }
        v
    }

    #[test]
    fn oracle_stub_is_perfect() {
        let oracle = |e: &Example| Condition::from_code(e.x.data()[0] as usize).unwrap();
        let ev = evaluate(&oracle, &examples(), 1000, 1).unwrap();
        assert_eq!(ev.accuracy, 100.0);
        assert_eq!(ev.confusion.correct(), 1000);
        assert!(!ev.failure.flagged);
    }

    #[test]
    fn constant_stub_collapses() {
        let constant = |_: &Example| Condition::Schizophrenia;
        let ev = evaluate(&constant, &examples(), 1000, 2).unwrap();
        assert!((ev.accuracy - 25.0).abs() < 5.0);
        assert_eq!(
            ev.failure,
            FailureFlag::new(FailureReason::SingleClassCollapse)
        );
    }

    #[test]
    fn collapse_needs_chance_accuracy() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 970;
        cm.counts[1][0] = 30;
        assert!(!detect_failure(&cm).flagged);
        let mut cm = ConfusionMatrix::default();
        for i in 0..K {
            cm.counts[i][2] = 240;
            cm.counts[i][i] += 10;
        }
        assert!(detect_failure(&cm).flagged);
        cm.counts[0][2] = 0;
        cm.counts[0][0] = 250;
        assert!(!detect_failure(&cm).flagged);
    }

    #[test]
    fn csv_round_trip() {
        let constant = |e: &Example| {
            if e.label == Condition::Anxiety {
                Condition::Anxiety
            } else {
                Condition::Suicidal
            }
        };
        let ev = evaluate(&constant, &examples(), 100, 3).unwrap();
        let csv = ev.confusion.to_csv(Some("config_digest=abc"));
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), ev.confusion);
        assert_eq!(ev.confusion.total(), 100);
    }

    #[test]
    fn empty_class_is_an_error() {
        let ex: Vec<Example> = examples()
            .into_iter()
            .filter(|e| e.label != Condition::Suicidal)
            .collect();
        assert!(evaluate(&|_: &Example| Condition::Anxiety, &ex, 10, 0).is_err());
    }
}
