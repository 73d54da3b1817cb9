//! Synthetic stand-in corpus.
//!
//! Every turn is built from a shared filler vocabulary that never overlaps the
//! inventory. With probability `marker_rate` a patient turn additionally carries
//! a marker phrase for the session's condition: the full text of one of the
//! condition's linked inventory items plus one of the condition's marker token
//! groups. With `marker_rate = 0` the class label is invisible in the text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Condition, Session, Speaker, Turn};
use crate::error::{Error, Result};
use crate::inventory::Inventory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Sessions per condition, in condition-code order.
    pub class_counts: [usize; 4],
    /// Turn pairs per session.
    pub turns: usize,
    pub seed: u64,
    /// Share of patient turns carrying a condition marker phrase.
    pub marker_rate: f64,
    /// Share of therapist turns echoing the linked therapist-side item.
    pub therapist_marker_rate: f64,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl GeneratorSpec {
    pub fn new(class_counts: [usize; 4], turns: usize, seed: u64) -> Self {
        Self {
            class_counts,
            turns,
            seed,
            marker_rate: 0.5,
            therapist_marker_rate: 0.0,
            min_filler: 5,
            max_filler: 12,
        }
    }

    pub fn balanced(per_class: usize, turns: usize, seed: u64) -> Self {
        Self::new([per_class; 4], turns, seed)
    }

    pub fn with_marker_rate(mut self, rate: f64) -> Self {
        self.marker_rate = rate;
        self
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Validation("zero sessions requested".into()));
        }
        if let Some(c) = Condition::ALL
            .iter()
            .find(|c| self.class_counts[c.code()] == 0)
        {
            return Err(Error::Validation(format!(
                "at least one session per condition is required ({c} has none)"
            )));
        }
        if self.turns == 0 {
            return Err(Error::Validation("turns must be at least 1".into()));
        }
        for (name, r) in [
            ("marker_rate", self.marker_rate),
            ("therapist_marker_rate", self.therapist_marker_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Validation(format!(
                    "{name} must lie in [0, 1], got {r}"
                )));
            }
        }
        if self.min_filler == 0 || self.min_filler > self.max_filler {
            return Err(Error::Validation(format!(
                "filler length range {}..={} is invalid",
                self.min_filler, self.max_filler
            )));
        }
        Ok(())
    }
}

const FILLER: &[&str] = &[
    "weather",
    "bus",
    "kitchen",
    "morning",
    "yesterday",
    "coffee",
    "garden",
    "neighbor",
    "phone",
    "traffic",
    "dinner",
    "weekend",
    "movie",
    "store",
    "rain",
    "street",
    "friday",
    "office",
    "laundry",
    "car",
    "lunch",
    "walked",
    "called",
    "watched",
    "cooked",
    "bought",
    "cleaned",
    "visited",
    "picked",
    "parked",
    "um",
    "well",
    "so",
    "like",
    "yeah",
    "okay",
    "then",
    "maybe",
    "probably",
    "actually",
    "really",
    "just",
    "kind",
    "sort",
    "anyway",
    "later",
    "again",
    "also",
    "around",
    "outside",
    "quiet",
    "busy",
    "late",
    "early",
    "long",
    "short",
    "little",
    "big",
    "old",
    "new",
    "sister",
    "brother",
    "cousin",
    "dog",
    "cat",
    "radio",
    "television",
    "newspaper",
    "bread",
    "milk",
    "shoes",
    "jacket",
    "window",
    "door",
    "stairs",
    "elevator",
    "ticket",
    "station",
    "train",
    "holiday",
];

const MARKERS: [[[&str; 3]; 4]; 4] = [
    [
        ["worried", "restless", "panic"],
        ["nervous", "racing", "heartbeat"],
        ["dread", "tense", "jittery"],
        ["uneasy", "sweating", "overthinking"],
    ],
    [
        ["hopeless", "empty", "tired"],
        ["numb", "sleepless", "heavy"],
        ["sad", "worthless", "drained"],
        ["gloomy", "withdrawn", "crying"],
    ],
    [
        ["voices", "whispering", "watching"],
        ["hallucination", "signals", "strange"],
        ["paranoid", "followed", "messages"],
        ["delusion", "unreal", "broadcast"],
    ],
    [
        ["ending", "goodbye", "unbearable"],
        ["burden", "disappear", "final"],
        ["overdose", "ledge", "escape"],
        ["quitting", "gone", "pointless"],
    ],
];

/// Shared filler tokens; disjoint from the bundled inventory and all markers.
pub fn filler_vocabulary() -> &'static [&'static str] {
    FILLER
}

/// Marker token groups owned by `condition`.
pub fn condition_vocabulary(condition: Condition) -> &'static [[&'static str; 3]; 4] {
    &MARKERS[condition.code()]
}

/// Inventory indices whose text is planted in `condition`'s marker phrases.
pub fn linked_items(condition: Condition) -> [usize; 3] {
    let base = 1 + 9 * condition.code();
    [base, base + 1, base + 2]
}

/// Generates a corpus against the bundled placeholder inventory.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec) -> Result<Vec<Session>> {
    generate_with_inventory(spec, &Inventory::placeholder())
}

pub fn generate_with_inventory(
    spec: &GeneratorSpec,
    inventory: &Inventory,
) -> Result<Vec<Session>> {
    spec.validate()?;
    if inventory.size() < 30 {
        return Err(Error::Validation(format!(
            "synthetic generator links items up to 30, inventory has {}",
            inventory.size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sessions = Vec::with_capacity(spec.total());
    for condition in Condition::ALL {
        for n in 0..spec.class_counts[condition.code()] {
            let mut turns = Vec::with_capacity(spec.turns * 2);
            for _ in 0..spec.turns {
                turns.push(make_turn(
                    &mut rng,
                    spec,
                    inventory,
                    condition,
                    Speaker::Patient,
                ));
                turns.push(make_turn(
                    &mut rng,
                    spec,
                    inventory,
                    condition,
                    Speaker::Therapist,
                ));
            }
            let id = format!("{}-{:04}", condition, n);
            sessions.push(Session::from_raw_turns(id, condition, &turns)?);
        }
    }
    Ok(sessions)
}

fn make_turn(
    rng: &mut ChaCha8Rng,
    spec: &GeneratorSpec,
    inventory: &Inventory,
    condition: Condition,
    speaker: Speaker,
) -> Turn {
    let n = rng.gen_range(spec.min_filler..=spec.max_filler);
    let mut words: Vec<String> = (0..n)
        .map(|_| FILLER.choose(rng).expect("nonempty").to_string())
        .collect();
    let rate = match speaker {
        Speaker::Patient => spec.marker_rate,
        Speaker::Therapist => spec.therapist_marker_rate,
    };
    // Draw unconditionally so marker_rate does not shift the filler stream.
    let roll: f64 = rng.gen();
    let item_pick = rng.gen_range(0..3);
    let group_pick = rng.gen_range(0..4);
    let at = rng.gen_range(0..=words.len());
    if roll < rate {
        let item = &inventory.items(speaker)[linked_items(condition)[item_pick] - 1];
        let mut phrase: Vec<String> = item.text.split_whitespace().map(str::to_string).collect();
        if speaker == Speaker::Patient {
            phrase.extend(
                MARKERS[condition.code()][group_pick]
                    .iter()
                    .map(|s| s.to_string()),
            );
        }
        words.splice(at..at, phrase);
    }
    Turn::new(speaker, &words.join(" "))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::corpus_to_string;
    use crate::embedding::tokenize;

    #[test]
    fn balanced_counts() {
        let s = generate_synthetic_corpus(&GeneratorSpec::balanced(4, 60, 1)).unwrap();
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|x| x.len() == 60));
    }

    #[test]
    fn imbalanced_counts() {
        let s = generate_synthetic_corpus(&GeneratorSpec::new([495, 373, 71, 12], 2, 1)).unwrap();
        let count = |c| s.iter().filter(|x| x.condition == c).count();
        assert_eq!(
            [
                count(Condition::Anxiety),
                count(Condition::Depression),
                count(Condition::Schizophrenia),
                count(Condition::Suicidal)
            ],
            [495, 373, 71, 12]
        );
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GeneratorSpec::balanced(3, 10, 42);
        let a = corpus_to_string(&generate_synthetic_corpus(&spec).unwrap(), None);
        let b = corpus_to_string(&generate_synthetic_corpus(&spec).unwrap(), None);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sessions_rejected() {
        let spec = GeneratorSpec::new([0; 4], 10, 1);
        assert!(matches!(
            generate_synthetic_corpus(&spec),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let inv = Inventory::placeholder();
        let inv_tokens: HashSet<String> = Speaker::BOTH
            .iter()
            .flat_map(|&r| inv.items(r).iter())
            .flat_map(|i| tokenize(&i.text))
            .collect();
        let filler: HashSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
        assert_eq!(filler.len(), FILLER.len());
        assert!(filler.is_disjoint(&inv_tokens));
        let mut marker_tokens = HashSet::new();
        for groups in MARKERS.iter() {
            for g in groups {
                for t in g {
                    assert!(marker_tokens.insert(t.to_string()), "duplicate marker {t}");
                }
            }
        }
        assert!(marker_tokens.is_disjoint(&inv_tokens));
        assert!(marker_tokens.is_disjoint(&filler));
    }

    #[test]
    fn zero_marker_rate_hides_the_label() {
        let spec = GeneratorSpec::balanced(2, 20, 5).with_marker_rate(0.0);
        let sessions = generate_synthetic_corpus(&spec).unwrap();
        let filler: HashSet<&str> = FILLER.iter().copied().collect();
        for s in &sessions {
            for p in &s.pairs {
                assert!(p.patient.text.split(' ').all(|w| filler.contains(w)));
            }
        }
    }
}
