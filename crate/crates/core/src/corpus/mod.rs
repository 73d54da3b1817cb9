//! Psychotherapy sessions: data model, transcript I/O, splitting and truncation.

mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{
    condition_vocabulary, filler_vocabulary, generate_synthetic_corpus, generate_with_inventory,
    linked_items, GeneratorSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Patient,
    Therapist,
}

impl Speaker {
    pub const BOTH: [Speaker; 2] = [Speaker::Patient, Speaker::Therapist];

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Patient => "patient",
            Speaker::Therapist => "therapist",
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::Patient => Speaker::Therapist,
            Speaker::Therapist => Speaker::Patient,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patient" => Ok(Speaker::Patient),
            "therapist" => Ok(Speaker::Therapist),
            other => Err(Error::Validation(format!("unknown speaker '{other}'"))),
        }
    }
}

/// One utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: &str) -> Self {
        Self {
            speaker,
            text: text.trim().to_string(),
        }
    }
}

/// Patient turn followed by the therapist's reply: one time step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TurnPair {
    pub index: usize,
    pub patient: Turn,
    pub therapist: Turn,
}

impl TurnPair {
    pub fn turn(&self, speaker: Speaker) -> &Turn {
        match speaker {
            Speaker::Patient => &self.patient,
            Speaker::Therapist => &self.therapist,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Anxiety,
    Depression,
    Schizophrenia,
    Suicidal,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Anxiety,
        Condition::Depression,
        Condition::Schizophrenia,
        Condition::Suicidal,
    ];
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Condition> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Anxiety => "anxiety",
            Condition::Depression => "depression",
            Condition::Schizophrenia => "schizophrenia",
            Condition::Suicidal => "suicidal",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown condition '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub condition: Condition,
    pub pairs: Vec<TurnPair>,
}

impl Session {
    /// Builds a session from raw speaker-tagged turns, merging same-speaker runs
    /// and completing a dangling turn with an empty partner.
    pub fn from_raw_turns(
        session_id: impl Into<String>,
        condition: Condition,
        turns: &[Turn],
    ) -> Result<Self> {
        let session_id = session_id.into();
        if session_id.is_empty() {
            return Err(Error::Validation("session_id must be nonempty".into()));
        }
        let pairs = pair_turns(turns);
        if pairs.is_empty() {
            return Err(Error::Validation(format!(
                "session '{session_id}' has no turns"
            )));
        }
        Ok(Self {
            session_id,
            condition,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Raw turns in file order (patient, therapist, patient, ...).
    pub fn raw_turns(&self) -> Vec<Turn> {
        self.pairs
            .iter()
            .flat_map(|p| [p.patient.clone(), p.therapist.clone()])
            .collect()
    }
}

/// Merge consecutive same-speaker turns, then pair patient→therapist.
pub fn pair_turns(turns: &[Turn]) -> Vec<TurnPair> {
    let mut blocks: Vec<(Speaker, Vec<&str>)> = Vec::new();
    for turn in turns {
        let text = turn.text.trim();
        match blocks.last_mut() {
            Some((speaker, parts)) if *speaker == turn.speaker => {
                if !text.is_empty() {
                    parts.push(text);
                }
            }
            _ => blocks.push((
                turn.speaker,
                if text.is_empty() { vec![] } else { vec![text] },
            )),
        }
    }

    let mut pairs = Vec::new();
    let mut iter = blocks.into_iter().peekable();
    while let Some((speaker, parts)) = iter.next() {
        let text = parts.join(" ");
        let (patient, therapist) = match speaker {
            Speaker::Patient => {
                let reply = match iter.peek() {
                    Some((Speaker::Therapist, _)) => iter.next().map(|(_, p)| p.join(" ")),
                    _ => None,
                };
                (text, reply.unwrap_or_default())
            }
            Speaker::Therapist => (String::new(), text),
        };
        pairs.push(TurnPair {
            index: pairs.len(),
            patient: Turn {
                speaker: Speaker::Patient,
                text: patient,
            },
            therapist: Turn {
                speaker: Speaker::Therapist,
                text: therapist,
            },
        });
    }
    pairs
}

#[derive(Serialize, Deserialize)]
struct RawSession {
    session_id: String,
    condition: String,
    turns: Vec<Turn>,
}

/// Parses the one-session-per-line transcript format. Lines starting with `#`
/// and blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawSession = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let condition: Condition = raw
            .condition
            .parse()
            .map_err(|e: Error| e.context(format!("line {line_no}")))?;
        let session = Session::from_raw_turns(raw.session_id, condition, &raw.turns)
            .map_err(|e| e.context(format!("line {line_no}")))?;
        if !seen.insert(session.session_id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate session_id '{}'",
                session.session_id
            )));
        }
        sessions.push(session);
    }
    if sessions.is_empty() {
        return Err(Error::Validation("corpus contains no sessions".into()));
    }
    Ok(sessions)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Session>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
}

/// Serialises sessions in the transcript format, one line each.
pub fn corpus_to_string(sessions: &[Session], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    for s in sessions {
        let raw = RawSession {
            session_id: s.session_id.clone(),
            condition: s.condition.to_string(),
            turns: s.raw_turns(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("session serialises"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    sessions: &[Session],
    header: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(corpus_to_string(sessions, header).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Per-class sample counts for a stratified split of `counts` at `fraction`.
///
/// Floors each class's share, then hands the remaining units of the rounded
/// total to the classes with the largest fractional remainders.
pub fn stratified_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&n| n as f64 * fraction).collect();
    let mut picked: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut remaining = target.saturating_sub(picked.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if picked[c] < counts[c] {
            picked[c] += 1;
            remaining -= 1;
        }
    }
    picked
}

/// Stratified, seeded split into train and test session ids.
pub fn split_corpus(sessions: &[Session], test_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if sessions.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 sessions to split, got {}",
            sessions.len()
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); Condition::COUNT];
    for (i, s) in sessions.iter().enumerate() {
        by_class[s.condition.code()].push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let mut take = stratified_counts(&sizes, test_fraction);

    // Keep at least one session on each side.
    let n_test: usize = take.iter().sum();
    if n_test == 0 {
        let c = (0..take.len())
            .max_by_key(|&c| (sizes[c], usize::MAX - c))
            .unwrap();
        take[c] = 1;
    } else if n_test == sessions.len() {
        let c = (0..take.len())
            .max_by_key(|&c| (take[c], usize::MAX - c))
            .unwrap();
        take[c] -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; sessions.len()];
    for (members, &k) in by_class.iter().zip(&take) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..k] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in sessions.iter().zip(in_test) {
        if t {
            test.push(s.session_id.clone());
        } else {
            train.push(s.session_id.clone());
        }
    }
    Ok(CorpusSplit { train, test, seed })
}

/// First `min(T, max_pairs)` pairs; never pads.
pub fn truncate_session(session: &Session, max_pairs: usize) -> Session {
    let keep = session.pairs.len().min(max_pairs.max(1));
    Session {
        session_id: session.session_id.clone(),
        condition: session.condition,
        pairs: session.pairs[..keep].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(t: &str) -> Turn {
        Turn::new(Speaker::Patient, t)
    }
    fn t(x: &str) -> Turn {
        Turn::new(Speaker::Therapist, x)
    }

    #[test]
    fn alternating_turns_pair_directly() {
        let pairs = pair_turns(&[p("a"), t("b"), p("c"), t("d")]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].patient.text, "c");
        assert_eq!(pairs[1].therapist.text, "d");
    }

    #[test]
    fn same_speaker_runs_are_merged() {
        let pairs = pair_turns(&[p("one"), p("two"), t("three")]);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].patient.text, "one two");
        assert_eq!(pairs[0].therapist.text, "three");
    }

    #[test]
    fn dangling_turn_gets_empty_partner() {
        let pairs = pair_turns(&[p("a"), t("b"), p("c")]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].patient.text, "c");
        assert_eq!(pairs[1].therapist.text, "");

        let pairs = pair_turns(&[t("hello"), p("hi")]);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].patient.text, "");
        assert_eq!(pairs[0].therapist.text, "hello");
        assert_eq!(pairs[1].therapist.text, "");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "# header\n{\"session_id\":\"a\",\"condition\":\"anxiety\",\"turns\":[]}\n";
        let err = parse_corpus(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let text = "{\"session_id\":\"a\",\"condition\":\"anxiety\",\"turns\":[{\"speaker\":\"patient\",\"text\":\"x\"}]}\nnot json\n";
        match parse_corpus(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_condition_and_empty_file_are_validation_errors() {
        let text = "{\"session_id\":\"a\",\"condition\":\"ocd\",\"turns\":[{\"speaker\":\"patient\",\"text\":\"x\"}]}\n";
        let err = parse_corpus(text.as_bytes()).unwrap_err();
        assert!(matches!(err.root(), Error::Validation(m) if m.contains("ocd")));
        assert!(matches!(
            parse_corpus("".as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn duplicate_session_ids_rejected() {
        let line = "{\"session_id\":\"a\",\"condition\":\"anxiety\",\"turns\":[{\"speaker\":\"patient\",\"text\":\"x\"}]}\n";
        let text = format!("{line}{line}");
        assert!(matches!(
            parse_corpus(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn stratified_counts_match_published_imbalance() {
        let c = stratified_counts(&[495, 373, 71, 12], 0.2);
        assert_eq!(c, vec![99, 75, 14, 2]);
    }

    fn toy_corpus(counts: [usize; 4]) -> Vec<Session> {
        let mut out = Vec::new();
        for (c, &n) in Condition::ALL.iter().zip(&counts) {
            for i in 0..n {
                out.push(
                    Session::from_raw_turns(format!("{c}-{i}"), *c, &[p("x"), t("y")]).unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn split_ten_sessions() {
        let s = toy_corpus([3, 3, 2, 2]);
        let split = split_corpus(&s, 0.2, 7).unwrap();
        assert_eq!(split.test.len(), 2);
        assert!(split.test.iter().all(|id| !split.train.contains(id)));
        assert_eq!(split, split_corpus(&s, 0.2, 7).unwrap());
    }

    #[test]
    fn split_needs_two_sessions() {
        let s = toy_corpus([1, 0, 0, 0]);
        assert!(matches!(
            split_corpus(&s, 0.2, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn truncation() {
        let turns: Vec<Turn> = (0..120)
            .flat_map(|i| [p(&i.to_string()), t("ok")])
            .collect();
        let s = Session::from_raw_turns("s", Condition::Anxiety, &turns).unwrap();
        assert_eq!(truncate_session(&s, 50).len(), 50);
        assert_eq!(truncate_session(&s, 1).pairs[0].patient.text, "0");
        let short = truncate_session(&s, 10);
        assert_eq!(truncate_session(&short, 50), short);
    }
}
