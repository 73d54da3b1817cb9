//! Psychological state encoder: cosine projection of each turn onto the
//! embedded inventory items of the same rater.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, Session, Speaker};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::inventory::{Inventory, Subscale};

/// `a·b / (‖a‖‖b‖)`, or exactly 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "cosine: dimension mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllianceScoreVector {
    pub rater: Speaker,
    pub pair_index: usize,
    /// Entry `j` belongs to inventory item `j + 1`.
    pub scores: Vec<f64>,
}

impl AllianceScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Mean score over the items tagged `subscale`.
    pub fn subscale_mean(&self, inventory: &Inventory, subscale: Subscale) -> f64 {
        let idx = inventory.subscale_mask(subscale);
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().map(|i| self.scores[i - 1]).sum::<f64>() / idx.len() as f64
    }
}

/// Embedded inventory items, looked up per rater.
pub trait ItemEmbeddings {
    fn items(&self, rater: Speaker) -> &[EmbeddingVector];
}

/// Inventory embeddings computed once per (provider, inventory).
#[derive(Clone, Debug, PartialEq)]
pub struct InventoryEmbeddings {
    patient: Vec<EmbeddingVector>,
    therapist: Vec<EmbeddingVector>,
}

impl InventoryEmbeddings {
    pub fn compute(inventory: &Inventory, embedder: &Embedder) -> Result<Self> {
        let embed = |rater: Speaker| -> Result<Vec<EmbeddingVector>> {
            let texts: Vec<&str> = inventory
                .items(rater)
                .iter()
                .map(|i| i.text.as_str())
                .collect();
            embedder
                .embed_batch(&texts)
                .map_err(|e| Error::from(e).context(format!("{rater} inventory items")))
        };
        Ok(Self {
            patient: embed(Speaker::Patient)?,
            therapist: embed(Speaker::Therapist)?,
        })
    }

    pub fn from_vectors(patient: Vec<EmbeddingVector>, therapist: Vec<EmbeddingVector>) -> Self {
        Self { patient, therapist }
    }
}

impl ItemEmbeddings for InventoryEmbeddings {
    fn items(&self, rater: Speaker) -> &[EmbeddingVector] {
        match rater {
            Speaker::Patient => &self.patient,
            Speaker::Therapist => &self.therapist,
        }
    }
}

/// Scores one turn embedding against the items of its rater.
pub fn score_turn(
    turn: &EmbeddingVector,
    items: &[EmbeddingVector],
    rater: Speaker,
    pair_index: usize,
) -> Result<AllianceScoreVector> {
    let scores = items
        .iter()
        .map(|item| cosine(turn.as_slice(), item.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AllianceScoreVector {
        rater,
        pair_index,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionTrajectory {
    pub patient: Vec<AllianceScoreVector>,
    pub therapist: Vec<AllianceScoreVector>,
}

impl SessionTrajectory {
    pub fn len(&self) -> usize {
        self.patient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient.is_empty()
    }

    pub fn for_rater(&self, rater: Speaker) -> &[AllianceScoreVector] {
        match rater {
            Speaker::Patient => &self.patient,
            Speaker::Therapist => &self.therapist,
        }
    }
}

/// Turn embeddings and alliance trajectory of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSession {
    pub session_id: String,
    pub condition: Condition,
    pub patient_embeddings: Vec<EmbeddingVector>,
    pub therapist_embeddings: Vec<EmbeddingVector>,
    pub trajectory: SessionTrajectory,
}

impl ScoredSession {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn embeddings(&self, rater: Speaker) -> &[EmbeddingVector] {
        match rater {
            Speaker::Patient => &self.patient_embeddings,
            Speaker::Therapist => &self.therapist_embeddings,
        }
    }
}

/// Scores every pair of `session`, computing inventory embeddings once.
pub fn score_session(
    session: &Session,
    inventory: &Inventory,
    embedder: &Embedder,
) -> Result<SessionTrajectory> {
    let items = InventoryEmbeddings::compute(inventory, embedder)?;
    Ok(score_session_with(session, &items, embedder)?.trajectory)
}

/// Scores `session` against precomputed item embeddings.
pub fn score_session_with(
    session: &Session,
    items: &impl ItemEmbeddings,
    embedder: &Embedder,
) -> Result<ScoredSession> {
    let mut embeddings = Vec::with_capacity(2);
    let mut trajectories = Vec::with_capacity(2);
    for rater in Speaker::BOTH {
        let texts: Vec<&str> = session
            .pairs
            .iter()
            .map(|p| p.turn(rater).text.as_str())
            .collect();
        let vecs = embedder.embed_batch(&texts).map_err(|e| {
            Error::from(e).context(format!(
                "session '{}', {rater} turns (text index = pair index)",
                session.session_id
            ))
        })?;
        let targets = items.items(rater);
        let traj = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                score_turn(v, targets, rater, i).map_err(|e| {
                    e.context(format!(
                        "session '{}', pair {i}, {rater}",
                        session.session_id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        embeddings.push(vecs);
        trajectories.push(traj);
    }
    let therapist_embeddings = embeddings.pop().expect("two raters");
    let patient_embeddings = embeddings.pop().expect("two raters");
    let therapist = trajectories.pop().expect("two raters");
    let patient = trajectories.pop().expect("two raters");
    Ok(ScoredSession {
        session_id: session.session_id.clone(),
        condition: session.condition,
        patient_embeddings,
        therapist_embeddings,
        trajectory: SessionTrajectory { patient, therapist },
    })
}

/// One row of the score export.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub session_id: String,
    pub pair_index: usize,
    pub rater: Speaker,
    pub scores: Vec<f64>,
    pub task_mean: f64,
    pub bond_mean: f64,
    pub goal_mean: f64,
}

pub fn score_rows(scored: &ScoredSession, inventory: &Inventory) -> Vec<ScoreRow> {
    let mut rows = Vec::with_capacity(scored.len() * 2);
    for i in 0..scored.len() {
        for rater in Speaker::BOTH {
            let v = &scored.trajectory.for_rater(rater)[i];
            rows.push(ScoreRow {
                session_id: scored.session_id.clone(),
                pair_index: i,
                rater,
                scores: v.scores.clone(),
                task_mean: v.subscale_mean(inventory, Subscale::Task),
                bond_mean: v.subscale_mean(inventory, Subscale::Bond),
                goal_mean: v.subscale_mean(inventory, Subscale::Goal),
            });
        }
    }
    rows
}

pub fn score_csv_header(size: usize) -> String {
    let mut cols = vec![
        "session_id".to_string(),
        "pair_index".into(),
        "rater".into(),
    ];
    cols.extend((1..=size).map(|j| format!("w_{j}")));
    cols.extend(["task_mean".into(), "bond_mean".into(), "goal_mean".into()]);
    cols.join(",")
}

/// Writes rows as CSV. `comment` becomes a leading `# ...` line.
pub fn write_scores_csv<W: Write>(
    mut out: W,
    rows: &[ScoreRow],
    size: usize,
    comment: Option<&str>,
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(score_csv_header(size).split(','))?;
    for r in rows {
        let mut rec = vec![
            r.session_id.clone(),
            r.pair_index.to_string(),
            r.rater.to_string(),
        ];
        rec.extend(r.scores.iter().map(f64::to_string));
        rec.extend([r.task_mean, r.bond_mean, r.goal_mean].map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Reads rows written by [`write_scores_csv`]; leading `#` lines are skipped.
pub fn read_scores_csv<R: Read>(mut reader: R) -> Result<Vec<ScoreRow>> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let mut body = text.as_str();
    let mut skipped = 0;
    while body.starts_with('#') {
        body = body.split_once('\n').map_or("", |(_, rest)| rest);
        skipped += 1;
    }
    let parse_err = |line: u64, message: String| Error::Parse {
        line: skipped + line as usize,
        message,
    };
    let mut csv = csv::Reader::from_reader(body.as_bytes());
    let headers = csv
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("session_id") || headers.len() < 6 {
        return Err(parse_err(1, "missing header row".into()));
    }
    let m = headers.len() - 6;
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(line, format!("not a number: {s}")))
        };
        rows.push(ScoreRow {
            session_id: rec[0].to_string(),
            pair_index: rec[1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad pair_index {}", &rec[1])))?,
            rater: rec[2].parse()?,
            scores: (3..3 + m).map(|j| num(&rec[j])).collect::<Result<_>>()?,
            task_mean: num(&rec[3 + m])?,
            bond_mean: num(&rec[4 + m])?,
            goal_mean: num(&rec[5 + m])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use crate::embedding::ProviderConfig;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.7071067811865475
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_turn_scores_zero_and_self_match_scores_one() {
        let inv = Inventory::placeholder();
        let e = Embedder::from_config(&ProviderConfig::hash(64)).unwrap();
        let items = InventoryEmbeddings::compute(&inv, &e).unwrap();
        let zero = score_turn(
            &e.embed("").unwrap(),
            items.items(Speaker::Patient),
            Speaker::Patient,
            0,
        )
        .unwrap();
        assert_eq!(zero.scores, vec![0.0; 36]);

        let text = &inv.item(Speaker::Patient, 7).unwrap().text;
        let v = score_turn(
            &e.embed(text).unwrap(),
            items.items(Speaker::Patient),
            Speaker::Patient,
            0,
        )
        .unwrap();
        assert!((v.scores[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn session_shapes_and_csv_round_trip() {
        let inv = Inventory::placeholder();
        let e = Embedder::from_config(&ProviderConfig::hash(64)).unwrap();
        let turns = [
            Turn::new(Speaker::Patient, "I trust my counselor"),
            Turn::new(Speaker::Therapist, "tell me more, \"please\""),
            Turn::new(Speaker::Patient, "we agree on the steps"),
            Turn::new(Speaker::Therapist, "good"),
            Turn::new(Speaker::Patient, "okay"),
        ];
        let s = Session::from_raw_turns("#s,1", Condition::Depression, &turns).unwrap();
        let items = InventoryEmbeddings::compute(&inv, &e).unwrap();
        let scored = score_session_with(&s, &items, &e).unwrap();
        assert_eq!(scored.trajectory.patient.len(), 3);
        assert_eq!(scored.trajectory.therapist.len(), 3);
        assert_eq!(score_session(&s, &inv, &e).unwrap(), scored.trajectory);

        let rows = score_rows(&scored, &inv);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5].scores, vec![0.0; 36]);
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &rows, 36, Some("config_digest=abc")).unwrap();
        let back = read_scores_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}
