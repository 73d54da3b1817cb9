use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingBackend, EmbeddingError, EmbeddingVector};

#[derive(Serialize, Deserialize)]
struct Record {
    text: String,
    vector: Vec<f64>,
}

/// Precomputed vectors keyed by exact (trimmed) text.
#[derive(Clone, Debug)]
pub struct FileBackend {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl EmbeddingBackend for FileBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let missing: Vec<String> = texts
            .iter()
            .filter(|t| !self.vectors.contains_key(**t))
            .map(|t| t.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(EmbeddingError::UnknownText { texts: missing });
        }
        Ok(texts.iter().map(|t| self.vectors[*t].clone()).collect())
    }
}

/// Reads a vector file; the first record fixes the dimension.
pub fn load_vector_file(path: impl AsRef<Path>) -> Result<FileBackend, EmbeddingError> {
    let path = path.as_ref();
    let cfg_err = |m: String| EmbeddingError::Config(format!("{}: {m}", path.display()));
    let file = fs::File::open(path).map_err(|e| cfg_err(e.to_string()))?;
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| cfg_err(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: Record =
            serde_json::from_str(line).map_err(|e| cfg_err(format!("line {}: {e}", i + 1)))?;
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err(cfg_err(format!(
                "line {}: dimension {} differs from {d}",
                i + 1,
                rec.vector.len()
            )));
        }
        let v = EmbeddingVector::new(rec.vector)
            .map_err(|e| cfg_err(format!("line {}: {e}", i + 1)))?;
        vectors.insert(rec.text.trim().to_string(), v);
    }
    let dim = dim.ok_or_else(|| cfg_err("no vectors".into()))?;
    Ok(FileBackend { dim, vectors })
}

/// Embeds every distinct nonempty text with `embedder` and writes a vector file.
pub fn write_vector_file<S: AsRef<str>>(
    path: impl AsRef<Path>,
    texts: &[S],
    embedder: &Embedder,
) -> Result<usize, EmbeddingError> {
    let path = path.as_ref();
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&str> = texts
        .iter()
        .map(|t| t.as_ref().trim())
        .filter(|t| !t.is_empty() && seen.insert(*t))
        .collect();
    let vectors = embedder.embed_batch(&unique)?;
    let mut out = String::new();
    for (t, v) in unique.iter().zip(vectors) {
        let rec = Record {
            text: t.to_string(),
            vector: v.into_inner(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        out.push('\n');
    }
    let mut f = fs::File::create(path)
        .map_err(|e| EmbeddingError::Config(format!("{}: {e}", path.display())))?;
    f.write_all(out.as_bytes())
        .map_err(|e| EmbeddingError::Config(format!("{}: {e}", path.display())))?;
    Ok(unique.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ProviderConfig;

    #[test]
    fn round_trip_and_unknown_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let hash = Embedder::from_config(&ProviderConfig::hash(16)).unwrap();
        let n = write_vector_file(&path, &["a b", "c", "a b", ""], &hash).unwrap();
        assert_eq!(n, 2);

        let file = Embedder::from_config(&ProviderConfig::file(&path)).unwrap();
        assert_eq!(file.dim(), 16);
        assert_eq!(file.embed("a b").unwrap(), hash.embed("a b").unwrap());
        assert_eq!(file.embed("").unwrap().as_slice(), &[0.0; 16][..]);
        match file.embed_batch(&["c", "zzz", "yyy"]).unwrap_err() {
            EmbeddingError::UnknownText { texts } => assert_eq!(texts, vec!["zzz", "yyy"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn inconsistent_dimension_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        fs::write(
            &path,
            "{\"text\":\"a\",\"vector\":[1,2]}\n{\"text\":\"b\",\"vector\":[1]}\n",
        )
        .unwrap();
        assert!(load_vector_file(&path).is_err());
    }
}
