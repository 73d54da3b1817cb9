use super::{EmbeddingBackend, EmbeddingError, EmbeddingVector};

pub const DEFAULT_HASH_DIM: usize = 64;

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the bytes, then a splitmix64 finaliser for bit diffusion.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Bucket index and sign contributed by `token`.
pub fn token_bucket(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = token_hash(token, seed);
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Signed feature hashing of the token bag, L2-normalised.
#[derive(Clone, Debug)]
pub struct HashBackend {
    dim: usize,
    seed: u64,
}

impl HashBackend {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Config(
                "hash dimension must be positive".into(),
            ));
        }
        Ok(Self { dim, seed })
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let (i, s) = token_bucket(&tok, self.dim, self.seed);
            v[i] += s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        EmbeddingVector(v)
    }
}

impl EmbeddingBackend for HashBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum()
    }

    #[test]
    fn tokenizer_normalises() {
        assert_eq!(
            tokenize("  Hello, WORLD!  it's"),
            vec!["hello", "world", "its"]
        );
        assert!(tokenize("?!").is_empty());
    }

    #[test]
    fn unit_norm_unless_empty() {
        let h = HashBackend::new(64, 0).unwrap();
        assert!((h.embed_one("some words here").norm() - 1.0).abs() < 1e-12);
        assert_eq!(h.embed_one("...").norm(), 0.0);
    }

    #[test]
    fn small_vocabulary_is_collision_free_at_64() {
        let vocab = ["alpha", "beta", "gamma", "delta"];
        let buckets: std::collections::HashSet<usize> =
            vocab.iter().map(|t| token_bucket(t, 64, 0).0).collect();
        assert_eq!(buckets.len(), vocab.len());
        let h = HashBackend::new(64, 0).unwrap();
        assert_eq!(
            dot(&h.embed_one("alpha beta"), &h.embed_one("gamma delta")),
            0.0
        );
    }

    proptest! {
        #[test]
        fn disjoint_buckets_give_zero_similarity(
            a in prop::collection::vec("[a-z]{3,8}", 1..6),
            b in prop::collection::vec("[a-z]{3,8}", 1..6),
        ) {
            let dim = 1 << 16;
            let ba: std::collections::HashSet<usize> = a.iter().map(|t| token_bucket(t, dim, 0).0).collect();
            let bb: std::collections::HashSet<usize> = b.iter().map(|t| token_bucket(t, dim, 0).0).collect();
            prop_assume!(ba.is_disjoint(&bb));
            let h = HashBackend::new(dim, 0).unwrap();
            prop_assert_eq!(dot(&h.embed_one(&a.join(" ")), &h.embed_one(&b.join(" "))), 0.0);
        }

        #[test]
        fn identical_multisets_have_similarity_one(mut words in prop::collection::vec("[a-z]{1,8}", 1..8)) {
            let h = HashBackend::new(64, 3).unwrap();
            let a = h.embed_one(&words.join(" "));
            words.reverse();
            let b = h.embed_one(&words.join(" "));
            if a.norm() > 0.0 {
                prop_assert!((dot(&a, &b) - 1.0).abs() < 1e-12);
            }
        }
    }
}
