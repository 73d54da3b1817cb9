//! Class-balanced sampling: a class uniformly, then a member uniformly.

use rand::Rng;

use crate::corpus::Condition;
use crate::error::{Error, Result};

/// Per-class lists of item indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassPools {
    pools: [Vec<usize>; Condition::COUNT],
}

impl ClassPools {
    pub fn new(pools: [Vec<usize>; Condition::COUNT]) -> Self {
        Self { pools }
    }

    /// Item `i` goes to the pool of `labels[i]`.
    pub fn from_labels(labels: impl IntoIterator<Item = Condition>) -> Self {
        let mut pools: [Vec<usize>; Condition::COUNT] = Default::default();
        for (i, c) in labels.into_iter().enumerate() {
            pools[c.code()].push(i);
        }
        Self { pools }
    }

    pub fn pool(&self, c: Condition) -> &[usize] {
        &self.pools[c.code()]
    }

    pub fn sizes(&self) -> [usize; Condition::COUNT] {
        std::array::from_fn(|i| self.pools[i].len())
    }

    pub fn total(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    /// Errors naming the first empty class.
    pub fn check_nonempty(&self, what: &str) -> Result<()> {
        for c in Condition::ALL {
            if self.pool(c).is_empty() {
                return Err(Error::Config(format!("{what} has no {c} sessions")));
            }
        }
        Ok(())
    }
}

pub fn balanced_sample<R: Rng>(pools: &ClassPools, rng: &mut R) -> Result<(Condition, usize)> {
    let c = Condition::ALL[rng.gen_range(0..Condition::COUNT)];
    let pool = pools.pool(c);
    if pool.is_empty() {
        return Err(Error::Config(format!("class pool for {c} is empty")));
    }
    Ok((c, pool[rng.gen_range(0..pool.len())]))
}

/// `n` balanced draws with replacement; checks every pool first.
pub fn balanced_draws<R: Rng>(
    pools: &ClassPools,
    n: usize,
    rng: &mut R,
    what: &str,
) -> Result<Vec<(Condition, usize)>> {
    pools.check_nonempty(what)?;
    (0..n).map(|_| balanced_sample(pools, rng)).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn paper_pools() -> ClassPools {
        let mut next = 0;
        ClassPools::new([495, 373, 71, 12].map(|n| {
            let v: Vec<usize> = (next..next + n).collect();
            next += n;
            v
        }))
    }

    #[test]
    fn singleton_pool_always_returns_its_member() {
        let pools = ClassPools::new([vec![0], vec![1, 2], vec![3], vec![4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (c, i) in balanced_draws(&pools, 200, &mut rng, "pool").unwrap() {
            if c == Condition::Suicidal {
                assert_eq!(i, 4);
            }
            assert!(pools.pool(c).contains(&i));
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let pools = paper_pools();
        let a = balanced_draws(&pools, 500, &mut ChaCha8Rng::seed_from_u64(3), "p").unwrap();
        let b = balanced_draws(&pools, 500, &mut ChaCha8Rng::seed_from_u64(3), "p").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool_is_a_config_error() {
        let pools = ClassPools::new([vec![0], vec![], vec![1], vec![2]]);
        let err =
            balanced_draws(&pools, 1, &mut ChaCha8Rng::seed_from_u64(0), "train set").unwrap_err();
        assert!(err.to_string().contains("depression"));
    }

    #[test]
    fn from_labels_groups_indices() {
        let pools =
            ClassPools::from_labels([Condition::Suicidal, Condition::Anxiety, Condition::Suicidal]);
        assert_eq!(pools.pool(Condition::Suicidal), &[0, 2]);
        assert_eq!(pools.sizes(), [1, 0, 0, 2]);
    }
}
