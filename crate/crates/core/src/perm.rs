use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};

/// Largest feature count for which exhaustive enumeration is offered.
pub const MAX_EXHAUSTIVE_P: usize = 8;

/// K orderings of `0..p`, sampled i.i.d. (duplicates allowed) or supplied explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    p: usize,
    perms: Vec<Vec<usize>>,
    /// Key of the stream that produced the plan; `None` for explicit plans.
    seed: Option<u64>,
}

impl PermutationPlan {
    /// Validates caller-supplied orderings.
    pub fn explicit(p: usize, perms: Vec<Vec<usize>>) -> Result<Self> {
        if p == 0 || perms.is_empty() {
            return Err(Error::invalid("a plan needs p >= 1 and at least one permutation"));
        }
        for (k, perm) in perms.iter().enumerate() {
            if !is_permutation(perm, p) {
                return Err(Error::invalid(format!(
                    "entry {k} ({perm:?}) is not a permutation of 0..{p}"
                )));
            }
        }
        Ok(Self { p, perms, seed: None })
    }

    /// Every ordering of `0..p` in lexicographic order.
    pub fn exhaustive(p: usize) -> Result<Self> {
        if p == 0 || p > MAX_EXHAUSTIVE_P {
            return Err(Error::invalid(format!(
                "exhaustive enumeration supports 1 <= p <= {MAX_EXHAUSTIVE_P}, got {p}"
            )));
        }
        let mut current: Vec<usize> = (0..p).collect();
        let mut perms = vec![current.clone()];
        while next_permutation(&mut current) {
            perms.push(current.clone());
        }
        Ok(Self { p, perms, seed: None })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.perms.len()
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Attaches provenance to a plan read back from disk.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Draws `k` orderings of `0..p` uniformly with replacement.
///
/// Ordering `i` is a pure function of `rng.child(PERMUTATIONS, i)`.
pub fn sample_permutations(p: usize, k: usize, rng: &RngStream) -> Result<PermutationPlan> {
    if p == 0 || k == 0 {
        return Err(Error::invalid(format!(
            "sample_permutations needs p >= 1 and K >= 1 (got p={p}, K={k})"
        )));
    }
    let perms = (0..k)
        .map(|i| {
            let mut g = rng.child(tags::PERMUTATIONS, i as u64).generator();
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut g);
            perm
        })
        .collect();
    Ok(PermutationPlan {
        p,
        perms,
        seed: Some(rng.key()),
    })
}

pub fn is_permutation(perm: &[usize], p: usize) -> bool {
    if perm.len() != p {
        return false;
    }
    let mut seen = vec![false; p];
    for &v in perm {
        if v >= p || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Ascending order statistics with the rank-to-position map.
///
/// Stable: equal values keep their original relative order.
pub fn order_statistics(values: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    if values.is_empty() {
        return Err(Error::invalid("order_statistics of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("order_statistics requires finite values"));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted = idx.iter().map(|&i| values[i]).collect();
    Ok((sorted, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_feature_plan() {
        let plan = sample_permutations(1, 3, &RngStream::new(99)).unwrap();
        assert_eq!(plan.perms(), [vec![0], vec![0], vec![0]]);
    }

    #[test]
    fn small_plan_is_bijective() {
        let plan = sample_permutations(3, 6, &RngStream::new(7)).unwrap();
        assert_eq!(plan.k(), 6);
        assert!(plan.perms().iter().all(|q| is_permutation(q, 3)));
    }

    #[test]
    fn same_seed_same_plan() {
        let a = sample_permutations(5, 10, &RngStream::new(42)).unwrap();
        let b = sample_permutations(5, 10, &RngStream::new(42)).unwrap();
        assert_eq!(a, b);
        let c = sample_permutations(5, 10, &RngStream::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(sample_permutations(0, 3, &RngStream::new(1)).is_err());
        assert!(sample_permutations(3, 0, &RngStream::new(1)).is_err());
    }

    #[test]
    fn exhaustive_is_lexicographic() {
        let plan = PermutationPlan::exhaustive(3).unwrap();
        assert_eq!(
            plan.perms(),
            [
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(PermutationPlan::exhaustive(5).unwrap().k(), 120);
        assert!(PermutationPlan::exhaustive(9).is_err());
    }

    #[test]
    fn explicit_plan_validation() {
        assert!(PermutationPlan::explicit(3, vec![vec![0, 1, 1]]).is_err());
        assert!(PermutationPlan::explicit(3, vec![vec![0, 1]]).is_err());
        assert!(PermutationPlan::explicit(3, vec![]).is_err());
        assert!(PermutationPlan::explicit(2, vec![vec![1, 0]]).is_ok());
    }

    #[test]
    fn order_statistics_examples() {
        let (s, i) = order_statistics(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s, [1.0, 2.0, 3.0]);
        assert_eq!(i, [1, 2, 0]);
        let (s, i) = order_statistics(&[0.0, 0.0]).unwrap();
        assert_eq!(s, [0.0, 0.0]);
        assert_eq!(i, [0, 1]);
        let (s, i) = order_statistics(&[5.5]).unwrap();
        assert_eq!((s, i), (vec![5.5], vec![0]));
        assert!(order_statistics(&[]).is_err());
    }

    proptest! {
        #[test]
        fn sampled_entries_are_permutations(p in 1usize..30, k in 1usize..20, seed in any::<u64>()) {
            let plan = sample_permutations(p, k, &RngStream::new(seed)).unwrap();
            prop_assert_eq!(plan.k(), k);
            for perm in plan.perms() {
                prop_assert_eq!(perm.iter().sum::<usize>(), p * (p - 1) / 2);
                prop_assert!(is_permutation(perm, p));
            }
        }

        #[test]
        fn order_statistics_is_stable_sort(values in prop::collection::vec(-3i32..3, 1..40)) {
            let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
            let (sorted, idx) = order_statistics(&v).unwrap();
            for r in 1..sorted.len() {
                prop_assert!(sorted[r - 1] <= sorted[r]);
                if sorted[r - 1] == sorted[r] {
                    prop_assert!(idx[r - 1] < idx[r]);
                }
            }
            for (r, &i) in idx.iter().enumerate() {
                prop_assert_eq!(sorted[r], v[i]);
            }
        }
    }
}
