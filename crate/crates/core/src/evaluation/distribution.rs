//! Empirical distributions over category combinations and KL to uniform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSet, CategoryCombination};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl EmpiricalDistribution {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        EmpiricalDistribution { counts, total }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }

    pub fn kl_to_uniform(&self) -> Result<f64> {
        kl_to_uniform(self)
    }
}

/// Counts labels per combination index.
pub fn empirical_distribution<'a, I>(
    labels: I,
    attr_set: &AttributeSet,
) -> Result<EmpiricalDistribution>
where
    I: IntoIterator<Item = &'a CategoryCombination>,
{
    let mut counts = vec![0u64; attr_set.joint_size()];
    for c in labels {
        let k = attr_set
            .combination_index(c)
            .map_err(|e| Error::Validation(format!("label {c}: {e}")))?;
        counts[k] += 1;
    }
    let dist = EmpiricalDistribution::from_counts(counts);
    if dist.total == 0 {
        return Err(Error::Precondition("no labels".into()));
    }
    Ok(dist)
}

/// Distribution of attribute `m` alone.
pub fn marginal<'a, I>(
    labels: I,
    attr_set: &AttributeSet,
    m: usize,
) -> Result<EmpiricalDistribution>
where
    I: IntoIterator<Item = &'a CategoryCombination>,
{
    let single = attr_set.single(m);
    let projected: Vec<CategoryCombination> = labels
        .into_iter()
        .map(|c| {
            attr_set
                .check_combination(c)
                .map_err(|e| Error::Validation(format!("label {c}: {e}")))?;
            Ok(CategoryCombination(vec![c.0[m]]))
        })
        .collect::<Result<_>>()?;
    empirical_distribution(&projected, &single)
}

/// `D(p || uniform) = sum_k p_k ln(p_k K)` in nats, with `0 ln 0 = 0`.
pub fn kl_to_uniform(dist: &EmpiricalDistribution) -> Result<f64> {
    if dist.total == 0 {
        return Err(Error::Precondition("KL of an empty distribution".into()));
    }
    let k = dist.counts.len() as f64;
    let d: f64 = dist
        .probabilities()
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| p * (p * k).ln())
        .sum();
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(
            kl_to_uniform(&EmpiricalDistribution::from_counts(vec![5, 5, 5, 5])).unwrap(),
            0.0
        );
        let degenerate = kl_to_uniform(&EmpiricalDistribution::from_counts(vec![104, 0])).unwrap();
        assert_eq!(format!("{degenerate:.6}"), "0.693147");
        let skew = kl_to_uniform(&EmpiricalDistribution::from_counts(vec![75, 25])).unwrap();
        assert!((skew - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((skew - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn empty_distribution_is_precondition_error() {
        assert!(matches!(
            kl_to_uniform(&EmpiricalDistribution::from_counts(vec![0, 0])),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn counting() {
        let set = AttributeSet::binary(1, 1).unwrap();
        let labels = vec![CategoryCombination(vec![0]); 104];
        assert_eq!(
            empirical_distribution(&labels, &set).unwrap().counts,
            vec![104, 0]
        );

        let set = AttributeSet::binary(2, 1).unwrap();
        let combos = set.enumerate_combinations();
        let labels: Vec<_> = (0..8).map(|k| combos[k % 4].clone()).collect();
        assert_eq!(
            empirical_distribution(&labels, &set).unwrap().counts,
            vec![2, 2, 2, 2]
        );
        assert_eq!(marginal(&labels, &set, 1).unwrap().counts, vec![4, 4]);

        assert!(matches!(
            empirical_distribution(&[CategoryCombination(vec![0, 2])], &set),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn kl_bounds_and_permutation_invariance(counts in prop::collection::vec(0u64..50, 1..=16), rot in 0usize..16) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let d = kl_to_uniform(&EmpiricalDistribution::from_counts(counts.clone())).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!(d <= (counts.len() as f64).ln() + 1e-12);
            let mut rotated = counts.clone();
            rotated.rotate_left(rot % counts.len());
            rotated.reverse();
            let d2 = kl_to_uniform(&EmpiricalDistribution::from_counts(rotated)).unwrap();
            prop_assert!((d - d2).abs() < 1e-12);
        }

        #[test]
        fn random_labels_recount(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let set = AttributeSet::binary(3, 1).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<_> = (0..1000).map(|_| set.combination_at(rng.random_range(0..8)).unwrap()).collect();
            let dist = empirical_distribution(&labels, &set).unwrap();
            prop_assert_eq!(dist.total, 1000);
            for (k, c) in dist.counts.iter().enumerate() {
                let want = labels.iter().filter(|l| set.combination_index(l).unwrap() == k).count() as u64;
                prop_assert_eq!(*c, want);
            }
        }
    }
}
