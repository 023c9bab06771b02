//! Closed testing over all intersection hypotheses, with Bonferroni and Holm
//! adjustments for comparison.

use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::HypothesisSubset;
use crate::error::{Error, Result};
use crate::rankscore::{statistic_generalized, RankScoreState, WeightingMatrix};

/// Closure enumerates `2^K - 1` subsets.
pub const MAX_HYPOTHESES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureReport {
    k: usize,
    pub alpha: f64,
    /// Local p-value of every subset; entry `mask - 1` is the subset `mask`.
    local_p: Vec<f64>,
    /// Max of the local p-values over supersets, same layout.
    superset_max: Vec<f64>,
    pub adjusted_p: Vec<f64>,
    pub rejected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRecord {
    pub subset: HypothesisSubset,
    pub local_p: f64,
    pub adjusted_p: f64,
    pub rejected: bool,
}

impl ClosureReport {
    /// Builds the report from local p-values, entry `mask - 1` holding the
    /// subset with bit mask `mask`.
    pub fn from_local_p(k: usize, local_p: Vec<f64>, alpha: f64) -> Result<Self> {
        check_k(k)?;
        let full = (1usize << k) - 1;
        if local_p.len() != full {
            return Err(Error::DimensionMismatch(format!("expected {full} local p-values, got {}", local_p.len())));
        }
        if local_p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("local p-values must lie in [0, 1]".into()));
        }
        let mut superset_max = local_p.clone();
        for mask in (1..full).rev() {
            let mut m = superset_max[mask - 1];
            for j in 0..k {
                if mask & (1 << j) == 0 {
                    m = m.max(superset_max[(mask | (1 << j)) - 1]);
                }
            }
            superset_max[mask - 1] = m;
        }
        let adjusted_p: Vec<f64> = (0..k).map(|j| superset_max[(1 << j) - 1]).collect();
        let rejected = adjusted_p.iter().map(|&p| p <= alpha).collect();
        Ok(ClosureReport { k, alpha, local_p, superset_max, adjusted_p, rejected })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn local_p(&self, subset: &HypothesisSubset) -> f64 {
        self.local_p[subset.mask() as usize - 1]
    }

    /// Closed-testing adjusted p-value of an intersection hypothesis.
    pub fn subset_adjusted_p(&self, subset: &HypothesisSubset) -> f64 {
        self.superset_max[subset.mask() as usize - 1]
    }

    /// Every subset in mask order with its local and adjusted p-values.
    pub fn subset_records(&self) -> Vec<SubsetRecord> {
        (0..self.local_p.len())
            .map(|i| SubsetRecord {
                subset: HypothesisSubset::from_mask(i as u32 + 1).unwrap(),
                local_p: self.local_p[i],
                adjusted_p: self.superset_max[i],
                rejected: self.superset_max[i] <= self.alpha,
            })
            .collect()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("no hypotheses".into()));
    }
    if k > MAX_HYPOTHESES {
        return Err(Error::TooManyHypotheses { found: k, max: MAX_HYPOTHESES });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha = {alpha} is not in (0, 1)")))
    }
}

/// Closure of an arbitrary local test given as a map from subsets to p-values.
pub fn closed_test_with<F>(k: usize, alpha: f64, local: F) -> Result<ClosureReport>
where
    F: Fn(&HypothesisSubset) -> Result<f64> + Sync,
{
    check_k(k)?;
    check_alpha(alpha)?;
    let local_p: Vec<f64> = (1u32..(1u32 << k))
        .into_par_iter()
        .map(|mask| local(&HypothesisSubset::from_mask(mask).unwrap()))
        .collect::<Result<_>>()?;
    ClosureReport::from_local_p(k, local_p, alpha)
}

/// Closed testing with the weighted rank-score statistic as the local test.
pub fn closed_test(state: &RankScoreState, weighting: &WeightingMatrix, alpha: f64) -> Result<ClosureReport> {
    closed_test_with(state.k(), alpha, |subset| Ok(statistic_generalized(state, subset, weighting)?.p_value))
}

/// `min(1, K p_j)`.
pub fn bonferroni(p: &[f64]) -> Vec<f64> {
    let k = p.len() as f64;
    p.iter().map(|&v| (k * v).min(1.0)).collect()
}

/// Holm's step-down adjusted p-values.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let k = p.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; k];
    let mut running = 0.0f64;
    for (rank, &j) in order.iter().enumerate() {
        running = running.max(((k - rank) as f64 * p[j]).min(1.0));
        adjusted[j] = running;
    }
    adjusted
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn three_hypothesis_tree() {
        // masks: 1={1} 2={2} 3={1,2} 4={3} 5={1,3} 6={2,3} 7={1,2,3}
        let local = vec![0.04, 0.50, 0.02, 0.30, 0.03, 0.20, 0.01];
        let r = ClosureReport::from_local_p(3, local, 0.05).unwrap();
        assert!(close(&r.adjusted_p, &[0.04, 0.50, 0.30]));
        assert_eq!(r.rejected, vec![true, false, false]);
        let both = HypothesisSubset::new(vec![0, 1], 3).unwrap();
        assert!((r.subset_adjusted_p(&both) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn all_ones() {
        let r = closed_test_with(4, 0.05, |_| Ok(1.0)).unwrap();
        assert_eq!(r.adjusted_p, vec![1.0; 4]);
        assert!(r.rejected.iter().all(|&x| !x));
    }

    #[test]
    fn too_many() {
        assert!(matches!(closed_test_with(21, 0.05, |_| Ok(0.5)), Err(Error::TooManyHypotheses { found: 21, max: 20 })));
    }

    #[test]
    fn bonferroni_examples() {
        assert!(close(&bonferroni(&[0.01, 0.2, 0.03]), &[0.03, 0.6, 0.09]));
        assert_eq!(bonferroni(&[0.0]), vec![0.0]);
        assert_eq!(bonferroni(&[0.5, 0.5]), vec![1.0, 1.0]);
    }

    #[test]
    fn holm_examples() {
        assert!(close(&holm(&[0.01, 0.04, 0.03]), &[0.03, 0.06, 0.06]));
        assert!(close(&holm(&[0.02, 0.02, 0.02]), &[0.06, 0.06, 0.06]));
    }
}
