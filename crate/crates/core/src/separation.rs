//! Separation degree between gaussian clusters and its aggregation into a
//! per-model score.
//!
//! The pairwise score compares each cluster's density at the two means. It is
//! evaluated in log space through a logistic, so widely separated clusters
//! keep distinct scores instead of saturating the ratio arithmetic:
//!
//!   a  = (log|Σv| - log|Σu|) / 2
//!   SD = sigmoid(a + maha²(gv, μu)/2) + sigmoid(-a + maha²(gu, μv)/2) - 1
//!
//! which equals the direct density-ratio form wherever the latter is
//! representable.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gaussian::GaussianFit;
use crate::metric::Orientation;

/// Separation degree of one unordered cluster pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSeparation {
    pub u: usize,
    pub v: usize,
    pub value: f64,
}

/// Aggregated separation degree for one candidate model.
#[derive(Debug, Clone)]
pub struct ModelSeparation {
    /// Aggregate score; for the classification form this lies in [0, 1 - 1/m].
    pub value: f64,
    /// Number of clusters.
    pub m: usize,
    /// Unordered pair scores (u < v).
    pub pairs: Vec<PairSeparation>,
}

/// One candidate's score prior to ranking.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub id: String,
    pub value: f64,
}

/// One row of a ranking; `rank` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub rank: usize,
    pub id: String,
    pub value: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Separation degree between two fitted gaussians, clamped to [0, 1).
///
/// Symmetric bit-for-bit in its arguments: swapping them swaps the two
/// logistic terms and IEEE addition commutes.
pub fn pairwise_sd(gu: &GaussianFit, gv: &GaussianFit) -> Result<f64> {
    if gu.dim() != gv.dim() {
        return Err(Error::DimensionMismatch {
            context: "pairwise separation".into(),
            expected: gu.dim(),
            got: gv.dim(),
        });
    }
    let a = 0.5 * gv.log_det() - 0.5 * gu.log_det();
    let t1 = sigmoid(a + 0.5 * gv.mahalanobis_sq(gu.mean())?);
    let t2 = sigmoid(-a + 0.5 * gu.mahalanobis_sq(gv.mean())?);
    Ok((t1 + t2 - 1.0).clamp(0.0, 1.0 - f64::EPSILON))
}

/// Mean separation over all ordered cluster pairs, diagonal included as zero:
/// value = (1/m²) ΣuΣv SD(u, v). Keys of `fits` are the cluster labels.
///
/// The pair values are summed in sorted order, so the total is a function of
/// the fitted clusters alone — relabeling them cannot move even the last bit.
pub fn model_sd(fits: &BTreeMap<usize, GaussianFit>) -> Result<ModelSeparation> {
    let ids: Vec<usize> = fits.keys().copied().collect();
    let m = ids.len();
    if m == 0 {
        return Err(Error::EmptyInput("no clusters to separate"));
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let value = pairwise_sd(&fits[&ids[i]], &fits[&ids[j]])?;
            pairs.push(PairSeparation {
                u: ids[i],
                v: ids[j],
                value,
            });
        }
    }
    let mut ordered: Vec<f64> = pairs.iter().map(|p| p.value).collect();
    ordered.sort_by(f64::total_cmp);
    let sum: f64 = ordered.iter().sum();
    Ok(ModelSeparation {
        value: 2.0 * sum / (m * m) as f64,
        m,
        pairs,
    })
}

/// Distance-weighted separation for discretized regression labels:
/// value = Σ w(u,v)·SD(u,v) / Σ w(u,v) with w(u,v) = |u - v|^p and w(u,u) = 0.
pub fn regression_sd(fits: &BTreeMap<usize, GaussianFit>, p: f64) -> Result<ModelSeparation> {
    if !p.is_finite() || p < 0.0 {
        return Err(Error::Config(format!(
            "weight exponent must be finite and non-negative, got {p}"
        )));
    }
    let ids: Vec<usize> = fits.keys().copied().collect();
    let m = ids.len();
    if m < 2 {
        return Err(Error::SingleBin);
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let value = pairwise_sd(&fits[&ids[i]], &fits[&ids[j]])?;
            pairs.push(PairSeparation {
                u: ids[i],
                v: ids[j],
                value,
            });
            let w = (ids[i] as f64 - ids[j] as f64).abs().powf(p);
            num += 2.0 * w * value;
            den += 2.0 * w;
        }
    }
    Ok(ModelSeparation {
        value: num / den,
        m,
        pairs,
    })
}

/// Orders candidates by score and assigns 1-based ranks, keeping the best
/// `k`. Ties break by candidate id, ascending lexicographically.
pub fn rank_candidates(
    scores: &[CandidateScore],
    k: usize,
    orientation: Orientation,
) -> Result<Vec<RankedCandidate>> {
    if scores.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    if let Some(i) = scores.iter().position(|s| !s.value.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let by_value = match orientation {
            Orientation::HigherBetter => scores[b].value.partial_cmp(&scores[a].value),
            Orientation::LowerBetter => scores[a].value.partial_cmp(&scores[b].value),
        }
        .expect("values checked finite");
        by_value.then_with(|| scores[a].id.cmp(&scores[b].id))
    });
    Ok(order
        .into_iter()
        .take(k.min(scores.len()))
        .enumerate()
        .map(|(pos, idx)| RankedCandidate {
            rank: pos + 1,
            id: scores[idx].id.clone(),
            value: scores[idx].value,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit_1d(mu: f64) -> GaussianFit {
        GaussianFit::from_moments(array![mu], array![[1.0]], 0).unwrap()
    }

    fn random_fit(rng: &mut impl Rng, d: usize, spread: f64) -> GaussianFit {
        let r = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let mut spd = r.t().dot(&r);
        for i in 0..d {
            spd[(i, i)] += 0.4;
        }
        let mu = Array1::from_shape_fn(d, |_| rng.random_range(-spread..spread));
        GaussianFit::from_moments(mu, spd, 0).unwrap()
    }

    #[test]
    fn unit_variance_gap_three() {
        // Equal unit covariances, mean gap 3: both logistic arguments are
        // 9/2 / ... -> SD = 2*sigmoid(4.5) - 1.
        let sd = pairwise_sd(&unit_1d(0.0), &unit_1d(3.0)).unwrap();
        let expected = 2.0 / (1.0 + (-4.5_f64).exp()) - 1.0;
        assert!((sd - expected).abs() < 1e-12, "sd={sd} expected={expected}");
        assert!((sd - 0.97802).abs() < 1e-5);
    }

    #[test]
    fn identical_fits_score_zero() {
        let g = unit_1d(1.25);
        assert_eq!(pairwise_sd(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_to_the_bit() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..500 {
            let d = rng.random_range(1..=5);
            let gu = random_fit(&mut rng, d, 3.0);
            let gv = random_fit(&mut rng, d, 3.0);
            let ab = pairwise_sd(&gu, &gv).unwrap();
            let ba = pairwise_sd(&gv, &gu).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
        }
    }

    #[test]
    fn stays_in_unit_interval() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..500 {
            let d = rng.random_range(1..=5);
            let gu = random_fit(&mut rng, d, 10.0);
            let gv = random_fit(&mut rng, d, 10.0);
            let sd = pairwise_sd(&gu, &gv).unwrap();
            assert!((0.0..1.0).contains(&sd), "sd={sd}");
        }
    }

    #[test]
    fn huge_gap_saturates_below_one() {
        let sd = pairwise_sd(&unit_1d(0.0), &unit_1d(1000.0)).unwrap();
        assert!(sd >= 1.0 - 1e-9);
        assert!(sd < 1.0);
    }

    #[test]
    fn model_sd_two_clusters_is_half_pair() {
        let fits = BTreeMap::from([(0, unit_1d(0.0)), (1, unit_1d(2.0))]);
        let pair = pairwise_sd(&fits[&0], &fits[&1]).unwrap();
        let model = model_sd(&fits).unwrap();
        assert_eq!(model.m, 2);
        assert_eq!(model.pairs.len(), 1);
        assert_eq!(model.value, pair / 2.0);
    }

    #[test]
    fn model_sd_three_clusters_matches_double_sum() {
        let fits = BTreeMap::from([(0, unit_1d(0.0)), (1, unit_1d(1.5)), (2, unit_1d(4.0))]);
        let model = model_sd(&fits).unwrap();
        let ids = [0usize, 1, 2];
        let mut brute = 0.0;
        for &u in &ids {
            for &v in &ids {
                if u != v {
                    brute += pairwise_sd(&fits[&u], &fits[&v]).unwrap();
                }
            }
        }
        brute /= 9.0;
        assert!((model.value - brute).abs() < 1e-12);
        assert!(model.value <= 1.0 - 1.0 / 3.0);
    }

    #[test]
    fn model_sd_single_cluster_is_zero() {
        let fits = BTreeMap::from([(4, unit_1d(0.0))]);
        let model = model_sd(&fits).unwrap();
        assert_eq!(model.value, 0.0);
        assert_eq!(model.m, 1);
        assert!(model.pairs.is_empty());
    }

    #[test]
    fn relabeling_leaves_model_sd_unchanged() {
        let a = unit_1d(0.0);
        let b = unit_1d(1.0);
        let c = unit_1d(3.0);
        let orig = BTreeMap::from([(0, a.clone()), (1, b.clone()), (2, c.clone())]);
        let relabeled = BTreeMap::from([(7, a), (1, b), (9, c)]);
        let x = model_sd(&orig).unwrap().value;
        let y = model_sd(&relabeled).unwrap().value;
        // Bit-exact: the sorted-order summation is label-independent.
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn regression_two_bins_equals_pair_sd() {
        let fits = BTreeMap::from([(0, unit_1d(0.0)), (1, unit_1d(2.0))]);
        let pair = pairwise_sd(&fits[&0], &fits[&1]).unwrap();
        for p in [0.0, 1.0, 2.0, 7.0] {
            let model = regression_sd(&fits, p).unwrap();
            assert_eq!(model.value, pair, "p={p}");
        }
    }

    #[test]
    fn regression_three_bins_quadratic_weights() {
        let fits = BTreeMap::from([(0, unit_1d(0.0)), (1, unit_1d(1.0)), (2, unit_1d(2.5))]);
        let s01 = pairwise_sd(&fits[&0], &fits[&1]).unwrap();
        let s02 = pairwise_sd(&fits[&0], &fits[&2]).unwrap();
        let s12 = pairwise_sd(&fits[&1], &fits[&2]).unwrap();
        let model = regression_sd(&fits, 2.0).unwrap();
        let expected = (s01 + 4.0 * s02 + s12) / 6.0;
        assert!((model.value - expected).abs() < 1e-12);
    }

    #[test]
    fn regression_p_zero_is_off_diagonal_mean() {
        let fits = BTreeMap::from([(0, unit_1d(0.0)), (3, unit_1d(1.0)), (9, unit_1d(2.0))]);
        let model = regression_sd(&fits, 0.0).unwrap();
        let mean = model.pairs.iter().map(|p| p.value).sum::<f64>() / 3.0;
        assert!((model.value - mean).abs() < 1e-12);
    }

    #[test]
    fn regression_single_bin_rejected() {
        let fits = BTreeMap::from([(0, unit_1d(0.0))]);
        assert!(matches!(regression_sd(&fits, 2.0), Err(Error::SingleBin)));
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_id() {
        let scores = vec![
            CandidateScore { id: "b".into(), value: 0.5 },
            CandidateScore { id: "a".into(), value: 0.5 },
            CandidateScore { id: "c".into(), value: 0.9 },
        ];
        let ranked = rank_candidates(&scores, 10, Orientation::HigherBetter).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(ranked[0].rank, 1);
        assert_eq!(ranked[2].rank, 3);

        let ranked = rank_candidates(&scores, 2, Orientation::LowerBetter).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn ranking_rejects_empty_and_non_finite() {
        assert!(matches!(
            rank_candidates(&[], 3, Orientation::HigherBetter),
            Err(Error::EmptyCandidateSet)
        ));
        let scores = vec![CandidateScore { id: "a".into(), value: f64::NAN }];
        assert!(matches!(
            rank_candidates(&scores, 1, Orientation::HigherBetter),
            Err(Error::NonFiniteInput(0))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g1 = unit_1d(0.0);
        let g2 = GaussianFit::from_moments(array![0.0, 0.0], Array2::eye(2), 0).unwrap();
        assert!(matches!(
            pairwise_sd(&g1, &g2),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
