//! Baseline rankers: discrete divergences over user-supplied distributions
//! and classical cluster-quality indexes over the soft-label clusters.
//!
//! Each metric's orientation (higher- or lower-better) is reported through
//! `MetricKind::orientation` so rankings sort correctly.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::soft_label::ClusterPartition;

/// Guard against division by a vanishing scatter or centroid distance.
const DENOM_FLOOR: f64 = 1e-12;

/// Validated discrete probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution(Vec<f64>);

impl DiscreteDistribution {
    /// Entries must be finite, non-negative, and sum to 1 within 1e-9.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::EmptyInput("probability vector"));
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        if let Some((i, &v)) = p.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NotNormalized { row: i, sum: v });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { row: 0, sum });
        }
        Ok(DiscreteDistribution(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }
}

fn check_support(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// Kullback-Leibler divergence KL(p || q). Terms with p_i = 0 contribute
/// nothing; q_i = 0 under p_i > 0 makes the divergence infinite, which is
/// reported as an error rather than an unusable score.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_support(p, q)?;
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p
        .probabilities()
        .iter()
        .zip(q.probabilities())
        .enumerate()
    {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InfiniteDivergence { index: i });
        }
        sum += pi * (pi / qi).ln();
    }
    Ok(sum)
}

/// Jensen-Shannon divergence: symmetric, finite, bounded by ln 2.
pub fn js_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_support(p, q)?;
    let mid: Vec<f64> = p
        .probabilities()
        .iter()
        .zip(q.probabilities())
        .map(|(&a, &b)| 0.5 * (a + b))
        .collect();
    let m = DiscreteDistribution::new(mid)?;
    Ok(0.5 * kl_divergence(p, &m)? + 0.5 * kl_divergence(q, &m)?)
}

fn require_clusters(partition: &ClusterPartition) -> Result<()> {
    if partition.m() < 2 {
        return Err(Error::TooFewClusters(partition.m()));
    }
    Ok(())
}

fn centroids(vectors: &Array2<f64>, partition: &ClusterPartition) -> Vec<Array1<f64>> {
    partition
        .iter()
        .map(|(_, rows)| {
            let mut c = Array1::<f64>::zeros(vectors.ncols());
            for &r in rows {
                c += &vectors.row(r);
            }
            c / rows.len() as f64
        })
        .collect()
}

fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance between clusters: mean Euclidean distance over unordered
/// centroid pairs. Higher means better separated.
pub fn dbc(vectors: &Array2<f64>, partition: &ClusterPartition) -> Result<f64> {
    require_clusters(partition)?;
    let cs = centroids(vectors, partition);
    let m = cs.len();
    let mut sum = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            sum += euclidean(&cs[i], &cs[j]);
        }
    }
    Ok(sum / (m * (m - 1) / 2) as f64)
}

/// Largest distance within clusters: the maximum over clusters of the
/// largest intra-cluster pairwise distance. Lower means tighter clusters.
/// Cost grows with the squared cluster sizes.
pub fn ldwc(vectors: &Array2<f64>, partition: &ClusterPartition) -> Result<f64> {
    require_clusters(partition)?;
    let mut worst = 0.0_f64;
    for (_, rows) in partition.iter() {
        for (a, &i) in rows.iter().enumerate() {
            let ri = vectors.row(i).to_owned();
            for &j in &rows[a + 1..] {
                let d = euclidean(&ri, &vectors.row(j).to_owned());
                worst = worst.max(d);
            }
        }
    }
    Ok(worst)
}

/// Davies-Bouldin index: mean over clusters of the worst
/// (scatter_i + scatter_j) / centroid_distance ratio. Lower is better.
pub fn dbi(vectors: &Array2<f64>, partition: &ClusterPartition) -> Result<f64> {
    require_clusters(partition)?;
    let cs = centroids(vectors, partition);
    let scatters: Vec<f64> = partition
        .iter()
        .zip(&cs)
        .map(|((_, rows), c)| {
            rows.iter()
                .map(|&r| euclidean(&vectors.row(r).to_owned(), c))
                .sum::<f64>()
                / rows.len() as f64
        })
        .collect();
    let m = cs.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut worst = 0.0_f64;
        for j in 0..m {
            if i != j {
                let dist = euclidean(&cs[i], &cs[j]).max(DENOM_FLOOR);
                worst = worst.max((scatters[i] + scatters[j]) / dist);
            }
        }
        total += worst;
    }
    Ok(total / m as f64)
}

/// Calinski-Harabasz index: between-cluster dispersion over within-cluster
/// dispersion, scaled by (N - m) / (m - 1). Higher is better.
pub fn ch(vectors: &Array2<f64>, partition: &ClusterPartition) -> Result<f64> {
    require_clusters(partition)?;
    let cs = centroids(vectors, partition);
    let n: usize = partition.iter().map(|(_, rows)| rows.len()).sum();
    let m = cs.len();
    let mut global = Array1::<f64>::zeros(vectors.ncols());
    for (_, rows) in partition.iter() {
        for &r in rows {
            global += &vectors.row(r);
        }
    }
    global /= n as f64;

    let mut between = 0.0;
    let mut within = 0.0;
    for ((_, rows), c) in partition.iter().zip(&cs) {
        let d = euclidean(c, &global);
        between += rows.len() as f64 * d * d;
        for &r in rows {
            let w = euclidean(&vectors.row(r).to_owned(), c);
            within += w * w;
        }
    }
    Ok(between * (n - m) as f64 / (within.max(DENOM_FLOOR) * (m - 1) as f64))
}
