//! Soft-label construction: temperature-scaled softmax, dimension drop,
//! seeded random projection, row sampling, label partitioning and
//! equal-frequency discretization of regression targets.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{fit_gaussian, GaussianFit};

/// Row sum slack accepted by `drop_last_dimension`.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Softmax with temperature over one logit vector. The running maximum is
/// subtracted before exponentiation so large logits cannot overflow.
pub fn extended_softmax(z: ArrayView1<'_, f64>, temperature: f64) -> Result<Array1<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if z.is_empty() {
        return Err(Error::EmptyInput("logit vector"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Array1::from_iter(z.iter().map(|&v| ((v - max) / temperature).exp()));
    let sum: f64 = out.sum();
    out.mapv_inplace(|v| v / sum);
    Ok(out)
}

/// Row-wise `extended_softmax` over a logit matrix.
pub fn softmax_rows(z: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(z.dim());
    for (i, row) in z.rows().into_iter().enumerate() {
        let soft = extended_softmax(row, temperature).map_err(|e| match e {
            // Report the flat position so the caller can locate the row.
            Error::NonFiniteInput(j) => Error::NonFiniteInput(i * z.ncols() + j),
            other => other,
        })?;
        out.row_mut(i).assign(&soft);
    }
    Ok(out)
}

/// Removes the last component of each probability vector. Rows must sum to 1;
/// nothing is lost because the dropped entry is implied by the rest.
pub fn drop_last_dimension(p: &Array2<f64>) -> Result<Array2<f64>> {
    if p.ncols() < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least 2 probability columns to drop one, got {}",
            p.ncols()
        )));
    }
    for (i, row) in p.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::NotNormalized { row: i, sum });
        }
    }
    Ok(p.slice(s![.., ..p.ncols() - 1]).to_owned())
}

/// Gaussian projection matrix of shape r x n with i.i.d. N(0, 1/n) entries,
/// drawn row-major from a ChaCha stream seeded by `seed`.
pub fn projection_matrix(n: usize, r: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / (n as f64).sqrt();
    let mut w = Array2::<f64>::zeros((r, n));
    for i in 0..r {
        for j in 0..n {
            let g: f64 = StandardNormal.sample(&mut rng);
            w[(i, j)] = g * scale;
        }
    }
    w
}

/// Applies a projection matrix: logits (N x n) times wᵀ (n x r).
pub fn apply_projection(logits: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    if w.ncols() != logits.ncols() {
        return Err(Error::DimensionMismatch {
            context: "projection width".into(),
            expected: logits.ncols(),
            got: w.ncols(),
        });
    }
    Ok(logits.dot(&w.t()))
}

/// Projects logits down to `r` dimensions with a seeded gaussian matrix.
/// Passes the input through unchanged when `r` is not smaller than the
/// current width.
pub fn random_projection(logits: &Array2<f64>, r: usize, seed: u64) -> Result<Array2<f64>> {
    if r < 2 {
        return Err(Error::InvalidDimension(format!(
            "projection dimension must be at least 2, got {r}"
        )));
    }
    if r >= logits.ncols() {
        return Ok(logits.clone());
    }
    apply_projection(logits, &projection_matrix(logits.ncols(), r, seed))
}

/// Deterministic per-candidate seed: the first 8 little-endian bytes of
/// SHA-256(run_seed LE || candidate id). Stable across platforms and
/// releases, unlike the std hasher.
pub fn derive_candidate_seed(run_seed: u64, candidate_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(candidate_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Uniform sample of row indices without replacement, sorted ascending.
/// Size is max(1, round(rate * n_rows)).
pub fn sample_rows(n_rows: usize, rate: f64, seed: u64) -> Result<Vec<usize>> {
    if n_rows == 0 {
        return Err(Error::EmptyInput("no rows to sample"));
    }
    if !rate.is_finite() || rate <= 0.0 || rate > 1.0 {
        return Err(Error::InvalidRate(rate));
    }
    let k = ((rate * n_rows as f64).round() as usize).clamp(1, n_rows);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n_rows, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Row indices grouped by integer label. Keys iterate in ascending label
/// order; every present label needs at least two rows for covariance fitting.
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    clusters: BTreeMap<usize, Vec<usize>>,
}

impl ClusterPartition {
    /// Number of clusters.
    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.clusters.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.clusters.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn rows(&self, label: usize) -> Option<&[usize]> {
        self.clusters.get(&label).map(|v| v.as_slice())
    }
}

/// Groups row indices by label. Clusters cover all rows, are disjoint by
/// construction, and a one-row cluster is an error (its covariance would be
/// undefined).
pub fn partition_by_label(labels: &[usize]) -> Result<ClusterPartition> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels to partition"));
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &label) in labels.iter().enumerate() {
        clusters.entry(label).or_default().push(row);
    }
    for (&label, rows) in &clusters {
        if rows.len() < 2 {
            return Err(Error::SingletonCluster { label });
        }
    }
    Ok(ClusterPartition { clusters })
}

/// Equal-frequency discretization of real-valued labels into `bins` bins.
/// Bin ids are monotone in the value; ties always land in the lower bin.
pub fn discretize_labels(values: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "bin count must be at least 2, got {bins}"
        )));
    }
    let n = values.len();
    if n < 2 * bins {
        return Err(Error::TooFewSamples {
            need: 2 * bins,
            got: n,
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("checked finite"));

    let mut out = vec![0usize; n];
    let mut run_bin = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        let provisional = pos * bins / n;
        if pos == 0 || values[i] != values[order[pos - 1]] {
            run_bin = provisional;
        }
        out[i] = run_bin;
    }
    let distinct = out.iter().collect::<std::collections::BTreeSet<_>>().len();
    if distinct < 2 {
        return Err(Error::DegenerateLabels(
            "all values fall into one bin".into(),
        ));
    }
    Ok(out)
}

/// Soft labels for one candidate: vectors aligned with integer labels, plus
/// the settings that produced them.
#[derive(Debug, Clone)]
pub struct SoftLabelSet {
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
    pub temperature: f64,
    /// (dimension, seed) when a random projection was applied.
    pub projection: Option<(usize, u64)>,
}

impl SoftLabelSet {
    /// Runs the soft-label pipeline over raw logits: optional projection,
    /// softmax, drop of the redundant last column.
    pub fn build(
        logits: &Array2<f64>,
        labels: Vec<usize>,
        temperature: f64,
        projection: Option<(usize, u64)>,
    ) -> Result<Self> {
        if logits.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "rows vs labels".into(),
                expected: logits.nrows(),
                got: labels.len(),
            });
        }
        let projected;
        let (z, applied) = match projection {
            Some((r, seed)) if r < logits.ncols() => {
                projected = random_projection(logits, r, seed)?;
                (&projected, Some((r, seed)))
            }
            _ => (logits, None),
        };
        let vectors = drop_last_dimension(&softmax_rows(z, temperature)?)?;
        Ok(SoftLabelSet {
            vectors,
            labels,
            temperature,
            projection: applied,
        })
    }

    pub fn partition(&self) -> Result<ClusterPartition> {
        partition_by_label(&self.labels)
    }

    /// Fits one gaussian per cluster, keyed by cluster label.
    pub fn fit_clusters(&self, epsilon: f64) -> Result<BTreeMap<usize, GaussianFit>> {
        fit_partition(&self.vectors, &self.partition()?, epsilon)
    }
}

/// Fits one gaussian per cluster of `partition` over the rows of `vectors`.
pub fn fit_partition(
    vectors: &Array2<f64>,
    partition: &ClusterPartition,
    epsilon: f64,
) -> Result<BTreeMap<usize, GaussianFit>> {
    let mut fits = BTreeMap::new();
    for (label, rows) in partition.iter() {
        let points = vectors.select(ndarray::Axis(0), rows);
        let fit = fit_gaussian(points.view(), epsilon)?;
        fits.insert(label, fit);
    }
    Ok(fits)
}
