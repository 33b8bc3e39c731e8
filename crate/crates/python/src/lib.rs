//! Python bindings: the soft-label pipeline, Gaussian fits, separation
//! degrees, baseline metrics, evaluation helpers, and the end-to-end
//! file-driven ranking entry point.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use smselect_core::baselines::{self, DiscreteDistribution};
use smselect_core::data_io::TaskKind;
use smselect_core::gaussian::{fit_gaussian, GaussianFit};
use smselect_core::run::{rank_from_paths, RankPaths, RunConfig};
use smselect_core::separation;
use smselect_core::soft_label::{self, partition_by_label, ClusterPartition};
use smselect_core::{Error, MetricKind};

fn pyerr(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array2(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} is empty")));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    if width == 0 {
        return Err(PyValueError::new_err(format!("{what} rows are empty")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("checked rectangular"))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn partition(labels: &[usize]) -> PyResult<ClusterPartition> {
    partition_by_label(labels).map_err(pyerr)
}

fn cluster_fits(
    vectors: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
) -> PyResult<BTreeMap<usize, GaussianFit>> {
    let array = to_array2(vectors, "vectors")?;
    if array.nrows() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} vector rows but {} labels",
            array.nrows(),
            labels.len()
        )));
    }
    let part = partition(labels)?;
    soft_label::fit_partition(&array, &part, epsilon).map_err(pyerr)
}

/// Temperature softmax of one logit vector (max-shifted, numerically safe).
#[pyfunction]
#[pyo3(signature = (logits, temperature = 2.0))]
fn extended_softmax(logits: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    let z = Array1::from_vec(logits);
    Ok(soft_label::extended_softmax(z.view(), temperature)
        .map_err(pyerr)?
        .to_vec())
}

/// Full soft-label transform: row-wise softmax, then drop of the redundant
/// last column.
#[pyfunction]
#[pyo3(signature = (logits, temperature = 2.0))]
fn soft_labels(logits: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    let z = to_array2(&logits, "logits")?;
    let p = soft_label::softmax_rows(&z, temperature).map_err(pyerr)?;
    Ok(to_rows(&soft_label::drop_last_dimension(&p).map_err(pyerr)?))
}

/// Drops the last column of a row-normalized probability matrix.
#[pyfunction]
fn drop_last_dimension(probabilities: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let p = to_array2(&probabilities, "probabilities")?;
    Ok(to_rows(&soft_label::drop_last_dimension(&p).map_err(pyerr)?))
}

/// Seeded Gaussian random projection to `r` columns; returns the input
/// unchanged when it already has at most `r` columns.
#[pyfunction]
fn random_projection(logits: Vec<Vec<f64>>, r: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let z = to_array2(&logits, "logits")?;
    Ok(to_rows(&soft_label::random_projection(&z, r, seed).map_err(pyerr)?))
}

/// Sorted sample of row indices without replacement (at least one row).
#[pyfunction]
fn sample_rows(n_rows: usize, rate: f64, seed: u64) -> PyResult<Vec<usize>> {
    soft_label::sample_rows(n_rows, rate, seed).map_err(pyerr)
}

/// Equal-frequency discretization of real labels into `bins` cluster ids.
#[pyfunction]
fn discretize_labels(values: Vec<f64>, bins: usize) -> PyResult<Vec<usize>> {
    soft_label::discretize_labels(&values, bins).map_err(pyerr)
}

/// The per-candidate projection seed used by isms runs.
#[pyfunction]
fn derive_candidate_seed(run_seed: u64, candidate_id: &str) -> u64 {
    soft_label::derive_candidate_seed(run_seed, candidate_id)
}

/// A fitted Gaussian cluster model.
#[pyclass]
struct Gaussian {
    inner: GaussianFit,
}

#[pymethods]
impl Gaussian {
    /// Fits mean and ridge-regularized sample covariance to points.
    #[staticmethod]
    #[pyo3(signature = (points, epsilon = 1e-6))]
    fn fit(points: Vec<Vec<f64>>, epsilon: f64) -> PyResult<Self> {
        let array = to_array2(&points, "points")?;
        Ok(Gaussian {
            inner: fit_gaussian(array.view(), epsilon).map_err(pyerr)?,
        })
    }

    /// Builds a Gaussian from an explicit mean and covariance.
    #[staticmethod]
    #[pyo3(signature = (mean, covariance, count = 2))]
    fn from_moments(mean: Vec<f64>, covariance: Vec<Vec<f64>>, count: usize) -> PyResult<Self> {
        let mu = Array1::from_vec(mean);
        let sigma = to_array2(&covariance, "covariance")?;
        Ok(Gaussian {
            inner: GaussianFit::from_moments(mu, sigma, count).map_err(pyerr)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count()
    }

    #[getter]
    fn log_det(&self) -> f64 {
        self.inner.log_det()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        self.inner
            .covariance()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// Squared Mahalanobis distance of a point from this Gaussian.
    fn mahalanobis_sq(&self, x: Vec<f64>) -> PyResult<f64> {
        let v = Array1::from_vec(x);
        self.inner.mahalanobis_sq(v.view()).map_err(pyerr)
    }

    /// Log density up to the normalizing constant.
    fn log_density_unnormalized(&self, x: Vec<f64>) -> PyResult<f64> {
        let v = Array1::from_vec(x);
        self.inner.log_density_unnormalized(v.view()).map_err(pyerr)
    }

    fn __repr__(&self) -> String {
        format!(
            "Gaussian(dim={}, count={}, log_det={})",
            self.inner.dim(),
            self.inner.count(),
            self.inner.log_det()
        )
    }
}

/// Separation degree of one cluster pair, in [0, 1).
#[pyfunction]
fn pair_separation(g: &Gaussian, h: &Gaussian) -> PyResult<f64> {
    separation::pairwise_sd(&g.inner, &h.inner).map_err(pyerr)
}

/// Model-level separation degree over labeled vectors (the sms score).
#[pyfunction]
#[pyo3(signature = (vectors, labels, epsilon = 1e-6))]
fn separation_degree(vectors: Vec<Vec<f64>>, labels: Vec<usize>, epsilon: f64) -> PyResult<f64> {
    let fits = cluster_fits(&vectors, &labels, epsilon)?;
    Ok(separation::model_sd(&fits).map_err(pyerr)?.value)
}

/// Distance-weighted separation degree over binned labels (sms-regression).
#[pyfunction]
#[pyo3(signature = (vectors, labels, p = 2.0, epsilon = 1e-6))]
fn regression_separation_degree(
    vectors: Vec<Vec<f64>>,
    labels: Vec<usize>,
    p: f64,
    epsilon: f64,
) -> PyResult<f64> {
    let fits = cluster_fits(&vectors, &labels, epsilon)?;
    Ok(separation::regression_sd(&fits, p).map_err(pyerr)?.value)
}

fn distribution(p: Vec<f64>, what: &str) -> PyResult<DiscreteDistribution> {
    DiscreteDistribution::new(p).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// Kullback-Leibler divergence KL(p || q) of two discrete distributions.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    baselines::kl_divergence(&distribution(p, "p")?, &distribution(q, "q")?).map_err(pyerr)
}

/// Jensen-Shannon divergence of two discrete distributions.
#[pyfunction]
fn js_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    baselines::js_divergence(&distribution(p, "p")?, &distribution(q, "q")?).map_err(pyerr)
}

macro_rules! cluster_index {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[pyfunction]
        fn $name(vectors: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
            let array = to_array2(&vectors, "vectors")?;
            if array.nrows() != labels.len() {
                return Err(PyValueError::new_err(format!(
                    "{} vector rows but {} labels",
                    array.nrows(),
                    labels.len()
                )));
            }
            let part = partition(&labels)?;
            baselines::$name(&array, &part).map_err(pyerr)
        }
    };
}

cluster_index!(dbc, "Mean distance between cluster centroids (higher is better).");
cluster_index!(ldwc, "Largest intra-cluster pairwise distance (lower is better).");
cluster_index!(dbi, "Davies-Bouldin index (lower is better).");
cluster_index!(ch, "Calinski-Harabasz score (higher is better).");

/// Sample Pearson correlation coefficient.
#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    smselect_core::evaluation::pearson(&x, &y).map_err(pyerr)
}

/// Least-squares line fit; returns (slope, intercept).
#[pyfunction]
fn least_squares_line(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    smselect_core::evaluation::least_squares_line(&x, &y).map_err(pyerr)
}

/// Min-max normalization to [0, 1]; all-equal input maps to 0.5.
#[pyfunction]
fn minmax_normalize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    smselect_core::evaluation::minmax_normalize(&values).map_err(pyerr)
}

/// Worst ground-truth value among the top-k ranked ids, k = 1..=k.
#[pyfunction]
#[pyo3(signature = (ranking, accuracies, k, lower_better = false))]
fn topk_lowest_accuracy(
    ranking: Vec<String>,
    accuracies: HashMap<String, f64>,
    k: usize,
    lower_better: bool,
) -> PyResult<Vec<(usize, f64)>> {
    smselect_core::evaluation::topk_lowest_accuracy(&ranking, &accuracies, k, lower_better)
        .map_err(pyerr)
}

/// Runs the full file-driven ranking pipeline and returns the report as a
/// JSON string. Mirrors the command line's `rank`.
#[pyfunction]
#[pyo3(signature = (
    db, labels, task, metric,
    features = None, dist_dir = None, target_dist = None,
    temperature = 2.0, top_k = 5, projection_dim = 25, sample_rate = 1.0,
    seed = 0, epsilon = 1e-6, norm_p = 2.0, bins = 10, threads = 0
))]
#[allow(clippy::too_many_arguments)]
fn rank_json(
    db: PathBuf,
    labels: PathBuf,
    task: &str,
    metric: &str,
    features: Option<PathBuf>,
    dist_dir: Option<PathBuf>,
    target_dist: Option<PathBuf>,
    temperature: f64,
    top_k: usize,
    projection_dim: usize,
    sample_rate: f64,
    seed: u64,
    epsilon: f64,
    norm_p: f64,
    bins: usize,
    threads: usize,
) -> PyResult<String> {
    let task: TaskKind = task.parse().map_err(pyerr)?;
    let metric: MetricKind = metric.parse().map_err(pyerr)?;
    let config = RunConfig {
        metric,
        temperature,
        top_k,
        projection_dim,
        sample_rate,
        seed,
        epsilon,
        norm_p,
        bins,
        threads,
    };
    let paths = RankPaths {
        db,
        labels,
        task,
        features,
        dist_dir,
        target_dist,
    };
    let report = rank_from_paths(&paths, &config).map_err(pyerr)?;
    serde_json::to_string_pretty(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn smselect(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Gaussian>()?;
    m.add_function(wrap_pyfunction!(extended_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(soft_labels, m)?)?;
    m.add_function(wrap_pyfunction!(drop_last_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(random_projection, m)?)?;
    m.add_function(wrap_pyfunction!(sample_rows, m)?)?;
    m.add_function(wrap_pyfunction!(discretize_labels, m)?)?;
    m.add_function(wrap_pyfunction!(derive_candidate_seed, m)?)?;
    m.add_function(wrap_pyfunction!(pair_separation, m)?)?;
    m.add_function(wrap_pyfunction!(separation_degree, m)?)?;
    m.add_function(wrap_pyfunction!(regression_separation_degree, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(dbc, m)?)?;
    m.add_function(wrap_pyfunction!(ldwc, m)?)?;
    m.add_function(wrap_pyfunction!(dbi, m)?)?;
    m.add_function(wrap_pyfunction!(ch, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(least_squares_line, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(topk_lowest_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(rank_json, m)?)?;
    Ok(())
}
