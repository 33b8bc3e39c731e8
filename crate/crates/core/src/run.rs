//! End-to-end runs: load every candidate's predictions, push them through
//! the soft-label pipeline, score them under the configured metric, and rank.
//!
//! Determinism contract: every non-timing field of the report is a pure
//! function of the inputs and the configuration (seed included). Candidates
//! may be scored on any number of worker threads; each candidate's numeric
//! path is single-threaded and seeded from (run seed, candidate id), so the
//! schedule cannot leak into the results.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, DiscreteDistribution};
use crate::data_io::{self, LabelData, LogitMatrix, TargetLabels, TaskKind};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalResult};
use crate::gaussian::GaussianFit;
use crate::metric::{MetricKind, Orientation};
use crate::model_db::{ModelCandidate, ModelDatabase, ModelKind};
use crate::separation::{self, CandidateScore};
use crate::soft_label::{
    self, derive_candidate_seed, discretize_labels, fit_partition, partition_by_label,
    ClusterPartition,
};

/// Knobs of a ranking run. `threads` controls scheduling only and is not
/// part of the report echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub metric: MetricKind,
    /// Softmax temperature T.
    pub temperature: f64,
    /// How many ids the report's `top_k` list holds.
    pub top_k: usize,
    /// Random-projection width r (isms only).
    pub projection_dim: usize,
    /// Fraction of target rows scored, 0 < rate <= 1.
    pub sample_rate: f64,
    pub seed: u64,
    /// Ridge added to each covariance diagonal.
    pub epsilon: f64,
    /// Weight exponent p of the regression variant.
    pub norm_p: f64,
    /// Equal-frequency bin count for regression labels.
    pub bins: usize,
    /// Worker threads; 0 uses the global pool. Never serialized.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            metric: MetricKind::Sms,
            temperature: 2.0,
            top_k: 5,
            projection_dim: 25,
            sample_rate: 1.0,
            seed: 0,
            epsilon: 1e-6,
            norm_p: 2.0,
            bins: 10,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !self.sample_rate.is_finite() || self.sample_rate <= 0.0 || self.sample_rate > 1.0 {
            return Err(Error::InvalidRate(self.sample_rate));
        }
        if self.projection_dim < 2 {
            return Err(Error::InvalidDimension(format!(
                "projection_dim must be at least 2, got {}",
                self.projection_dim
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !self.norm_p.is_finite() || self.norm_p < 0.0 {
            return Err(Error::Config(format!(
                "norm p must be finite and non-negative, got {}",
                self.norm_p
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "bins must be at least 2, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

/// Per-run divergence inputs for the kld/jsd metrics.
#[derive(Debug, Clone)]
pub struct DistributionSet {
    pub target: DiscreteDistribution,
    pub sources: HashMap<String, DiscreteDistribution>,
}

/// Everything `rank_run` reads. Features are required only when the
/// database holds predictor-kind candidates; distributions only for kld/jsd.
pub struct RankInputs<'a> {
    pub db: &'a ModelDatabase,
    pub labels: &'a TargetLabels,
    pub features: Option<&'a LogitMatrix>,
    pub distributions: Option<&'a DistributionSet>,
}

/// One ranked candidate in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub id: String,
    pub rank: usize,
    pub raw_metric: f64,
    pub normalized_metric: f64,
    /// Present only for isms: whether the projection actually applied
    /// (it is skipped when r >= the candidate's output width).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projection_applied: Option<bool>,
}

/// Wall-clock split: acquiring predictions vs everything after them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSplit {
    pub predicting_seconds: f64,
    pub other_seconds: f64,
}

/// Full result of a ranking run. Candidates appear in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: TaskKind,
    pub metric: MetricKind,
    pub orientation: Orientation,
    pub config: RunConfig,
    /// Number of target rows actually scored after sampling.
    pub sample_count: usize,
    pub candidates: Vec<CandidateReport>,
    /// Ids of the best `config.top_k` candidates, best first.
    pub top_k: Vec<String>,
    pub timing: TimingSplit,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evaluation: Option<EvalResult>,
}

/// Ground-truth orientation for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthKind {
    /// Accuracy for classification tasks, loss for regression tasks.
    Auto,
    Accuracy,
    Loss,
}

impl std::str::FromStr for TruthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TruthKind::Auto),
            "accuracy" => Ok(TruthKind::Accuracy),
            "loss" => Ok(TruthKind::Loss),
            other => Err(Error::Config(format!(
                "unknown truth kind `{other}` (expected `auto`, `accuracy`, or `loss`)"
            ))),
        }
    }
}

/// Per-cluster fit summary in the inspect view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: usize,
    pub count: usize,
    pub mean_norm: f64,
    pub log_det: f64,
}

/// Debugging view of one candidate: cluster fits and the pairwise SD table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub candidate: String,
    pub m: usize,
    pub labels: Vec<usize>,
    pub clusters: Vec<ClusterSummary>,
    /// m x m, symmetric, zero diagonal; indexed like `labels`.
    pub sd_matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

/// Integer cluster labels a run actually uses: classification labels pass
/// through; regression labels are discretized into equal-frequency bins.
fn effective_cluster_labels(labels: &TargetLabels, config: &RunConfig) -> Result<Vec<usize>> {
    match &labels.data {
        LabelData::Classes(classes) => {
            if config.metric == MetricKind::SmsRegression {
                return Err(Error::Config(
                    "metric `sms-regression` needs a regression task (real-valued labels)"
                        .into(),
                ));
            }
            Ok(classes.clone())
        }
        LabelData::Values(values) => {
            if matches!(config.metric, MetricKind::Sms | MetricKind::Isms) {
                return Err(Error::Config(format!(
                    "metric `{}` needs classification labels; use `sms-regression` for \
                     regression tasks",
                    config.metric
                )));
            }
            discretize_labels(values, config.bins)
        }
    }
}

/// Loads or computes one candidate's logits over the full target dataset.
fn acquire_logits(
    db: &ModelDatabase,
    candidate: &ModelCandidate,
    labels: &TargetLabels,
    features: Option<&LogitMatrix>,
) -> Result<Array2<f64>> {
    let path = db.resolve_path(candidate);
    let logits = match candidate.kind {
        ModelKind::LogitsFile => {
            let m = data_io::load_matrix(&path)?;
            if let Some(ids) = &m.sample_ids {
                if ids != &labels.sample_ids {
                    let at = ids
                        .iter()
                        .zip(&labels.sample_ids)
                        .position(|(a, b)| a != b)
                        .unwrap_or_else(|| ids.len().min(labels.sample_ids.len()));
                    return Err(Error::Config(format!(
                        "sample ids in `{}` do not match the labels file (first difference \
                         at row {at})",
                        path.display()
                    )));
                }
            }
            m.values
        }
        ModelKind::AffinePredictor | ModelKind::MlpPredictor => {
            let features = features.ok_or_else(|| {
                Error::Config(format!(
                    "candidate `{}` is a {} and needs a target feature matrix",
                    candidate.id, candidate.kind
                ))
            })?;
            let weights = data_io::load_weights(&path)?;
            data_io::predict_logits(&weights, &features.values)?
        }
    };
    if logits.ncols() != candidate.output_dim {
        return Err(Error::DimensionMismatch {
            context: format!("output width of candidate `{}`", candidate.id),
            expected: candidate.output_dim,
            got: logits.ncols(),
        });
    }
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: format!("logit rows of candidate `{}` vs labels", candidate.id),
            expected: labels.len(),
            got: logits.nrows(),
        });
    }
    Ok(logits)
}

struct ScoredCandidate {
    id: String,
    raw: f64,
    projection_applied: Option<bool>,
    predicting_seconds: f64,
    other_seconds: f64,
}

/// Scores one candidate under a cluster metric (everything except kld/jsd).
fn score_cluster_candidate(
    db: &ModelDatabase,
    candidate: &ModelCandidate,
    labels: &TargetLabels,
    features: Option<&LogitMatrix>,
    subset: Option<&[usize]>,
    partition: &ClusterPartition,
    config: &RunConfig,
) -> Result<ScoredCandidate> {
    let id = candidate.id.as_str();

    let start = Instant::now();
    let logits = acquire_logits(db, candidate, labels, features)
        .map_err(|e| e.for_candidate(id, "acquire-logits"))?;
    let predicting_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let logits = match subset {
        Some(rows) => logits.select(ndarray::Axis(0), rows),
        None => logits,
    };

    let (z, projection_applied) = if config.metric == MetricKind::Isms {
        let r = config.projection_dim;
        if r < logits.ncols() {
            let seed = derive_candidate_seed(config.seed, id);
            let projected = soft_label::random_projection(&logits, r, seed)
                .map_err(|e| e.for_candidate(id, "project"))?;
            (projected, Some(true))
        } else {
            (logits, Some(false))
        }
    } else {
        (logits, None)
    };

    let soft = soft_label::softmax_rows(&z, config.temperature)
        .and_then(|p| soft_label::drop_last_dimension(&p))
        .map_err(|e| e.for_candidate(id, "soft-labels"))?;

    let raw = match config.metric {
        MetricKind::Sms | MetricKind::Isms | MetricKind::SmsRegression => {
            let fits: BTreeMap<usize, GaussianFit> =
                fit_partition(&soft, partition, config.epsilon)
                    .map_err(|e| e.for_candidate(id, "fit-gaussians"))?;
            let sep = if config.metric == MetricKind::SmsRegression {
                separation::regression_sd(&fits, config.norm_p)
            } else {
                separation::model_sd(&fits)
            };
            sep.map_err(|e| e.for_candidate(id, "metric"))?.value
        }
        MetricKind::Dbc => baselines::dbc(&soft, partition)
            .map_err(|e| e.for_candidate(id, "metric"))?,
        MetricKind::Ldwc => baselines::ldwc(&soft, partition)
            .map_err(|e| e.for_candidate(id, "metric"))?,
        MetricKind::Dbi => baselines::dbi(&soft, partition)
            .map_err(|e| e.for_candidate(id, "metric"))?,
        MetricKind::Ch => baselines::ch(&soft, partition)
            .map_err(|e| e.for_candidate(id, "metric"))?,
        MetricKind::Kld | MetricKind::Jsd => unreachable!("divergence metrics take the other path"),
    };
    let other_seconds = start.elapsed().as_secs_f64();

    Ok(ScoredCandidate {
        id: id.to_string(),
        raw,
        projection_applied,
        predicting_seconds,
        other_seconds,
    })
}

/// Scores one candidate under kld/jsd from its source distribution file.
fn score_divergence_candidate(
    candidate: &ModelCandidate,
    distributions: &DistributionSet,
    metric: MetricKind,
) -> Result<ScoredCandidate> {
    let id = candidate.id.as_str();
    let start = Instant::now();
    let source = distributions.sources.get(id).ok_or_else(|| {
        Error::Config(format!("no source distribution supplied for candidate `{id}`"))
    })?;
    let raw = match metric {
        MetricKind::Kld => baselines::kl_divergence(source, &distributions.target),
        MetricKind::Jsd => baselines::js_divergence(source, &distributions.target),
        _ => unreachable!("cluster metrics take the other path"),
    }
    .map_err(|e| e.for_candidate(id, "divergence"))?;
    Ok(ScoredCandidate {
        id: id.to_string(),
        raw,
        projection_applied: None,
        predicting_seconds: 0.0,
        other_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the full ranking pipeline over every registered candidate.
pub fn rank_run(inputs: &RankInputs<'_>, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let db = inputs.db;
    let labels = inputs.labels;
    if db.candidates().is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("target labels"));
    }
    let metric = config.metric;
    let orientation = metric.orientation();

    // One shared row subset per run keeps candidate scores comparable.
    let subset: Option<Vec<usize>> = if config.sample_rate < 1.0 {
        Some(soft_label::sample_rows(
            labels.len(),
            config.sample_rate,
            config.seed,
        )?)
    } else {
        None
    };
    let sample_count = subset.as_ref().map_or(labels.len(), Vec::len);

    // The cluster structure is shared by every candidate, so build it once.
    let prepared: Option<ClusterPartition> = if metric.uses_soft_labels() {
        let all = effective_cluster_labels(labels, config)?;
        let chosen: Vec<usize> = match &subset {
            Some(rows) => rows.iter().map(|&r| all[r]).collect(),
            None => all,
        };
        Some(partition_by_label(&chosen)?)
    } else {
        if inputs.distributions.is_none() {
            return Err(Error::Config(format!(
                "metric `{metric}` needs a target distribution and one source \
                 distribution per candidate"
            )));
        }
        None
    };

    let score_one = |candidate: &ModelCandidate| -> Result<ScoredCandidate> {
        match &prepared {
            Some(partition) => score_cluster_candidate(
                db,
                candidate,
                labels,
                inputs.features,
                subset.as_deref(),
                partition,
                config,
            ),
            None => score_divergence_candidate(
                candidate,
                inputs.distributions.expect("checked above"),
                metric,
            ),
        }
    };

    // Score in parallel, then report the first failure in registration
    // order so the error does not depend on the schedule.
    let outcomes: Vec<Result<ScoredCandidate>> = if config.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| db.candidates().par_iter().map(score_one).collect())
    } else {
        db.candidates().par_iter().map(score_one).collect()
    };
    let mut scored = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        scored.push(outcome?);
    }

    let raw_values: Vec<f64> = scored.iter().map(|s| s.raw).collect();
    let normalized = evaluation::minmax_normalize(&raw_values)?;
    let scores: Vec<CandidateScore> = scored
        .iter()
        .map(|s| CandidateScore {
            id: s.id.clone(),
            value: s.raw,
        })
        .collect();
    let ranking = separation::rank_candidates(&scores, scores.len(), orientation)?;

    let by_id: HashMap<&str, (usize, &ScoredCandidate)> = scored
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), (i, s)))
        .collect();
    let candidates: Vec<CandidateReport> = ranking
        .iter()
        .map(|r| {
            let (i, s) = by_id[r.id.as_str()];
            CandidateReport {
                id: r.id.clone(),
                rank: r.rank,
                raw_metric: r.value,
                normalized_metric: normalized[i],
                projection_applied: s.projection_applied,
            }
        })
        .collect();
    let top_k: Vec<String> = candidates
        .iter()
        .take(config.top_k.min(candidates.len()))
        .map(|c| c.id.clone())
        .collect();
    let timing = TimingSplit {
        predicting_seconds: scored.iter().map(|s| s.predicting_seconds).sum(),
        other_seconds: scored.iter().map(|s| s.other_seconds).sum(),
    };

    Ok(RunReport {
        task: labels.task(),
        metric,
        orientation,
        config: config.clone(),
        sample_count,
        candidates,
        top_k,
        timing,
        evaluation: None,
    })
}

/// Computes evaluation metrics against ground truth and attaches them to
/// the report. Returns the attached result.
pub fn evaluate_report(
    report: &mut RunReport,
    accuracies: &HashMap<String, f64>,
    k: usize,
    truth: TruthKind,
) -> Result<EvalResult> {
    let lower_better_truth = match truth {
        TruthKind::Accuracy => false,
        TruthKind::Loss => true,
        TruthKind::Auto => report.task == TaskKind::Regression,
    };
    let mut raw = Vec::with_capacity(report.candidates.len());
    let mut norm = Vec::with_capacity(report.candidates.len());
    let mut truth_values = Vec::with_capacity(report.candidates.len());
    for c in &report.candidates {
        let &acc = accuracies
            .get(&c.id)
            .ok_or_else(|| Error::MissingAccuracy(c.id.clone()))?;
        raw.push(c.raw_metric);
        norm.push(c.normalized_metric);
        truth_values.push(acc);
    }
    let pcc = evaluation::pearson(&raw, &truth_values)?;
    let (slope, intercept) = evaluation::least_squares_line(&norm, &truth_values)?;
    let ranking: Vec<String> = report.candidates.iter().map(|c| c.id.clone()).collect();
    let topk_curve =
        evaluation::topk_lowest_accuracy(&ranking, accuracies, k, lower_better_truth)?;
    let result = EvalResult {
        pcc,
        slope,
        intercept,
        topk_curve,
    };
    report.evaluation = Some(result.clone());
    Ok(result)
}

/// Builds the inspect view of one candidate: cluster fit summaries and the
/// full pairwise separation table under the configured metric's pipeline.
pub fn inspect_candidate(
    db: &ModelDatabase,
    candidate_id: &str,
    labels: &TargetLabels,
    features: Option<&LogitMatrix>,
    config: &RunConfig,
) -> Result<InspectReport> {
    config.validate()?;
    let candidate = db
        .get(candidate_id)
        .ok_or_else(|| Error::UnknownCandidate(candidate_id.to_string()))?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("target labels"));
    }
    let all_labels = effective_cluster_labels(labels, config)?;
    let subset: Option<Vec<usize>> = if config.sample_rate < 1.0 {
        Some(soft_label::sample_rows(
            labels.len(),
            config.sample_rate,
            config.seed,
        )?)
    } else {
        None
    };
    let chosen: Vec<usize> = match &subset {
        Some(rows) => rows.iter().map(|&r| all_labels[r]).collect(),
        None => all_labels,
    };
    let partition = partition_by_label(&chosen)?;

    let logits = acquire_logits(db, candidate, labels, features)
        .map_err(|e| e.for_candidate(candidate_id, "acquire-logits"))?;
    let logits = match &subset {
        Some(rows) => logits.select(ndarray::Axis(0), rows),
        None => logits,
    };
    let z = if config.metric == MetricKind::Isms && config.projection_dim < logits.ncols() {
        let seed = derive_candidate_seed(config.seed, candidate_id);
        soft_label::random_projection(&logits, config.projection_dim, seed)
            .map_err(|e| e.for_candidate(candidate_id, "project"))?
    } else {
        logits
    };
    let soft = soft_label::softmax_rows(&z, config.temperature)
        .and_then(|p| soft_label::drop_last_dimension(&p))
        .map_err(|e| e.for_candidate(candidate_id, "soft-labels"))?;
    let fits = fit_partition(&soft, &partition, config.epsilon)
        .map_err(|e| e.for_candidate(candidate_id, "fit-gaussians"))?;

    let cluster_labels: Vec<usize> = fits.keys().copied().collect();
    let m = cluster_labels.len();
    let clusters: Vec<ClusterSummary> = cluster_labels
        .iter()
        .map(|&label| {
            let fit = &fits[&label];
            ClusterSummary {
                label,
                count: fit.count(),
                mean_norm: fit.mean().iter().map(|v| v * v).sum::<f64>().sqrt(),
                log_det: fit.log_det(),
            }
        })
        .collect();
    let mut sd_matrix = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let value = separation::pairwise_sd(&fits[&cluster_labels[i]], &fits[&cluster_labels[j]])
                .map_err(|e| e.for_candidate(candidate_id, "metric"))?;
            sd_matrix[i][j] = value;
            sd_matrix[j][i] = value;
        }
    }
    let warning = (m == 1).then(|| {
        "only one cluster present; separation is identically zero".to_string()
    });

    Ok(InspectReport {
        candidate: candidate_id.to_string(),
        m,
        labels: cluster_labels,
        clusters,
        sd_matrix,
        warning,
    })
}

/// File-level inputs of a ranking run, shared by the CLI and the bindings.
#[derive(Debug, Clone)]
pub struct RankPaths {
    pub db: PathBuf,
    pub labels: PathBuf,
    pub task: TaskKind,
    pub features: Option<PathBuf>,
    /// Directory of `<candidate-id>.csv` source distributions (kld/jsd).
    pub dist_dir: Option<PathBuf>,
    /// Target-dataset distribution file (kld/jsd).
    pub target_dist: Option<PathBuf>,
}

/// Opens every input file and runs the ranking.
pub fn rank_from_paths(paths: &RankPaths, config: &RunConfig) -> Result<RunReport> {
    let db = ModelDatabase::open(&paths.db)?;
    let labels = data_io::load_labels(&paths.labels, paths.task)?;
    let features = paths
        .features
        .as_ref()
        .map(|p| data_io::load_matrix(p))
        .transpose()?;
    let distributions = if config.metric.uses_soft_labels() {
        None
    } else {
        let target_path = paths.target_dist.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "metric `{}` needs a target distribution file",
                config.metric
            ))
        })?;
        let dist_dir = paths.dist_dir.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "metric `{}` needs a directory of source distributions",
                config.metric
            ))
        })?;
        let target = data_io::load_distribution(target_path)?;
        let mut sources = HashMap::new();
        for candidate in db.candidates() {
            let p = dist_dir.join(format!("{}.csv", candidate.id));
            sources.insert(candidate.id.clone(), data_io::load_distribution(&p)?);
        }
        Some(DistributionSet { target, sources })
    };
    rank_run(
        &RankInputs {
            db: &db,
            labels: &labels,
            features: features.as_ref(),
            distributions: distributions.as_ref(),
        },
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{save_logits_binary, save_logits_csv};
    use crate::model_db::RegisterSpec;
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::fs;
    use std::path::Path;
    use tempfile::TempDir;

    /// Class-structured logits: class means scaled by `strength` plus unit
    /// noise. Higher strength separates the classes more.
    fn synthetic_logits(
        n_samples: usize,
        n_outputs: usize,
        labels: &[usize],
        strength: f64,
        seed: u64,
    ) -> Array2<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut z = Array2::zeros((n_samples, n_outputs));
        for i in 0..n_samples {
            for j in 0..n_outputs {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let mean = if labels[i] % n_outputs == j { strength } else { 0.0 };
                z[[i, j]] = mean + noise;
            }
        }
        z
    }

    fn write_labels(dir: &Path, labels: &[usize]) -> PathBuf {
        let mut body = String::from("sample_id,label\n");
        for (i, l) in labels.iter().enumerate() {
            body.push_str(&format!("s{i},{l}\n"));
        }
        let p = dir.join("labels.csv");
        fs::write(&p, body).unwrap();
        p
    }

    /// Small db: two candidates, one well-separated, one noise-only.
    fn two_candidate_db(dir: &Path) -> (ModelDatabase, Vec<usize>, PathBuf) {
        let n = 120;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let labels_path = write_labels(dir, &labels);
        let mut db = ModelDatabase::open_or_create(&dir.join("db")).unwrap();
        for (id, strength, seed) in [("strong", 6.0, 1u64), ("weak", 0.0, 2u64)] {
            let z = synthetic_logits(n, 4, &labels, strength, seed);
            let m = LogitMatrix {
                values: z,
                sample_ids: None,
            };
            let p = dir.join(format!("{id}.csv"));
            save_logits_csv(&m, &p).unwrap();
            db.register(RegisterSpec {
                id: id.into(),
                output_dim: 4,
                kind: ModelKind::LogitsFile,
                source: p,
                metadata: Default::default(),
            })
            .unwrap();
        }
        (db, labels, labels_path)
    }

    fn classification_labels(raw: &[usize]) -> TargetLabels {
        TargetLabels {
            sample_ids: (0..raw.len()).map(|i| format!("s{i}")).collect(),
            data: LabelData::Classes(raw.to_vec()),
        }
    }

    #[test]
    fn separated_candidate_ranks_first() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let config = RunConfig::default();
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &config,
        )
        .unwrap();
        assert_eq!(report.candidates.len(), 2);
        assert_eq!(report.candidates[0].id, "strong");
        assert_eq!(report.candidates[0].rank, 1);
        assert!(report.candidates[0].raw_metric > report.candidates[1].raw_metric);
        assert_eq!(report.top_k, ["strong", "weak"]);
        assert_eq!(report.sample_count, 120);
        // Ranks are a permutation of 1..=n.
        let mut ranks: Vec<usize> = report.candidates.iter().map(|c| c.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![1, 2]);
        // Normalized values span [0, 1] for two distinct raws.
        assert_eq!(report.candidates[0].normalized_metric, 1.0);
        assert_eq!(report.candidates[1].normalized_metric, 0.0);
        assert!(report.candidates[0].projection_applied.is_none());
    }

    #[test]
    fn reports_identical_across_thread_counts() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let mut report_values = Vec::new();
        for threads in [1, 4] {
            let config = RunConfig {
                threads,
                metric: MetricKind::Isms,
                projection_dim: 3,
                sample_rate: 0.5,
                seed: 9,
                ..RunConfig::default()
            };
            let report = rank_run(
                &RankInputs {
                    db: &db,
                    labels: &labels,
                    features: None,
                    distributions: None,
                },
                &config,
            )
            .unwrap();
            let mut v = serde_json::to_value(&report).unwrap();
            v.as_object_mut().unwrap().remove("timing");
            report_values.push(v);
        }
        assert_eq!(report_values[0], report_values[1]);
    }

    #[test]
    fn isms_projection_skip_is_reported() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        // r = 25 >= 4 outputs: pass-through, noted per candidate.
        let config = RunConfig {
            metric: MetricKind::Isms,
            ..RunConfig::default()
        };
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &config,
        )
        .unwrap();
        for c in &report.candidates {
            assert_eq!(c.projection_applied, Some(false));
        }
        // r = 3 < 4: applied.
        let config = RunConfig {
            metric: MetricKind::Isms,
            projection_dim: 3,
            ..RunConfig::default()
        };
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &config,
        )
        .unwrap();
        for c in &report.candidates {
            assert_eq!(c.projection_applied, Some(true));
        }
    }

    #[test]
    fn failing_candidate_is_named_with_stage() {
        let dir = TempDir::new().unwrap();
        let (mut db, labels, _) = two_candidate_db(dir.path());
        // Register a candidate whose file then disappears.
        let z = synthetic_logits(120, 4, &labels, 1.0, 3);
        let p = dir.path().join("ghost.csv");
        save_logits_csv(
            &LogitMatrix {
                values: z,
                sample_ids: None,
            },
            &p,
        )
        .unwrap();
        db.register(RegisterSpec {
            id: "ghost".into(),
            output_dim: 4,
            kind: ModelKind::LogitsFile,
            source: p,
            metadata: Default::default(),
        })
        .unwrap();
        fs::remove_file(db.resolve_path(db.get("ghost").unwrap())).unwrap();

        let labels = classification_labels(&labels);
        let err = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &RunConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Candidate { id, stage, .. } => {
                assert_eq!(id, "ghost");
                assert_eq!(stage, "acquire-logits");
            }
            other => panic!("expected candidate error, got {other}"),
        }
    }

    #[test]
    fn sampling_shrinks_the_scored_rows() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let config = RunConfig {
            sample_rate: 0.25,
            ..RunConfig::default()
        };
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &config,
        )
        .unwrap();
        assert_eq!(report.sample_count, 30);
    }

    #[test]
    fn predictor_candidates_need_features() {
        let dir = TempDir::new().unwrap();
        let mut db = ModelDatabase::open_or_create(&dir.path().join("db")).unwrap();
        let wp = dir.path().join("w.json");
        fs::write(
            &wp,
            r#"{"layers": [{"W": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], "b": [0.0, 0.0, 0.0], "activation": "none"}]}"#,
        )
        .unwrap();
        db.register(RegisterSpec {
            id: "aff".into(),
            output_dim: 3,
            kind: ModelKind::AffinePredictor,
            source: wp,
            metadata: Default::default(),
        })
        .unwrap();
        let raw: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let labels = classification_labels(&raw);
        let err = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &RunConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Candidate { ref stage, .. } if *stage == "acquire-logits"));

        // With features the predictor path produces a ranking.
        let mut rng = StdRng::seed_from_u64(5);
        let mut f = Array2::zeros((40, 2));
        for i in 0..40 {
            for j in 0..2 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                f[[i, j]] = if raw[i] == j { 4.0 } else { 0.0 } + noise;
            }
        }
        let features = LogitMatrix {
            values: f,
            sample_ids: None,
        };
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: Some(&features),
                distributions: None,
            },
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(report.candidates.len(), 1);
        assert!(report.timing.predicting_seconds >= 0.0);
    }

    #[test]
    fn divergence_metrics_rank_from_distribution_files() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let target = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
        let mut sources = HashMap::new();
        // `weak` matches the target exactly; `strong` is far away.
        sources.insert(
            "strong".to_string(),
            DiscreteDistribution::new(vec![0.9, 0.1]).unwrap(),
        );
        sources.insert(
            "weak".to_string(),
            DiscreteDistribution::new(vec![0.5, 0.5]).unwrap(),
        );
        let dists = DistributionSet { target, sources };
        for metric in [MetricKind::Kld, MetricKind::Jsd] {
            let config = RunConfig {
                metric,
                ..RunConfig::default()
            };
            let report = rank_run(
                &RankInputs {
                    db: &db,
                    labels: &labels,
                    features: None,
                    distributions: Some(&dists),
                },
                &config,
            )
            .unwrap();
            // Lower divergence is better.
            assert_eq!(report.candidates[0].id, "weak", "{metric}");
            assert_eq!(report.orientation, Orientation::LowerBetter);
            assert_eq!(report.candidates[0].raw_metric, 0.0);
        }
        // Missing distribution set is a config error.
        let err = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &RunConfig {
                metric: MetricKind::Kld,
                ..RunConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn regression_metric_needs_regression_task_and_vice_versa() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let class_labels = classification_labels(&labels);
        let err = rank_run(
            &RankInputs {
                db: &db,
                labels: &class_labels,
                features: None,
                distributions: None,
            },
            &RunConfig {
                metric: MetricKind::SmsRegression,
                ..RunConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let reg_labels = TargetLabels {
            sample_ids: class_labels.sample_ids.clone(),
            data: LabelData::Values((0..120).map(|i| i as f64).collect()),
        };
        let err = rank_run(
            &RankInputs {
                db: &db,
                labels: &reg_labels,
                features: None,
                distributions: None,
            },
            &RunConfig::default(), // sms on regression labels
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn regression_run_discretizes_and_ranks() {
        let dir = TempDir::new().unwrap();
        let n = 120;
        // Real-valued target correlated with the class index used to build
        // the logits.
        let raw: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut db = ModelDatabase::open_or_create(&dir.path().join("db")).unwrap();
        for (id, strength, seed) in [("strong", 6.0, 1u64), ("weak", 0.0, 2u64)] {
            let z = synthetic_logits(n, 4, &raw, strength, seed);
            let p = dir.path().join(format!("{id}.csv"));
            save_logits_csv(
                &LogitMatrix {
                    values: z,
                    sample_ids: None,
                },
                &p,
            )
            .unwrap();
            db.register(RegisterSpec {
                id: id.into(),
                output_dim: 4,
                kind: ModelKind::LogitsFile,
                source: p,
                metadata: Default::default(),
            })
            .unwrap();
        }
        let labels = TargetLabels {
            sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
            data: LabelData::Values(raw.iter().map(|&l| l as f64 + 0.1).collect()),
        };
        let config = RunConfig {
            metric: MetricKind::SmsRegression,
            bins: 3,
            ..RunConfig::default()
        };
        let report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &config,
        )
        .unwrap();
        assert_eq!(report.task, TaskKind::Regression);
        assert_eq!(report.candidates[0].id, "strong");
    }

    #[test]
    fn evaluate_attaches_expected_values() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let mut report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &RunConfig::default(),
        )
        .unwrap();
        let accuracies: HashMap<String, f64> =
            [("strong".to_string(), 0.95), ("weak".to_string(), 0.55)].into();
        let eval = evaluate_report(&mut report, &accuracies, 2, TruthKind::Auto).unwrap();
        // Metric order matches accuracy order here, so correlation is 1.
        assert!((eval.pcc - 1.0).abs() <= 1e-12);
        assert_eq!(eval.topk_curve, vec![(1, 0.95), (2, 0.55)]);
        assert_eq!(report.evaluation.as_ref().unwrap(), &eval);
        // Trendline matches a direct least-squares fit.
        let (slope, intercept) =
            evaluation::least_squares_line(&[1.0, 0.0], &[0.95, 0.55]).unwrap();
        assert!((eval.slope - slope).abs() <= 1e-12);
        assert!((eval.intercept - intercept).abs() <= 1e-12);

        let missing: HashMap<String, f64> = [("strong".to_string(), 0.95)].into();
        assert!(matches!(
            evaluate_report(&mut report, &missing, 2, TruthKind::Auto),
            Err(Error::MissingAccuracy(_))
        ));
    }

    #[test]
    fn report_round_trips_through_json() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let labels = classification_labels(&labels);
        let mut report = rank_run(
            &RankInputs {
                db: &db,
                labels: &labels,
                features: None,
                distributions: None,
            },
            &RunConfig::default(),
        )
        .unwrap();
        let accuracies: HashMap<String, f64> =
            [("strong".to_string(), 0.9), ("weak".to_string(), 0.6)].into();
        evaluate_report(&mut report, &accuracies, 2, TruthKind::Accuracy).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        // `threads` never appears in the echo.
        assert!(!json.contains("threads"));
    }

    #[test]
    fn inspect_matches_separation_values() {
        let dir = TempDir::new().unwrap();
        let (db, labels, _) = two_candidate_db(dir.path());
        let target = classification_labels(&labels);
        let view = inspect_candidate(&db, "strong", &target, None, &RunConfig::default())
            .unwrap();
        assert_eq!(view.m, 3);
        assert_eq!(view.labels, vec![0, 1, 2]);
        assert!(view.warning.is_none());
        // Symmetric with a zero diagonal.
        for i in 0..3 {
            assert_eq!(view.sd_matrix[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(view.sd_matrix[i][j].to_bits(), view.sd_matrix[j][i].to_bits());
            }
        }
        // Entries agree with a direct pipeline computation.
        let logits =
            data_io::load_matrix(&db.resolve_path(db.get("strong").unwrap())).unwrap();
        let soft = soft_label::drop_last_dimension(
            &soft_label::softmax_rows(&logits.values, 2.0).unwrap(),
        )
        .unwrap();
        let partition = partition_by_label(&labels).unwrap();
        let fits = fit_partition(&soft, &partition, 1e-6).unwrap();
        let direct = separation::pairwise_sd(&fits[&0], &fits[&1]).unwrap();
        assert_eq!(view.sd_matrix[0][1].to_bits(), direct.to_bits());
        // Cluster counts match the label distribution.
        for c in &view.clusters {
            assert_eq!(c.count, 40);
            assert!(c.mean_norm.is_finite() && c.log_det.is_finite());
        }

        assert!(matches!(
            inspect_candidate(&db, "nope", &target, None, &RunConfig::default()),
            Err(Error::UnknownCandidate(_))
        ));
    }

    #[test]
    fn inspect_single_cluster_warns() {
        let dir = TempDir::new().unwrap();
        let n = 30;
        let raw = vec![0usize; n];
        let mut db = ModelDatabase::open_or_create(&dir.path().join("db")).unwrap();
        let z = synthetic_logits(n, 3, &raw, 1.0, 7);
        let p = dir.path().join("only.csv");
        save_logits_csv(
            &LogitMatrix {
                values: z,
                sample_ids: None,
            },
            &p,
        )
        .unwrap();
        db.register(RegisterSpec {
            id: "only".into(),
            output_dim: 3,
            kind: ModelKind::LogitsFile,
            source: p,
            metadata: Default::default(),
        })
        .unwrap();
        let labels = classification_labels(&raw);
        let view = inspect_candidate(&db, "only", &labels, None, &RunConfig::default()).unwrap();
        assert_eq!(view.m, 1);
        assert_eq!(view.sd_matrix, vec![vec![0.0]]);
        assert!(view.warning.is_some());
    }

    #[test]
    fn rank_from_paths_end_to_end_with_binary_logits() {
        let dir = TempDir::new().unwrap();
        let n = 90;
        let raw: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let labels_path = write_labels(dir.path(), &raw);
        let db_path = dir.path().join("db");
        let mut db = ModelDatabase::open_or_create(&db_path).unwrap();
        for (id, strength) in [("a", 5.0), ("b", 1.0), ("c", 0.0)] {
            let z = synthetic_logits(n, 3, &raw, strength, 11);
            let p = dir.path().join(format!("{id}.bin"));
            save_logits_binary(
                &LogitMatrix {
                    values: z,
                    sample_ids: None,
                },
                &p,
            )
            .unwrap();
            db.register(RegisterSpec {
                id: id.into(),
                output_dim: 3,
                kind: ModelKind::LogitsFile,
                source: p,
                metadata: Default::default(),
            })
            .unwrap();
        }
        drop(db);
        let paths = RankPaths {
            db: db_path,
            labels: labels_path,
            task: TaskKind::Classification,
            features: None,
            dist_dir: None,
            target_dist: None,
        };
        let report = rank_from_paths(&paths, &RunConfig::default()).unwrap();
        assert_eq!(report.candidates.len(), 3);
        assert_eq!(report.candidates[0].id, "a");
        assert_eq!(report.candidates[2].id, "c");
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        let base = RunConfig::default();
        assert!(matches!(
            RunConfig { temperature: 0.0, ..base.clone() }.validate(),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            RunConfig { sample_rate: 0.0, ..base.clone() }.validate(),
            Err(Error::InvalidRate(_))
        ));
        assert!(matches!(
            RunConfig { sample_rate: 1.5, ..base.clone() }.validate(),
            Err(Error::InvalidRate(_))
        ));
        assert!(matches!(
            RunConfig { projection_dim: 1, ..base.clone() }.validate(),
            Err(Error::InvalidDimension(_))
        ));
        assert!(matches!(
            RunConfig { epsilon: -1.0, ..base.clone() }.validate(),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig { norm_p: f64::NAN, ..base.clone() }.validate(),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig { bins: 1, ..base }.validate(),
            Err(Error::Config(_))
        ));
    }
}
