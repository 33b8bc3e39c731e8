//! File formats: logit matrices (CSV and binary), target labels, predictor
//! weights, accuracy tables, and discrete distributions.
//!
//! The two logit encodings are interchangeable: both store f64 values
//! exactly, so the same data loads bit-identically from either. Binary files
//! are sniffed by magic, not extension.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::DiscreteDistribution;
use crate::error::{Error, Result};

/// Magic prefix of the binary logits encoding.
pub const LOGITS_MAGIC: &[u8; 4] = b"SMSL";

/// Logit (or feature) matrix with optional per-row sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    pub values: Array2<f64>,
    pub sample_ids: Option<Vec<String>>,
}

impl LogitMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.values.ncols()
    }
}

fn unreadable(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::FileUnreadable {
        path: path.to_path_buf(),
        detail: err.to_string(),
    }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::ParseError {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn check_finite(values: &Array2<f64>, path: &Path) -> Result<()> {
    for ((row, col), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.to_path_buf(),
                row,
                col,
            });
        }
    }
    Ok(())
}

/// True when the file starts with the binary logits magic.
fn is_binary(path: &Path) -> Result<bool> {
    let mut file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut head = [0u8; 4];
    match file.read_exact(&mut head) {
        Ok(()) => Ok(&head == LOGITS_MAGIC),
        Err(_) => Ok(false), // shorter than 4 bytes: let the CSV reader report it
    }
}

/// Loads a logit matrix, sniffing the encoding. Logits need >= 2 outputs.
pub fn load_logits(path: &Path) -> Result<LogitMatrix> {
    let m = load_matrix(path)?;
    if m.n_outputs() < 2 {
        return Err(Error::InvalidDimension(format!(
            "logits in `{}` have {} column(s); need at least 2",
            path.display(),
            m.n_outputs()
        )));
    }
    Ok(m)
}

/// Loads a numeric matrix (logits or predictor features), sniffing the
/// encoding; any column count >= 1 is accepted.
pub fn load_matrix(path: &Path) -> Result<LogitMatrix> {
    if is_binary(path)? {
        load_logits_binary(path)
    } else {
        load_logits_csv(path)
    }
}

/// CSV logits: header `z0,...,z{n-1}`, optionally preceded by `sample_id`.
pub fn load_logits_csv(path: &Path) -> Result<LogitMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let has_ids = headers.get(0) == Some("sample_id");
    let offset = usize::from(has_ids);
    let width = headers.len() - offset;
    if width == 0 {
        return Err(parse_err(path, "no value columns after `sample_id`"));
    }
    for (i, name) in headers.iter().skip(offset).enumerate() {
        let expected = format!("z{i}");
        if name != expected {
            return Err(parse_err(
                path,
                format!("column {} is `{name}`, expected `{expected}`", i + offset),
            ));
        }
    }

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    rows + 1,
                    record.len(),
                    headers.len()
                ),
            ));
        }
        if has_ids {
            ids.push(record[0].to_string());
        }
        for field in record.iter().skip(offset) {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, format!("row {}: `{field}` is not a number", rows + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let values = Array2::from_shape_vec((rows, width), data).expect("shape from row count");
    check_finite(&values, path)?;
    Ok(LogitMatrix {
        values,
        sample_ids: has_ids.then_some(ids),
    })
}

/// Binary logits: magic `SMSL`, u32 row count, u32 column count, then
/// row-major little-endian f64 values.
pub fn load_logits_binary(path: &Path) -> Result<LogitMatrix> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut reader = BufReader::new(file);
    let mut head = [0u8; 12];
    reader
        .read_exact(&mut head)
        .map_err(|_| parse_err(path, "file too short for the binary header"))?;
    if &head[..4] != LOGITS_MAGIC {
        return Err(parse_err(path, "bad magic; not a binary logits file"));
    }
    let n_rows = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let n_cols = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let mut payload = vec![0u8; n_rows * n_cols * 8];
    reader
        .read_exact(&mut payload)
        .map_err(|_| parse_err(path, "truncated payload"))?;
    let mut tail = [0u8; 1];
    if reader.read(&mut tail).map_err(|e| unreadable(path, e))? != 0 {
        return Err(parse_err(path, "trailing bytes after the payload"));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((n_rows, n_cols), data).expect("sized above");
    check_finite(&values, path)?;
    Ok(LogitMatrix {
        values,
        sample_ids: None,
    })
}

/// Writes the CSV encoding. Values print in shortest round-trip form, so a
/// reload is bit-identical.
pub fn save_logits_csv(m: &LogitMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let mut header = Vec::new();
    if m.sample_ids.is_some() {
        header.push("sample_id".to_string());
    }
    header.extend((0..m.n_outputs()).map(|i| format!("z{i}")));
    writer
        .write_record(&header)
        .map_err(|e| unreadable(path, e))?;
    for (i, row) in m.values.rows().into_iter().enumerate() {
        let mut record = Vec::new();
        if let Some(ids) = &m.sample_ids {
            record.push(ids[i].clone());
        }
        record.extend(row.iter().map(|v| format!("{v}")));
        writer
            .write_record(&record)
            .map_err(|e| unreadable(path, e))?;
    }
    writer.flush().map_err(|e| unreadable(path, e))?;
    Ok(())
}

/// Writes the binary encoding (sample ids are not stored).
pub fn save_logits_binary(m: &LogitMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| unreadable(path, e))?;
    let mut writer = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| unreadable(path, e))
    };
    put(&mut writer, LOGITS_MAGIC)?;
    put(&mut writer, &(m.n_samples() as u32).to_le_bytes())?;
    put(&mut writer, &(m.n_outputs() as u32).to_le_bytes())?;
    for v in m.values.iter() {
        put(&mut writer, &v.to_le_bytes())?;
    }
    writer.flush().map_err(|e| unreadable(path, e))?;
    Ok(())
}

/// Task the target labels describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(TaskKind::Classification),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected `classification` or `regression`)"
            ))),
        }
    }
}

/// Label payload: integer class ids or real regression targets.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelData {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

/// Target-dataset labels, row-aligned with the candidates' logit files.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLabels {
    pub sample_ids: Vec<String>,
    pub data: LabelData,
}

impl TargetLabels {
    pub fn len(&self) -> usize {
        match &self.data {
            LabelData::Classes(v) => v.len(),
            LabelData::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> TaskKind {
        match &self.data {
            LabelData::Classes(_) => TaskKind::Classification,
            LabelData::Values(_) => TaskKind::Regression,
        }
    }
}

/// Labels CSV: header `sample_id,label`. Classification labels must be
/// non-negative integers; regression labels must be finite reals.
pub fn load_labels(path: &Path, task: TaskKind) -> Result<TargetLabels> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    if headers.len() != 2 || &headers[0] != "sample_id" || &headers[1] != "label" {
        return Err(parse_err(path, "header must be `sample_id,label`"));
    }
    let mut ids = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(parse_err(path, format!("row {}: expected 2 fields", i + 1)));
        }
        ids.push(record[0].to_string());
        let field = record[1].trim();
        match task {
            TaskKind::Classification => {
                let label: usize = field.parse().map_err(|_| {
                    parse_err(
                        path,
                        format!(
                            "row {}: `{field}` is not a non-negative integer class label",
                            i + 1
                        ),
                    )
                })?;
                classes.push(label);
            }
            TaskKind::Regression => {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(path, format!("row {}: `{field}` is not a number", i + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        path: path.to_path_buf(),
                        row: i,
                        col: 1,
                    });
                }
                values.push(v);
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let data = match task {
        TaskKind::Classification => LabelData::Classes(classes),
        TaskKind::Regression => LabelData::Values(values),
    };
    Ok(TargetLabels {
        sample_ids: ids,
        data,
    })
}

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// One affine layer: y = x Wᵀ + b, then the activation.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    /// Shape (out, in).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Ordered stack of affine layers loaded from a weights file.
#[derive(Debug, Clone)]
pub struct PredictorWeights {
    pub layers: Vec<AffineLayer>,
}

impl PredictorWeights {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, AffineLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, AffineLayer::out_dim)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    layers: Vec<LayerRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    activation: Activation,
}

/// Weights JSON: `{"layers": [{"W": [[...]], "b": [...], "activation":
/// "relu"|"none"}]}`. Layer shapes must chain.
pub fn load_weights(path: &Path) -> Result<PredictorWeights> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let parsed: WeightsFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| parse_err(path, e.to_string()))?;
    if parsed.layers.is_empty() {
        return Err(parse_err(path, "weights file has no layers"));
    }
    let mut layers = Vec::with_capacity(parsed.layers.len());
    for (k, layer) in parsed.layers.into_iter().enumerate() {
        let rows = layer.w.len();
        if rows == 0 {
            return Err(parse_err(path, format!("layer {k}: W is empty")));
        }
        let cols = layer.w[0].len();
        if cols == 0 || layer.w.iter().any(|r| r.len() != cols) {
            return Err(parse_err(path, format!("layer {k}: W is ragged")));
        }
        if layer.b.len() != rows {
            return Err(Error::DimensionMismatch {
                context: format!("layer {k} bias in `{}`", path.display()),
                expected: rows,
                got: layer.b.len(),
            });
        }
        let flat: Vec<f64> = layer.w.into_iter().flatten().collect();
        if flat.iter().chain(layer.b.iter()).any(|v| !v.is_finite()) {
            return Err(parse_err(path, format!("layer {k}: non-finite weight")));
        }
        let weight = Array2::from_shape_vec((rows, cols), flat).expect("checked rectangular");
        layers.push(AffineLayer {
            weight,
            bias: Array1::from_vec(layer.b),
            activation: layer.activation,
        });
    }
    for k in 1..layers.len() {
        if layers[k].in_dim() != layers[k - 1].out_dim() {
            return Err(Error::DimensionMismatch {
                context: format!("layer {k} input in `{}`", path.display()),
                expected: layers[k - 1].out_dim(),
                got: layers[k].in_dim(),
            });
        }
    }
    Ok(PredictorWeights { layers })
}

/// Runs the layer stack over feature rows, producing logits.
pub fn predict_logits(weights: &PredictorWeights, features: &Array2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != weights.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "predictor features".into(),
            expected: weights.in_dim(),
            got: features.ncols(),
        });
    }
    let mut x = features.clone();
    for layer in &weights.layers {
        x = x.dot(&layer.weight.t()) + &layer.bias;
        if layer.activation == Activation::Relu {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }
    Ok(x)
}

/// Accuracies CSV: header `model_id,accuracy`, one row per model.
pub fn load_accuracies(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "model_id" || &headers[1] != "accuracy" {
        return Err(parse_err(path, "header must be `model_id,accuracy`"));
    }
    let mut out = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let id = record[0].to_string();
        let v: f64 = record[1].trim().parse().map_err(|_| {
            parse_err(path, format!("row {}: `{}` is not a number", i + 1, &record[1]))
        })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.to_path_buf(),
                row: i,
                col: 1,
            });
        }
        if out.insert(id.clone(), v).is_some() {
            return Err(parse_err(path, format!("duplicate model id `{id}`")));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(out)
}

/// Distribution CSV: header `p`, one probability per row.
pub fn load_distribution(path: &Path) -> Result<DiscreteDistribution> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    if headers.len() != 1 || &headers[0] != "p" {
        return Err(parse_err(path, "header must be `p`"));
    }
    let mut p = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let v: f64 = record[0].trim().parse().map_err(|_| {
            parse_err(path, format!("row {}: `{}` is not a number", i + 1, &record[0]))
        })?;
        p.push(v);
    }
    if p.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    DiscreteDistribution::new(p)
}

/// Convenience used by tests and tooling: resolve a path under a directory.
pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
