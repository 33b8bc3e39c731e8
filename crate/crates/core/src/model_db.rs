//! On-disk model database: a root directory holding `manifest.json` (one
//! JSON array of candidate records, in registration order) and a `models/`
//! directory with a copy of every registered artifact.
//!
//! Registration validates the artifact under its declared kind before
//! anything is written, and the manifest is replaced atomically
//! (write-to-temp, then rename), so a crash can never leave a partial
//! manifest behind.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{self, Activation, LOGITS_MAGIC};
use crate::error::{Error, Result};

/// How a candidate's file turns into logits on the target dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Precomputed logits, one row per target sample (CSV or binary).
    LogitsFile,
    /// A single affine layer applied to caller-supplied features.
    AffinePredictor,
    /// A stack of affine layers with activations, applied to features.
    MlpPredictor,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogitsFile => "logits-file",
            ModelKind::AffinePredictor => "affine-predictor",
            ModelKind::MlpPredictor => "mlp-predictor",
        }
    }

    /// Does this kind need a feature matrix to produce logits?
    pub fn needs_features(self) -> bool {
        !matches!(self, ModelKind::LogitsFile)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits-file" => Ok(ModelKind::LogitsFile),
            "affine-predictor" => Ok(ModelKind::AffinePredictor),
            "mlp-predictor" => Ok(ModelKind::MlpPredictor),
            other => Err(Error::Config(format!(
                "unknown model kind `{other}` (expected `logits-file`, \
                 `affine-predictor`, or `mlp-predictor`)"
            ))),
        }
    }
}

/// One registered source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub id: String,
    pub output_dim: usize,
    pub kind: ModelKind,
    /// Artifact path relative to the database root.
    pub path: PathBuf,
    pub metadata: BTreeMap<String, String>,
}

/// What `register` needs: where the artifact currently lives plus the
/// candidate's declared properties.
#[derive(Debug, Clone)]
pub struct RegisterSpec {
    pub id: String,
    pub output_dim: usize,
    pub kind: ModelKind,
    pub source: PathBuf,
    pub metadata: BTreeMap<String, String>,
}

/// Database handle: the root directory and the manifest, in registration
/// order.
#[derive(Debug)]
pub struct ModelDatabase {
    root: PathBuf,
    candidates: Vec<ModelCandidate>,
}

const MANIFEST: &str = "manifest.json";
const MODELS_DIR: &str = "models";

impl ModelDatabase {
    /// Opens an existing database; the manifest must exist and parse.
    pub fn open(root: &Path) -> Result<Self> {
        let manifest_path = root.join(MANIFEST);
        let file = File::open(&manifest_path).map_err(|e| Error::FileUnreadable {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
        let candidates: Vec<ModelCandidate> = serde_json::from_reader(std::io::BufReader::new(
            file,
        ))
        .map_err(|e| Error::CorruptManifest {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
        let mut seen = BTreeSet::new();
        for c in &candidates {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::CorruptManifest {
                    path: manifest_path,
                    detail: format!("duplicate candidate id `{}`", c.id),
                });
            }
        }
        Ok(ModelDatabase {
            root: root.to_path_buf(),
            candidates,
        })
    }

    /// Opens the database, creating an empty one (root directory, `models/`,
    /// empty manifest) when the manifest is missing.
    pub fn open_or_create(root: &Path) -> Result<Self> {
        if root.join(MANIFEST).exists() {
            return Self::open(root);
        }
        fs::create_dir_all(root.join(MODELS_DIR)).map_err(|e| Error::FileUnreadable {
            path: root.to_path_buf(),
            detail: e.to_string(),
        })?;
        let db = ModelDatabase {
            root: root.to_path_buf(),
            candidates: Vec::new(),
        };
        db.save_manifest()?;
        Ok(db)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Candidates in registration order.
    pub fn candidates(&self) -> &[ModelCandidate] {
        &self.candidates
    }

    pub fn get(&self, id: &str) -> Option<&ModelCandidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    /// Absolute path of a candidate's artifact.
    pub fn resolve_path(&self, candidate: &ModelCandidate) -> PathBuf {
        self.root.join(&candidate.path)
    }

    /// Validates the artifact, copies it under `models/`, and appends the
    /// candidate to the manifest atomically.
    pub fn register(&mut self, spec: RegisterSpec) -> Result<&ModelCandidate> {
        check_id(&spec.id)?;
        if spec.output_dim < 2 {
            return Err(Error::InvalidDimension(format!(
                "output_dim must be at least 2, got {}",
                spec.output_dim
            )));
        }
        if self.get(&spec.id).is_some() {
            return Err(Error::DuplicateId(spec.id));
        }
        let extension = validate_artifact(&spec)?;

        let rel_path = PathBuf::from(MODELS_DIR).join(format!("{}.{extension}", spec.id));
        let dest = self.root.join(&rel_path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::FileUnreadable {
                path: parent.to_path_buf(),
                detail: e.to_string(),
            })?;
        }
        fs::copy(&spec.source, &dest).map_err(|e| Error::FileUnreadable {
            path: spec.source.clone(),
            detail: e.to_string(),
        })?;

        self.candidates.push(ModelCandidate {
            id: spec.id,
            output_dim: spec.output_dim,
            kind: spec.kind,
            path: rel_path,
            metadata: spec.metadata,
        });
        if let Err(e) = self.save_manifest() {
            self.candidates.pop();
            return Err(e);
        }
        Ok(self.candidates.last().expect("just pushed"))
    }

    fn save_manifest(&self) -> Result<()> {
        let manifest_path = self.root.join(MANIFEST);
        let body = serde_json::to_vec_pretty(&self.candidates).expect("manifest serializes");
        let io_err = |e: std::io::Error| Error::FileUnreadable {
            path: manifest_path.clone(),
            detail: e.to_string(),
        };
        let tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io_err)?;
        fs::write(tmp.path(), &body).map_err(io_err)?;
        tmp.persist(&manifest_path).map_err(|e| io_err(e.error))?;
        Ok(())
    }
}

/// Ids are path- and shell-safe: ASCII alphanumerics plus `-`, `_`, `.`,
/// nonempty, and not starting with a dot.
fn check_id(id: &str) -> Result<()> {
    let reject = |reason: String| {
        Err(Error::InvalidId {
            id: id.to_string(),
            reason,
        })
    };
    if id.is_empty() {
        return reject("empty".into());
    }
    if id.starts_with('.') {
        return reject("starts with `.`".into());
    }
    if let Some(c) = id
        .chars()
        .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')))
    {
        return reject(format!(
            "character `{c}` not allowed (use ASCII letters, digits, `-`, `_`, `.`)"
        ));
    }
    Ok(())
}

/// Parses the artifact under the declared kind, checks its output width, and
/// picks the stored file extension.
fn validate_artifact(spec: &RegisterSpec) -> Result<&'static str> {
    let wrap = |e: Error| match e {
        // Width mismatches keep their specific error; everything else about
        // the artifact's content reads as "file not usable as declared".
        Error::DimensionMismatch { .. } => e,
        Error::FileUnreadable { .. } => e,
        other => Error::FileUnreadable {
            path: spec.source.clone(),
            detail: other.to_string(),
        },
    };
    match spec.kind {
        ModelKind::LogitsFile => {
            let m = data_io::load_logits(&spec.source).map_err(wrap)?;
            if m.n_outputs() != spec.output_dim {
                return Err(Error::DimensionMismatch {
                    context: format!("logits columns in `{}`", spec.source.display()),
                    expected: spec.output_dim,
                    got: m.n_outputs(),
                });
            }
            Ok(if file_is_binary(&spec.source)? { "bin" } else { "csv" })
        }
        ModelKind::AffinePredictor => {
            let w = data_io::load_weights(&spec.source).map_err(wrap)?;
            if w.layers.len() != 1 || w.layers[0].activation != Activation::None {
                return Err(Error::FileUnreadable {
                    path: spec.source.clone(),
                    detail: "an affine predictor is exactly one layer with no activation".into(),
                });
            }
            check_predictor_width(&spec.source, w.out_dim(), spec.output_dim)?;
            Ok("weights.json")
        }
        ModelKind::MlpPredictor => {
            let w = data_io::load_weights(&spec.source).map_err(wrap)?;
            check_predictor_width(&spec.source, w.out_dim(), spec.output_dim)?;
            Ok("weights.json")
        }
    }
}

fn check_predictor_width(path: &Path, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch {
            context: format!("predictor output width in `{}`", path.display()),
            expected,
            got,
        });
    }
    Ok(())
}

fn file_is_binary(path: &Path) -> Result<bool> {
    let mut file = File::open(path).map_err(|e| Error::FileUnreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut head = [0u8; 4];
    match file.read_exact(&mut head) {
        Ok(()) => Ok(&head == LOGITS_MAGIC),
        Err(_) => Ok(false),
    }
}
