//! Run manifest: every input that determines a run's requests and reports.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conformal::Alpha;
use crate::dataset::DocOrder;
use crate::domain::Criterion;
use crate::gateway::{canonical_json, JudgeConfig, Mode};
use crate::ranking::{MfasWeights, DEFAULT_EXACT_BOUND};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

/// How pairwise wins are combined across documents before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Sum win counts over documents, then rank once.
    #[default]
    Pooled,
    /// Rank each document, then order systems by mean position.
    PerDocument,
}

/// Unit of the inter-judge width comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Instance,
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingOptions {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub mfas_weights: MfasWeights,
    #[serde(default = "default_exact_bound")]
    pub exact_bound: usize,
    #[serde(default = "default_smoothing")]
    pub bt_smoothing: f64,
}

impl Default for RankingOptions {
    fn default() -> Self {
        RankingOptions {
            aggregation: Aggregation::Pooled,
            mfas_weights: MfasWeights::Margin,
            exact_bound: DEFAULT_EXACT_BOUND,
            bt_smoothing: default_smoothing(),
        }
    }
}

fn default_exact_bound() -> usize {
    DEFAULT_EXACT_BOUND
}
fn default_smoothing() -> f64 {
    0.01
}
fn default_k() -> u32 {
    3
}
fn default_alphas() -> Vec<Alpha> {
    ["0.05", "0.10", "0.15", "0.20"]
        .iter()
        .map(|a| a.parse().expect("valid default alpha"))
        .collect()
}
fn default_split_count() -> usize {
    20
}
fn default_split_fraction() -> f64 {
    0.5
}
fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}
fn default_cache() -> PathBuf {
    PathBuf::from("cache.sqlite")
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Corpus JSONL; relative paths are taken from the manifest's directory.
    pub corpus: PathBuf,
    /// Expected SHA-256 of the corpus file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_digest: Option<String>,
    /// Keep this many documents; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docs: Option<usize>,
    /// Keep these systems, in this order; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systems: Option<Vec<String>>,
    #[serde(default)]
    pub doc_order: DocOrder,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    pub judges: Vec<JudgeConfig>,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<Alpha>,
    #[serde(default = "default_split_count")]
    pub split_count: usize,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_cache")]
    pub cache: PathBuf,
    /// Cache export (JSONL) loaded into the cache before requests run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_import: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Transport failures tolerated before a run counts as failed.
    #[serde(default)]
    pub max_transport_failures: usize,
    #[serde(default)]
    pub ranking: RankingOptions,
    #[serde(default)]
    pub agreement_granularity: Granularity,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: RunManifest = serde_json::from_str(&text)?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |m: String| Err(ManifestError::Invalid(m));
        if self.judges.is_empty() {
            return invalid("at least one judge is required".into());
        }
        let mut ids = HashSet::new();
        for j in &self.judges {
            j.validate().map_err(|e| ManifestError::Invalid(e.to_string()))?;
            if !ids.insert(j.judge_id.as_str()) {
                return invalid(format!("judge id {} is repeated", j.judge_id));
            }
        }
        if self.k == 0 {
            return invalid("k must be at least 1".into());
        }
        if self.criteria.is_empty() {
            return invalid("criteria must be nonempty".into());
        }
        if self.criteria.iter().collect::<HashSet<_>>().len() != self.criteria.len() {
            return invalid("criteria repeat".into());
        }
        if self.alphas.is_empty() {
            return invalid("alphas must be nonempty".into());
        }
        if self.alphas.iter().collect::<HashSet<_>>().len() != self.alphas.len() {
            return invalid("alphas repeat".into());
        }
        if self.split_count == 0 {
            return invalid("split_count must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return invalid(format!("split_fraction {} is outside (0, 1)", self.split_fraction));
        }
        if !(self.ranking.bt_smoothing >= 0.0 && self.ranking.bt_smoothing.is_finite()) {
            return invalid("bt_smoothing must be >= 0".into());
        }
        if let Some(d) = &self.corpus_digest {
            if d.len() != 64 || !d.bytes().all(|b| b.is_ascii_hexdigit()) {
                return invalid("corpus_digest must be 64 hex characters".into());
            }
        }
        Ok(())
    }

    /// A manifest path made absolute against the manifest's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.resolve(&self.cache)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// SHA-256 over the canonical manifest (paths as written), the toolkit
    /// version and the corpus content digest.
    pub fn digest(&self, corpus_sha256: &str) -> String {
        let value = serde_json::json!({
            "manifest": serde_json::to_value(self).expect("manifest serializes"),
            "toolkit_version": TOOLKIT_VERSION,
            "corpus_sha256": corpus_sha256,
        });
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"corpus": "c.jsonl", "judges": [{"judge_id": "gpt", "model_name": "m"}], "seed": 7}"#;

    #[test]
    fn defaults() {
        let m: RunManifest = serde_json::from_str(MINIMAL).unwrap();
        m.validate().unwrap();
        assert_eq!(m.k, 3);
        assert_eq!(m.alphas.len(), 4);
        assert_eq!(m.alphas[1].to_string(), "0.10");
        assert_eq!(m.split_count, 20);
        assert_eq!(m.mode, Mode::Replay);
        assert_eq!(m.criteria.len(), 4);
        assert_eq!(m.ranking.exact_bound, 12);
        assert_eq!(m.judges[0].temperature, 0.7);
    }

    #[test]
    fn relative_paths_follow_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, MINIMAL).unwrap();
        let m = RunManifest::load(&path).unwrap();
        assert_eq!(m.corpus_path(), dir.path().join("c.jsonl"));
        assert_eq!(m.output_path(), dir.path().join("out"));
    }

    #[test]
    fn digest_tracks_content_not_location() {
        let a: RunManifest = serde_json::from_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.base_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.digest("x"), b.digest("x"));
        assert_ne!(a.digest("x"), a.digest("y"));
        b.seed = 8;
        assert_ne!(a.digest("x"), b.digest("x"));
    }

    #[test]
    fn rejects_bad_values() {
        for patch in [
            r#""judges": []"#,
            r#""k": 0"#,
            r#""split_fraction": 1.0"#,
            r#""alphas": ["0.1", "0.10"]"#,
            r#""corpus_digest": "abc""#,
        ] {
            let text = MINIMAL.replacen('{', &format!("{{{patch},"), 1);
            let text = if patch.starts_with("\"judges\"") {
                r#"{"corpus": "c.jsonl", "judges": [], "seed": 7}"#.to_string()
            } else {
                text
            };
            let m: RunManifest = serde_json::from_str(&text).unwrap();
            assert!(m.validate().is_err(), "{patch}");
        }
        assert!(serde_json::from_str::<RunManifest>(r#"{"corpus": "c", "judges": [], "seed": 1, "bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<RunManifest>(r#"{"corpus": "c", "judges": []}"#).is_err());
    }
}
