//! Corpus loading, validation and subsampling.
//!
//! The input is UTF-8 line-delimited JSON, one instance per line:
//!
//! ```text
//! {"doc_id": "d1", "document": "...", "system_id": "0", "output": "...",
//!  "human": {"coherence": "4.333", "consistency": "5", "fluency": "13/3", "relevance": "3.5"}}
//! ```
//!
//! Human averages are decimal strings (JSON numbers are accepted and read
//! from their literal text) so that gold labels never see binary-float drift.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{
    format_human_score, human_score_in_range, parse_human_score, Criterion, DomainError,
    EvalInstance,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Domain {
        line: usize,
        #[source]
        source: DomainError,
    },
    #[error("line {line}: duplicate instance (doc {doc_id}, system {system_id})")]
    Duplicate {
        line: usize,
        doc_id: String,
        system_id: String,
    },
    #[error("document {doc_id} lists systems in an order inconsistent with the corpus")]
    InconsistentSystemOrder { doc_id: String },
    #[error("unknown system id {0:?}")]
    UnknownSystem(String),
    #[error("requested {requested} documents but the corpus has {available}")]
    TooManyDocs { requested: usize, available: usize },
    #[error("system id {0:?} listed twice")]
    RepeatedSystem(String),
    #[error("empty corpus")]
    Empty,
}

/// Which order documents are taken in when subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocOrder {
    /// Order of first appearance in the corpus file.
    #[default]
    File,
    /// Lexicographic by `doc_id`.
    Lexicographic,
}

/// A validated set of evaluation instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub instances: Vec<EvalInstance>,
    pub doc_order: Vec<String>,
    pub system_order: Vec<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    doc_id: String,
    document: String,
    system_id: String,
    output: String,
    #[serde(default)]
    human: Option<BTreeMap<String, Value>>,
}

/// Serialized form of one instance, as written by [`Corpus::to_jsonl`].
#[derive(Serialize)]
struct OutRecord<'a> {
    doc_id: &'a str,
    document: &'a str,
    system_id: &'a str,
    output: &'a str,
    human: BTreeMap<&'static str, String>,
}

fn human_value(value: &Value, line: usize) -> Result<crate::HumanScore, DatasetError> {
    let text = match value {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        other => {
            return Err(DatasetError::Parse {
                line,
                message: format!("human score must be a decimal string, got {other}"),
            })
        }
    };
    let score = parse_human_score(&text).map_err(|source| DatasetError::Domain { line, source })?;
    if !human_score_in_range(&score) {
        return Err(DatasetError::Domain {
            line,
            source: DomainError::OutOfRange { value: text },
        });
    }
    Ok(score)
}

impl Corpus {
    /// Build a corpus from instances, checking every invariant.
    pub fn from_instances(instances: Vec<EvalInstance>) -> Result<Self, DatasetError> {
        Self::validate(instances, |i| i + 1)
    }

    fn validate(
        instances: Vec<EvalInstance>,
        line_of: impl Fn(usize) -> usize,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        let mut doc_order: Vec<String> = Vec::new();
        let mut system_order: Vec<String> = Vec::new();
        let mut system_pos: HashMap<String, usize> = HashMap::new();
        for (idx, inst) in instances.iter().enumerate() {
            if inst.doc_id.is_empty() {
                return Err(DatasetError::Parse {
                    line: line_of(idx),
                    message: "doc_id must be nonempty".into(),
                });
            }
            if inst.system_id.is_empty() {
                return Err(DatasetError::Parse {
                    line: line_of(idx),
                    message: "system_id must be nonempty".into(),
                });
            }
            for score in inst.human_avg.values() {
                if !human_score_in_range(score) {
                    return Err(DatasetError::Domain {
                        line: line_of(idx),
                        source: DomainError::OutOfRange {
                            value: format_human_score(score),
                        },
                    });
                }
            }
            if !seen.insert((inst.doc_id.clone(), inst.system_id.clone())) {
                return Err(DatasetError::Duplicate {
                    line: line_of(idx),
                    doc_id: inst.doc_id.clone(),
                    system_id: inst.system_id.clone(),
                });
            }
            if !doc_order.contains(&inst.doc_id) {
                doc_order.push(inst.doc_id.clone());
            }
            if !system_pos.contains_key(&inst.system_id) {
                system_pos.insert(inst.system_id.clone(), system_order.len());
                system_order.push(inst.system_id.clone());
            }
        }
        // each document must list its systems consistently with the global order
        let mut last_pos: HashMap<&str, usize> = HashMap::new();
        for inst in &instances {
            let pos = system_pos[&inst.system_id];
            if let Some(prev) = last_pos.insert(inst.doc_id.as_str(), pos) {
                if pos < prev {
                    return Err(DatasetError::InconsistentSystemOrder {
                        doc_id: inst.doc_id.clone(),
                    });
                }
            }
        }
        Ok(Corpus {
            instances,
            doc_order,
            system_order,
        })
    }

    /// Parse line-delimited JSON. Blank lines are skipped; reported line
    /// numbers are 1-based file lines.
    pub fn parse_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut instances = Vec::new();
        let mut lines = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            if raw_line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| DatasetError::Parse {
                line,
                message: e.to_string(),
            })?;
            let mut human_avg = BTreeMap::new();
            for (name, value) in raw.human.unwrap_or_default() {
                let criterion: Criterion = name
                    .parse()
                    .map_err(|source| DatasetError::Domain { line, source })?;
                if value.is_null() {
                    continue;
                }
                human_avg.insert(criterion, human_value(&value, line)?);
            }
            instances.push(EvalInstance {
                doc_id: raw.doc_id,
                document: raw.document,
                system_id: raw.system_id,
                output: raw.output,
                human_avg,
            });
            lines.push(line);
        }
        Self::validate(instances, |i| lines[i])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            let record = OutRecord {
                doc_id: &inst.doc_id,
                document: &inst.document,
                system_id: &inst.system_id,
                output: &inst.output,
                human: inst
                    .human_avg
                    .iter()
                    .map(|(c, v)| (c.as_str(), format_human_score(v)))
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn doc_count(&self) -> usize {
        self.doc_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, doc_id: &str, system_id: &str) -> Option<&EvalInstance> {
        self.instances
            .iter()
            .find(|i| i.doc_id == doc_id && i.system_id == system_id)
    }

    /// Instances of one document in corpus order.
    pub fn doc_instances<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a EvalInstance> {
        self.instances.iter().filter(move |i| i.doc_id == doc_id)
    }

    /// Source text of a document (taken from its first instance).
    pub fn document_text(&self, doc_id: &str) -> Option<&str> {
        self.instances
            .iter()
            .find(|i| i.doc_id == doc_id)
            .map(|i| i.document.as_str())
    }

    pub fn with_doc_order(mut self, order: DocOrder) -> Self {
        if order == DocOrder::Lexicographic {
            self.doc_order.sort();
        }
        self
    }
}

/// Read and validate a corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::parse_jsonl(&text)
}

/// Keep the first `doc_count` documents (in `doc_order`) and only the listed
/// systems, in the listed order.
pub fn subsample(
    corpus: &Corpus,
    doc_count: usize,
    system_ids: &[String],
) -> Result<Corpus, DatasetError> {
    if doc_count > corpus.doc_order.len() {
        return Err(DatasetError::TooManyDocs {
            requested: doc_count,
            available: corpus.doc_order.len(),
        });
    }
    let mut listed = HashSet::new();
    for id in system_ids {
        if !corpus.system_order.contains(id) {
            return Err(DatasetError::UnknownSystem(id.clone()));
        }
        if !listed.insert(id.as_str()) {
            return Err(DatasetError::RepeatedSystem(id.clone()));
        }
    }
    let docs = &corpus.doc_order[..doc_count];
    let mut instances = Vec::new();
    for doc in docs {
        for system in system_ids {
            if let Some(inst) = corpus.instance(doc, system) {
                instances.push(inst.clone());
            }
        }
    }
    Ok(Corpus {
        instances,
        doc_order: docs.to_vec(),
        system_order: system_ids.to_vec(),
    })
}

/// Number of judge calls each protocol needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolBudget {
    pub pairwise_calls: u64,
    pub scoring_calls: u64,
}

/// Pairwise calls are `C(systems, 2) × k` per document, scoring calls one per
/// instance; both are multiplied by criteria and judges.
pub fn protocol_budget(corpus: &Corpus, criteria: u64, judges: u64, k: u64) -> ProtocolBudget {
    let mut pairs = 0u64;
    let mut outputs = 0u64;
    for doc in &corpus.doc_order {
        let n = corpus.doc_instances(doc).count() as u64;
        pairs += n * n.saturating_sub(1) / 2;
        outputs += n;
    }
    ProtocolBudget {
        pairwise_calls: pairs * k * criteria * judges,
        scoring_calls: outputs * criteria * judges,
    }
}

/// The eight SummEval systems kept in the reduced working set.
pub const PAPER_SYSTEMS: [&str; 8] = ["0", "2", "4", "6", "9", "11", "13", "15"];

#[cfg(test)]
mod tests {
    use super::*;

    fn line(doc: &str, sys: &str, coh: &str) -> String {
        format!(
            r#"{{"doc_id":"{doc}","document":"text of {doc}","system_id":"{sys}","output":"summary {sys}","human":{{"coherence":"{coh}","consistency":"4","fluency":"5","relevance":"3.5"}}}}"#
        )
    }

    pub(crate) fn synthetic_corpus(docs: usize, systems: usize) -> Corpus {
        let mut text = String::new();
        for d in 0..docs {
            for s in 0..systems {
                text.push_str(&line(&format!("doc-{d}"), &s.to_string(), "4.333"));
                text.push('\n');
            }
        }
        Corpus::parse_jsonl(&text).unwrap()
    }

    #[test]
    fn loads_small_file() {
        let text = [
            line("doc-1", "0", "4.333"),
            line("doc-1", "1", "3"),
            String::new(),
            line("doc-2", "0", "2.5"),
            line("doc-2", "1", "1"),
        ]
        .join("\n");
        let corpus = Corpus::parse_jsonl(&text).unwrap();
        assert_eq!(corpus.instances.len(), 4);
        assert_eq!(corpus.doc_order, vec!["doc-1", "doc-2"]);
        assert_eq!(corpus.system_order, vec!["0", "1"]);
        let again = Corpus::parse_jsonl(&corpus.to_jsonl()).unwrap();
        assert_eq!(again, corpus);
    }

    #[test]
    fn rejects_duplicates_and_range() {
        let dup = [line("doc-1", "0", "4"), line("doc-1", "0", "3")].join("\n");
        assert!(matches!(
            Corpus::parse_jsonl(&dup),
            Err(DatasetError::Duplicate { line: 2, .. })
        ));
        let bad = line("doc-1", "0", "5.7");
        assert!(matches!(
            Corpus::parse_jsonl(&bad),
            Err(DatasetError::Domain { line: 1, .. })
        ));
        let broken = format!("{}\n{{not json", line("doc-1", "0", "4"));
        assert!(matches!(
            Corpus::parse_jsonl(&broken),
            Err(DatasetError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn numbers_are_read_from_their_literal_text() {
        let text = r#"{"doc_id":"d","document":"x","system_id":"s","output":"y","human":{"coherence":4.1}}"#;
        let corpus = Corpus::parse_jsonl(text).unwrap();
        let v = corpus.instances[0].human(Criterion::Coherence).unwrap();
        assert_eq!(*v, num_rational::Ratio::new(41, 10));
    }

    #[test]
    fn inconsistent_system_order_rejected() {
        let text = [
            line("a", "0", "4"),
            line("a", "1", "4"),
            line("b", "1", "4"),
            line("b", "0", "4"),
        ]
        .join("\n");
        assert!(matches!(
            Corpus::parse_jsonl(&text),
            Err(DatasetError::InconsistentSystemOrder { .. })
        ));
    }

    #[test]
    fn subsample_thirty_by_eight() {
        let corpus = synthetic_corpus(100, 16);
        let systems: Vec<String> = PAPER_SYSTEMS.iter().map(|s| s.to_string()).collect();
        let sub = subsample(&corpus, 30, &systems).unwrap();
        assert_eq!(sub.instances.len(), 240);
        assert_eq!(sub.system_order, systems);
        assert_eq!(sub.doc_order[0], "doc-0");
        let again = subsample(&sub, 30, &systems).unwrap();
        assert_eq!(again, sub);
    }

    #[test]
    fn subsample_identity_and_errors() {
        let corpus = synthetic_corpus(3, 4);
        let all = corpus.system_order.clone();
        assert_eq!(subsample(&corpus, 3, &all).unwrap(), corpus);
        assert!(matches!(
            subsample(&corpus, 3, &["99".to_string()]),
            Err(DatasetError::UnknownSystem(_))
        ));
        assert!(matches!(
            subsample(&corpus, 4, &all),
            Err(DatasetError::TooManyDocs { .. })
        ));
    }

    #[test]
    fn budget_examples() {
        let corpus = synthetic_corpus(30, 8);
        let b = protocol_budget(&corpus, 4, 4, 3);
        assert_eq!(b.pairwise_calls, 40_320);
        assert_eq!(b.scoring_calls, 3_840);
        let tiny = synthetic_corpus(1, 2);
        let b = protocol_budget(&tiny, 1, 1, 1);
        assert_eq!((b.pairwise_calls, b.scoring_calls), (1, 2));
    }

    #[test]
    fn lexicographic_doc_order() {
        let text = [line("b", "0", "4"), line("a", "0", "4")].join("\n");
        let corpus = Corpus::parse_jsonl(&text).unwrap();
        assert_eq!(corpus.doc_order, vec!["b", "a"]);
        let sorted = corpus.with_doc_order(DocOrder::Lexicographic);
        assert_eq!(sorted.doc_order, vec!["a", "b"]);
    }
}
