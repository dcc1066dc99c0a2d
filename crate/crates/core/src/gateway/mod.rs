//! Judge calls: request generation, prompt rendering, reply parsing, and a
//! cache-backed executor with a live and a replay mode.

pub mod cache;
pub mod parse;
pub mod prompt;
pub mod transport;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::Corpus;
use crate::domain::Criterion;

pub use cache::{canonical_json, CacheKey, CacheRecord, ResponseCache};
pub use parse::{parse_likert_response, parse_pairwise_response, ParseError};
pub use prompt::{render_pairwise_prompt, render_scoring_prompt};
pub use transport::{ChatTransport, HttpTransport, TransportError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0} must be nonempty")]
    EmptyInput(&'static str),
    #[error("invalid judge config {judge_id}: {message}")]
    InvalidConfig { judge_id: String, message: String },
    #[error("{} request(s) missing from cache in replay mode, first: {}", .digests.len(), .digests.first().map(|d| d.as_str()).unwrap_or(""))]
    MissingCache { digests: Vec<CacheKey> },
    #[error("live mode needs a transport")]
    NoTransport,
    #[error("request for judge {found} passed to executor for {expected}")]
    JudgeMismatch { expected: String, found: String },
    #[error("cache export line {line}: {message}")]
    CacheFormat { line: usize, message: String },
    #[error("document {doc_id} has no text for system {system_id}")]
    MissingInstance { doc_id: String, system_id: String },
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_temperature() -> f64 {
    0.7
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    120
}

/// How one judge model is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub judge_id: String,
    pub model_name: String,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism_limit: usize,
    /// Base delay before retrying a transport failure; doubles per attempt.
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl JudgeConfig {
    pub fn new(judge_id: &str, model_name: &str) -> Self {
        JudgeConfig {
            judge_id: judge_id.to_string(),
            model_name: model_name.to_string(),
            endpoint_url: String::new(),
            temperature: default_temperature(),
            max_retries: default_retries(),
            parallelism_limit: default_parallelism(),
            retry_backoff_ms: default_backoff(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |message: &str| GatewayError::InvalidConfig {
            judge_id: self.judge_id.clone(),
            message: message.to_string(),
        };
        if self.judge_id.is_empty() {
            return Err(invalid("judge_id must be nonempty"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(invalid("temperature must be >= 0"));
        }
        if self.parallelism_limit < 1 {
            return Err(invalid("parallelism_limit must be >= 1"));
        }
        Ok(())
    }
}

/// What a request asks the judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Pairwise {
        doc_id: String,
        criterion: Criterion,
        system_a: String,
        system_b: String,
    },
    Scoring {
        doc_id: String,
        criterion: Criterion,
        system_id: String,
    },
}

/// A fully rendered judge call.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRequest {
    pub judge_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub repetition_index: u32,
    pub prompt: String,
    pub task: Task,
}

impl JudgeRequest {
    /// The canonical JSON the cache key is derived from.
    pub fn canonical(&self) -> String {
        canonical_json(&json!({
            "model_name": self.model_name,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "repetition_index": self.repetition_index,
        }))
    }

    pub fn key(&self) -> CacheKey {
        CacheKey::of_canonical(&self.canonical())
    }
}

fn instance_output<'a>(corpus: &'a Corpus, doc_id: &str, system_id: &str) -> Result<&'a str, GatewayError> {
    corpus
        .instance(doc_id, system_id)
        .map(|i| i.output.as_str())
        .ok_or_else(|| GatewayError::MissingInstance {
            doc_id: doc_id.to_string(),
            system_id: system_id.to_string(),
        })
}

/// Every pairwise call for one judge: each document, each criterion, each
/// unordered pair of its systems, `k` repetitions. The lexicographically
/// smaller system id is always shown as "Summary A".
pub fn pairwise_requests(
    corpus: &Corpus,
    judge: &JudgeConfig,
    criteria: &[Criterion],
    k: u32,
) -> Result<Vec<JudgeRequest>, GatewayError> {
    let mut out = Vec::new();
    for doc_id in &corpus.doc_order {
        let document = corpus.document_text(doc_id).unwrap_or_default();
        let systems: Vec<&str> = corpus.doc_instances(doc_id).map(|i| i.system_id.as_str()).collect();
        for &criterion in criteria {
            for i in 0..systems.len() {
                for j in i + 1..systems.len() {
                    let (a, b) = if systems[i] <= systems[j] {
                        (systems[i], systems[j])
                    } else {
                        (systems[j], systems[i])
                    };
                    let prompt = render_pairwise_prompt(
                        document,
                        instance_output(corpus, doc_id, a)?,
                        instance_output(corpus, doc_id, b)?,
                        criterion,
                    )?;
                    for rep in 0..k {
                        out.push(JudgeRequest {
                            judge_id: judge.judge_id.clone(),
                            model_name: judge.model_name.clone(),
                            temperature: judge.temperature,
                            repetition_index: rep,
                            prompt: prompt.clone(),
                            task: Task::Pairwise {
                                doc_id: doc_id.clone(),
                                criterion,
                                system_a: a.to_string(),
                                system_b: b.to_string(),
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One direct-scoring call per instance and criterion for one judge.
pub fn scoring_requests(
    corpus: &Corpus,
    judge: &JudgeConfig,
    criteria: &[Criterion],
) -> Result<Vec<JudgeRequest>, GatewayError> {
    let mut out = Vec::new();
    for doc_id in &corpus.doc_order {
        for &criterion in criteria {
            for inst in corpus.doc_instances(doc_id) {
                out.push(JudgeRequest {
                    judge_id: judge.judge_id.clone(),
                    model_name: judge.model_name.clone(),
                    temperature: judge.temperature,
                    repetition_index: 0,
                    prompt: render_scoring_prompt(&inst.document, &inst.output, criterion)?,
                    task: Task::Scoring {
                        doc_id: doc_id.clone(),
                        criterion,
                        system_id: inst.system_id.clone(),
                    },
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    #[default]
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (expected live or replay)")),
        }
    }
}

/// Result of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Response { text: String, cached: bool },
    /// Every attempt failed at the transport level; nothing was cached.
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    /// One outcome per input request, in input order.
    pub outcomes: Vec<Outcome>,
    pub network_calls: usize,
    pub cache_hits: usize,
}

impl Execution {
    pub fn failures(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, Outcome::Failed { .. }))
            .count()
    }
}

enum Attempted {
    Text(String),
    Failed(String),
}

fn dispatch(
    request: &JudgeRequest,
    config: &JudgeConfig,
    transport: &dyn ChatTransport,
    accept: &(dyn Fn(&str) -> bool + Sync),
    calls: &AtomicUsize,
) -> Attempted {
    let mut last = Attempted::Failed("no attempt made".into());
    for attempt in 0..=config.max_retries {
        calls.fetch_add(1, Ordering::SeqCst);
        match transport.complete(&request.model_name, &request.prompt, request.temperature) {
            Ok(text) => {
                if accept(&text) {
                    return Attempted::Text(text);
                }
                log::warn!(
                    "judge {} returned an unparseable reply (attempt {})",
                    request.judge_id,
                    attempt + 1
                );
                last = Attempted::Text(text);
            }
            Err(e) => {
                log::warn!("judge {} transport error: {e}", request.judge_id);
                if !matches!(last, Attempted::Text(_)) {
                    last = Attempted::Failed(e.to_string());
                }
                if attempt < config.max_retries && config.retry_backoff_ms > 0 {
                    let delay = config.retry_backoff_ms.saturating_mul(1 << attempt.min(10));
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
    last
}

/// Serve a batch of requests for one judge.
///
/// Replay mode answers from the cache only and fails up front, listing every
/// missing digest, if any request is absent. Live mode dispatches each
/// distinct cache miss at most once, with up to `parallelism_limit` calls in
/// flight; a reply rejected by `accept` is retried up to `max_retries` times
/// and the last reply is cached either way. The calling thread is the only
/// cache writer, and each reply is persisted before the batch returns.
pub fn execute(
    requests: &[JudgeRequest],
    config: &JudgeConfig,
    cache: &ResponseCache,
    mode: Mode,
    transport: Option<&dyn ChatTransport>,
    accept: &(dyn Fn(&str) -> bool + Sync),
) -> Result<Execution, GatewayError> {
    config.validate()?;
    if let Some(r) = requests.iter().find(|r| r.judge_id != config.judge_id) {
        return Err(GatewayError::JudgeMismatch {
            expected: config.judge_id.clone(),
            found: r.judge_id.clone(),
        });
    }
    let keys: Vec<CacheKey> = requests.iter().map(JudgeRequest::key).collect();
    let mut answers: HashMap<CacheKey, String> = HashMap::new();
    let mut misses: Vec<usize> = Vec::new();
    let mut missing: HashSet<&CacheKey> = HashSet::new();
    let mut cache_hits = 0;
    for (idx, key) in keys.iter().enumerate() {
        if answers.contains_key(key) || missing.contains(key) {
            continue;
        }
        match cache.get(key)? {
            Some(text) => {
                answers.insert(key.clone(), text);
            }
            None => {
                missing.insert(key);
                misses.push(idx);
            }
        }
    }

    let calls = AtomicUsize::new(0);
    let mut failed: HashMap<CacheKey, String> = HashMap::new();
    let mut fresh: HashSet<CacheKey> = HashSet::new();
    if !misses.is_empty() {
        if mode == Mode::Replay {
            let mut digests: Vec<CacheKey> = misses.iter().map(|&i| keys[i].clone()).collect();
            digests.sort();
            return Err(GatewayError::MissingCache { digests });
        }
        let transport = transport.ok_or(GatewayError::NoTransport)?;
        let next = AtomicUsize::new(0);
        let workers = config.parallelism_limit.min(misses.len());
        let (tx, rx) = mpsc::channel::<(usize, Attempted)>();
        std::thread::scope(|scope| -> Result<(), GatewayError> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, calls, misses) = (&next, &calls, &misses);
                scope.spawn(move || loop {
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&idx) = misses.get(slot) else { break };
                    let result = dispatch(&requests[idx], config, transport, accept, calls);
                    if tx.send((idx, result)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (idx, result) in rx {
                let key = keys[idx].clone();
                match result {
                    Attempted::Text(text) => {
                        cache.put(&key, &requests[idx].canonical(), &text)?;
                        fresh.insert(key.clone());
                        answers.insert(key, text);
                    }
                    Attempted::Failed(error) => {
                        failed.insert(key, error);
                    }
                }
            }
            Ok(())
        })?;
    }

    let mut outcomes = Vec::with_capacity(requests.len());
    for key in &keys {
        if let Some(text) = answers.get(key) {
            let cached = !fresh.contains(key);
            if cached {
                cache_hits += 1;
            }
            outcomes.push(Outcome::Response {
                text: text.clone(),
                cached,
            });
        } else {
            outcomes.push(Outcome::Failed {
                error: failed.get(key).cloned().unwrap_or_default(),
            });
        }
    }
    Ok(Execution {
        outcomes,
        network_calls: calls.load(Ordering::SeqCst),
        cache_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Corpus;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportError>>>,
        fallback: String,
    }

    impl ChatTransport for Scripted {
        fn complete(&self, _: &str, _: &str, _: f64) -> Result<String, TransportError> {
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Ok(self.fallback.clone())
            } else {
                r.remove(0)
            }
        }
    }

    fn corpus(docs: usize, systems: usize) -> Corpus {
        let mut text = String::new();
        for d in 0..docs {
            for s in 0..systems {
                text.push_str(&format!(
                    "{{\"doc_id\":\"d{d}\",\"document\":\"doc {d}\",\"system_id\":\"{s}\",\"output\":\"out {d} {s}\"}}\n"
                ));
            }
        }
        Corpus::parse_jsonl(&text).unwrap()
    }

    fn quiet(judge: &str) -> JudgeConfig {
        let mut c = JudgeConfig::new(judge, "test-model");
        c.retry_backoff_ms = 0;
        c
    }

    #[test]
    fn request_counts() {
        let c = corpus(1, 2);
        let judge = quiet("j");
        assert_eq!(pairwise_requests(&c, &judge, &[Criterion::Coherence], 3).unwrap().len(), 3);
        assert_eq!(scoring_requests(&c, &judge, &[Criterion::Coherence]).unwrap().len(), 2);
        let big = corpus(30, 8);
        let n: usize = ["a", "b", "c", "d"]
            .iter()
            .map(|j| pairwise_requests(&big, &quiet(j), &Criterion::ALL, 3).unwrap().len())
            .sum();
        assert_eq!(n, 40_320);
    }

    #[test]
    fn lower_id_is_summary_a() {
        let mut text = String::new();
        for s in ["b", "a"] {
            text.push_str(&format!(
                "{{\"doc_id\":\"d\",\"document\":\"doc\",\"system_id\":\"{s}\",\"output\":\"out {s}\"}}\n"
            ));
        }
        let c = Corpus::parse_jsonl(&text).unwrap();
        let reqs = pairwise_requests(&c, &quiet("j"), &[Criterion::Fluency], 1).unwrap();
        assert!(matches!(&reqs[0].task, Task::Pairwise { system_a, .. } if system_a == "a"));
        assert!(reqs[0].prompt.contains("Summary A: out a"));
    }

    #[test]
    fn keys_depend_on_repetition_and_are_stable() {
        let c = corpus(1, 2);
        let reqs = pairwise_requests(&c, &quiet("j"), &[Criterion::Coherence], 3).unwrap();
        let again = pairwise_requests(&c, &quiet("j"), &[Criterion::Coherence], 3).unwrap();
        let keys: Vec<CacheKey> = reqs.iter().map(JudgeRequest::key).collect();
        assert_eq!(keys, again.iter().map(JudgeRequest::key).collect::<Vec<_>>());
        assert_ne!(keys[0], keys[1]);
        assert_ne!(keys[1], keys[2]);
    }

    #[test]
    fn live_then_replay() {
        let c = corpus(2, 3);
        let judge = quiet("j");
        let reqs = pairwise_requests(&c, &judge, &[Criterion::Coherence], 3).unwrap();
        let cache = ResponseCache::in_memory().unwrap();
        let t = Scripted {
            replies: Mutex::new(vec![]),
            fallback: "A".into(),
        };
        let accept = |s: &str| parse_pairwise_response(s).is_ok();
        let first = execute(&reqs, &judge, &cache, Mode::Live, Some(&t), &accept).unwrap();
        assert_eq!(first.network_calls, reqs.len());
        assert_eq!(first.cache_hits, 0);
        let second = execute(&reqs, &judge, &cache, Mode::Live, Some(&t), &accept).unwrap();
        assert_eq!(second.network_calls, 0);
        assert_eq!(second.cache_hits, reqs.len());
        let replay = execute(&reqs, &judge, &cache, Mode::Replay, None, &accept).unwrap();
        assert_eq!(replay.outcomes, second.outcomes);

        let victim = reqs[4].key();
        cache.remove(&victim).unwrap();
        match execute(&reqs, &judge, &cache, Mode::Replay, None, &accept) {
            Err(GatewayError::MissingCache { digests }) => assert_eq!(digests, vec![victim]),
            other => panic!("expected missing cache, got {other:?}"),
        }
    }

    #[test]
    fn retries_unparseable_and_transport_errors() {
        let c = corpus(1, 2);
        let mut judge = quiet("j");
        judge.parallelism_limit = 1;
        judge.max_retries = 2;
        let reqs = scoring_requests(&c, &judge, &[Criterion::Coherence]).unwrap();
        let cache = ResponseCache::in_memory().unwrap();
        let t = Scripted {
            replies: Mutex::new(vec![
                Err(TransportError::Http("boom".into())),
                Ok("no idea".into()),
                Ok("4".into()),
                Ok("zero".into()),
                Ok("nope".into()),
                Ok("still no".into()),
            ]),
            fallback: "3".into(),
        };
        let accept = |s: &str| parse_likert_response(s).is_ok();
        let ex = execute(&reqs, &judge, &cache, Mode::Live, Some(&t), &accept).unwrap();
        assert_eq!(ex.network_calls, 6);
        assert_eq!(
            ex.outcomes,
            vec![
                Outcome::Response { text: "4".into(), cached: false },
                Outcome::Response { text: "still no".into(), cached: false },
            ]
        );
        // the unparseable final reply is cached so replay reproduces it
        assert_eq!(cache.len().unwrap(), 2);
    }

    #[test]
    fn transport_failure_is_recorded_not_fatal() {
        let c = corpus(1, 2);
        let mut judge = quiet("j");
        judge.parallelism_limit = 1;
        judge.max_retries = 1;
        let reqs = scoring_requests(&c, &judge, &[Criterion::Coherence]).unwrap();
        let cache = ResponseCache::in_memory().unwrap();
        let t = Scripted {
            replies: Mutex::new(vec![
                Err(TransportError::Http("a".into())),
                Err(TransportError::Http("b".into())),
            ]),
            fallback: "5".into(),
        };
        let accept = |s: &str| parse_likert_response(s).is_ok();
        let ex = execute(&reqs, &judge, &cache, Mode::Live, Some(&t), &accept).unwrap();
        assert_eq!(ex.failures(), 1);
        assert!(matches!(&ex.outcomes[0], Outcome::Failed { .. }));
        assert_eq!(cache.len().unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = JudgeConfig::new("j", "m");
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.parallelism_limit = 0;
        assert!(c.validate().is_err());
    }
}
