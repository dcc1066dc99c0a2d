//! The commands behind the CLI: ingest, judge runs, analyses and reports.
//!
//! Judge runs write JSONL stores under `<output_dir>/stores`; analyses read
//! only those stores and the corpus, so their files are a pure function of
//! the manifest and the stores. Every CSV row ends with the manifest digest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conformal::{
    inter_judge_width_agreement, per_document_widths, width_error_correlation, Alpha, InstanceWidths, SplitConfig,
    SplitEvaluation, WidthError, MIN_RECORDS,
};
use crate::dataset::{protocol_budget, subsample, Corpus, DatasetError, ProtocolBudget};
use crate::domain::{gold_label, Criterion, LikertRecord, PairwiseVerdict};
use crate::gateway::{
    execute, pairwise_requests, parse_likert_response, parse_pairwise_response, scoring_requests, CacheKey,
    ChatTransport, GatewayError, JudgeConfig, JudgeRequest, Mode, Outcome, ResponseCache, Task,
};
use crate::manifest::{Aggregation, Granularity, ManifestError, RunManifest, TOOLKIT_VERSION};
use crate::ranking::{
    gold_as_scalar, gold_ranking, pool_win_matrix, rank_average, rank_with, BradleyTerryConfig, Method, MfasConfig,
    RankingResult, WinMatrix,
};
use crate::tournament::{
    build_tournament, corpus_violation_stats, count_directed_3cycles, rate_to_f64, violation_rate, Tournament,
    RANDOM_BASELINE_RATE,
};
use crate::Rate;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Validation(String),
    #[error("{} request(s) missing from cache in replay mode:\n{}", .0.len(), .0.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("\n"))]
    MissingCache(Vec<CacheKey>),
    #[error("{count} transport failure(s) exceed the allowed {allowed}")]
    TransportFailures { count: usize, allowed: usize },
    #[error(transparent)]
    Gateway(GatewayError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Store {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::MissingCache { digests } => PipelineError::MissingCache(digests),
            GatewayError::InvalidConfig { .. } | GatewayError::EmptyInput(_) | GatewayError::MissingInstance { .. } => {
                PipelineError::Validation(e.to_string())
            }
            other => PipelineError::Gateway(other),
        }
    }
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Manifest(_) | PipelineError::Dataset(_) | PipelineError::Validation(_) => 2,
            PipelineError::MissingCache(_) => 3,
            PipelineError::TransportFailures { .. } => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A loaded manifest with its corpus and digest.
#[derive(Debug, Clone)]
pub struct Context {
    pub manifest: RunManifest,
    pub corpus: Corpus,
    pub corpus_sha256: String,
    pub digest: String,
}

impl Context {
    pub fn load(manifest: RunManifest) -> Result<Self, PipelineError> {
        manifest.validate()?;
        let path = manifest.corpus_path();
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let corpus_sha256 = hex::encode(Sha256::digest(&bytes));
        if let Some(expected) = &manifest.corpus_digest {
            if !expected.eq_ignore_ascii_case(&corpus_sha256) {
                return Err(PipelineError::Validation(format!(
                    "corpus digest mismatch: manifest says {expected}, file has {corpus_sha256}"
                )));
            }
        }
        let text = String::from_utf8(bytes)
            .map_err(|_| PipelineError::Validation(format!("{} is not UTF-8", path.display())))?;
        let full = Corpus::parse_jsonl(&text)?.with_doc_order(manifest.doc_order);
        let docs = manifest.docs.unwrap_or(full.doc_order.len());
        let systems = manifest.systems.clone().unwrap_or_else(|| full.system_order.clone());
        let corpus = subsample(&full, docs, &systems)?;
        if corpus.instances.is_empty() {
            return Err(PipelineError::Validation("the subsample selects no instances".into()));
        }
        let digest = manifest.digest(&corpus_sha256);
        Ok(Context {
            manifest,
            corpus,
            corpus_sha256,
            digest,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        Self::load(RunManifest::load(path)?)
    }

    pub fn layout(&self) -> Layout {
        Layout(self.manifest.output_path())
    }

    pub fn budget(&self) -> ProtocolBudget {
        protocol_budget(
            &self.corpus,
            self.manifest.criteria.len() as u64,
            self.manifest.judges.len() as u64,
            u64::from(self.manifest.k),
        )
    }

    fn doc_index(&self) -> HashMap<&str, usize> {
        self.corpus.doc_order.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect()
    }

    fn system_index(&self) -> HashMap<&str, usize> {
        self.corpus.system_order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout(pub PathBuf);

impl Layout {
    pub fn stores(&self) -> PathBuf {
        self.0.join("stores")
    }
    pub fn verdicts(&self) -> PathBuf {
        self.stores().join("verdicts.jsonl")
    }
    pub fn pairwise_failures(&self) -> PathBuf {
        self.stores().join("pairwise_failures.jsonl")
    }
    pub fn likert(&self) -> PathBuf {
        self.stores().join("likert.jsonl")
    }
    pub fn scoring_failures(&self) -> PathBuf {
        self.stores().join("scoring_failures.jsonl")
    }
    pub fn ingest(&self) -> PathBuf {
        self.0.join("ingest")
    }
    pub fn transitivity(&self) -> PathBuf {
        self.0.join("transitivity")
    }
    pub fn conformal(&self) -> PathBuf {
        self.0.join("conformal")
    }
    pub fn summary(&self) -> PathBuf {
        self.0.join("summary.json")
    }
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PipelineError::Store {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// CSV with a trailing `manifest_digest` column on every row.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path, digest: &str) -> Result<(), PipelineError> {
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.header.clone();
        header.push("manifest_digest");
        w.write_record(&header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(String::as_str).chain([digest]))?;
        }
        w.flush().map_err(io_err(path))
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn rate_text(r: &Rate) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub manifest_digest: String,
    pub corpus_sha256: String,
    pub docs: usize,
    pub systems: Vec<String>,
    pub instances: usize,
    pub criteria: Vec<Criterion>,
    pub judges: Vec<String>,
    pub budget: ProtocolBudget,
}

/// Validate the corpus and write the selected subsample with its protocol
/// budget.
pub fn ingest(ctx: &Context) -> Result<IngestSummary, PipelineError> {
    let dir = ctx.layout().ingest();
    create_dir(&dir)?;
    let corpus_out = dir.join("corpus.jsonl");
    fs::write(&corpus_out, ctx.corpus.to_jsonl()).map_err(io_err(&corpus_out))?;
    let summary = IngestSummary {
        manifest_digest: ctx.digest.clone(),
        corpus_sha256: ctx.corpus_sha256.clone(),
        docs: ctx.corpus.doc_count(),
        systems: ctx.corpus.system_order.clone(),
        instances: ctx.corpus.instances.len(),
        criteria: ctx.manifest.criteria.clone(),
        judges: ctx.manifest.judges.iter().map(|j| j.judge_id.clone()).collect(),
        budget: ctx.budget(),
    };
    write_json(&dir.join("ingest.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- judge runs

/// Builds the transport for a judge in live mode.
pub type TransportFactory<'a> = &'a dyn Fn(&JudgeConfig) -> Result<Box<dyn ChatTransport + 'a>, PipelineError>;

/// A request that produced no usable answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub judge_id: String,
    pub digest: CacheKey,
    pub repetition_index: u32,
    pub task: Task,
    /// `transport` or `unparseable`.
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub requests: usize,
    pub network_calls: usize,
    pub cache_hits: usize,
    pub records: usize,
    pub unparseable: usize,
    pub transport_failures: usize,
}

fn open_cache(ctx: &Context) -> Result<ResponseCache, PipelineError> {
    let path = ctx.manifest.cache_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let cache = ResponseCache::open(&path)?;
    if let Some(import) = &ctx.manifest.cache_import {
        let import = ctx.manifest.resolve(import);
        let file = fs::File::open(&import).map_err(io_err(&import))?;
        let n = cache.import_jsonl(BufReader::new(file))?;
        info!("imported {n} cache record(s) from {}", import.display());
    }
    Ok(cache)
}

/// Execute every judge's requests and split the outcomes into parsed
/// records and failures.
fn run_protocol<T>(
    ctx: &Context,
    transports: Option<TransportFactory<'_>>,
    generate: &dyn Fn(&JudgeConfig) -> Result<Vec<JudgeRequest>, GatewayError>,
    accept: &(dyn Fn(&str) -> bool + Sync),
    convert: &dyn Fn(&JudgeRequest, &str) -> Result<T, String>,
) -> Result<(Vec<T>, Vec<FailureRecord>, RunSummary), PipelineError> {
    let cache = open_cache(ctx)?;
    let mode = ctx.manifest.mode;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut summary = RunSummary::default();
    let mut missing: Vec<CacheKey> = Vec::new();
    for judge in &ctx.manifest.judges {
        let requests = generate(judge)?;
        summary.requests += requests.len();
        let transport = match (mode, transports) {
            (Mode::Live, Some(factory)) => Some(factory(judge)?),
            (Mode::Live, None) => return Err(PipelineError::Gateway(GatewayError::NoTransport)),
            (Mode::Replay, _) => None,
        };
        let exec = match execute(&requests, judge, &cache, mode, transport.as_deref(), accept) {
            Ok(exec) => exec,
            Err(GatewayError::MissingCache { digests }) => {
                missing.extend(digests);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        summary.network_calls += exec.network_calls;
        summary.cache_hits += exec.cache_hits;
        for (request, outcome) in requests.iter().zip(exec.outcomes) {
            let failure = |kind: &str, detail: String| FailureRecord {
                judge_id: request.judge_id.clone(),
                digest: request.key(),
                repetition_index: request.repetition_index,
                task: request.task.clone(),
                kind: kind.to_string(),
                detail,
            };
            match outcome {
                Outcome::Response { text, .. } => match convert(request, &text) {
                    Ok(record) => records.push(record),
                    Err(why) => {
                        summary.unparseable += 1;
                        failures.push(failure("unparseable", why));
                    }
                },
                Outcome::Failed { error } => {
                    summary.transport_failures += 1;
                    failures.push(failure("transport", error));
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(PipelineError::MissingCache(missing));
    }
    summary.records = records.len();
    Ok((records, failures, summary))
}

fn finish_run(ctx: &Context, summary: RunSummary, name: &str) -> Result<RunSummary, PipelineError> {
    write_json(&ctx.layout().stores().join(name), &summary)?;
    if summary.unparseable > 0 {
        warn!("{} reply(ies) could not be parsed after retries", summary.unparseable);
    }
    if summary.transport_failures > ctx.manifest.max_transport_failures {
        return Err(PipelineError::TransportFailures {
            count: summary.transport_failures,
            allowed: ctx.manifest.max_transport_failures,
        });
    }
    Ok(summary)
}

/// Collect every pairwise verdict the manifest calls for.
pub fn run_pairwise(ctx: &Context, transports: Option<TransportFactory<'_>>) -> Result<RunSummary, PipelineError> {
    let generate = |judge: &JudgeConfig| pairwise_requests(&ctx.corpus, judge, &ctx.manifest.criteria, ctx.manifest.k);
    let accept = |text: &str| parse_pairwise_response(text).is_ok();
    let convert = |req: &JudgeRequest, text: &str| -> Result<PairwiseVerdict, String> {
        let winner = parse_pairwise_response(text).map_err(|e| e.to_string())?;
        match &req.task {
            Task::Pairwise {
                doc_id,
                criterion,
                system_a,
                system_b,
            } => Ok(PairwiseVerdict {
                doc_id: doc_id.clone(),
                criterion: *criterion,
                judge_id: req.judge_id.clone(),
                system_a: system_a.clone(),
                system_b: system_b.clone(),
                repetition_index: req.repetition_index,
                winner,
            }),
            Task::Scoring { .. } => unreachable!("pairwise generator emits pairwise tasks"),
        }
    };
    let (verdicts, failures, summary) = run_protocol(ctx, transports, &generate, &accept, &convert)?;
    let layout = ctx.layout();
    write_jsonl(&layout.verdicts(), &verdicts)?;
    write_jsonl(&layout.pairwise_failures(), &failures)?;
    finish_run(ctx, summary, "pairwise_run.json")
}

/// Collect every direct score and pair it with the rounded human score.
pub fn run_scoring(ctx: &Context, transports: Option<TransportFactory<'_>>) -> Result<RunSummary, PipelineError> {
    // gold labels are checked before any call is made
    let mut gold = HashMap::new();
    for inst in &ctx.corpus.instances {
        for &c in &ctx.manifest.criteria {
            let avg = inst.human(c).ok_or_else(|| {
                PipelineError::Validation(format!("{}/{} has no {c} annotation", inst.doc_id, inst.system_id))
            })?;
            let label = gold_label(avg).map_err(|e| PipelineError::Validation(e.to_string()))?;
            gold.insert((inst.doc_id.as_str(), inst.system_id.as_str(), c), label);
        }
    }
    let generate = |judge: &JudgeConfig| scoring_requests(&ctx.corpus, judge, &ctx.manifest.criteria);
    let accept = |text: &str| parse_likert_response(text).is_ok();
    let convert = |req: &JudgeRequest, text: &str| -> Result<LikertRecord, String> {
        let score = parse_likert_response(text).map_err(|e| e.to_string())?;
        match &req.task {
            Task::Scoring {
                doc_id,
                criterion,
                system_id,
            } => Ok(LikertRecord {
                doc_id: doc_id.clone(),
                system_id: system_id.clone(),
                criterion: *criterion,
                judge_id: req.judge_id.clone(),
                judge_score: score,
                gold: gold[&(doc_id.as_str(), system_id.as_str(), *criterion)],
            }),
            Task::Pairwise { .. } => unreachable!("scoring generator emits scoring tasks"),
        }
    };
    let (records, failures, summary) = run_protocol(ctx, transports, &generate, &accept, &convert)?;
    let layout = ctx.layout();
    write_jsonl(&layout.likert(), &records)?;
    write_jsonl(&layout.scoring_failures(), &failures)?;
    finish_run(ctx, summary, "scoring_run.json")
}

fn read_store<T: DeserializeOwned>(path: &Path, command: &str) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Validation(format!(
            "{} not found; run `{command}` first",
            path.display()
        )));
    }
    read_jsonl(path)
}

// ---------------------------------------------------------------- transitivity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedDoc {
    pub judge_id: String,
    pub criterion: Criterion,
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub judge_id: String,
    pub criterion: Criterion,
    pub docs: usize,
    pub mean: f64,
    pub pct_docs_with_violation: f64,
    pub max: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub judge_id: String,
    pub criterion: Criterion,
    pub method: Method,
    pub order: Vec<String>,
    pub tau_vs_gold: Option<f64>,
    pub feedback_cost: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitivityReport {
    pub manifest_digest: String,
    pub stats: Vec<ViolationRow>,
    pub rankings: Vec<RankingRow>,
    pub excluded: Vec<ExcludedDoc>,
    pub ties: usize,
}

fn group_verdicts(ctx: &Context, verdicts: Vec<PairwiseVerdict>) -> BTreeMap<(usize, Criterion), BTreeMap<usize, Vec<PairwiseVerdict>>> {
    let judges: HashMap<&str, usize> = ctx
        .manifest
        .judges
        .iter()
        .enumerate()
        .map(|(i, j)| (j.judge_id.as_str(), i))
        .collect();
    let docs = ctx.doc_index();
    let mut groups: BTreeMap<(usize, Criterion), BTreeMap<usize, Vec<PairwiseVerdict>>> = BTreeMap::new();
    for v in verdicts {
        let (Some(&j), Some(&d)) = (judges.get(v.judge_id.as_str()), docs.get(v.doc_id.as_str())) else {
            continue;
        };
        if !ctx.manifest.criteria.contains(&v.criterion) {
            continue;
        }
        groups.entry((j, v.criterion)).or_default().entry(d).or_default().push(v);
    }
    groups
}

fn tournament_matrix(t: &Tournament) -> WinMatrix {
    WinMatrix::new(
        t.systems.clone(),
        t.wins.iter().map(|r| r.iter().map(|&w| u64::from(w)).collect()).collect(),
    )
}

fn rank_cell(
    ctx: &Context,
    tournaments: &[Tournament],
    gold: Option<&[(String, f64)]>,
) -> Vec<(Method, Result<RankingResult<f64>, String>)> {
    let opts = &ctx.manifest.ranking;
    let bt = BradleyTerryConfig {
        smoothing: opts.bt_smoothing,
        ..Default::default()
    };
    let mfas = MfasConfig {
        weights: opts.mfas_weights,
        exact_bound: opts.exact_bound,
    };
    Method::ALL
        .into_iter()
        .map(|method| {
            let result = match opts.aggregation {
                Aggregation::Pooled => pool_win_matrix(tournaments).and_then(|m| rank_with(method, &m, &bt, &mfas)),
                Aggregation::PerDocument => tournaments
                    .iter()
                    .map(|t| rank_with(method, &tournament_matrix(t), &bt, &mfas))
                    .collect::<Result<Vec<_>, _>>()
                    .and_then(|per_doc| rank_average(method, &per_doc)),
            };
            let result = result.and_then(|r| match gold {
                Some(g) => r.with_tau(g),
                None => Ok(r),
            });
            (method, result.map_err(|e| e.to_string()))
        })
        .collect()
}

/// Per-document violation rates, corpus statistics and rankings for every
/// (judge, criterion).
pub fn analyze_transitivity(ctx: &Context) -> Result<TransitivityReport, PipelineError> {
    let layout = ctx.layout();
    let verdicts: Vec<PairwiseVerdict> = read_store(&layout.verdicts(), "run-pairwise")?;
    let groups = group_verdicts(ctx, verdicts);

    let mut per_doc = Table::new(&["judge_id", "criterion", "doc_id", "n", "cycles", "rho", "rho_exact"]);
    let mut stats_table = Table::new(&[
        "judge_id",
        "criterion",
        "docs",
        "excluded_docs",
        "mean",
        "pct_docs_with_violation",
        "max",
        "median",
        "mean_exact",
        "max_exact",
        "median_exact",
        "random_baseline",
    ]);
    let mut ranking_table = Table::new(&[
        "judge_id",
        "criterion",
        "method",
        "aggregation",
        "order",
        "scores",
        "tau_vs_gold",
        "feedback_cost",
        "status",
    ]);
    let mut ties_table = Table::new(&["judge_id", "criterion", "doc_id", "system_a", "system_b", "wins_each", "preferred"]);
    let mut report = TransitivityReport {
        manifest_digest: ctx.digest.clone(),
        stats: Vec::new(),
        rankings: Vec::new(),
        excluded: Vec::new(),
        ties: 0,
    };

    let mut golds: HashMap<Criterion, Option<Vec<(String, f64)>>> = HashMap::new();
    for (j, judge) in ctx.manifest.judges.iter().enumerate() {
        for &criterion in &ctx.manifest.criteria {
            let empty = BTreeMap::new();
            let docs = groups.get(&(j, criterion)).unwrap_or(&empty);
            let mut rates = BTreeMap::new();
            let mut tournaments = Vec::new();
            let mut excluded = 0;
            for (d, doc_id) in ctx.corpus.doc_order.iter().enumerate() {
                let systems: Vec<String> = ctx.corpus.doc_instances(doc_id).map(|i| i.system_id.clone()).collect();
                let built = docs
                    .get(&d)
                    .ok_or_else(|| "no verdicts".to_string())
                    .and_then(|v| build_tournament(v, &systems, ctx.manifest.k).map_err(|e| e.to_string()))
                    .and_then(|b| b.tournament.check_complete().map(|_| b).map_err(|e| e.to_string()))
                    .and_then(|b| {
                        let cycles = count_directed_3cycles(&b.tournament).map_err(|e| e.to_string())?;
                        let rho = violation_rate(&b.tournament).map_err(|e| e.to_string())?;
                        Ok((b, cycles, rho))
                    });
                match built {
                    Ok((b, cycles, rho)) => {
                        for t in &b.ties {
                            ties_table.push(vec![
                                t.judge_id.clone(),
                                criterion.to_string(),
                                t.doc_id.clone(),
                                t.system_a.clone(),
                                t.system_b.clone(),
                                t.wins_each.to_string(),
                                t.preferred.clone(),
                            ]);
                        }
                        report.ties += b.ties.len();
                        per_doc.push(vec![
                            judge.judge_id.clone(),
                            criterion.to_string(),
                            doc_id.clone(),
                            systems.len().to_string(),
                            cycles.to_string(),
                            fixed(rate_to_f64(&rho)),
                            rate_text(&rho),
                        ]);
                        rates.insert(doc_id.clone(), rho);
                        tournaments.push(b.tournament);
                    }
                    Err(reason) => {
                        warn!("{} {criterion} {doc_id}: excluded ({reason})", judge.judge_id);
                        excluded += 1;
                        report.excluded.push(ExcludedDoc {
                            judge_id: judge.judge_id.clone(),
                            criterion,
                            doc_id: doc_id.clone(),
                            reason,
                        });
                    }
                }
            }
            let Ok(stats) = corpus_violation_stats(&rates) else {
                continue;
            };
            let row = ViolationRow {
                judge_id: judge.judge_id.clone(),
                criterion,
                docs: rates.len(),
                mean: rate_to_f64(&stats.mean),
                pct_docs_with_violation: 100.0 * rate_to_f64(&stats.frac_docs_with_violation),
                max: rate_to_f64(&stats.max),
                median: rate_to_f64(&stats.median),
            };
            stats_table.push(vec![
                row.judge_id.clone(),
                criterion.to_string(),
                row.docs.to_string(),
                excluded.to_string(),
                fixed(row.mean),
                fixed(row.pct_docs_with_violation),
                fixed(row.max),
                fixed(row.median),
                rate_text(&stats.mean),
                rate_text(&stats.max),
                rate_text(&stats.median),
                fixed(RANDOM_BASELINE_RATE),
            ]);
            report.stats.push(row);

            let gold = golds.entry(criterion).or_insert_with(|| match gold_ranking(&ctx.corpus, criterion) {
                Ok(g) => Some(gold_as_scalar(&g)),
                Err(e) => {
                    warn!("no gold ranking for {criterion}: {e}");
                    None
                }
            });
            for (method, result) in rank_cell(ctx, &tournaments, gold.as_deref()) {
                let aggregation = match ctx.manifest.ranking.aggregation {
                    Aggregation::Pooled => "pooled",
                    Aggregation::PerDocument => "per-document",
                };
                let row = match &result {
                    Ok(r) => {
                        ranking_table.push(vec![
                            judge.judge_id.clone(),
                            criterion.to_string(),
                            method.to_string(),
                            aggregation.to_string(),
                            r.order.join("|"),
                            r.scores.iter().map(|(s, v)| format!("{s}:{}", fixed(*v))).collect::<Vec<_>>().join("|"),
                            r.tau_vs_gold.map(fixed).unwrap_or_default(),
                            r.feedback_cost.map(|c| c.to_string()).unwrap_or_default(),
                            "ok".to_string(),
                        ]);
                        RankingRow {
                            judge_id: judge.judge_id.clone(),
                            criterion,
                            method,
                            order: r.order.clone(),
                            tau_vs_gold: r.tau_vs_gold,
                            feedback_cost: r.feedback_cost,
                            error: None,
                        }
                    }
                    Err(e) => {
                        warn!("{} {criterion} {method}: {e}", judge.judge_id);
                        ranking_table.push(vec![
                            judge.judge_id.clone(),
                            criterion.to_string(),
                            method.to_string(),
                            aggregation.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            e.clone(),
                        ]);
                        RankingRow {
                            judge_id: judge.judge_id.clone(),
                            criterion,
                            method,
                            order: Vec::new(),
                            tau_vs_gold: None,
                            feedback_cost: None,
                            error: Some(e.clone()),
                        }
                    }
                };
                report.rankings.push(row);
            }
        }
    }

    let dir = layout.transitivity();
    per_doc.write(&dir.join("violations_per_doc.csv"), &ctx.digest)?;
    stats_table.write(&dir.join("violation_stats.csv"), &ctx.digest)?;
    ranking_table.write(&dir.join("rankings.csv"), &ctx.digest)?;
    ties_table.write(&dir.join("ties.csv"), &ctx.digest)?;
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- conformal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCell {
    pub judge_id: String,
    pub criterion: Criterion,
    pub alpha: Alpha,
    pub coverage: f64,
    pub avg_size: f64,
    pub r_s: Option<f64>,
    pub p: Option<f64>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub judge_id: String,
    pub criterion: Criterion,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalReport {
    pub manifest_digest: String,
    pub cells: Vec<ConformalCell>,
    pub skipped: Vec<SkippedCell>,
}

fn optional(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_else(|| "NA".to_string())
}

/// Split conformal evaluation for every (judge, criterion, alpha), plus
/// width agreement between judges and reliability curves.
pub fn analyze_conformal(ctx: &Context) -> Result<ConformalReport, PipelineError> {
    let layout = ctx.layout();
    let records: Vec<LikertRecord> = read_store(&layout.likert(), "run-scoring")?;
    let docs = ctx.doc_index();
    let systems = ctx.system_index();
    let mut groups: BTreeMap<(String, Criterion), Vec<LikertRecord>> = BTreeMap::new();
    for r in records {
        if docs.contains_key(r.doc_id.as_str()) && systems.contains_key(r.system_id.as_str()) {
            groups.entry((r.judge_id.clone(), r.criterion)).or_default().push(r);
        }
    }
    for v in groups.values_mut() {
        v.sort_by_key(|r| (docs[r.doc_id.as_str()], systems[r.system_id.as_str()]));
    }

    let split = SplitConfig {
        split_count: ctx.manifest.split_count,
        split_fraction: ctx.manifest.split_fraction,
        seed: ctx.manifest.seed,
    };
    let mut cells_table = Table::new(&["judge_id", "criterion", "alpha", "coverage", "avg_size", "r_s", "p", "n_pooled", "records"]);
    let mut coverage_table = Table::new(&["judge_id", "criterion", "alpha", "target", "coverage", "avg_size", "meets_target"]);
    let mut curve_table = Table::new(&["judge_id", "criterion", "alpha", "width", "mae", "ci_low", "ci_high", "count"]);
    let mut pooled_table = Table::new(&["criterion", "alpha", "r_s", "p", "n"]);
    let mut agreement_table = Table::new(&["criterion", "alpha", "granularity", "judge_a", "judge_b", "r", "p", "n"]);
    let mut report = ConformalReport {
        manifest_digest: ctx.digest.clone(),
        cells: Vec::new(),
        skipped: Vec::new(),
    };

    // (criterion, alpha) -> judge -> (records, evaluation)
    type Evaluated<'a> = BTreeMap<String, (&'a [LikertRecord], SplitEvaluation<f64>)>;
    let mut by_cell: BTreeMap<(Criterion, Alpha), Evaluated<'_>> = BTreeMap::new();
    for judge in &ctx.manifest.judges {
        for &criterion in &ctx.manifest.criteria {
            let recs = groups
                .get(&(judge.judge_id.clone(), criterion))
                .map(Vec::as_slice)
                .unwrap_or_default();
            if recs.len() < MIN_RECORDS {
                warn!("{} {criterion}: {} record(s), cell skipped", judge.judge_id, recs.len());
                report.skipped.push(SkippedCell {
                    judge_id: judge.judge_id.clone(),
                    criterion,
                    records: recs.len(),
                });
                continue;
            }
            for &alpha in &ctx.manifest.alphas {
                let eval = crate::conformal::run_split_evaluation::<f64>(recs, alpha, &split)
                    .map_err(|e| PipelineError::Validation(e.to_string()))?;
                let (r_s, p) = match eval.width_error {
                    Some(c) => (Some(c.r), Some(c.p)),
                    None => (None, None),
                };
                cells_table.push(vec![
                    judge.judge_id.clone(),
                    criterion.to_string(),
                    alpha.to_string(),
                    fixed(eval.coverage),
                    fixed(eval.avg_set_size),
                    optional(r_s),
                    p.map(|p| format!("{p:.6e}")).unwrap_or_else(|| "NA".into()),
                    eval.pooled.len().to_string(),
                    recs.len().to_string(),
                ]);
                let target = 1.0 - alpha.to_f64();
                coverage_table.push(vec![
                    judge.judge_id.clone(),
                    criterion.to_string(),
                    alpha.to_string(),
                    fixed(target),
                    fixed(eval.coverage),
                    fixed(eval.avg_set_size),
                    (eval.coverage >= target).to_string(),
                ]);
                for bin in &eval.reliability {
                    curve_table.push(vec![
                        judge.judge_id.clone(),
                        criterion.to_string(),
                        alpha.to_string(),
                        bin.width.to_string(),
                        fixed(bin.mae.mean),
                        fixed(bin.mae.mean - bin.mae.half_width),
                        fixed(bin.mae.mean + bin.mae.half_width),
                        bin.mae.count.to_string(),
                    ]);
                }
                report.cells.push(ConformalCell {
                    judge_id: judge.judge_id.clone(),
                    criterion,
                    alpha,
                    coverage: eval.coverage,
                    avg_size: eval.avg_set_size,
                    r_s,
                    p,
                    records: recs.len(),
                });
                by_cell
                    .entry((criterion, alpha))
                    .or_default()
                    .insert(judge.judge_id.clone(), (recs, eval));
            }
        }
    }

    for ((criterion, alpha), judges) in &by_cell {
        let pooled: Vec<WidthError> = judges.values().flat_map(|(_, e)| e.pooled.iter().copied()).collect();
        if let Ok(c) = width_error_correlation::<f64>(&pooled) {
            pooled_table.push(vec![
                criterion.to_string(),
                alpha.to_string(),
                fixed(c.r),
                format!("{:.6e}", c.p),
                c.n.to_string(),
            ]);
        }
        if judges.len() < 2 {
            continue;
        }
        // compare judges on the instances all of them scored
        let widths: BTreeMap<String, InstanceWidths<f64>> = judges
            .iter()
            .map(|(j, (recs, eval))| (j.clone(), crate::conformal::instance_widths(recs, eval)))
            .collect();
        let mut shared: Option<HashSet<(String, String)>> = None;
        for w in widths.values() {
            let keys: HashSet<(String, String)> = w.iter().map(|(d, s, _)| (d.clone(), s.clone())).collect();
            shared = Some(match shared {
                None => keys,
                Some(prev) => prev.intersection(&keys).cloned().collect(),
            });
        }
        let shared = shared.unwrap_or_default();
        let widths: BTreeMap<String, InstanceWidths<f64>> = widths
            .into_iter()
            .map(|(j, w)| {
                let kept: InstanceWidths<f64> =
                    w.into_iter().filter(|(d, s, _)| shared.contains(&(d.clone(), s.clone()))).collect();
                let kept = match ctx.manifest.agreement_granularity {
                    Granularity::Instance => kept,
                    Granularity::Document => per_document_widths(&kept),
                };
                (j, kept)
            })
            .collect();
        let granularity = match ctx.manifest.agreement_granularity {
            Granularity::Instance => "instance",
            Granularity::Document => "document",
        };
        let matrix = inter_judge_width_agreement(&widths).map_err(|e| PipelineError::Validation(e.to_string()))?;
        for a in 0..matrix.judges.len() {
            for b in 0..matrix.judges.len() {
                let cell = matrix.cells[a][b];
                agreement_table.push(vec![
                    criterion.to_string(),
                    alpha.to_string(),
                    granularity.to_string(),
                    matrix.judges[a].clone(),
                    matrix.judges[b].clone(),
                    optional(cell.map(|c| c.r)),
                    cell.map(|c| format!("{:.6e}", c.p)).unwrap_or_else(|| "NA".into()),
                    widths.values().next().map(Vec::len).unwrap_or(0).to_string(),
                ]);
            }
        }
    }
    for alpha in &ctx.manifest.alphas {
        let pooled: Vec<WidthError> = by_cell
            .iter()
            .filter(|((_, a), _)| a == alpha)
            .flat_map(|(_, judges)| judges.values().flat_map(|(_, e)| e.pooled.iter().copied()))
            .collect();
        if let Ok(c) = width_error_correlation::<f64>(&pooled) {
            pooled_table.push(vec![
                "all".to_string(),
                alpha.to_string(),
                fixed(c.r),
                format!("{:.6e}", c.p),
                c.n.to_string(),
            ]);
        }
    }

    let dir = layout.conformal();
    cells_table.write(&dir.join("conformal_cells.csv"), &ctx.digest)?;
    coverage_table.write(&dir.join("coverage_vs_alpha.csv"), &ctx.digest)?;
    curve_table.write(&dir.join("reliability_curve.csv"), &ctx.digest)?;
    pooled_table.write(&dir.join("width_error_pooled.csv"), &ctx.digest)?;
    agreement_table.write(&dir.join("width_agreement.csv"), &ctx.digest)?;
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestAccounting {
    pub budget: ProtocolBudget,
    pub pairwise_generated: u64,
    pub scoring_generated: u64,
    pub verdicts: Option<usize>,
    pub pairwise_failures: Option<usize>,
    pub likert_records: Option<usize>,
    pub scoring_failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manifest_digest: String,
    pub toolkit_version: String,
    pub corpus_sha256: String,
    pub docs: usize,
    pub systems: Vec<String>,
    pub requests: RequestAccounting,
    pub transitivity: Option<TransitivityReport>,
    pub conformal: Option<ConformalReport>,
}

fn count_lines(path: &Path) -> Result<Option<usize>, PipelineError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Some(text.lines().filter(|l| !l.trim().is_empty()).count()))
}

/// Run every analysis whose store exists and write the top-level summary.
pub fn report(ctx: &Context) -> Result<Summary, PipelineError> {
    let layout = ctx.layout();
    let mut pairwise_generated = 0;
    let mut scoring_generated = 0;
    for judge in &ctx.manifest.judges {
        pairwise_generated += pairwise_requests(&ctx.corpus, judge, &ctx.manifest.criteria, ctx.manifest.k)?.len() as u64;
        scoring_generated += scoring_requests(&ctx.corpus, judge, &ctx.manifest.criteria)?.len() as u64;
    }
    let transitivity = if layout.verdicts().exists() {
        Some(analyze_transitivity(ctx)?)
    } else {
        None
    };
    let conformal = if layout.likert().exists() {
        Some(analyze_conformal(ctx)?)
    } else {
        None
    };
    if transitivity.is_none() && conformal.is_none() {
        return Err(PipelineError::Validation(
            "no stores found; run `run-pairwise` or `run-scoring` first".into(),
        ));
    }
    let summary = Summary {
        manifest_digest: ctx.digest.clone(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        corpus_sha256: ctx.corpus_sha256.clone(),
        docs: ctx.corpus.doc_count(),
        systems: ctx.corpus.system_order.clone(),
        requests: RequestAccounting {
            budget: ctx.budget(),
            pairwise_generated,
            scoring_generated,
            verdicts: count_lines(&layout.verdicts())?,
            pairwise_failures: count_lines(&layout.pairwise_failures())?,
            likert_records: count_lines(&layout.likert())?,
            scoring_failures: count_lines(&layout.scoring_failures())?,
        },
        transitivity,
        conformal,
    };
    write_json(&layout.summary(), &summary)?;
    Ok(summary)
}
