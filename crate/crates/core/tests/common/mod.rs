//! Fixture builders shared by the integration tests. Everything is generated
//! into a temporary directory: a corpus JSONL, a cache export and a manifest.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use judge_audit::dataset::{Corpus, PAPER_SYSTEMS};
use judge_audit::domain::{Criterion, LikertRecord};
use judge_audit::gateway::{pairwise_requests, scoring_requests, CacheRecord, JudgeConfig, Task};
use judge_audit::Likert;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const DOCS: usize = 30;

pub fn systems() -> Vec<String> {
    PAPER_SYSTEMS.iter().map(|s| s.to_string()).collect()
}

pub fn doc_id(d: usize) -> String {
    format!("doc{d:02}")
}

/// Corpus JSONL with `human(doc, system_index, criterion)` giving each
/// human average as a decimal string.
pub fn corpus_jsonl(docs: usize, systems: &[String], human: &dyn Fn(usize, usize, Criterion) -> String) -> String {
    let mut out = String::new();
    for d in 0..docs {
        for (s, sys) in systems.iter().enumerate() {
            let scores: serde_json::Map<String, Value> = Criterion::ALL
                .iter()
                .map(|&c| (c.as_str().to_string(), Value::String(human(d, s, c))))
                .collect();
            let line = json!({
                "doc_id": doc_id(d),
                "document": format!("Source article number {d}. It reports several facts."),
                "system_id": sys,
                "output": format!("Summary by system {sys} of article {d}."),
                "human": scores,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

/// Edge matrix over `n` nodes with exactly `target` directed 3-cycles,
/// found by seeded local search from a transitive order.
pub fn tournament_with_cycles(n: usize, target: u64, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let count = |e: &Vec<Vec<bool>>| -> u64 {
        let total = (n * (n - 1) * (n - 2) / 6) as u64;
        let transitive: u64 = (0..n)
            .map(|i| {
                let d = e[i].iter().filter(|&&b| b).count() as u64;
                d * d.saturating_sub(1) / 2
            })
            .sum();
        total - transitive
    };
    let mut e: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i < j).collect()).collect();
    let mut current = count(&e);
    while current != target {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        e[i][j] = !e[i][j];
        e[j][i] = !e[j][i];
        let next = count(&e);
        if next.abs_diff(target) <= current.abs_diff(target) {
            current = next;
        } else {
            e[i][j] = !e[i][j];
            e[j][i] = !e[j][i];
        }
    }
    e
}

/// Per-document cycle counts of the Mistral coherence fixture: half the
/// documents transitive, 69 cycles over the rest.
pub const TABLE1_CYCLES: [u64; 30] = [
    17, 0, 8, 0, 6, 0, 5, 0, 4, 0, 4, 0, 3, 0, 3, 0, 3, 0, 3, 0, 3, 0, 2, 0, 2, 0, 2, 0, 4, 0,
];

/// `(judge score, gold, count)` for the GPT relevance scoring fixture,
/// 240 instances. Chosen by a one-off search so that seed [`FIXTURE_SEED`]
/// gives coverage 0.928 and mean set size 3.17 at alpha 0.10.
pub const TABLE3_COMPOSITION: [(u8, u8, usize); 9] = [
    (3, 3, 28),
    (4, 3, 33),
    (2, 3, 55),
    (5, 4, 19),
    (5, 3, 8),
    (3, 1, 10),
    (1, 4, 2),
    (4, 4, 47),
    (2, 2, 38),
];

pub fn cache_line(record: &CacheRecord) -> String {
    serde_json::to_string(record).unwrap()
}

fn record_for(req: &judge_audit::gateway::JudgeRequest, response: String) -> CacheRecord {
    CacheRecord {
        digest: req.key(),
        request: serde_json::from_str(&req.canonical()).unwrap(),
        response,
    }
}

/// Cache entries answering every pairwise request of `judge`; `edges`
/// gives the majority direction per (doc, criterion), `i -> j` by system
/// index. The majority side wins two of three repetitions, or all of them
/// on even repetitions when `k != 3`.
pub fn pairwise_cache(
    corpus: &Corpus,
    judge: &JudgeConfig,
    criteria: &[Criterion],
    k: u32,
    edges: &dyn Fn(&str, Criterion) -> Vec<Vec<bool>>,
) -> Vec<CacheRecord> {
    let sys = &corpus.system_order;
    let idx = |s: &str| sys.iter().position(|x| x == s).unwrap();
    let mut cached: std::collections::HashMap<(String, Criterion), Vec<Vec<bool>>> = Default::default();
    pairwise_requests(corpus, judge, criteria, k)
        .unwrap()
        .iter()
        .map(|req| {
            let Task::Pairwise {
                doc_id,
                criterion,
                system_a,
                system_b,
            } = &req.task
            else {
                unreachable!()
            };
            let e = cached
                .entry((doc_id.clone(), *criterion))
                .or_insert_with(|| edges(doc_id, *criterion));
            let a_wins = e[idx(system_a)][idx(system_b)];
            // the last repetition dissents
            let dissent = k > 1 && req.repetition_index == k - 1;
            let answer = if a_wins != dissent { "A" } else { "B" };
            record_for(req, answer.to_string())
        })
        .collect()
}

pub fn scoring_cache(
    corpus: &Corpus,
    judge: &JudgeConfig,
    criteria: &[Criterion],
    score: &dyn Fn(&str, &str, Criterion) -> u8,
) -> Vec<CacheRecord> {
    scoring_requests(corpus, judge, criteria)
        .unwrap()
        .iter()
        .map(|req| {
            let Task::Scoring {
                doc_id,
                criterion,
                system_id,
            } = &req.task
            else {
                unreachable!()
            };
            record_for(req, score(doc_id, system_id, *criterion).to_string())
        })
        .collect()
}

/// `(judge, gold)` per instance in corpus order (doc, then system), spread
/// by a fixed shuffle.
pub fn composition_pairs(composition: &[(u8, u8, usize)]) -> Vec<(u8, u8)> {
    let mut pairs: Vec<(u8, u8)> = composition
        .iter()
        .flat_map(|&(j, g, c)| std::iter::repeat_n((j, g), c))
        .collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(2024));
    pairs
}

pub fn composition_records(composition: &[(u8, u8, usize)]) -> Vec<LikertRecord> {
    let sys = systems();
    composition_pairs(composition)
        .into_iter()
        .enumerate()
        .map(|(i, (j, g))| LikertRecord {
            doc_id: doc_id(i / sys.len()),
            system_id: sys[i % sys.len()].clone(),
            criterion: Criterion::Relevance,
            judge_id: "gpt".into(),
            judge_score: Likert::new(j).unwrap(),
            gold: Likert::new(g).unwrap(),
        })
        .collect()
}

pub const FIXTURE_SEED: u64 = 17;

pub struct Written {
    pub manifest: PathBuf,
    pub corpus: Corpus,
}

/// Write corpus, cache export and manifest into `dir`.
pub fn write_fixture(dir: &Path, corpus_text: &str, records: &[CacheRecord], manifest: Value) -> Written {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("corpus.jsonl"), corpus_text).unwrap();
    let mut export = String::new();
    for r in records {
        export.push_str(&cache_line(r));
        export.push('\n');
    }
    std::fs::write(dir.join("cache_export.jsonl"), export).unwrap();
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    Written {
        manifest: path,
        corpus: Corpus::parse_jsonl(corpus_text).unwrap(),
    }
}

pub fn judges() -> Vec<JudgeConfig> {
    vec![JudgeConfig::new("gpt", "gpt-4o-mini"), JudgeConfig::new("mistral", "mistral-small")]
}

/// Two judges, coherence and relevance. Mistral coherence verdicts carry
/// [`TABLE1_CYCLES`]; GPT relevance scores carry [`TABLE3_COMPOSITION`].
/// Other cells are seeded noise around the human scores.
pub fn paper_fixture(dir: &Path) -> Written {
    let sys = systems();
    let pairs = composition_pairs(&TABLE3_COMPOSITION);
    let human = |d: usize, s: usize, c: Criterion| -> String {
        match c {
            Criterion::Relevance if !pairs.is_empty() => format!("{}.0", pairs[d * 8 + s].1),
            // systems later in the list read better, with per-doc jitter
            _ => {
                let v = 1.0 + (s as f64 * 0.5) + ((d * 7 + s * 3) % 5) as f64 * 0.1;
                format!("{:.1}", v.min(5.0))
            }
        }
    };
    let corpus_text = corpus_jsonl(DOCS, &sys, &human);
    let corpus = Corpus::parse_jsonl(&corpus_text).unwrap();
    let criteria = [Criterion::Coherence, Criterion::Relevance];
    let doc_num = |doc: &str| doc[3..].parse::<usize>().unwrap();

    let mut records = Vec::new();
    for judge in judges() {
        let jid = judge.judge_id.clone();
        let edges = |doc: &str, c: Criterion| -> Vec<Vec<bool>> {
            let d = doc_num(doc);
            let mut rng = ChaCha8Rng::seed_from_u64((d as u64) << 8 | c as u64 | if jid == "gpt" { 1 << 20 } else { 0 });
            let target = if jid == "mistral" && c == Criterion::Coherence {
                TABLE1_CYCLES[d]
            } else {
                rng.gen_range(0..4)
            };
            // rank by human score: the best system is the source of the transitive order
            let e = tournament_with_cycles(8, target, &mut rng);
            let mut order: Vec<usize> = (0..8).collect();
            order.sort_by_key(|&s| std::cmp::Reverse((human(d, s, c).parse::<f64>().unwrap() * 10.0) as i64));
            let mut out = vec![vec![false; 8]; 8];
            for i in 0..8 {
                for j in 0..8 {
                    out[order[i]][order[j]] = e[i][j];
                }
            }
            out
        };
        records.extend(pairwise_cache(&corpus, &judge, &criteria, 3, &edges));
        let score = |doc: &str, system: &str, c: Criterion| -> u8 {
            let d = doc_num(doc);
            let s = sys.iter().position(|x| x == system).unwrap();
            if jid == "gpt" && c == Criterion::Relevance && !pairs.is_empty() {
                return pairs[d * 8 + s].0;
            }
            let gold = judge_audit::domain::gold_label(&judge_audit::domain::parse_human_score(&human(d, s, c)).unwrap())
                .unwrap()
                .get() as i32;
            let mut rng = ChaCha8Rng::seed_from_u64((d * 8 + s) as u64 * 31 + c as u64 + jid.len() as u64 * 1000);
            (gold + rng.gen_range(-1..=1)).clamp(1, 5) as u8
        };
        records.extend(scoring_cache(&corpus, &judge, &criteria, &score));
    }
    let manifest = json!({
        "corpus": "corpus.jsonl",
        "judges": judges(),
        "criteria": ["coherence", "relevance"],
        "k": 3,
        "seed": FIXTURE_SEED,
        "mode": "replay",
        "cache": "cache.sqlite",
        "cache_import": "cache_export.jsonl",
        "output_dir": "out",
    });
    write_fixture(dir, &corpus_text, &records, manifest)
}
