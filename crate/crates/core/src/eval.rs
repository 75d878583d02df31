//! Training-set construction, lexical/structural baselines and the ranking
//! evaluation protocol (Recall@K and MRR per candidate window).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::ForestModel;
use crate::embedding::{tokenize, EmbeddingCache, EmbeddingProvider};
use crate::features::{featurize_pair, jaccard_files, lcp_max, lcs_max, time_diff_hours, FeatureVector};
use crate::model::{ChangeRecord, LinkLabel, WindowConfig, WindowMode};
use crate::pipeline::{candidate_refs, ranking_order, score_candidates, PipelineError, ProjectScope};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("link references unknown change {0:?}")]
    MissingChange(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("the learned method needs a model")]
    MissingModel,
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Learned,
    Combined,
    TextOnly,
    FileOnly,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Learned, Method::Combined, Method::TextOnly, Method::FileOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Learned => "learned",
            Method::Combined => "combined",
            Method::TextOnly => "text_only",
            Method::FileOnly => "file_only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_owned()))
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub windows: Vec<u32>,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub mode: WindowMode,
    pub scope: ProjectScope,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            windows: vec![2, 7, 14, 30],
            ks: vec![1, 2, 4, 6, 8, 10],
            methods: Method::ALL.to_vec(),
            negatives_per_positive: 5,
            seed: 42,
            mode: WindowMode::Symmetric,
            scope: ProjectScope::SameProject,
        }
    }
}

fn index_changes(changes: &[ChangeRecord]) -> HashMap<&str, &ChangeRecord> {
    changes.iter().map(|c| (c.change_key.as_str(), c)).collect()
}

fn linked_sets<'a>(
    links: &'a [LinkLabel],
    by_key: &HashMap<&str, &ChangeRecord>,
) -> Result<BTreeMap<&'a str, HashSet<String>>, EvalError> {
    let mut out: BTreeMap<&str, HashSet<String>> = BTreeMap::new();
    for l in links {
        for k in [&l.a, &l.b] {
            if !by_key.contains_key(k.as_str()) {
                return Err(EvalError::MissingChange(k.clone()));
            }
        }
        out.entry(&l.a).or_default().insert(l.b.clone());
        out.entry(&l.b).or_default().insert(l.a.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub samples: Vec<(FeatureVector, bool)>,
    pub positives: usize,
    pub negatives: usize,
    /// Linked pairs further apart than the window.
    pub skipped_out_of_window: usize,
    /// Anchors whose window held no unlinked candidate.
    pub anchors_without_negatives: Vec<String>,
}

/// Positives are in-window links; each is paired with up to
/// `negatives_per_positive` unlinked in-window candidates of its first
/// (lexicographically smaller) endpoint, drawn without replacement.
pub fn build_training_pairs(
    changes: &[ChangeRecord],
    links: &[LinkLabel],
    window_days: u32,
    negatives_per_positive: usize,
    seed: u64,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<TrainingSet, EvalError> {
    let window = WindowConfig::symmetric(window_days).map_err(|e| EvalError::BadWindow(e.to_string()))?;
    let by_key = index_changes(changes);
    let linked = linked_sets(links, &by_key)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(&ChangeRecord, &ChangeRecord, bool)> = Vec::new();
    let mut set = TrainingSet::default();

    for link in links {
        let anchor = by_key[link.a.as_str()];
        let other = by_key[link.b.as_str()];
        if !window.contains(anchor.timestamp(), other.timestamp()) {
            set.skipped_out_of_window += 1;
            continue;
        }
        pairs.push((anchor, other, true));
        set.positives += 1;

        let anchor_links = &linked[anchor.change_key.as_str()];
        let candidates: Vec<&ChangeRecord> = candidate_refs(anchor, changes, window, ProjectScope::SameProject)
            .into_iter()
            .filter(|c| !anchor_links.contains(&c.change_key))
            .collect();
        if candidates.is_empty() {
            tracing::warn!(anchor = %anchor.change_key, "no in-window negatives available");
            set.anchors_without_negatives.push(anchor.change_key.clone());
            continue;
        }
        let amount = negatives_per_positive.min(candidates.len());
        for i in index::sample(&mut rng, candidates.len(), amount) {
            pairs.push((anchor, candidates[i], false));
            set.negatives += 1;
        }
    }

    set.samples = pairs
        .par_iter()
        .map(|(a, b, y)| {
            featurize_pair(a, b, provider, cache)
                .map(|f| (f, *y))
                .map_err(|source| PipelineError::Embedding { key: b.change_key.clone(), source }.into())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(set)
}

/// Document frequencies over an evaluation corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_changes(changes: &[ChangeRecord]) -> Self {
        Self::from_texts(changes.iter().map(|c| c.text()))
    }

    pub fn from_texts<I: IntoIterator<Item = S>, S: AsRef<str>>(docs: I) -> Self {
        let mut stats = CorpusStats::default();
        for d in docs {
            stats.n_docs += 1;
            let uniq: HashSet<String> = tokenize(d.as_ref()).into_iter().collect();
            for t in uniq {
                *stats.df.entry(t).or_default() += 1;
            }
        }
        stats
    }

    /// Smoothed idf: `ln((N + 1) / (df + 1)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0) as f64;
        ((self.n_docs as f64 + 1.0) / (df + 1.0)).ln() + 1.0
    }

    fn weights(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_default() += 1.0;
        }
        for (t, w) in tf.iter_mut() {
            *w *= self.idf(t);
        }
        tf
    }
}

pub fn tfidf_text_cosine(a: &str, b: &str, stats: &CorpusStats) -> f64 {
    let (wa, wb) = (stats.weights(a), stats.weights(b));
    if wa.is_empty() || wb.is_empty() {
        return 0.0;
    }
    let dot: f64 = wa.iter().filter_map(|(t, x)| wb.get(t).map(|y| x * y)).sum();
    let na = wa.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = wb.values().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

pub fn tfidf_cosine(a: &ChangeRecord, b: &ChangeRecord, stats: &CorpusStats) -> f64 {
    tfidf_text_cosine(&a.text(), &b.text(), stats)
}

pub fn baseline_score(method: Method, a: &ChangeRecord, b: &ChangeRecord, stats: &CorpusStats) -> Result<f64, EvalError> {
    let text = || tfidf_cosine(a, b, stats);
    let file = || (lcp_max(&a.files, &b.files) + lcs_max(&a.files, &b.files) + jaccard_files(&a.files, &b.files)) / 3.0;
    match method {
        Method::TextOnly => Ok(text()),
        Method::FileOnly => Ok(file()),
        Method::Combined => Ok((text() + file()) / 2.0),
        Method::Learned => Err(EvalError::UnknownMethod("learned is not a baseline".into())),
    }
}

/// `1 / position` of the first relevant key, 0 when none is present.
pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> f64 {
    ranked
        .iter()
        .position(|k| relevant.contains(k.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn hit_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> bool {
    ranked.iter().take(k).any(|key| relevant.contains(key.as_ref()))
}

/// Mean of per-query hit indicators.
pub fn recall_at_k(queries: &[QueryRanking], k: usize) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let hits = queries.iter().filter(|q| hit_at_k(&q.ranked, &q.relevant, k)).count();
    hits as f64 / queries.len() as f64
}

pub fn mean_reciprocal_rank(queries: &[QueryRanking]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries.iter().map(|q| reciprocal_rank(&q.ranked, &q.relevant)).sum();
    total / queries.len() as f64
}

/// One query's full candidate ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query: String,
    pub ranked: Vec<String>,
    pub relevant: HashSet<String>,
}

/// Ranks every query's complete candidate list with one method.
#[allow(clippy::too_many_arguments)]
pub fn rank_queries(
    changes: &[ChangeRecord],
    links: &[LinkLabel],
    method: Method,
    window: WindowConfig,
    scope: ProjectScope,
    model: Option<&ForestModel>,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    stats: &CorpusStats,
) -> Result<Vec<QueryRanking>, EvalError> {
    let by_key = index_changes(changes);
    let linked = linked_sets(links, &by_key)?;
    if method == Method::Learned && model.is_none() {
        return Err(EvalError::MissingModel);
    }
    let queries: Vec<(&str, &HashSet<String>)> = linked.iter().map(|(k, v)| (*k, v)).collect();
    queries
        .par_iter()
        .map(|(key, relevant)| {
            let target = by_key[key];
            let candidates = candidate_refs(target, changes, window, scope);
            let ranked = match (method, model) {
                (Method::Learned, Some(m)) => score_candidates(target, &candidates, m, provider, cache)?
                    .into_iter()
                    .map(|p| p.change_key)
                    .collect(),
                _ => {
                    let mut scored = candidates
                        .iter()
                        .map(|c| Ok((baseline_score(method, target, c, stats)?, time_diff_hours(target, c), c)))
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    scored.sort_by(|a, b| ranking_order((a.0, a.1, &a.2.change_key), (b.0, b.1, &b.2.change_key)));
                    scored.into_iter().map(|(_, _, c)| c.change_key.clone()).collect()
                }
            };
            Ok(QueryRanking {
                query: key.to_string(),
                ranked,
                relevant: (*relevant).clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalCell {
    pub method: Method,
    pub window_days: u32,
    pub n_queries: usize,
    /// Queries whose candidate set was empty (scored as misses).
    pub n_empty: usize,
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, method: Method, window_days: u32) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.method == method && c.window_days == window_days)
    }

    /// One JSON object per (method, window).
    pub fn to_jsonl(&self) -> String {
        self.cells
            .iter()
            .map(|c| serde_json::to_string(c).expect("report cells serialize") + "\n")
            .collect()
    }

    /// Aligned text: an MRR table across windows, then Recall@K per window.
    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        let mut windows: Vec<u32> = self.cells.iter().map(|c| c.window_days).collect();
        windows.dedup();
        let mut methods: Vec<Method> = self.cells.iter().map(|c| c.method).collect();
        methods.sort();
        methods.dedup();

        let _ = write!(out, "{:<14}", "window (days)");
        for m in &methods {
            let _ = write!(out, "{:>12}", m.as_str());
        }
        out.push('\n');
        for w in &windows {
            let _ = write!(out, "{w:<14}");
            for m in &methods {
                match self.cell(*m, *w) {
                    Some(c) => {
                        let _ = write!(out, "{:>12.4}", c.mrr);
                    }
                    None => {
                        let _ = write!(out, "{:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }

        for w in &windows {
            let cells: Vec<&EvalCell> = self.cells.iter().filter(|c| c.window_days == *w).collect();
            let Some(first) = cells.first() else { continue };
            let _ = writeln!(out, "\nRecall@K, window {w} days ({} queries)", first.n_queries);
            let _ = write!(out, "{:<12}", "method");
            for k in first.recall_at.keys() {
                let _ = write!(out, "{:>8}", format!("R@{k}"));
            }
            out.push('\n');
            for c in cells {
                let _ = write!(out, "{:<12}", c.method.as_str());
                for v in c.recall_at.values() {
                    let _ = write!(out, "{v:>8.4}");
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn aggregate(method: Method, window_days: u32, queries: &[QueryRanking], ks: &[usize]) -> EvalCell {
    EvalCell {
        method,
        window_days,
        n_queries: queries.len(),
        n_empty: queries.iter().filter(|q| q.ranked.is_empty()).count(),
        mrr: mean_reciprocal_rank(queries),
        recall_at: ks.iter().map(|&k| (k, recall_at_k(queries, k))).collect(),
    }
}

pub fn run_evaluation(
    changes: &[ChangeRecord],
    links: &[LinkLabel],
    model: Option<&ForestModel>,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut ks = config.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.first() == Some(&0) {
        return Err(EvalError::BadWindow("K must be at least 1".into()));
    }
    let stats = CorpusStats::from_changes(changes);
    let mut cells = Vec::new();
    for &days in &config.windows {
        let window = WindowConfig::new(days, config.mode).map_err(|e| EvalError::BadWindow(e.to_string()))?;
        for &method in &config.methods {
            let queries = rank_queries(changes, links, method, window, config.scope, model, provider, cache, &stats)?;
            cells.push(aggregate(method, days, &queries, &ks));
        }
    }
    Ok(EvalReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FallbackEmbedder;
    use chrono::{TimeZone, Utc};

    const DAY: i64 = 86_400;

    fn rec(key: &str, secs: i64, subject: &str, desc: &str, files: &[&str]) -> ChangeRecord {
        ChangeRecord::new(key, "p", subject, desc, Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap(), files).unwrap()
    }

    fn set(keys: &[&str]) -> HashSet<String> {
        keys.iter().map(|s| s.to_string()).collect()
    }

    fn q(ranked: &[&str], relevant: &[&str]) -> QueryRanking {
        QueryRanking {
            query: "q".into(),
            ranked: ranked.iter().map(|s| s.to_string()).collect(),
            relevant: set(relevant),
        }
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_eq!(reciprocal_rank(&["a", "b"], &set(&["a"])), 1.0);
        assert_eq!(reciprocal_rank(&["x", "a", "b"], &set(&["a", "b"])), 0.5);
        assert_eq!(reciprocal_rank(&["x"], &set(&["a"])), 0.0);
    }

    #[test]
    fn recall_examples() {
        let third = q(&["x", "y", "a"], &["a"]);
        assert_eq!(recall_at_k(std::slice::from_ref(&third), 2), 0.0);
        assert_eq!(recall_at_k(std::slice::from_ref(&third), 4), 1.0);
        assert_eq!(recall_at_k(&[q(&[], &["a"])], 3), 0.0);
        let first = q(&["a"], &["a"]);
        for k in [1, 2, 4, 6, 8, 10] {
            assert_eq!(recall_at_k(std::slice::from_ref(&first), k), 1.0);
        }
        assert_eq!(recall_at_k(&[first, third], 1), 0.5);
    }

    #[test]
    fn tfidf_toy_corpus() {
        let stats = CorpusStats::from_texts(["a b", "a c", "d"]);
        // Python reference with idf = ln((N+1)/(df+1)) + 1
        let got = tfidf_text_cosine("a b", "a c", &stats);
        assert!((got - 0.366446816266513).abs() < 1e-12, "{got}");
        assert!((tfidf_text_cosine("a b", "a b", &stats) - 1.0).abs() < 1e-9);
        assert_eq!(tfidf_text_cosine("a b", "d", &stats), 0.0);
        assert_eq!(tfidf_text_cosine("", "d", &stats), 0.0);
    }

    #[test]
    fn baseline_examples() {
        let a = rec("a", 0, "alpha beta", "", &["src/x.py", "lib/y.py"]);
        let b = rec("b", 0, "gamma delta", "", &["src/x.py", "lib/y.py"]);
        let stats = CorpusStats::from_changes(&[a.clone(), b.clone()]);
        for m in [Method::TextOnly, Method::FileOnly, Method::Combined] {
            assert!((baseline_score(m, &a, &a, &stats).unwrap() - 1.0).abs() < 1e-9);
            assert_eq!(baseline_score(m, &a, &b, &stats).unwrap(), baseline_score(m, &b, &a, &stats).unwrap());
        }
        assert_eq!(baseline_score(Method::TextOnly, &a, &b, &stats).unwrap(), 0.0);
        assert_eq!(baseline_score(Method::FileOnly, &a, &b, &stats).unwrap(), 1.0);
        assert_eq!(baseline_score(Method::Combined, &a, &b, &stats).unwrap(), 0.5);
        assert!(baseline_score(Method::Learned, &a, &b, &stats).is_err());
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn training_pairs_exhaustive_case() {
        let changes = vec![
            rec("c1", 0, "fix a", "", &["a"]),
            rec("c2", DAY, "fix a", "", &["a"]),
            rec("c3", 2 * DAY, "other", "", &["b"]),
        ];
        let links = vec![LinkLabel::new("c1", "c2").unwrap()];
        let p = FallbackEmbedder::default();
        let got = build_training_pairs(&changes, &links, 14, 1, 42, &p, &EmbeddingCache::new()).unwrap();
        assert_eq!((got.positives, got.negatives), (1, 1));
        assert_eq!(got.samples.iter().filter(|s| s.1).count(), 1);
    }

    #[test]
    fn training_pairs_window_and_determinism() {
        let changes = vec![rec("c1", 0, "x", "", &[]), rec("c2", 20 * DAY, "x", "", &[])];
        let links = vec![LinkLabel::new("c1", "c2").unwrap()];
        let p = FallbackEmbedder::default();
        let got = build_training_pairs(&changes, &links, 14, 5, 1, &p, &EmbeddingCache::new()).unwrap();
        assert_eq!((got.positives, got.skipped_out_of_window), (0, 1));

        let mut changes: Vec<_> = (0..30).map(|i| rec(&format!("k{i:02}"), i * 3600, &format!("w{i}"), "", &["f"])).collect();
        changes.push(rec("z", 0, "w0", "", &["f"]));
        let links = vec![LinkLabel::new("k00", "z").unwrap(), LinkLabel::new("k05", "k06").unwrap()];
        let a = build_training_pairs(&changes, &links, 14, 5, 7, &p, &EmbeddingCache::new()).unwrap();
        let b = build_training_pairs(&changes, &links, 14, 5, 7, &p, &EmbeddingCache::new()).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!((a.positives, a.negatives), (2, 10));

        let missing = vec![LinkLabel::new("k00", "nope").unwrap()];
        assert_eq!(
            build_training_pairs(&changes, &missing, 14, 5, 7, &p, &EmbeddingCache::new()).unwrap_err(),
            EvalError::MissingChange("nope".into())
        );
    }

    #[test]
    fn anchors_without_negatives_are_reported() {
        let changes = vec![rec("c1", 0, "x", "", &[]), rec("c2", DAY, "x", "", &[])];
        let links = vec![LinkLabel::new("c1", "c2").unwrap()];
        let got = build_training_pairs(&changes, &links, 14, 5, 1, &FallbackEmbedder::default(), &EmbeddingCache::new()).unwrap();
        assert_eq!(got.anchors_without_negatives, vec!["c1".to_string()]);
        assert_eq!(got.samples.len(), 1);
    }

    #[test]
    fn links_outside_every_window_score_zero() {
        let mut changes = vec![rec("a", 0, "same text", "", &["x/y"]), rec("b", 60 * DAY, "same text", "", &["x/y"])];
        changes.push(rec("d", DAY, "noise", "", &["q"]));
        let links = vec![LinkLabel::new("a", "b").unwrap()];
        let cfg = EvalConfig {
            methods: vec![Method::Combined, Method::TextOnly, Method::FileOnly],
            ..EvalConfig::default()
        };
        let report =
            run_evaluation(&changes, &links, None, &FallbackEmbedder::default(), &EmbeddingCache::new(), &cfg).unwrap();
        assert_eq!(report.cells.len(), 12);
        for c in &report.cells {
            assert_eq!(c.mrr, 0.0);
            assert!(c.recall_at.values().all(|&v| v == 0.0));
        }
        let text = report.render_tables();
        assert!(text.contains("R@10"));
        assert_eq!(report.to_jsonl().lines().count(), 12);
    }

    #[test]
    fn learned_requires_model() {
        let changes = vec![rec("a", 0, "s", "", &[]), rec("b", 0, "s", "", &[])];
        let links = vec![LinkLabel::new("a", "b").unwrap()];
        let err = run_evaluation(&changes, &links, None, &FallbackEmbedder::default(), &EmbeddingCache::new(), &EvalConfig::default());
        assert_eq!(err.unwrap_err(), EvalError::MissingModel);
    }
}
