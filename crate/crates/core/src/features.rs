//! Pairwise change features: semantic similarity, path overlap, and
//! temporal/size deltas.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingCache, EmbeddingError, EmbeddingProvider};
use crate::model::ChangeRecord;

pub const FEATURE_COUNT: usize = 6;

/// Canonical feature order. Model files must list exactly these names.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "semantic_sim",
    "lcp_max",
    "lcs_max",
    "jaccard",
    "time_diff_hours",
    "delta_files",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub semantic_sim: f64,
    pub lcp_max: f64,
    pub lcs_max: f64,
    pub jaccard: f64,
    pub time_diff_hours: f64,
    pub delta_files: u64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.semantic_sim,
            self.lcp_max,
            self.lcs_max,
            self.jaccard,
            self.time_diff_hours,
            self.delta_files as f64,
        ]
    }
}

pub fn path_segments(path: &str) -> Vec<&str> {
    path.split('/').filter(|s| !s.is_empty()).collect()
}

fn shared_len<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>) -> usize {
    a.zip(b).take_while(|(x, y)| x == y).count()
}

/// Shared leading segments over the longer segment count.
pub fn norm_lcp(p: &str, q: &str) -> f64 {
    let (a, b) = (path_segments(p), path_segments(q));
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    shared_len(a.iter().copied(), b.iter().copied()) as f64 / denom as f64
}

/// Shared trailing segments over the longer segment count.
pub fn norm_lcs_suffix(p: &str, q: &str) -> f64 {
    let (a, b) = (path_segments(p), path_segments(q));
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    shared_len(a.iter().rev().copied(), b.iter().rev().copied()) as f64 / denom as f64
}

pub fn jaccard_files<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let sb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

fn max_over_pairs<S: AsRef<str>>(a: &[S], b: &[S], metric: fn(&str, &str) -> f64) -> f64 {
    let mut best = 0.0f64;
    for f in a {
        for g in b {
            best = best.max(metric(f.as_ref(), g.as_ref()));
        }
    }
    best
}

pub fn lcp_max<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    max_over_pairs(a, b, norm_lcp)
}

pub fn lcs_max<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    max_over_pairs(a, b, norm_lcs_suffix)
}

pub fn time_diff_hours(a: &ChangeRecord, b: &ChangeRecord) -> f64 {
    (a.timestamp() - b.timestamp()).unsigned_abs() as f64 / 3600.0
}

/// The metadata-only part of a feature vector.
pub fn structural_features(a: &ChangeRecord, b: &ChangeRecord, semantic_sim: f64) -> FeatureVector {
    FeatureVector {
        semantic_sim,
        lcp_max: lcp_max(&a.files, &b.files),
        lcs_max: lcs_max(&a.files, &b.files),
        jaccard: jaccard_files(&a.files, &b.files),
        time_diff_hours: time_diff_hours(a, b),
        delta_files: a.files.len().abs_diff(b.files.len()) as u64,
    }
}

pub fn featurize_pair(
    a: &ChangeRecord,
    b: &ChangeRecord,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<FeatureVector, EmbeddingError> {
    let u = cache.get_or_embed(provider, a)?;
    let v = cache.get_or_embed(provider, b)?;
    let sim = cosine_similarity(&u, &v)?.max(0.0);
    Ok(structural_features(a, b, sim))
}
