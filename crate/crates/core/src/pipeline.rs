//! Candidate selection, scoring and top-K ranking.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::{ClassifierError, ForestModel};
use crate::embedding::{EmbeddingCache, EmbeddingError, EmbeddingProvider};
use crate::features::{featurize_pair, FeatureVector};
use crate::model::{CandidateSet, ChangeRecord, WindowConfig};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("embedding failed for change {key}: {source}")]
    Embedding { key: String, source: EmbeddingError },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("top_k must be at least 1")]
    InvalidTopK,
}

/// Which projects the candidate pool may come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectScope {
    #[default]
    SameProject,
    AnyProject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPrediction {
    pub change_key: String,
    pub subject: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub score: f64,
    pub rank: usize,
    pub features: FeatureVector,
}

#[derive(Debug, Clone)]
pub struct RankRequest {
    pub target: ChangeRecord,
    pub pool: Vec<ChangeRecord>,
    pub window: WindowConfig,
    pub top_k: usize,
    pub scope: ProjectScope,
}

impl RankRequest {
    pub fn new(target: ChangeRecord, pool: Vec<ChangeRecord>, window: WindowConfig) -> Self {
        Self {
            target,
            pool,
            window,
            top_k: DEFAULT_TOP_K,
            scope: ProjectScope::SameProject,
        }
    }
}

/// Borrowing form of [`select_candidates`].
pub fn candidate_refs<'a>(
    target: &ChangeRecord,
    pool: &'a [ChangeRecord],
    window: WindowConfig,
    scope: ProjectScope,
) -> Vec<&'a ChangeRecord> {
    let t = target.timestamp();
    let mut candidates: Vec<&ChangeRecord> = pool
        .iter()
        .filter(|c| c.change_key != target.change_key)
        .filter(|c| scope == ProjectScope::AnyProject || c.project == target.project)
        .filter(|c| window.contains(t, c.timestamp()))
        .collect();
    candidates.sort_by(|a, b| {
        (a.timestamp() - t)
            .unsigned_abs()
            .cmp(&(b.timestamp() - t).unsigned_abs())
            .then_with(|| a.change_key.cmp(&b.change_key))
    });
    candidates
}

/// Keeps pool members inside the window around `target`, never the target
/// itself, ordered by absolute time distance and then key.
pub fn select_candidates(
    target: &ChangeRecord,
    pool: &[ChangeRecord],
    window: WindowConfig,
    scope: ProjectScope,
) -> CandidateSet {
    CandidateSet {
        target: target.clone(),
        candidates: candidate_refs(target, pool, window, scope).into_iter().cloned().collect(),
        window,
    }
}

/// Total order used for every ranked list: score descending, then time
/// difference ascending, then key ascending.
pub fn ranking_order(
    a: (f64, f64, &str),
    b: (f64, f64, &str),
) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.total_cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

pub fn score_pair(
    a: &ChangeRecord,
    b: &ChangeRecord,
    model: &ForestModel,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<(f64, FeatureVector), PipelineError> {
    for c in [a, b] {
        cache
            .get_or_embed(provider, c)
            .map_err(|source| PipelineError::Embedding { key: c.change_key.clone(), source })?;
    }
    let features = featurize_pair(a, b, provider, cache)
        .map_err(|source| PipelineError::Embedding { key: b.change_key.clone(), source })?;
    Ok((model.predict_features(&features)?, features))
}

/// Scores every candidate and returns them fully ordered, without truncation.
pub fn score_candidates(
    target: &ChangeRecord,
    candidates: &[&ChangeRecord],
    model: &ForestModel,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<Vec<RankedPrediction>, PipelineError> {
    cache
        .get_or_embed(provider, target)
        .map_err(|source| PipelineError::Embedding { key: target.change_key.clone(), source })?;
    let mut scored = candidates
        .par_iter()
        .map(|c| {
            let features = featurize_pair(target, c, provider, cache)
                .map_err(|source| PipelineError::Embedding { key: c.change_key.clone(), source })?;
            let score = model.predict_features(&features)?;
            Ok(RankedPrediction {
                change_key: c.change_key.clone(),
                subject: c.subject.clone(),
                url: c.url.clone(),
                score,
                rank: 0,
                features,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    scored.sort_by(|a, b| {
        ranking_order(
            (a.score, a.features.time_diff_hours, &a.change_key),
            (b.score, b.features.time_diff_hours, &b.change_key),
        )
    });
    for (i, p) in scored.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    Ok(scored)
}

pub fn rank_candidates(
    request: &RankRequest,
    model: &ForestModel,
    provider: &dyn EmbeddingProvider,
    cache: &EmbeddingCache,
) -> Result<Vec<RankedPrediction>, PipelineError> {
    if request.top_k == 0 {
        return Err(PipelineError::InvalidTopK);
    }
    let candidates = candidate_refs(&request.target, &request.pool, request.window, request.scope);
    let mut ranked = score_candidates(&request.target, &candidates, model, provider, cache)?;
    ranked.truncate(request.top_k);
    Ok(ranked)
}
