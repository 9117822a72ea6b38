//! Single-query retrieval evaluation: Euclidean ranking, mAP and CMC.
//!
//! Gallery entries that share both identity and camera with the query are
//! removed before scoring (junk filtering). No re-ranking is applied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub identity: i64,
    pub camera: u32,
}

impl From<&Sample> for SampleMeta {
    fn from(s: &Sample) -> Self {
        Self {
            identity: s.identity,
            camera: s.camera,
        }
    }
}

pub fn metadata(samples: &[Sample]) -> Vec<SampleMeta> {
    samples.iter().map(SampleMeta::from).collect()
}

/// Gallery indices sorted by ascending distance to each query, ties broken
/// by lower gallery index.
pub fn rank_gallery(query: &EmbeddingMatrix, gallery: &EmbeddingMatrix) -> Result<Vec<Vec<usize>>> {
    if gallery.rows() == 0 {
        return Err(Error::Parameter("gallery is empty".into()));
    }
    if query.dims() != gallery.dims() {
        return Err(Error::Parameter(format!(
            "query dimension {} differs from gallery dimension {}",
            query.dims(),
            gallery.dims()
        )));
    }
    let g = gallery.view();
    Ok((0..query.rows())
        .into_par_iter()
        .map(|qi| {
            let q = query.row(qi);
            let dist: Vec<f64> = g
                .outer_iter()
                .map(|row| row.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            order
        })
        .collect())
}

/// Relevance flags along one ranking with junk entries removed.
fn relevance(ranking: &[usize], query: SampleMeta, gallery: &[SampleMeta], junk_filter: bool) -> Vec<bool> {
    ranking
        .iter()
        .map(|&g| gallery[g])
        .filter(|m| !(junk_filter && m.identity == query.identity && m.camera == query.camera))
        .map(|m| m.identity == query.identity)
        .collect()
}

/// Mean of precision@r over the relevant positions `r`; `None` when
/// nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

fn check_meta(rankings: &[Vec<usize>], query: &[SampleMeta], gallery: &[SampleMeta]) -> Result<()> {
    if rankings.len() != query.len() {
        return Err(Error::Parameter(format!(
            "{} rankings for {} queries",
            rankings.len(),
            query.len()
        )));
    }
    if let Some(bad) = rankings.iter().flatten().find(|&&g| g >= gallery.len()) {
        return Err(Error::Parameter(format!("gallery index {bad} out of range")));
    }
    Ok(())
}

/// Per-query scoring outcome after junk filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    /// `None` when the query has no relevant gallery item.
    pub average_precision: Option<f64>,
    /// 1-based position of the first relevant item.
    pub first_match: Option<usize>,
}

pub fn score_queries(
    rankings: &[Vec<usize>],
    query: &[SampleMeta],
    gallery: &[SampleMeta],
    junk_filter: bool,
) -> Result<Vec<QueryScore>> {
    check_meta(rankings, query, gallery)?;
    Ok(rankings
        .iter()
        .zip(query)
        .map(|(ranking, &q)| {
            let rel = relevance(ranking, q, gallery, junk_filter);
            QueryScore {
                average_precision: average_precision(&rel),
                first_match: rel.iter().position(|&r| r).map(|p| p + 1),
            }
        })
        .collect())
}

/// Mean AP over queries that have at least one relevant gallery item.
pub fn mean_average_precision(
    rankings: &[Vec<usize>],
    query: &[SampleMeta],
    gallery: &[SampleMeta],
    junk_filter: bool,
) -> Result<f64> {
    let aps: Vec<f64> = score_queries(rankings, query, gallery, junk_filter)?
        .iter()
        .filter_map(|s| s.average_precision)
        .collect();
    if aps.is_empty() {
        return Err(Error::Evaluation("no query has a relevant gallery item".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Rank-k accuracy for each `k` in `ks`, over queries with a relevant item.
/// All zeros when no query qualifies.
pub fn cmc_curve(
    rankings: &[Vec<usize>],
    query: &[SampleMeta],
    gallery: &[SampleMeta],
    ks: &[usize],
    junk_filter: bool,
) -> Result<Vec<f64>> {
    let firsts: Vec<usize> = score_queries(rankings, query, gallery, junk_filter)?
        .iter()
        .filter_map(|s| s.first_match)
        .collect();
    if firsts.is_empty() {
        return Ok(vec![0.0; ks.len()]);
    }
    Ok(ks
        .iter()
        .map(|&k| firsts.iter().filter(|&&f| f <= k).count() as f64 / firsts.len() as f64)
        .collect())
}

/// The four headline numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub rankings: Vec<Vec<usize>>,
    pub scores: Vec<QueryScore>,
    /// `cmc[k - 1]` is the Rank-k accuracy, for k up to the gallery size.
    pub cmc: Vec<f64>,
    pub map: f64,
}

impl RetrievalResult {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            map: self.map,
            rank1: self.rank(1),
            rank5: self.rank(5),
            rank10: self.rank(10),
        }
    }
}

/// Ranks, scores and summarizes in one pass.
pub fn evaluate(
    query: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    query_meta: &[SampleMeta],
    gallery_meta: &[SampleMeta],
    junk_filter: bool,
) -> Result<RetrievalResult> {
    if query.rows() != query_meta.len() || gallery.rows() != gallery_meta.len() {
        return Err(Error::Parameter("metadata length does not match embeddings".into()));
    }
    let rankings = rank_gallery(query, gallery)?;
    let map = mean_average_precision(&rankings, query_meta, gallery_meta, junk_filter)?;
    let ks: Vec<usize> = (1..=gallery.rows()).collect();
    let cmc = cmc_curve(&rankings, query_meta, gallery_meta, &ks, junk_filter)?;
    let scores = score_queries(&rankings, query_meta, gallery_meta, junk_filter)?;
    Ok(RetrievalResult {
        rankings,
        scores,
        cmc,
        map,
    })
}
