//! Query-by-example relevance: segment-level subsequence matching over
//! embedding sequences, and a frame-level subsequence DTW baseline.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{dot, norm};
use crate::ssae::EmbeddingSequence;

/// Cosine similarity; a zero vector is similar to nothing.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub score: f64,
    /// 1-based document segment where the best window starts; 0 when the
    /// query is longer than the document.
    pub best_offset: usize,
    /// Window scores for offsets `1..=N_d − N_q + 1`.
    pub offset_scores: Vec<f64>,
}

/// Slides the query over the document one segment at a time. Each window
/// scores the product of its clamped segment similarities; the document
/// scores the best window.
pub fn subsequence_score(q: &EmbeddingSequence, d: &EmbeddingSequence) -> Result<MatchResult> {
    if q.is_empty() {
        return Err(Error::Input("query has no segments".into()));
    }
    if !d.is_empty() && q.dim() != d.dim() {
        return Err(Error::shape("subsequence_score embedding dim", q.dim(), d.dim()));
    }
    let (nq, nd) = (q.len(), d.len());
    if nq > nd {
        return Ok(MatchResult {
            score: 0.0,
            best_offset: 0,
            offset_scores: Vec::new(),
        });
    }
    // similarity of every query/document segment pair, computed once
    let sims: Vec<Vec<f64>> = (0..nq)
        .map(|m| (0..nd).map(|k| cosine_sim(q.get(m), d.get(k)).clamp(0.0, 1.0)).collect())
        .collect();
    let offset_scores: Vec<f64> = (0..=nd - nq)
        .map(|n| (0..nq).map(|m| sims[m][m + n]).product())
        .collect();
    let (best, score) = offset_scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    Ok(MatchResult {
        score,
        best_offset: best + 1,
        offset_scores,
    })
}

/// Subsequence DTW: the query must be consumed entirely, but may start and
/// end anywhere in the document. Steps are (1,0), (0,1) and (1,1); the
/// local distance is `1 − clamp(cos, 0, 1)`. Returns
/// `1 − cost / path_length` of the path with the lowest normalized cost.
///
/// Normalization makes the optimum depend on path length, so the recursion
/// keeps, per cell, the lowest cost for every reachable length.
pub fn dtw_score(q: &FeatureMatrix, d: &FeatureMatrix) -> Result<f64> {
    if q.dim() != d.dim() {
        return Err(Error::shape("dtw_score feature dim", q.dim(), d.dim()));
    }
    let (tq, td) = (q.len(), d.len());
    let dist: Vec<Vec<f64>> = (0..tq)
        .map(|i| (0..td).map(|j| 1.0 - cosine_sim(q.frame(i), d.frame(j)).clamp(0.0, 1.0)).collect())
        .collect();
    // cost[j][l]: cheapest path ending at (i, j) with l + 1 cells
    let max_len = tq + td;
    let inf = f64::INFINITY;
    let mut prev: Vec<Vec<f64>> = vec![vec![inf; max_len]; td];
    for i in 0..tq {
        let mut cur: Vec<Vec<f64>> = vec![vec![inf; max_len]; td];
        for j in 0..td {
            let c = dist[i][j];
            if i == 0 {
                cur[j][0] = c;
            }
            for l in 1..max_len {
                let mut best = inf;
                if i > 0 {
                    best = best.min(prev[j][l - 1]);
                    if j > 0 {
                        best = best.min(prev[j - 1][l - 1]);
                    }
                }
                if j > 0 {
                    best = best.min(cur[j - 1][l - 1]);
                }
                if best < inf {
                    cur[j][l] = best + c;
                }
            }
        }
        prev = cur;
    }
    let mut best = inf;
    for row in &prev {
        for (l, &c) in row.iter().enumerate() {
            if c < inf {
                best = best.min(c / (l + 1) as f64);
            }
        }
    }
    Ok(1.0 - best)
}
