//! Segmentation and retrieval scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ssae::BoundarySet;

/// Tolerance window in frames: 40 ms at a 10 ms hop.
pub const DEFAULT_TOLERANCE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentationScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hypothesized: usize,
    pub reference: usize,
    pub matched: usize,
}

impl SegmentationScore {
    fn from_counts(matched: usize, hypothesized: usize, reference: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(matched, hypothesized);
        let recall = ratio(matched, reference);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            hypothesized,
            reference,
            matched,
        }
    }

    /// Pools counts over utterances (micro average).
    pub fn pooled(scores: &[SegmentationScore]) -> Self {
        let sum = |f: fn(&SegmentationScore) -> usize| scores.iter().map(f).sum::<usize>();
        Self::from_counts(sum(|s| s.matched), sum(|s| s.hypothesized), sum(|s| s.reference))
    }
}

/// Matches interior boundaries one-to-one, closest pairs first.
///
/// Candidate `(hyp, ref)` pairs within `tolerance` frames are taken in order
/// of increasing distance (ties by earlier frame, then later frame) and
/// accepted while both ends are unmatched. The utterance-final frame is not
/// a scoreable boundary.
pub fn segmentation_prf(hyp: &BoundarySet, reference: &BoundarySet, tolerance: usize) -> Result<SegmentationScore> {
    if hyp.num_frames() != reference.num_frames() {
        return Err(Error::shape(
            "segmentation_prf utterance length",
            reference.num_frames(),
            hyp.num_frames(),
        ));
    }
    Ok(match_boundaries(hyp.interior(), reference.interior(), tolerance))
}

/// The matching behind [`segmentation_prf`] on raw frame lists.
pub fn match_boundaries(hyp: &[usize], reference: &[usize], tolerance: usize) -> SegmentationScore {
    let mut pairs: Vec<((usize, usize, usize), usize, usize)> = Vec::new();
    for (i, &h) in hyp.iter().enumerate() {
        for (j, &r) in reference.iter().enumerate() {
            let gap = h.abs_diff(r);
            if gap <= tolerance {
                pairs.push(((gap, h.min(r), h.max(r)), i, j));
            }
        }
    }
    // the key does not depend on which side is the hypothesis
    pairs.sort_by_key(|p| p.0);
    let mut used_h = vec![false; hyp.len()];
    let mut used_r = vec![false; reference.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_h[i] && !used_r[j] {
            used_h[i] = true;
            used_r[j] = true;
            matched += 1;
        }
    }
    SegmentationScore::from_counts(matched, hyp.len(), reference.len())
}

/// Independent per-frame boundary draws with probability `rate`. Frame `T`
/// always closes the last segment.
pub fn random_segment(num_frames: usize, rate: f64, seed: u64) -> Result<BoundarySet> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("boundary rate {rate} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior: Vec<usize> = (1..num_frames).filter(|_| rng.random::<f64>() < rate).collect();
    BoundarySet::from_interior(num_frames, &interior)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalScore {
    pub map: f64,
    /// Average precision of every scored query, keyed by query id.
    pub average_precision: BTreeMap<String, f64>,
}

/// Average precision of one ranking. Relevant documents missing from the
/// ranking count as never retrieved.
pub fn average_precision(ranking: &[String], relevant: &HashSet<String>) -> Result<f64> {
    let mut seen = HashSet::with_capacity(ranking.len());
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, doc) in ranking.iter().enumerate() {
        if !seen.insert(doc.as_str()) {
            return Err(Error::Input(format!("document `{doc}` ranked twice")));
        }
        if relevant.contains(doc) {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(if relevant.is_empty() { 0.0 } else { total / relevant.len() as f64 })
}

/// Mean of per-query average precisions. Queries without relevant
/// documents are left out.
pub fn mean_average_precision(
    rankings: &BTreeMap<String, Vec<String>>,
    relevance: &BTreeMap<String, HashSet<String>>,
) -> Result<RetrievalScore> {
    let mut average_precision = BTreeMap::new();
    for (query, ranking) in rankings {
        let Some(rel) = relevance.get(query).filter(|r| !r.is_empty()) else {
            continue;
        };
        average_precision.insert(query.clone(), self::average_precision(ranking, rel)?);
    }
    let map = if average_precision.is_empty() {
        0.0
    } else {
        average_precision.values().sum::<f64>() / average_precision.len() as f64
    };
    Ok(RetrievalScore { map, average_precision })
}

/// Sorts `(doc, score)` by descending score, ties by doc id.
pub fn rank_by_score(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// `metric = value` report lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_f(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.6}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
