use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Per-frame decision of the segmentation gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Close the current segment at this frame.
    Segment,
    Pass,
}

impl Action {
    /// Column of this action in a [`PolicyOutput`] row.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Action::Segment => 0,
            Action::Pass => 1,
        }
    }

    /// Encoding used in the gate state: 1 for segment, 0 for pass.
    #[inline]
    pub fn as_input(self) -> f64 {
        match self {
            Action::Segment => 1.0,
            Action::Pass => 0.0,
        }
    }
}

pub type ActionSequence = Vec<Action>;

/// Partition of frames `1..=T` into contiguous segments, stored as the
/// 1-based inclusive end frame of each segment. The last end is always `T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoundarySet {
    num_frames: usize,
    ends: Vec<usize>,
}

impl BoundarySet {
    /// Validates that `ends` is strictly increasing, within `[1, T]` and
    /// terminated by `T`.
    pub fn from_ends(num_frames: usize, ends: Vec<usize>) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::Input("boundary set over zero frames".into()));
        }
        if ends.last() != Some(&num_frames) {
            return Err(Error::Input(format!(
                "last segment must end at T={num_frames}, got {:?}",
                ends.last()
            )));
        }
        let mut prev = 0;
        for &e in &ends {
            if e <= prev || e > num_frames {
                return Err(Error::Input(format!(
                    "segment end {e} out of order or outside [1, {num_frames}]"
                )));
            }
            prev = e;
        }
        Ok(Self { num_frames, ends })
    }

    /// Builds a partition from interior boundary frames; `T` is appended and
    /// duplicates or out-of-range frames are rejected.
    pub fn from_interior(num_frames: usize, interior: &[usize]) -> Result<Self> {
        let mut ends = interior.to_vec();
        if ends.last() != Some(&num_frames) {
            ends.push(num_frames);
        }
        Self::from_ends(num_frames, ends)
    }

    /// One segment covering everything.
    pub fn whole(num_frames: usize) -> Self {
        Self {
            num_frames,
            ends: vec![num_frames],
        }
    }

    /// Each `Segment` at frame `t` closes a segment ending at `t`; frames
    /// after the last closing action form a final segment ending at `T`.
    pub fn from_actions(actions: &[Action]) -> Result<Self> {
        let t = actions.len();
        let mut ends: Vec<usize> = actions
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Action::Segment)
            .map(|(i, _)| i + 1)
            .collect();
        if ends.last() != Some(&t) {
            ends.push(t);
        }
        Self::from_ends(t, ends)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_segments(&self) -> usize {
        self.ends.len()
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    /// Segment ends excluding the utterance-final frame.
    pub fn interior(&self) -> &[usize] {
        &self.ends[..self.ends.len() - 1]
    }

    /// `(start, end)` pairs, 1-based and inclusive.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(1).chain(self.ends.iter().map(|e| e + 1));
        starts.zip(self.ends.iter().copied())
    }

    /// 0-based half-open row ranges, for indexing feature matrices.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.segments().map(|(s, e)| s - 1..e)
    }

    /// Inverse of [`BoundarySet::from_actions`] for sets produced by it.
    pub fn to_actions(&self) -> ActionSequence {
        let mut a = vec![Action::Pass; self.num_frames];
        for &e in &self.ends {
            a[e - 1] = Action::Segment;
        }
        a
    }
}

/// Per-frame `(segment, pass)` probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Matrix,
}

/// How actions are chosen from a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    /// `Segment` only when its probability is strictly higher; ties pass.
    Greedy,
    Sample { seed: u64 },
}

impl PolicyOutput {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn segment_prob(&self, t: usize) -> f64 {
        self.probs.get(t, 0)
    }

    /// Decides every row independently. Rows are not fed back into any gate
    /// here; see [`crate::ssae::SegmentationGate::rollout`] for that.
    pub fn decide(&self, mode: DecisionMode) -> ActionSequence {
        match mode {
            DecisionMode::Greedy => (0..self.len()).map(|t| greedy(self.probs.row(t))).collect(),
            DecisionMode::Sample { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.len()).map(|t| sample(self.probs.row(t), &mut rng)).collect()
            }
        }
    }
}

#[inline]
pub(crate) fn greedy(row: &[f64]) -> Action {
    if row[0] > row[1] {
        Action::Segment
    } else {
        Action::Pass
    }
}

#[inline]
pub(crate) fn sample<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Action {
    if rng.random::<f64>() < row[0] {
        Action::Segment
    } else {
        Action::Pass
    }
}

/// One embedding per segment, `N × d_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub vectors: Matrix,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn get(&self, n: usize) -> &[f64] {
        self.vectors.row(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Action::{Pass as P, Segment as S};

    #[test]
    fn actions_to_boundaries_examples() {
        let b = BoundarySet::from_actions(&[P, S, P, P, S]).unwrap();
        assert_eq!(b.segments().collect::<Vec<_>>(), vec![(1, 2), (3, 5)]);
        assert_eq!(b.num_segments(), 2);

        let b = BoundarySet::from_actions(&[P; 7]).unwrap();
        assert_eq!(b.segments().collect::<Vec<_>>(), vec![(1, 7)]);

        let b = BoundarySet::from_actions(&[S, S, S]).unwrap();
        assert_eq!(b.segments().collect::<Vec<_>>(), vec![(1, 1), (2, 2), (3, 3)]);
        assert_eq!(b.interior(), &[1, 2]);
    }

    #[test]
    fn rejects_bad_partitions() {
        assert!(BoundarySet::from_ends(5, vec![2, 2, 5]).is_err());
        assert!(BoundarySet::from_ends(5, vec![3]).is_err());
        assert!(BoundarySet::from_ends(5, vec![0, 5]).is_err());
        assert!(BoundarySet::from_actions(&[]).is_err());
    }

    #[test]
    fn greedy_decisions() {
        let probs = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let p = PolicyOutput { probs };
        assert_eq!(p.decide(DecisionMode::Greedy), vec![S, S, P]);
        assert_eq!(p.decide(DecisionMode::Greedy), p.decide(DecisionMode::Greedy));
    }

    #[test]
    fn fair_sampling_frequency() {
        let probs = Matrix::from_fn(10_000, 2, |_, _| 0.5);
        let a = PolicyOutput { probs }.decide(DecisionMode::Sample { seed: 42 });
        let freq = a.iter().filter(|x| **x == S).count() as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    proptest! {
        #[test]
        fn actions_always_partition(bits in prop::collection::vec(any::<bool>(), 1..60)) {
            let actions: Vec<Action> = bits.iter().map(|&b| if b { S } else { P }).collect();
            let b = BoundarySet::from_actions(&actions).unwrap();
            prop_assert!(b.num_segments() <= actions.len());
            let mut next = 1;
            for (s, e) in b.segments() {
                prop_assert_eq!(s, next);
                prop_assert!(s <= e);
                next = e + 1;
            }
            prop_assert_eq!(next, actions.len() + 1);
        }
    }
}
