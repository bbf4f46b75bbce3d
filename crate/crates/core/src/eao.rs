//! Expected average overlap: per-frame IoU sequences, their merging from
//! anchors to videos to subsets, the scoring window, and frame-weighted
//! averaging of scalar metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics2d::{Failure, FrameOutcome2D, FrameStatus2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EaoError {
    #[error("no sequences to merge")]
    EmptyInput,
    #[error("window length statistics need at least two videos, got {0}")]
    TooFewVideos(usize),
    #[error("every entry in frames {n_min}..={n_max} is ignored")]
    EmptyWindow { n_min: usize, n_max: usize },
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("invalid window [{n_min}, {n_max}]")]
    InvalidWindow { n_min: usize, n_max: usize },
}

/// One entry of an IoU sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Score {
    Value(f64),
    Ignore,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Ignore => None,
        }
    }
}

/// Per-frame overlap scores aligned at the first frame after an anchor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSequence {
    pub entries: Vec<Score>,
}

impl ScoreSequence {
    pub fn new(entries: Vec<Score>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds the overlap sequence of one anchor run.
///
/// Invalid ground-truth frames become `Ignore`; from the first frame of the
/// failure streak onwards every entry is zero.
pub fn anchor_sequence(outcomes: &[FrameOutcome2D], failure: Option<Failure>) -> ScoreSequence {
    let zero_from = failure.map_or(outcomes.len(), |f| f.streak_start);
    let entries = outcomes
        .iter()
        .enumerate()
        .map(|(pos, o)| {
            if pos >= zero_from {
                return Score::Value(0.0);
            }
            match o.status {
                FrameStatus2D::Valid => Score::Value(o.iou.map_or(0.0, |(_, _, c)| c)),
                FrameStatus2D::NoPredictionVisible => Score::Value(0.0),
                FrameStatus2D::Ignore | FrameStatus2D::ExcessPrediction => Score::Ignore,
            }
        })
        .collect();
    ScoreSequence { entries }
}

/// Frame-wise mean over the non-ignored entries of all inputs.
///
/// The output is as long as the longest input; a position is `Ignore`
/// only when every input that reaches it is `Ignore` there.
fn merge(seqs: &[&ScoreSequence]) -> Result<ScoreSequence, EaoError> {
    let len = seqs.iter().map(|s| s.len()).max().ok_or(EaoError::EmptyInput)?;
    let entries = (0..len)
        .map(|i| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for s in seqs {
                if let Some(Score::Value(v)) = s.entries.get(i) {
                    sum += v;
                    n += 1;
                }
            }
            if n == 0 {
                Score::Ignore
            } else {
                Score::Value(sum / n as f64)
            }
        })
        .collect();
    Ok(ScoreSequence { entries })
}

/// Averages the anchor sequences of one video.
pub fn merge_anchor_sequences(seqs: &[&ScoreSequence]) -> Result<ScoreSequence, EaoError> {
    merge(seqs)
}

/// Averages one sequence per video into a case or subset sequence.
pub fn merge_video_sequences(seqs: &[&ScoreSequence]) -> Result<ScoreSequence, EaoError> {
    merge(seqs)
}

/// Inclusive, 1-based frame range scored by EAO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EaoWindow {
    pub n_min: usize,
    pub n_max: usize,
}

impl EaoWindow {
    pub fn new(n_min: usize, n_max: usize) -> Result<Self, EaoError> {
        if n_min < 1 || n_min >= n_max {
            return Err(EaoError::InvalidWindow { n_min, n_max });
        }
        Ok(Self { n_min, n_max })
    }
}

/// Window of mean ± one population standard deviation of the video
/// sequence lengths, rounded to the nearest frame.
///
/// The upper bound never exceeds the longest sequence, and a degenerate
/// window is widened to `[max(1, n_max − 1), n_max]`.
pub fn eao_window(video_lengths: &[usize]) -> Result<EaoWindow, EaoError> {
    if video_lengths.len() < 2 {
        return Err(EaoError::TooFewVideos(video_lengths.len()));
    }
    let n = video_lengths.len() as f64;
    let mean = video_lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = video_lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let longest = *video_lengths.iter().max().expect("at least two lengths");

    let mut n_max = ((mean + std).round() as usize).min(longest).max(2);
    let mut n_min = ((mean - std).round().max(1.0)) as usize;
    if n_min >= n_max {
        n_min = n_max.saturating_sub(1).max(1);
        n_max = n_min + 1;
    }
    EaoWindow::new(n_min, n_max)
}

/// Mean of the non-ignored entries at 1-based positions within `window`.
///
/// Positions beyond the end of the sequence count as zero. With
/// `literal_denominator` the sum is divided by `n_max − n_min` regardless of
/// ignored entries.
pub fn eao(seq: &ScoreSequence, window: EaoWindow, literal_denominator: bool) -> Result<f64, EaoError> {
    windowed_mean(seq, window, literal_denominator, Score::Value(0.0))
}

/// Like [`eao`], but positions beyond the end of the sequence are treated
/// as ignored. Used for per-anchor, per-video and per-case breakdowns,
/// whose sequences may stop short of the subset window.
pub fn eao_within(seq: &ScoreSequence, window: EaoWindow, literal_denominator: bool) -> Result<f64, EaoError> {
    windowed_mean(seq, window, literal_denominator, Score::Ignore)
}

fn windowed_mean(seq: &ScoreSequence, window: EaoWindow, literal_denominator: bool, past_end: Score) -> Result<f64, EaoError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pos in window.n_min..=window.n_max {
        match seq.entries.get(pos - 1).copied().unwrap_or(past_end) {
            Score::Value(v) => {
                sum += v;
                n += 1;
            }
            Score::Ignore => {}
        }
    }
    if n == 0 {
        return Err(EaoError::EmptyWindow { n_min: window.n_min, n_max: window.n_max });
    }
    let denom = if literal_denominator { (window.n_max - window.n_min) as f64 } else { n as f64 };
    Ok(sum / denom)
}

/// `Σ vᵢwᵢ / Σ wᵢ`, skipping undefined values.
pub fn weighted_average<I>(items: I) -> Result<f64, EaoError>
where
    I: IntoIterator<Item = (Option<f64>, f64)>,
{
    let mut num = 0.0;
    let mut den = 0.0;
    for (value, weight) in items {
        if let Some(v) = value {
            if weight > 0.0 {
                num += v * weight;
                den += weight;
            }
        }
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(EaoError::AllZeroWeights)
    }
}

/// Weighted population standard deviation, skipping undefined values.
pub fn weighted_std<I>(items: I) -> Option<f64>
where
    I: IntoIterator<Item = (Option<f64>, f64)> + Clone,
{
    let mean = weighted_average(items.clone()).ok()?;
    let var = weighted_average(items.into_iter().map(|(v, w)| (v.map(|x| (x - mean).powi(2)), w))).ok()?;
    Some(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use Score::{Ignore, Value as V};

    fn padded(head: &[Score], len: usize) -> ScoreSequence {
        let mut e = head.to_vec();
        e.resize(len, V(0.0));
        ScoreSequence::new(e)
    }

    fn anchor_s1() -> ScoreSequence {
        padded(&[V(1.0), V(0.8), V(0.6), V(0.5), Ignore], 100)
    }

    fn anchor_s2() -> ScoreSequence {
        padded(&[V(1.0), V(1.0), V(1.0), Ignore, Ignore], 50)
    }

    #[test]
    fn anchor_merge_worked_example() {
        let video = merge_anchor_sequences(&[&anchor_s1(), &anchor_s2()]).unwrap();
        assert_eq!(video, padded(&[V(1.0), V(0.9), V(0.8), V(0.5), Ignore], 100));
    }

    #[test]
    fn video_merge_worked_example() {
        let v1 = padded(&[V(1.0), V(0.9), V(0.8), V(0.5), Ignore], 100);
        let v2 = padded(&[V(1.0), V(1.0), V(1.0), V(0.0), V(0.0)], 200);
        let subset = merge_video_sequences(&[&v1, &v2]).unwrap();
        assert_eq!(subset, padded(&[V(1.0), V(0.95), V(0.9), V(0.25), V(0.0)], 200));
    }

    #[test]
    fn merge_edge_cases() {
        let s = anchor_s1();
        assert_eq!(merge_anchor_sequences(&[&s]).unwrap(), s);
        assert_eq!(merge_anchor_sequences(&[]), Err(EaoError::EmptyInput));
        let a = ScoreSequence::new(vec![Ignore, V(0.2)]);
        let b = ScoreSequence::new(vec![V(0.5), Ignore]);
        let c = ScoreSequence::new(vec![Ignore]);
        assert_eq!(merge_video_sequences(&[&a, &b]).unwrap().entries, vec![V(0.5), V(0.2)]);
        assert_eq!(merge_video_sequences(&[&a, &c]).unwrap().entries, vec![Ignore, V(0.2)]);
    }

    #[test]
    fn window_from_lengths() {
        assert_eq!(eao_window(&[100, 200]).unwrap(), EaoWindow { n_min: 100, n_max: 200 });
        assert_eq!(eao_window(&[90, 100, 110]).unwrap(), EaoWindow { n_min: 92, n_max: 108 });
        assert_eq!(eao_window(&[80, 80, 80]).unwrap(), EaoWindow { n_min: 79, n_max: 80 });
        assert_eq!(eao_window(&[1, 1]).unwrap(), EaoWindow { n_min: 1, n_max: 2 });
        assert_eq!(eao_window(&[100]), Err(EaoError::TooFewVideos(1)));
        // Mean + std would exceed the longest sequence.
        let w = eao_window(&[0, 100, 100, 100]).unwrap();
        assert_eq!(w.n_max, 100);
    }

    #[test]
    fn eao_examples() {
        let ones = ScoreSequence::new(vec![V(1.0); 30]);
        assert_eq!(eao(&ones, EaoWindow::new(3, 20).unwrap(), false), Ok(1.0));

        let subset = padded(&[V(1.0), V(0.95), V(0.9), V(0.25), V(0.0)], 200);
        let w = EaoWindow::new(1, 5).unwrap();
        assert_eq!(eao(&subset, w, false), Ok(0.62));
        assert_eq!(eao(&subset, w, true), Ok(3.1 / 4.0));

        let with_ignore = ScoreSequence::new(vec![V(1.0), V(0.95), Ignore, V(0.25), V(0.0)]);
        assert_eq!(eao(&with_ignore, w, false), Ok((1.0 + 0.95 + 0.25 + 0.0) / 4.0));

        let all_ignored = ScoreSequence::new(vec![Ignore; 10]);
        assert!(matches!(eao(&all_ignored, w, false), Err(EaoError::EmptyWindow { .. })));

        // Beyond the end of the sequence entries count as zero.
        let short = ScoreSequence::new(vec![V(1.0); 3]);
        assert_eq!(eao(&short, EaoWindow::new(2, 5).unwrap(), false), Ok(0.5));
        assert_eq!(eao_within(&short, EaoWindow::new(2, 5).unwrap(), false), Ok(1.0));
        assert!(eao_within(&short, EaoWindow::new(4, 5).unwrap(), false).is_err());
    }

    #[test]
    fn weighted_average_examples() {
        let v = weighted_average([(Some(0.8), 100.0), (Some(0.6), 50.0)]).unwrap();
        assert!((v - 0.7333333333333333).abs() < 1e-15);
        assert_eq!(weighted_average([(Some(0.4), 7.0)]), Ok(0.4));
        assert_eq!(weighted_average([(Some(0.2), 3.0), (Some(0.4), 3.0)]), Ok((0.2 * 3.0 + 0.4 * 3.0) / 6.0));
        assert_eq!(weighted_average([(None, 10.0), (Some(0.5), 0.0)]), Err(EaoError::AllZeroWeights));
        assert_eq!(weighted_average([(None, 10.0), (Some(0.5), 2.0)]), Ok(0.5));
    }

    #[test]
    fn weighted_std_of_equal_values_is_zero() {
        assert_eq!(weighted_std([(Some(5.0), 2.0), (Some(5.0), 9.0)]), Some(0.0));
        assert_eq!(weighted_std([(Some(1.0), 1.0), (Some(3.0), 1.0)]), Some(1.0));
        assert_eq!(weighted_std([(None, 1.0)]), None);
    }

    fn score_strategy() -> impl Strategy<Value = Score> {
        prop_oneof![
            3 => (0.0..=1.0f64).prop_map(Score::Value),
            1 => Just(Score::Ignore),
        ]
    }

    fn seq_strategy() -> impl Strategy<Value = ScoreSequence> {
        proptest::collection::vec(score_strategy(), 1..40).prop_map(ScoreSequence::new)
    }

    proptest! {
        #[test]
        fn merge_is_permutation_invariant(seqs in proptest::collection::vec(seq_strategy(), 1..5), rot in 0usize..5) {
            let refs: Vec<&ScoreSequence> = seqs.iter().collect();
            let mut rotated = refs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let a = merge_video_sequences(&refs).unwrap();
            let b = merge_video_sequences(&rotated).unwrap();
            for (x, y) in a.entries.iter().zip(&b.entries) {
                match (x, y) {
                    (V(p), V(q)) => prop_assert!((p - q).abs() < 1e-12),
                    (Ignore, Ignore) => {}
                    _ => prop_assert!(false, "ignore mismatch"),
                }
            }
        }

        #[test]
        fn duplicated_anchor_leaves_merge_unchanged(s in seq_strategy()) {
            let once = merge_anchor_sequences(&[&s]).unwrap();
            let twice = merge_anchor_sequences(&[&s, &s]).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn ignore_columns_do_not_change_eao(s in seq_strategy(), at in 0usize..40, width in 1usize..4) {
            let n = s.len();
            let w = EaoWindow::new(1, n + 1).unwrap();
            let base = eao(&s, w, false);
            let mut e = s.entries.clone();
            let at = at % (n + 1);
            for _ in 0..width {
                e.insert(at, Ignore);
            }
            let widened = EaoWindow::new(1, n + 1 + width).unwrap();
            let after = eao(&ScoreSequence::new(e), widened, false);
            match (base, after) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn raising_an_entry_never_lowers_eao(s in seq_strategy(), at in 0usize..40, bump in 0.0..1.0f64) {
            let w = EaoWindow::new(1, s.len().max(1) + 1).unwrap();
            let at = at % s.len();
            if let V(v) = s.entries[at] {
                let mut raised = s.clone();
                raised.entries[at] = V((v + bump).min(1.0));
                prop_assert!(eao(&raised, w, false).unwrap() >= eao(&s, w, false).unwrap());
            }
        }
    }
}
