//! Weighted integration of agent scores into the base relation scores and
//! semi-constraint selection.
//!
//! ```text
//! s_final = s_inter + λ_cs·σ(s_cs) + λ_s·σ(s_spatial) + λ_t·σ(s_temporal) + λ_debate·σ(s_debate)
//! ```
//!
//! An absent agent score removes its whole term. The result is not clipped,
//! so fused scores can exceed 1.

use crate::ingest::FusedScores;
use crate::model::{AgentScoreTable, AgentScores, FusionWeights, ScoreKey, VideoPredictionSet};
use crate::Scalar;

/// Logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Agent scores of one triplet; `None` means the agent gave no score.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgentTerms<T> {
    pub common_sense: Option<T>,
    pub spatial: Option<T>,
    pub temporal: Option<T>,
    pub debate: Option<T>,
}

impl<T: Scalar> AgentTerms<T> {
    pub fn from_scores(scores: &AgentScores) -> Self {
        let conv = |v: Option<f64>| v.map(T::of);
        Self {
            common_sense: conv(scores.common_sense),
            spatial: conv(scores.spatial),
            temporal: conv(scores.temporal),
            debate: conv(scores.debate),
        }
    }
}

pub fn fuse_scores<T: Scalar>(s_inter: T, terms: &AgentTerms<T>, w: &FusionWeights<T>) -> T {
    let term = |weight: T, score: Option<T>| score.map_or(T::zero(), |s| weight * sigmoid(s));
    s_inter
        + term(w.common_sense, terms.common_sense)
        + term(w.spatial, terms.spatial)
        + term(w.temporal, terms.temporal)
        + term(w.debate, terms.debate)
}

/// Relation indices whose score is strictly above `threshold`.
pub fn threshold_select<T: Scalar>(scores: &[T], threshold: T) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Fused score vector for every pair of `set`. Relations without an entry in
/// `table` keep their base score.
pub fn fuse_set(set: &VideoPredictionSet, table: &AgentScoreTable, w: &FusionWeights<f64>) -> FusedScores {
    let mut out = FusedScores::new();
    for frame in &set.frames {
        for (key, pair) in frame.keyed_pairs() {
            let fused = pair
                .scores
                .iter()
                .enumerate()
                .map(|(r, &base)| {
                    match table.get(&ScoreKey::new(frame.frame_index, key, r)) {
                        Some(scores) => fuse_scores(base, &AgentTerms::from_scores(scores), w),
                        None => base,
                    }
                })
                .collect();
            out.insert((frame.frame_index, key), fused);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Agent, BoundingBox, FramePrediction, PairKey, PairPrediction, RelationVocabulary};
    use proptest::prelude::*;

    fn only_cs(v: f64) -> AgentTerms<f64> {
        AgentTerms { common_sense: Some(v), ..Default::default() }
    }

    #[test]
    fn zero_weights_are_identity() {
        let w = FusionWeights::new(0.0, 0.0, 0.0, 0.0, 0.3).unwrap();
        let terms = AgentTerms { common_sense: Some(0.9), spatial: Some(0.1), temporal: Some(0.4), debate: Some(1.0) };
        assert_eq!(fuse_scores(0.42, &terms, &w), 0.42);
    }

    #[test]
    fn single_common_sense_term() {
        let w = FusionWeights::new(0.05, 0.0, 0.0, 0.0, 0.3).unwrap();
        let s = fuse_scores(0.20, &only_cs(1.0), &w);
        assert!((s - 0.23655293).abs() < 1e-8, "{s}");
    }

    #[test]
    fn vidhoi_weights_can_exceed_one() {
        let w = FusionWeights::<f64>::vidhoi();
        let terms = AgentTerms { common_sense: Some(0.5), spatial: Some(1.0), temporal: Some(0.0), debate: None };
        let s = fuse_scores(0.1, &terms, &w);
        assert!((s - 2.2239226).abs() < 1e-6, "{s}");
    }

    #[test]
    fn single_precision_agrees() {
        let w = FusionWeights::<f32>::vidhoi();
        let terms = AgentTerms { common_sense: Some(0.5f32), spatial: Some(1.0), temporal: Some(0.0), debate: None };
        assert!((fuse_scores(0.1f32, &terms, &w) - 2.2239226).abs() < 1e-5);
    }

    #[test]
    fn absent_term_is_not_sigmoid_of_zero() {
        let w = FusionWeights::<f64>::vidhoi();
        let absent = fuse_scores(0.1, &AgentTerms::default(), &w);
        let zero = fuse_scores(0.1, &AgentTerms { spatial: Some(0.0), ..Default::default() }, &w);
        assert_eq!(absent, 0.1);
        assert!(zero > absent);
    }

    #[test]
    fn selection_is_strict() {
        assert_eq!(threshold_select(&[0.9, 0.31, 0.1], 0.3), vec![0, 1]);
        assert!(threshold_select(&[0.1, 0.2, 0.05], 0.3).is_empty());
        assert!(threshold_select(&[0.3], 0.3).is_empty());
    }

    #[test]
    fn fuse_set_touches_only_scored_relations() {
        let vocab = RelationVocabulary::new(["hold", "ride"]).unwrap();
        let mut set = VideoPredictionSet::new("v", vocab);
        set.frames.push(FramePrediction {
            frame_index: 0,
            frame_width: 100.0,
            frame_height: 100.0,
            pairs: vec![PairPrediction {
                frame_index: 0,
                pair_id: None,
                object_class: "bike".into(),
                human_box: BoundingBox::new(0.0, 0.0, 10.0, 10.0),
                object_box: BoundingBox::new(5.0, 5.0, 20.0, 20.0),
                scores: vec![0.4, 0.2],
            }],
        });
        let mut table = AgentScoreTable::new();
        table.set(ScoreKey::new(0, PairKey::Slot(0), 1), Agent::Spatial, 1.0);
        let fused = fuse_set(&set, &table, &FusionWeights::vidhoi());
        let v = &fused[&(0, PairKey::Slot(0))];
        assert_eq!(v[0], 0.4);
        assert!((v[1] - (0.2 + 1.7 * sigmoid(1.0))).abs() < 1e-12);
    }

    fn opt() -> impl Strategy<Value = Option<f64>> {
        prop::option::of(0.0..=1.0f64)
    }

    proptest! {
        #[test]
        fn increasing_in_every_present_score(
            base in 0.0..=1.0f64,
            cs in opt(), sp in opt(), t in opt(), d in opt(),
            which in 0usize..5,
            bump in 1e-6..0.5f64,
        ) {
            let w = FusionWeights::new(0.05, 1.7, 1.7, 0.2, 0.3).unwrap();
            let terms = AgentTerms { common_sense: cs, spatial: sp, temporal: t, debate: d };
            let before = fuse_scores(base, &terms, &w);
            let mut raised = terms;
            let mut b = base;
            let slot = match which {
                0 => { b += bump; None }
                1 => raised.common_sense.as_mut(),
                2 => raised.spatial.as_mut(),
                3 => raised.temporal.as_mut(),
                _ => raised.debate.as_mut(),
            };
            match slot {
                Some(v) => *v += bump,
                None if which != 0 => return Ok(()),
                None => {}
            }
            prop_assert!(fuse_scores(b, &raised, &w) > before);
        }

        #[test]
        fn zero_weight_ignores_its_agent(base in 0.0..=1.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let w = FusionWeights::new(0.05, 0.0, 1.7, 0.2, 0.3).unwrap();
            let x = fuse_scores(base, &AgentTerms { spatial: Some(a), ..Default::default() }, &w);
            let y = fuse_scores(base, &AgentTerms { spatial: Some(b), ..Default::default() }, &w);
            prop_assert_eq!(x, y);
        }

        #[test]
        fn equal_agent_scores_keep_base_order(
            bases in prop::collection::vec(0.0..=1.0f64, 2..8),
            cs in 0.0..=1.0f64, sp in 0.0..=1.0f64,
        ) {
            let w = FusionWeights::<f64>::vidhoi();
            let terms = AgentTerms { common_sense: Some(cs), spatial: Some(sp), ..Default::default() };
            for i in 0..bases.len() {
                for j in 0..bases.len() {
                    if bases[i] < bases[j] {
                        prop_assert!(fuse_scores(bases[i], &terms, &w) <= fuse_scores(bases[j], &terms, &w));
                    }
                }
            }
        }
    }
}
