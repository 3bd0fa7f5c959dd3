//! Core domain types: relation vocabulary, per-frame pair predictions, ground
//! truth, the sparse agent score table and fusion weights.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate relation `{0}` in vocabulary")]
    DuplicateRelation(String),
    #[error("empty relation name at index {0}")]
    EmptyRelation(usize),
    #[error("invalid fusion weights: {0}")]
    InvalidWeights(String),
}

/// Ordered relation labels; index ↔ name is a bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(ModelError::EmptyRelation(i));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(ModelError::DuplicateRelation(name.clone()));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Result<usize, ModelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownRelation(name.to_string()))
    }
}

pub fn lookup_relation(vocab: &RelationVocabulary, name: &str) -> Result<usize, ModelError> {
    vocab.lookup(name)
}

/// Axis-aligned box in absolute pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x1 < self.x2 && self.y1 < self.y2)
    }

    pub fn fits_within(&self, width: f64, height: f64) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.x2 <= width
            && self.y2 <= height
    }

    /// `[x1,y1,x2,y2]` with coordinates rounded to whole pixels.
    pub fn to_pixel_string(&self) -> String {
        format!(
            "[{},{},{},{}]",
            self.x1.round() as i64,
            self.y1.round() as i64,
            self.x2.round() as i64,
            self.y2.round() as i64
        )
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Tracking identifier of a human-object pair, stable across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairId {
    pub human_id: u32,
    pub object_id: u32,
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}-o{}", self.human_id, self.object_id)
    }
}

/// How a pair is addressed inside a frame. Untracked pairs fall back to
/// their position in the frame, which carries no identity across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairKey {
    Tracked(PairId),
    Slot(usize),
}

impl PairKey {
    pub fn pair_id(&self) -> Option<PairId> {
        match self {
            PairKey::Tracked(id) => Some(*id),
            PairKey::Slot(_) => None,
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairKey::Tracked(id) => write!(f, "{id}"),
            PairKey::Slot(i) => write!(f, "#{i}"),
        }
    }
}

/// Which scale the `scores` vectors of a set live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDomain {
    /// Base detector confidences, each in [0,1].
    #[default]
    Probability,
    /// Output of score fusion: finite and non-negative, may exceed 1.
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub frame_index: usize,
    pub pair_id: Option<PairId>,
    pub object_class: String,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub scores: Vec<f64>,
}

impl PairPrediction {
    /// Relation index with the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((i, s)),
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub pairs: Vec<PairPrediction>,
}

impl FramePrediction {
    pub fn keyed_pairs(&self) -> impl Iterator<Item = (PairKey, &PairPrediction)> {
        self.pairs.iter().enumerate().map(|(slot, p)| {
            let key = match p.pair_id {
                Some(id) => PairKey::Tracked(id),
                None => PairKey::Slot(slot),
            };
            (key, p)
        })
    }

    pub fn pair(&self, key: PairKey) -> Option<&PairPrediction> {
        self.keyed_pairs().find(|(k, _)| *k == key).map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPredictionSet {
    pub video_id: String,
    pub vocabulary: RelationVocabulary,
    pub frames: Vec<FramePrediction>,
    pub score_domain: ScoreDomain,
}

impl VideoPredictionSet {
    pub fn new(video_id: impl Into<String>, vocabulary: RelationVocabulary) -> Self {
        Self {
            video_id: video_id.into(),
            vocabulary,
            frames: Vec::new(),
            score_domain: ScoreDomain::Probability,
        }
    }

    pub fn pair_count(&self) -> usize {
        self.frames.iter().map(|f| f.pairs.len()).sum()
    }

    /// True when every pair carries a tracking id. Temporal reasoning and
    /// pair-based propagation require it.
    pub fn is_tracked(&self) -> bool {
        self.pair_count() > 0
            && self.frames.iter().flat_map(|f| &f.pairs).all(|p| p.pair_id.is_some())
    }

    pub fn frame(&self, frame_index: usize) -> Option<&FramePrediction> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }

    pub fn prediction(&self, key: &ScoreKey) -> Option<&PairPrediction> {
        self.frame(key.frame_index)?.pair(key.pair)
    }

    /// Copy holding only the frames whose index is in `keep`.
    pub fn restrict_frames(&self, keep: &BTreeSet<usize>) -> Self {
        Self {
            video_id: self.video_id.clone(),
            vocabulary: self.vocabulary.clone(),
            frames: self
                .frames
                .iter()
                .filter(|f| keep.contains(&f.frame_index))
                .cloned()
                .collect(),
            score_domain: self.score_domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    ScoreOutOfRange { relation: usize, value: f64 },
    ScoreCount { expected: usize, found: usize },
    DegenerateBox { which: &'static str },
    BoxOutsideFrame { which: &'static str },
    FrameIndexMismatch { pair_frame: usize },
    FrameOrder { previous: usize },
    DuplicatePair,
    EmptyObjectClass,
    FrameSize,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::ScoreOutOfRange { relation, value } => {
                write!(f, "score out of [0,1] (relation {relation}: {value})")
            }
            Rule::ScoreCount { expected, found } => {
                write!(f, "score vector has {found} entries, vocabulary has {expected}")
            }
            Rule::DegenerateBox { which } => write!(f, "degenerate box ({which})"),
            Rule::BoxOutsideFrame { which } => write!(f, "box outside frame ({which})"),
            Rule::FrameIndexMismatch { pair_frame } => {
                write!(f, "pair claims frame {pair_frame}")
            }
            Rule::FrameOrder { previous } => {
                write!(f, "frame indices not strictly increasing (after {previous})")
            }
            Rule::DuplicatePair => write!(f, "duplicate pair id in frame"),
            Rule::EmptyObjectClass => write!(f, "empty object class"),
            Rule::FrameSize => write!(f, "frame size must be positive"),
        }
    }
}

/// One broken invariant, located by frame and pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub frame_index: usize,
    pub pair: Option<PairKey>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pair {
            Some(p) => write!(f, "frame {}, pair {}: {}", self.frame_index, p, self.rule),
            None => write!(f, "frame {}: {}", self.frame_index, self.rule),
        }
    }
}

pub fn validate_prediction_set(set: &VideoPredictionSet) -> Vec<Violation> {
    let n = set.vocabulary.len();
    let mut out = Vec::new();
    let mut previous: Option<usize> = None;
    for frame in &set.frames {
        let fi = frame.frame_index;
        let at = |pair: Option<PairKey>, rule: Rule| Violation { frame_index: fi, pair, rule };
        if let Some(prev) = previous {
            if fi <= prev {
                out.push(at(None, Rule::FrameOrder { previous: prev }));
            }
        }
        previous = Some(fi);
        let sized = frame.frame_width > 0.0 && frame.frame_height > 0.0;
        if !sized {
            out.push(at(None, Rule::FrameSize));
        }
        let mut seen = BTreeSet::new();
        for (key, pair) in frame.keyed_pairs() {
            let key = Some(key);
            if pair.frame_index != fi {
                out.push(at(key, Rule::FrameIndexMismatch { pair_frame: pair.frame_index }));
            }
            if let Some(id) = pair.pair_id {
                if !seen.insert(id) {
                    out.push(at(key, Rule::DuplicatePair));
                }
            }
            if pair.object_class.trim().is_empty() {
                out.push(at(key, Rule::EmptyObjectClass));
            }
            for (which, b) in [("human", &pair.human_box), ("object", &pair.object_box)] {
                if b.is_degenerate() {
                    out.push(at(key, Rule::DegenerateBox { which }));
                } else if sized && !b.fits_within(frame.frame_width, frame.frame_height) {
                    out.push(at(key, Rule::BoxOutsideFrame { which }));
                }
            }
            if pair.scores.len() != n {
                out.push(at(key, Rule::ScoreCount { expected: n, found: pair.scores.len() }));
            }
            for (relation, &value) in pair.scores.iter().enumerate() {
                let ok = match set.score_domain {
                    ScoreDomain::Probability => (0.0..=1.0).contains(&value),
                    ScoreDomain::Fused => value.is_finite() && value >= 0.0,
                };
                if !ok {
                    out.push(at(key, Rule::ScoreOutOfRange { relation, value }));
                }
            }
        }
    }
    out
}

/// Positive (pair, relation) triplets per frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    frames: BTreeMap<usize, BTreeSet<(PairKey, usize)>>,
}

impl GroundTruthSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame_index: usize, pair: PairKey, relation: usize) {
        self.frames.entry(frame_index).or_default().insert((pair, relation));
    }

    pub fn frame(&self, frame_index: usize) -> Option<&BTreeSet<(PairKey, usize)>> {
        self.frames.get(&frame_index)
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &BTreeSet<(PairKey, usize)>)> {
        self.frames.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Address of one triplet score: frame, pair and relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScoreKey {
    pub frame_index: usize,
    pub pair: PairKey,
    pub relation: usize,
}

impl ScoreKey {
    pub fn new(frame_index: usize, pair: PairKey, relation: usize) -> Self {
        Self { frame_index, pair, relation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Agent {
    CommonSense,
    Spatial,
    Temporal,
    Debate,
}

impl Agent {
    pub const ALL: [Agent; 4] = [Agent::CommonSense, Agent::Spatial, Agent::Temporal, Agent::Debate];

    pub fn name(&self) -> &'static str {
        match self {
            Agent::CommonSense => "common_sense",
            Agent::Spatial => "spatial",
            Agent::Temporal => "temporal",
            Agent::Debate => "debate",
        }
    }
}

/// Raw agent scores for one triplet; `None` means the agent did not score it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentScores {
    pub common_sense: Option<f64>,
    pub spatial: Option<f64>,
    pub temporal: Option<f64>,
    pub debate: Option<f64>,
}

impl AgentScores {
    pub fn get(&self, agent: Agent) -> Option<f64> {
        match agent {
            Agent::CommonSense => self.common_sense,
            Agent::Spatial => self.spatial,
            Agent::Temporal => self.temporal,
            Agent::Debate => self.debate,
        }
    }

    pub fn slot(&mut self, agent: Agent) -> &mut Option<f64> {
        match agent {
            Agent::CommonSense => &mut self.common_sense,
            Agent::Spatial => &mut self.spatial,
            Agent::Temporal => &mut self.temporal,
            Agent::Debate => &mut self.debate,
        }
    }

    pub fn is_empty(&self) -> bool {
        Agent::ALL.iter().all(|a| self.get(*a).is_none())
    }

    pub fn masked(&self, components: &Components) -> Self {
        let keep = |on: bool, v: Option<f64>| if on { v } else { None };
        Self {
            common_sense: keep(components.common_sense, self.common_sense),
            spatial: keep(components.spatial, self.spatial),
            temporal: keep(components.temporal, self.temporal),
            debate: keep(components.debate, self.debate),
        }
    }
}

/// Which refinement components contribute to the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    pub common_sense: bool,
    pub spatial: bool,
    pub temporal: bool,
    pub debate: bool,
}

impl Components {
    pub const ALL: Components =
        Components { common_sense: true, spatial: true, temporal: true, debate: true };
    pub const NONE: Components =
        Components { common_sense: false, spatial: false, temporal: false, debate: false };

    /// All 16 on/off combinations, all-off first, counting in binary with
    /// common sense as the lowest bit.
    pub fn combinations() -> Vec<Components> {
        (0u8..16)
            .map(|bits| Components {
                common_sense: bits & 1 != 0,
                spatial: bits & 2 != 0,
                temporal: bits & 4 != 0,
                debate: bits & 8 != 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.common_sense {
            parts.push("cs");
        }
        if self.spatial {
            parts.push("spatial");
        }
        if self.temporal {
            parts.push("temporal");
        }
        if self.debate {
            parts.push("debate");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::ALL
    }
}

/// Sparse (frame, pair, relation) → agent scores map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentScoreTable {
    entries: BTreeMap<ScoreKey, AgentScores>,
}

impl AgentScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: ScoreKey, agent: Agent, value: f64) {
        *self.entries.entry(key).or_default().slot(agent) = Some(value);
    }

    pub fn get(&self, key: &ScoreKey) -> Option<&AgentScores> {
        self.entries.get(key)
    }

    pub fn score(&self, key: &ScoreKey, agent: Agent) -> Option<f64> {
        self.entries.get(key).and_then(|s| s.get(agent))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ScoreKey, &AgentScores)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries carrying a score from `agent`.
    pub fn count(&self, agent: Agent) -> usize {
        self.entries.values().filter(|s| s.get(agent).is_some()).count()
    }

    /// Folds `other` in. Partial tables produced by distinct batches have
    /// disjoint (key, agent) cells; where both hold a value the existing one
    /// is kept.
    pub fn merge(&mut self, other: &AgentScoreTable) {
        for (key, scores) in &other.entries {
            let slot = self.entries.entry(*key).or_default();
            for agent in Agent::ALL {
                if let Some(v) = scores.get(agent) {
                    slot.slot(agent).get_or_insert(v);
                }
            }
        }
    }

    /// Per-cell arithmetic mean over the tables that hold a value.
    pub fn mean<'a>(tables: impl IntoIterator<Item = &'a AgentScoreTable>) -> AgentScoreTable {
        let mut sums: BTreeMap<ScoreKey, [(f64, usize); 4]> = BTreeMap::new();
        for table in tables {
            for (key, scores) in &table.entries {
                let acc = sums.entry(*key).or_insert([(0.0, 0); 4]);
                for (i, agent) in Agent::ALL.iter().enumerate() {
                    if let Some(v) = scores.get(*agent) {
                        acc[i].0 += v;
                        acc[i].1 += 1;
                    }
                }
            }
        }
        let mut out = AgentScoreTable::new();
        for (key, acc) in sums {
            for (i, agent) in Agent::ALL.iter().enumerate() {
                if acc[i].1 > 0 {
                    out.set(key, *agent, acc[i].0 / acc[i].1 as f64);
                }
            }
        }
        out
    }

    pub fn masked(&self, components: &Components) -> AgentScoreTable {
        let entries = self
            .entries
            .iter()
            .map(|(k, s)| (*k, s.masked(components)))
            .filter(|(_, s)| !s.is_empty())
            .collect();
        AgentScoreTable { entries }
    }

    /// Keys that do not resolve to a prediction, and values outside [0,1].
    pub fn validate(&self, set: &VideoPredictionSet) -> Vec<String> {
        let mut problems = Vec::new();
        for (key, scores) in &self.entries {
            let resolves = set
                .prediction(key)
                .is_some_and(|p| key.relation < p.scores.len());
            if !resolves {
                problems.push(format!(
                    "frame {}, pair {}, relation {}: no such prediction",
                    key.frame_index, key.pair, key.relation
                ));
            }
            for agent in Agent::ALL {
                if let Some(v) = scores.get(agent) {
                    if !(0.0..=1.0).contains(&v) {
                        problems.push(format!(
                            "frame {}, pair {}, relation {}: {} score {v} out of [0,1]",
                            key.frame_index,
                            key.pair,
                            key.relation,
                            agent.name()
                        ));
                    }
                }
            }
        }
        problems
    }
}

impl FromIterator<(ScoreKey, AgentScores)> for AgentScoreTable {
    fn from_iter<I: IntoIterator<Item = (ScoreKey, AgentScores)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// Weights of the agent terms in the fused score plus the semi-constraint
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct FusionWeights<T> {
    pub common_sense: T,
    pub spatial: T,
    pub temporal: T,
    pub debate: T,
    pub threshold: T,
}

impl<T: Scalar> FusionWeights<T> {
    pub fn new(common_sense: T, spatial: T, temporal: T, debate: T, threshold: T) -> Result<Self, ModelError> {
        let w = Self { common_sense, spatial, temporal, debate, threshold };
        w.validate()?;
        Ok(w)
    }

    /// VidHOI setting: 0.05 / 1.7 / 1.7 for the three agents, 0.2 for the
    /// debate term and a 0.3 threshold.
    pub fn vidhoi() -> Self {
        Self {
            common_sense: T::of(0.05),
            spatial: T::of(1.7),
            temporal: T::of(1.7),
            debate: T::of(0.2),
            threshold: T::of(0.3),
        }
    }

    /// Action Genome setting: common sense and debate only, both 0.2.
    pub fn action_genome() -> Self {
        Self {
            common_sense: T::of(0.2),
            spatial: T::zero(),
            temporal: T::zero(),
            debate: T::of(0.2),
            threshold: T::of(0.3),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("common_sense", self.common_sense),
            ("spatial", self.spatial),
            ("temporal", self.temporal),
            ("debate", self.debate),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(ModelError::InvalidWeights(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.threshold > T::zero() && self.threshold < T::one()) {
            return Err(ModelError::InvalidWeights(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for FusionWeights<T> {
    fn default() -> Self {
        Self::vidhoi()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> RelationVocabulary {
        RelationVocabulary::new(["hold", "carry", "hug", "look at", "ride", "sit on"]).unwrap()
    }

    fn pair(frame: usize, id: u32, scores: Vec<f64>) -> PairPrediction {
        PairPrediction {
            frame_index: frame,
            pair_id: Some(PairId { human_id: 0, object_id: id }),
            object_class: "bicycle".into(),
            human_box: BoundingBox::new(10.0, 10.0, 50.0, 100.0),
            object_box: BoundingBox::new(12.0, 80.0, 55.0, 140.0),
            scores,
        }
    }

    fn two_frame_set() -> VideoPredictionSet {
        let mut set = VideoPredictionSet::new("v", vocab());
        for f in [0, 1] {
            set.frames.push(FramePrediction {
                frame_index: f,
                frame_width: 640.0,
                frame_height: 480.0,
                pairs: vec![pair(f, 1, vec![0.1; 6]), pair(f, 2, vec![0.9; 6])],
            });
        }
        set
    }

    #[test]
    fn well_formed_set_has_no_violations() {
        assert!(validate_prediction_set(&two_frame_set()).is_empty());
    }

    #[test]
    fn score_above_one_is_flagged() {
        let mut set = two_frame_set();
        set.frames[1].pairs[0].scores[3] = 1.3;
        let v = validate_prediction_set(&set);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].frame_index, 1);
        assert!(matches!(v[0].rule, Rule::ScoreOutOfRange { relation: 3, .. }));
        assert!(v[0].to_string().contains("score out of [0,1]"));
    }

    #[test]
    fn degenerate_box_is_flagged() {
        let mut set = two_frame_set();
        set.frames[0].pairs[1].object_box.x2 = set.frames[0].pairs[1].object_box.x1;
        let v = validate_prediction_set(&set);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("degenerate box"));
    }

    #[test]
    fn fused_domain_accepts_scores_above_one() {
        let mut set = two_frame_set();
        set.score_domain = ScoreDomain::Fused;
        set.frames[0].pairs[0].scores[0] = 2.2;
        assert!(validate_prediction_set(&set).is_empty());
    }

    #[test]
    fn frame_order_and_duplicates() {
        let mut set = two_frame_set();
        set.frames[1].frame_index = 0;
        for p in &mut set.frames[1].pairs {
            p.frame_index = 0;
        }
        set.frames[0].pairs[1].pair_id = set.frames[0].pairs[0].pair_id;
        let rules: Vec<_> = validate_prediction_set(&set).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::FrameOrder { previous: 0 }));
        assert!(rules.contains(&Rule::DuplicatePair));
    }

    #[test]
    fn lookup_examples() {
        let v = RelationVocabulary::new(["hold", "carry", "hug", "look at", "ride"]).unwrap();
        assert_eq!(lookup_relation(&v, "ride"), Ok(4));
        assert_eq!(lookup_relation(&v, "hold"), Ok(0));
        assert_eq!(
            lookup_relation(&v, "fly"),
            Err(ModelError::UnknownRelation("fly".into()))
        );
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_blanks() {
        assert!(matches!(
            RelationVocabulary::new(["a", "b", "a"]),
            Err(ModelError::DuplicateRelation(_))
        ));
        assert!(matches!(RelationVocabulary::new(["a", " "]), Err(ModelError::EmptyRelation(1))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let p = pair(0, 1, vec![0.2, 0.7, 0.7, 0.1]);
        assert_eq!(p.argmax(), Some(1));
    }

    #[test]
    fn mean_ignores_missing_cells() {
        let k = ScoreKey::new(0, PairKey::Slot(0), 1);
        let mut a = AgentScoreTable::new();
        a.set(k, Agent::CommonSense, 0.2);
        a.set(k, Agent::Spatial, 1.0);
        let mut b = AgentScoreTable::new();
        b.set(k, Agent::CommonSense, 0.6);
        let m = AgentScoreTable::mean([&a, &b]);
        assert!((m.score(&k, Agent::CommonSense).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(m.score(&k, Agent::Spatial), Some(1.0));
        assert_eq!(m.score(&k, Agent::Temporal), None);
    }

    #[test]
    fn weights_validation() {
        assert!(FusionWeights::<f64>::new(0.05, 1.7, 1.7, 0.2, 0.3).is_ok());
        assert!(FusionWeights::<f64>::new(-0.1, 1.7, 1.7, 0.2, 0.3).is_err());
        assert!(FusionWeights::<f64>::new(0.1, 1.7, 1.7, 0.2, 1.0).is_err());
        assert!(FusionWeights::<f32>::new(0.1, 1.7, 1.7, 0.2, 0.0).is_err());
    }

    #[test]
    fn sixteen_combinations() {
        let all = Components::combinations();
        assert_eq!(all.len(), 16);
        assert_eq!(all[0], Components::NONE);
        assert_eq!(all[15], Components::ALL);
        let distinct: BTreeSet<String> = all.iter().map(Components::label).collect();
        assert_eq!(distinct.len(), 16);
    }

    proptest! {
        #[test]
        fn vocabulary_bijection(names in proptest::collection::btree_set("[a-z]{1,8}( [a-z]{1,5})?", 1..30)) {
            let names: Vec<String> = names.into_iter().collect();
            let v = RelationVocabulary::new(names.clone()).unwrap();
            prop_assert_eq!(v.len(), names.len());
            for (i, n) in names.iter().enumerate() {
                prop_assert_eq!(v.lookup(n).unwrap(), i);
                prop_assert_eq!(v.name(i).unwrap(), n.as_str());
            }
        }
    }
}
