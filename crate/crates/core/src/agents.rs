//! The three reasoning agents (common sense, spatial, temporal), keyframe
//! sampling and propagation of agent scores to the frames in between.
//!
//! Agents see only candidate relations, those whose base score reaches the
//! candidate floor. Prompts are batched and keyed by their text, so a
//! triplet that recurs across frames is asked about once per provider.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ingest::{triplet_text, triplet_to_text};
use crate::model::{
    Agent, AgentScoreTable, AgentScores, PairId, PairKey, ScoreKey, VideoPredictionSet,
};
use crate::par::parallel_map;
use crate::prompt::{
    parse_binary_output, parse_score_output, render_common_sense, render_spatial, render_temporal,
    spatial_item, temporal_item, SpatialStage,
};
use crate::provider::{ChatModel, ProviderError};

pub const DEFAULT_CANDIDATE_FLOOR: f64 = 0.05;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("keyframe interval must be at least 1")]
    ZeroInterval,
    #[error("video has no pair tracking; temporal reasoning is unavailable")]
    TrackingUnavailable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSettings {
    /// Relations with a base score below this are not scored.
    pub candidate_floor: f64,
    /// Test instances per prompt.
    pub batch_size: usize,
    /// Concurrent prompts per agent run.
    pub parallelism: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            candidate_floor: DEFAULT_CANDIDATE_FLOOR,
            batch_size: DEFAULT_BATCH_SIZE,
            parallelism: 4,
        }
    }
}

/// Outcome of one agent over one provider.
#[derive(Debug, Clone, Default)]
pub struct AgentRun {
    pub table: AgentScoreTable,
    /// Prompts issued, including failed ones.
    pub prompts: usize,
    /// Keys the agent was asked to score.
    pub candidates: usize,
    pub errors: Vec<ProviderError>,
}

impl AgentRun {
    fn absorb(&mut self, other: AgentRun) {
        self.table.merge(&other.table);
        self.prompts += other.prompts;
        self.candidates += other.candidates;
        self.errors.extend(other.errors);
    }
}

/// Frames at positions 0, interval, 2·interval, … of `frame_indices`.
pub fn select_keyframes(frame_indices: &[usize], interval: usize) -> Result<BTreeSet<usize>, AgentError> {
    if interval == 0 {
        return Err(AgentError::ZeroInterval);
    }
    Ok(frame_indices.iter().step_by(interval).copied().collect())
}

/// Change of a tracked pair's top relation between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Transition {
    /// The later of the two frames.
    pub frame_index: usize,
    pub pair: PairId,
    pub old: usize,
    pub new: usize,
}

/// Transitions between each pair of adjacent frames of `set`.
pub fn detect_transitions(set: &VideoPredictionSet) -> Result<Vec<Transition>, AgentError> {
    if !set.is_tracked() {
        return Err(AgentError::TrackingUnavailable);
    }
    let mut out = Vec::new();
    for window in set.frames.windows(2) {
        let (prev, next) = (&window[0], &window[1]);
        for pair in &next.pairs {
            let id = pair.pair_id.expect("tracked set");
            let Some(before) = prev.pairs.iter().find(|p| p.pair_id == Some(id)) else {
                continue;
            };
            if let (Some(old), Some(new)) = (before.argmax(), pair.argmax()) {
                if old != new {
                    out.push(Transition { frame_index: next.frame_index, pair: id, old, new });
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// (key, triplet text) for every relation at or above the floor.
pub fn candidates(set: &VideoPredictionSet, floor: f64) -> Vec<(ScoreKey, String)> {
    let mut out = Vec::new();
    for frame in &set.frames {
        for (key, pair) in frame.keyed_pairs() {
            for (r, &s) in pair.scores.iter().enumerate() {
                if s >= floor {
                    out.push((
                        ScoreKey::new(frame.frame_index, key, r),
                        triplet_to_text(pair, r, &set.vocabulary),
                    ));
                }
            }
        }
    }
    out
}

/// Scores each distinct item once, `batch_size` items per prompt.
fn score_items(
    model: &dyn ChatModel,
    items: &BTreeSet<String>,
    settings: &AgentSettings,
    render: impl Fn(&[String]) -> String + Sync,
) -> (BTreeMap<String, f64>, usize, Vec<ProviderError>) {
    let items: Vec<String> = items.iter().cloned().collect();
    let batches: Vec<&[String]> = items.chunks(settings.batch_size.max(1)).collect();
    let answers = parallel_map(&batches, settings.parallelism, |batch| {
        model.ask(&render(batch)).map(|r| parse_score_output(&r.text, batch.len()))
    });
    let mut scores = BTreeMap::new();
    let mut errors = Vec::new();
    for (batch, answer) in batches.iter().zip(answers) {
        match answer {
            Ok(parsed) => {
                for (i, item) in batch.iter().enumerate() {
                    match parsed.get(i) {
                        Some(v) => {
                            scores.insert(item.clone(), v);
                        }
                        None => tracing::warn!(provider = model.id(), item = %item, "unparseable score"),
                    }
                }
            }
            Err(e) => {
                tracing::warn!(provider = model.id(), error = %e, "batch failed");
                errors.push(e);
            }
        }
    }
    (scores, batches.len(), errors)
}

pub fn run_common_sense(model: &dyn ChatModel, set: &VideoPredictionSet, settings: &AgentSettings) -> AgentRun {
    let cands = candidates(set, settings.candidate_floor);
    let texts: BTreeSet<String> = cands.iter().map(|(_, t)| t.clone()).collect();
    let (scores, prompts, errors) = score_items(model, &texts, settings, |batch| {
        render_common_sense(batch).expect("batch is non-empty").render()
    });
    let mut table = AgentScoreTable::new();
    for (key, text) in &cands {
        if let Some(&v) = scores.get(text) {
            table.set(*key, Agent::CommonSense, v);
        }
    }
    AgentRun { table, prompts, candidates: cands.len(), errors }
}

/// Spatial-awareness verdict per relation name. Unanswered or unparseable
/// queries count as not spatial-aware.
pub fn classify_spatial_awareness(
    model: &dyn ChatModel,
    relations: &BTreeSet<String>,
    settings: &AgentSettings,
) -> (BTreeMap<String, bool>, Vec<ProviderError>) {
    let names: Vec<String> = relations.iter().cloned().collect();
    let answers = parallel_map(&names, settings.parallelism, |name| {
        let prompt = render_spatial(&SpatialStage::Awareness(vec![name.clone()])).expect("one relation");
        model.ask(&prompt.render())
    });
    let mut verdicts = BTreeMap::new();
    let mut errors = Vec::new();
    for (name, answer) in names.into_iter().zip(answers) {
        let aware = match answer {
            Ok(r) => parse_binary_output(&r.text).unwrap_or_else(|| {
                tracing::warn!(provider = model.id(), relation = %name, "awareness answer is neither yes nor no");
                false
            }),
            Err(e) => {
                tracing::warn!(provider = model.id(), relation = %name, error = %e, "awareness query failed");
                errors.push(e);
                false
            }
        };
        verdicts.insert(name, aware);
    }
    (verdicts, errors)
}

pub fn run_spatial(model: &dyn ChatModel, set: &VideoPredictionSet, settings: &AgentSettings) -> AgentRun {
    let cands = candidates(set, settings.candidate_floor);
    let relations: BTreeSet<String> = cands
        .iter()
        .filter_map(|(k, _)| set.vocabulary.name(k.relation).map(str::to_string))
        .collect();
    let (aware, mut errors) = classify_spatial_awareness(model, &relations, settings);
    let mut prompts = relations.len();
    let mut items = Vec::new();
    for (key, text) in &cands {
        let name = set.vocabulary.name(key.relation).unwrap_or_default();
        if !aware.get(name).copied().unwrap_or(false) {
            continue;
        }
        let pair = set.prediction(key).expect("candidate resolves");
        items.push((*key, spatial_item(text, &pair.human_box, &pair.object_box)));
    }
    let distinct: BTreeSet<String> = items.iter().map(|(_, i)| i.clone()).collect();
    let (scores, n, errs) = score_items(model, &distinct, settings, |batch| {
        render_spatial(&SpatialStage::Scoring(batch.to_vec())).expect("batch is non-empty").render()
    });
    prompts += n;
    errors.extend(errs);
    let mut table = AgentScoreTable::new();
    for (key, item) in &items {
        if let Some(&v) = scores.get(item) {
            table.set(*key, Agent::Spatial, v);
        }
    }
    AgentRun { table, prompts, candidates: items.len(), errors }
}

pub fn run_temporal(
    model: &dyn ChatModel,
    set: &VideoPredictionSet,
    transitions: &[Transition],
    settings: &AgentSettings,
) -> AgentRun {
    let mut items = Vec::new();
    for t in transitions {
        let key = ScoreKey::new(t.frame_index, PairKey::Tracked(t.pair), t.new);
        let Some(pair) = set.prediction(&key) else {
            continue;
        };
        let old = triplet_to_text(pair, t.old, &set.vocabulary);
        let new = triplet_to_text(pair, t.new, &set.vocabulary);
        items.push((key, (old, new)));
    }
    let distinct: BTreeSet<String> = items.iter().map(|(_, (o, n))| temporal_item(o, n)).collect();
    let (scores, prompts, errors) = if distinct.is_empty() {
        (BTreeMap::new(), 0, Vec::new())
    } else {
        // temporal_item is injective, so items can be recovered from their text
        let by_text: BTreeMap<String, (String, String)> =
            items.iter().map(|(_, (o, n))| (temporal_item(o, n), (o.clone(), n.clone()))).collect();
        score_items(model, &distinct, settings, |batch| {
            let pairs: Vec<(String, String)> = batch.iter().map(|t| by_text[t].clone()).collect();
            render_temporal(&pairs).expect("transitions change the relation").render()
        })
    };
    let mut table = AgentScoreTable::new();
    for (key, (o, n)) in &items {
        if let Some(&v) = scores.get(&temporal_item(o, n)) {
            table.set(*key, Agent::Temporal, v);
        }
    }
    AgentRun { table, prompts, candidates: items.len(), errors }
}

/// Runs every applicable agent over the keyframes of one provider.
pub fn run_all(model: &dyn ChatModel, keyframe_set: &VideoPredictionSet, settings: &AgentSettings) -> BTreeMap<Agent, AgentRun> {
    let mut runs = BTreeMap::new();
    runs.insert(Agent::CommonSense, run_common_sense(model, keyframe_set, settings));
    runs.insert(Agent::Spatial, run_spatial(model, keyframe_set, settings));
    let temporal = match detect_transitions(keyframe_set) {
        Ok(transitions) => run_temporal(model, keyframe_set, &transitions, settings),
        Err(_) => AgentRun::default(),
    };
    runs.insert(Agent::Temporal, temporal);
    runs
}

/// Union of the runs' tables and counters.
pub fn combine(runs: impl IntoIterator<Item = AgentRun>) -> AgentRun {
    let mut out = AgentRun::default();
    for run in runs {
        out.absorb(run);
    }
    out
}

/// Value of the keyframe nearest to `frame` among `sources`; on equal
/// distance the earlier keyframe wins.
fn nearest(sources: &[(usize, f64)], frame: usize) -> Option<f64> {
    sources
        .iter()
        .min_by_key(|(k, _)| (k.abs_diff(frame), *k))
        .map(|(_, v)| *v)
}

/// Fills non-keyframes from the nearest keyframe holding a value for the
/// same tracked pair, relation and agent. Untracked pairs take common-sense
/// scores from the nearest keyframe with the same triplet text. Keyframe
/// entries are returned unchanged.
pub fn propagate_scores(
    table: &AgentScoreTable,
    set: &VideoPredictionSet,
    keyframes: &BTreeSet<usize>,
) -> AgentScoreTable {
    let mut by_pair: BTreeMap<(PairKey, usize, Agent), Vec<(usize, f64)>> = BTreeMap::new();
    let mut by_text: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (key, scores) in table.iter() {
        if !keyframes.contains(&key.frame_index) {
            continue;
        }
        for agent in Agent::ALL {
            if let Some(v) = scores.get(agent) {
                if matches!(key.pair, PairKey::Tracked(_)) {
                    by_pair.entry((key.pair, key.relation, agent)).or_default().push((key.frame_index, v));
                }
            }
        }
        if let (Some(v), Some(pair)) = (scores.common_sense, set.prediction(key)) {
            let text = triplet_to_text(pair, key.relation, &set.vocabulary);
            let sources = by_text.entry(text).or_default();
            // one value per frame keeps the tie rule well defined
            if !sources.iter().any(|(f, _)| *f == key.frame_index) {
                sources.push((key.frame_index, v));
            }
        }
    }
    let mut out = AgentScoreTable::new();
    for (key, scores) in table.iter() {
        if keyframes.contains(&key.frame_index) {
            for agent in Agent::ALL {
                if let Some(v) = scores.get(agent) {
                    out.set(*key, agent, v);
                }
            }
        }
    }
    for frame in &set.frames {
        if keyframes.contains(&frame.frame_index) {
            continue;
        }
        for (pair_key, pair) in frame.keyed_pairs() {
            for r in 0..pair.scores.len() {
                let key = ScoreKey::new(frame.frame_index, pair_key, r);
                let mut scores = AgentScores::default();
                match pair_key {
                    PairKey::Tracked(_) => {
                        for agent in Agent::ALL {
                            if let Some(src) = by_pair.get(&(pair_key, r, agent)) {
                                *scores.slot(agent) = nearest(src, frame.frame_index);
                            }
                        }
                    }
                    PairKey::Slot(_) => {
                        let name = set.vocabulary.name(r).unwrap_or_default();
                        if let Some(src) = by_text.get(&triplet_text(name, &pair.object_class)) {
                            scores.common_sense = nearest(src, frame.frame_index);
                        }
                    }
                }
                for agent in Agent::ALL {
                    if let Some(v) = scores.get(agent) {
                        out.set(key, agent, v);
                    }
                }
            }
        }
    }
    out
}
