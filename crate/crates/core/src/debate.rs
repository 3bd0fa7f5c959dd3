//! Multi-model debate over contested triplets.
//!
//! Every debater first answers the question alone; after each answer the
//! other debaters respond to the history so far. The judge then reads the
//! full history and gives a final score. With N debaters the history holds
//! the question plus N² turns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fusion::{fuse_scores, AgentTerms};
use crate::ingest::triplet_to_text;
use crate::model::{AgentScoreTable, FusionWeights, ScoreKey, VideoPredictionSet};
use crate::par::parallel_map;
use crate::prompt::{parse_score_output, render_debate_turn, DebateRole, HistoryEntry};
use crate::provider::{ChatModel, ProviderError};

pub const QUESTION_SPEAKER: &str = "question";

/// Which triplets are debated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebateMode {
    /// Triplets whose per-provider fused scores spread by more than delta.
    #[default]
    Disagreement,
    Always,
    Off,
}

impl FromStr for DebateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disagreement" => Ok(Self::Disagreement),
            "always" => Ok(Self::Always),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown debate mode `{other}` (disagreement, always, off)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: String,
    pub text: String,
    /// Set when the speaker's call failed; `text` is then empty.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebateTranscript {
    pub question: String,
    /// `entries[0]` is the question itself.
    pub entries: Vec<TranscriptEntry>,
    pub judge: String,
    pub judge_answer: String,
    /// `None` when the judge failed or its answer held no score.
    pub judge_score: Option<f64>,
    pub errors: Vec<ProviderError>,
}

impl DebateTranscript {
    fn history(&self) -> Vec<HistoryEntry> {
        self.entries
            .iter()
            .map(|e| HistoryEntry { speaker: e.speaker.clone(), text: e.text.clone() })
            .collect()
    }

    /// Speaker of each history entry after the question.
    pub fn speakers(&self) -> Vec<&str> {
        self.entries.iter().skip(1).map(|e| e.speaker.as_str()).collect()
    }

    /// Entries as `{"speaker","text"}` lines followed by the judge's answer.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let judge = TranscriptEntry {
            speaker: format!("judge:{}", self.judge),
            text: self.judge_answer.clone(),
            failed: self.judge_score.is_none() && self.judge_answer.is_empty(),
        };
        for entry in self.entries.iter().chain(std::iter::once(&judge)) {
            let _ = writeln!(out, "{}", serde_json::to_string(entry).expect("entry serializes"));
        }
        out
    }
}

/// Hex SHA-256 of the question; names the transcript file.
pub fn question_digest(question: &str) -> String {
    hex::encode(Sha256::digest(question.as_bytes()))
}

/// Writes `<dir>/<digest>.jsonl` and returns its path.
pub fn write_transcript(transcript: &DebateTranscript, dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.jsonl", question_digest(&transcript.question)));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(transcript.to_jsonl().as_bytes())?;
    tmp.persist(&path).map_err(|e| e.error)?;
    Ok(path)
}

fn turn(model: &dyn ChatModel, question: &str, history: &[TranscriptEntry], errors: &mut Vec<ProviderError>) -> TranscriptEntry {
    let history: Vec<HistoryEntry> = history
        .iter()
        .map(|e| HistoryEntry { speaker: e.speaker.clone(), text: e.text.clone() })
        .collect();
    let prompt = render_debate_turn(DebateRole::Debater, question, &history).expect("debater prompt");
    match model.ask(&prompt) {
        Ok(r) => TranscriptEntry { speaker: model.id().to_string(), text: r.text, failed: false },
        Err(e) => {
            tracing::warn!(debater = model.id(), error = %e, "debate turn failed");
            errors.push(e);
            TranscriptEntry { speaker: model.id().to_string(), text: String::new(), failed: true }
        }
    }
}

/// One debate. Debaters speak in the given order; a failed turn leaves an
/// empty entry marked as failed and the debate continues.
pub fn run_debate(question: &str, debaters: &[&dyn ChatModel], judge: &dyn ChatModel) -> DebateTranscript {
    let mut errors = Vec::new();
    let mut entries = vec![TranscriptEntry {
        speaker: QUESTION_SPEAKER.to_string(),
        text: question.to_string(),
        failed: false,
    }];
    for (i, d_i) in debaters.iter().enumerate() {
        let initial = turn(*d_i, question, &[], &mut errors);
        entries.push(initial);
        for (j, d_j) in debaters.iter().enumerate() {
            if j != i {
                let argument = turn(*d_j, question, &entries, &mut errors);
                entries.push(argument);
            }
        }
    }
    let mut transcript = DebateTranscript {
        question: question.to_string(),
        entries,
        judge: judge.id().to_string(),
        judge_answer: String::new(),
        judge_score: None,
        errors,
    };
    let prompt = render_debate_turn(DebateRole::Judge, question, &transcript.history()).expect("history holds the question");
    match judge.ask(&prompt) {
        Ok(r) => {
            transcript.judge_score = parse_score_output(&r.text, 1).get(0);
            if transcript.judge_score.is_none() {
                tracing::warn!(judge = judge.id(), "judge answer holds no score");
            }
            transcript.judge_answer = r.text;
        }
        Err(e) => {
            tracing::warn!(judge = judge.id(), error = %e, "judge failed");
            transcript.errors.push(e);
        }
    }
    transcript
}

/// A triplet picked for debate.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateCandidate {
    pub key: ScoreKey,
    pub question: String,
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Question about `key` quoting each provider's stage-one scores.
pub fn debate_question(set: &VideoPredictionSet, key: &ScoreKey, per_provider: &[(String, AgentScoreTable)]) -> Option<String> {
    let pair = set.prediction(key)?;
    let triplet = triplet_to_text(pair, key.relation, &set.vocabulary);
    let mut q = format!(
        "How rational is the triplet {triplet} with person box {}, object box {}? Stage-one scores:",
        pair.human_box.to_pixel_string(),
        pair.object_box.to_pixel_string()
    );
    for (i, (id, table)) in per_provider.iter().enumerate() {
        let s = table.get(key).copied().unwrap_or_default();
        let sep = if i == 0 { " " } else { "; " };
        let _ = write!(
            q,
            "{sep}{id}: common sense {}, spatial {}, temporal {}",
            fmt_score(s.common_sense),
            fmt_score(s.spatial),
            fmt_score(s.temporal)
        );
    }
    q.push_str(". Give a final rationality score between 0 and 1 in the format \"Output: <score>\".");
    Some(q)
}

/// Spread (max − min) of the providers' stage-one fused scores for `key`.
pub fn disagreement(base: f64, key: &ScoreKey, per_provider: &[(String, AgentScoreTable)], weights: &FusionWeights<f64>) -> f64 {
    let fused = per_provider.iter().map(|(_, table)| {
        let terms = table.get(key).map(AgentTerms::from_scores).unwrap_or_default();
        fuse_scores(base, &AgentTerms { debate: None, ..terms }, weights)
    });
    let (lo, hi) = fused.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        hi - lo
    } else {
        0.0
    }
}

/// Candidate keys (relations at or above the floor in `keyframe_set`)
/// selected by `mode`.
pub fn select_debate_candidates(
    keyframe_set: &VideoPredictionSet,
    per_provider: &[(String, AgentScoreTable)],
    weights: &FusionWeights<f64>,
    mode: DebateMode,
    delta: f64,
    floor: f64,
) -> Vec<DebateCandidate> {
    if mode == DebateMode::Off {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (key, _) in crate::agents::candidates(keyframe_set, floor) {
        let base = keyframe_set.prediction(&key).expect("candidate resolves").scores[key.relation];
        if mode == DebateMode::Disagreement && !(disagreement(base, &key, per_provider, weights) > delta) {
            continue;
        }
        if let Some(question) = debate_question(keyframe_set, &key, per_provider) {
            out.push(DebateCandidate { key, question });
        }
    }
    out
}

/// Transcripts of the distinct questions and the debate score of every
/// candidate key.
#[derive(Debug, Clone, Default)]
pub struct DebateOutcome {
    pub scores: BTreeMap<ScoreKey, f64>,
    pub transcripts: Vec<DebateTranscript>,
}

/// Runs one debate per distinct question, up to `parallelism` at a time.
pub fn run_debates(
    candidates: &[DebateCandidate],
    debaters: &[&dyn ChatModel],
    judge: &dyn ChatModel,
    parallelism: usize,
) -> DebateOutcome {
    let mut keys_by_question: BTreeMap<&str, Vec<ScoreKey>> = BTreeMap::new();
    for c in candidates {
        keys_by_question.entry(c.question.as_str()).or_default().push(c.key);
    }
    let questions: Vec<&str> = keys_by_question.keys().copied().collect();
    let transcripts = parallel_map(&questions, parallelism, |q| run_debate(q, debaters, judge));
    let mut scores = BTreeMap::new();
    for t in &transcripts {
        if let Some(v) = t.judge_score {
            for key in &keys_by_question[t.question.as_str()] {
                scores.insert(*key, v);
            }
        }
    }
    DebateOutcome { scores, transcripts }
}
