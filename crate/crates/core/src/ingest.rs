//! Line-delimited JSON readers and writers for predictions and ground truth,
//! the relation vocabulary file, and triplet text rendering.
//!
//! Prediction records carry one pair each:
//!
//! ```text
//! {"video_id":"v1","frame_index":0,"frame_w":640,"frame_h":480,
//!  "pair_id":{"human_id":0,"object_id":3},"object_class":"bicycle",
//!  "human_box":[10,10,50,100],"object_box":[12,80,55,140],"scores":[0.1,0.7]}
//! ```
//!
//! Refined files add `"score_domain":"fused"`. Ground truth records are
//! `{"frame_index":0,"pair_id":{...},"relation_index":4}`; untracked
//! videos use `"pair_id":null` with `"pair_index"` (position in the frame).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_prediction_set, BoundingBox, FramePrediction, GroundTruthSet, ModelError, PairId,
    PairKey, PairPrediction, RelationVocabulary, ScoreDomain, Violation, VideoPredictionSet,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}: {violation}")]
    Validation { path: PathBuf, violation: Violation },
    #[error("{path}:{line}: frame {frame_index} has no pair {pair}")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        frame_index: usize,
        pair: String,
    },
    #[error("{path}:{line}: relation index {index} out of range for {n} relations")]
    RelationOutOfRange {
        path: PathBuf,
        line: usize,
        index: usize,
        n: usize,
    },
    #[error("{path}: vocabulary: {source}")]
    Vocabulary {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("fused scores missing for frame {frame_index}, pair {pair}")]
    IncompleteFusedScores { frame_index: usize, pair: PairKey },
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    video_id: String,
    frame_index: usize,
    frame_w: f64,
    frame_h: f64,
    pair_id: Option<PairId>,
    object_class: String,
    human_box: BoundingBox,
    object_box: BoundingBox,
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_probability")]
    score_domain: ScoreDomain,
}

fn is_probability(d: &ScoreDomain) -> bool {
    *d == ScoreDomain::Probability
}

#[derive(Debug, Deserialize)]
struct GroundTruthRecord {
    frame_index: usize,
    pair_id: Option<PairId>,
    #[serde(default)]
    pair_index: Option<usize>,
    relation_index: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn parse_line<T: serde::de::DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        IngestError::Parse {
            path: path.to_path_buf(),
            line,
            field: if field == "." { "<record>".to_string() } else { field },
            message: e.into_inner().to_string(),
        }
    })
}

/// Non-blank lines with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(usize, String)>, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Relation names, one per line; index is the line position. Labels are
/// lower-cased.
pub fn load_vocabulary(path: &Path) -> Result<RelationVocabulary, IngestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let names: Vec<String> = text.trim_end().lines().map(|l| l.trim().to_lowercase()).collect();
    let names = if names.len() == 1 && names[0].is_empty() { Vec::new() } else { names };
    RelationVocabulary::new(names)
        .map_err(|source| IngestError::Vocabulary { path: path.to_path_buf(), source })
}

pub fn write_vocabulary(vocab: &RelationVocabulary, path: &Path) -> Result<(), IngestError> {
    let mut text = vocab.names().join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn load_predictions(path: &Path, vocab: &RelationVocabulary) -> Result<VideoPredictionSet, IngestError> {
    let mut set = VideoPredictionSet::new("", vocab.clone());
    let mut domain: Option<ScoreDomain> = None;
    for (line, text) in records(path)? {
        let rec: PredictionRecord = parse_line(path, line, &text)?;
        let parse_err = |field: &str, message: String| IngestError::Parse {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            message,
        };
        if set.frames.is_empty() {
            set.video_id = rec.video_id.clone();
        } else if rec.video_id != set.video_id {
            return Err(parse_err(
                "video_id",
                format!("expected `{}`, one video per file", set.video_id),
            ));
        }
        match domain {
            None => domain = Some(rec.score_domain),
            Some(d) if d != rec.score_domain => {
                return Err(parse_err("score_domain", "mixed score domains in one file".into()))
            }
            _ => {}
        }
        let pair = PairPrediction {
            frame_index: rec.frame_index,
            pair_id: rec.pair_id,
            object_class: rec.object_class.trim().to_lowercase(),
            human_box: rec.human_box,
            object_box: rec.object_box,
            scores: rec.scores,
        };
        match set.frames.last_mut() {
            Some(frame) if frame.frame_index == rec.frame_index => {
                if frame.frame_width != rec.frame_w || frame.frame_height != rec.frame_h {
                    return Err(parse_err("frame_w", "frame size differs within one frame".into()));
                }
                frame.pairs.push(pair);
            }
            _ => set.frames.push(FramePrediction {
                frame_index: rec.frame_index,
                frame_width: rec.frame_w,
                frame_height: rec.frame_h,
                pairs: vec![pair],
            }),
        }
    }
    set.score_domain = domain.unwrap_or_default();
    if let Some(violation) = validate_prediction_set(&set).into_iter().next() {
        return Err(IngestError::Validation { path: path.to_path_buf(), violation });
    }
    Ok(set)
}

/// Loads ground truth and checks every triplet against `set` (ground-truth
/// boxes are given, so each positive must name a predicted pair).
pub fn load_ground_truth(path: &Path, set: &VideoPredictionSet) -> Result<GroundTruthSet, IngestError> {
    let n = set.vocabulary.len();
    let mut gt = GroundTruthSet::new();
    for (line, text) in records(path)? {
        let rec: GroundTruthRecord = parse_line(path, line, &text)?;
        let key = match (rec.pair_id, rec.pair_index) {
            (Some(id), _) => PairKey::Tracked(id),
            (None, Some(slot)) => PairKey::Slot(slot),
            (None, None) => {
                return Err(IngestError::Parse {
                    path: path.to_path_buf(),
                    line,
                    field: "pair_id".into(),
                    message: "either pair_id or pair_index is required".into(),
                })
            }
        };
        if rec.relation_index >= n {
            return Err(IngestError::RelationOutOfRange {
                path: path.to_path_buf(),
                line,
                index: rec.relation_index,
                n,
            });
        }
        let exists = set.frame(rec.frame_index).is_some_and(|f| f.pair(key).is_some());
        if !exists {
            return Err(IngestError::DanglingReference {
                path: path.to_path_buf(),
                line,
                frame_index: rec.frame_index,
                pair: key.to_string(),
            });
        }
        gt.insert(rec.frame_index, key, rec.relation_index);
    }
    Ok(gt)
}

#[derive(Serialize)]
struct GroundTruthOut {
    frame_index: usize,
    pair_id: Option<PairId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_index: Option<usize>,
    relation_index: usize,
}

pub fn write_ground_truth(gt: &GroundTruthSet, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (frame_index, triplets) in gt.frames() {
        for (pair, relation_index) in triplets {
            let rec = GroundTruthOut {
                frame_index,
                pair_id: pair.pair_id(),
                pair_index: match pair {
                    PairKey::Slot(s) => Some(*s),
                    PairKey::Tracked(_) => None,
                },
                relation_index: *relation_index,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// `<person,relation,object>`, lower-cased, no spaces around commas.
pub fn triplet_to_text(pair: &PairPrediction, relation_index: usize, vocab: &RelationVocabulary) -> String {
    let relation = vocab.name(relation_index).unwrap_or("?");
    triplet_text(relation, &pair.object_class)
}

pub fn triplet_text(relation: &str, object: &str) -> String {
    format!("<person,{},{}>", relation.to_lowercase(), object.to_lowercase())
}

/// Writes a set as-is, one record per pair.
pub fn write_prediction_set(set: &VideoPredictionSet, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for frame in &set.frames {
        for pair in &frame.pairs {
            let rec = PredictionRecord {
                video_id: set.video_id.clone(),
                frame_index: frame.frame_index,
                frame_w: frame.frame_width,
                frame_h: frame.frame_height,
                pair_id: pair.pair_id,
                object_class: pair.object_class.clone(),
                human_box: pair.human_box,
                object_box: pair.object_box,
                scores: pair.scores.clone(),
                score_domain: set.score_domain,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Fused score vectors keyed by (frame, pair).
pub type FusedScores = BTreeMap<(usize, PairKey), Vec<f64>>;

/// Copy of `set` with every score vector replaced by its fused counterpart.
pub fn with_fused_scores(set: &VideoPredictionSet, fused: &FusedScores) -> Result<VideoPredictionSet, IngestError> {
    let mut out = set.clone();
    out.score_domain = ScoreDomain::Fused;
    for frame in &mut out.frames {
        let fi = frame.frame_index;
        let keys: Vec<PairKey> = frame.keyed_pairs().map(|(k, _)| k).collect();
        for (pair, key) in frame.pairs.iter_mut().zip(keys) {
            match fused.get(&(fi, key)) {
                Some(v) if v.len() == pair.scores.len() => pair.scores = v.clone(),
                _ => return Err(IngestError::IncompleteFusedScores { frame_index: fi, pair: key }),
            }
        }
    }
    Ok(out)
}

pub fn write_predictions(set: &VideoPredictionSet, fused: &FusedScores, path: &Path) -> Result<(), IngestError> {
    write_prediction_set(&with_fused_scores(set, fused)?, path)
}
