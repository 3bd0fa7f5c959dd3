//! Recall@K under the semi-constraint rule and ablation tables.
//!
//! Per pair, every relation scoring strictly above the threshold is a
//! positive prediction. A frame's positives are ranked by score (ties: lower
//! pair key, then lower relation index) and the top K are matched against
//! the frame's ground truth. Dataset recall is the unweighted mean over
//! frames that have ground truth; frames without ground truth are skipped.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Components, FramePrediction, GroundTruthSet, PairKey, VideoPredictionSet};
use crate::Scalar;

pub const DEFAULT_KS: [usize; 3] = [10, 20, 50];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("frame has no ground truth")]
    NoGroundTruth,
    #[error("no frame has ground truth")]
    EmptyGroundTruth,
    #[error("K must be at least 1")]
    ZeroK,
}

/// One above-threshold prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive<T> {
    pub pair: PairKey,
    pub relation: usize,
    pub score: T,
}

/// Score descending, then pair key, then relation index.
pub fn rank_order<T: Scalar>(a: &Positive<T>, b: &Positive<T>) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.pair.cmp(&b.pair))
        .then(a.relation.cmp(&b.relation))
}

/// Semi-constraint positives of one frame, in rank order.
pub fn frame_positives<T: Scalar>(frame: &FramePrediction, threshold: T) -> Vec<Positive<T>> {
    let mut out: Vec<Positive<T>> = frame
        .keyed_pairs()
        .flat_map(|(pair, p)| {
            p.scores.iter().enumerate().filter_map(move |(relation, &s)| {
                let score = T::of(s);
                (score > threshold).then_some(Positive { pair, relation, score })
            })
        })
        .collect();
    out.sort_by(rank_order);
    out
}

/// Fraction of `gt` found among the top `k` of `positives`.
pub fn recall_at_k_frame<T: Scalar>(
    positives: &[Positive<T>],
    gt: &BTreeSet<(PairKey, usize)>,
    k: usize,
) -> Result<f64, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut ranked = positives.to_vec();
    ranked.sort_by(rank_order);
    let hits = ranked
        .iter()
        .take(k)
        .filter(|p| gt.contains(&(p.pair, p.relation)))
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean per-frame recall for each K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Fractions in [0,1], aligned with `ks`.
    pub recalls: Vec<f64>,
    pub frames_evaluated: usize,
}

impl RecallReport {
    /// Recall as a percentage rounded to two decimals.
    pub fn percent(&self, i: usize) -> f64 {
        (self.recalls[i] * 10_000.0).round() / 100.0
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# Recall@K, semi constraint, mean over {} frames with ground truth\n",
            self.frames_evaluated
        );
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(out, "R@{k:<4} {:>6.2}", self.percent(i));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let fields: Vec<String> = self
            .ks
            .iter()
            .enumerate()
            .map(|(i, k)| format!("\"R@{k}\":{:.2}", self.percent(i)))
            .collect();
        format!("{{{},\"frames\":{}}}", fields.join(","), self.frames_evaluated)
    }
}

pub fn recall_at_k_dataset(
    set: &VideoPredictionSet,
    gt: &GroundTruthSet,
    threshold: f64,
    ks: &[usize],
) -> Result<RecallReport, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let mut sums = vec![0.0; ks.len()];
    let mut frames = 0usize;
    for frame in &set.frames {
        let Some(truth) = gt.frame(frame.frame_index).filter(|t| !t.is_empty()) else {
            continue;
        };
        let positives = frame_positives(frame, threshold);
        for (sum, &k) in sums.iter_mut().zip(ks) {
            *sum += recall_at_k_frame(&positives, truth, k)?;
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    Ok(RecallReport {
        ks: ks.to_vec(),
        recalls: sums.into_iter().map(|s| s / frames as f64).collect(),
        frames_evaluated: frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    /// `None` for the unrefined baseline.
    pub components: Option<Components>,
    pub report: RecallReport,
}

/// Recall of the baseline and of each component combination.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        "-"
    }
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let ks = self.rows.first().map(|r| r.report.ks.clone()).unwrap_or_default();
        let mut out = String::from(
            "# Ablation, Recall@K (%), semi constraint; frames without ground truth excluded\n",
        );
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(3);
        let _ = write!(out, "{:<width$} {:>3} {:>3} {:>3} {:>3}", "row", "cs", "sp", "tm", "db");
        for k in &ks {
            let _ = write!(out, " {:>7}", format!("R@{k}"));
        }
        out.push('\n');
        for row in &self.rows {
            let c = row.components.unwrap_or(Components::NONE);
            let _ = write!(
                out,
                "{:<width$} {:>3} {:>3} {:>3} {:>3}",
                row.label,
                mark(c.common_sense),
                mark(c.spatial),
                mark(c.temporal),
                mark(c.debate)
            );
            for i in 0..row.report.ks.len() {
                let _ = write!(out, " {:>7.2}", row.report.percent(i));
            }
            out.push('\n');
        }
        out
    }

    /// One JSON record per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let c = row.components.unwrap_or(Components::NONE);
            let recalls: Vec<String> = row
                .report
                .ks
                .iter()
                .enumerate()
                .map(|(i, k)| format!("\"R@{k}\":{:.2}", row.report.percent(i)))
                .collect();
            let _ = writeln!(
                out,
                "{{\"row\":{},\"common_sense\":{},\"spatial\":{},\"temporal\":{},\"debate\":{},{}}}",
                serde_json::to_string(&row.label).expect("string serializes"),
                c.common_sense,
                c.spatial,
                c.temporal,
                c.debate,
                recalls.join(",")
            );
        }
        out
    }
}

/// Baseline row from the unrefined set, then one row per refined variant in
/// the given order.
pub fn ablation_report(
    baseline: &VideoPredictionSet,
    variants: &[(Components, VideoPredictionSet)],
    gt: &GroundTruthSet,
    threshold: f64,
    ks: &[usize],
) -> Result<AblationTable, EvalError> {
    let mut rows = vec![AblationRow {
        label: "baseline".into(),
        components: None,
        report: recall_at_k_dataset(baseline, gt, threshold, ks)?,
    }];
    for (components, set) in variants {
        rows.push(AblationRow {
            label: components.label(),
            components: Some(*components),
            report: recall_at_k_dataset(set, gt, threshold, ks)?,
        });
    }
    Ok(AblationTable { rows })
}
