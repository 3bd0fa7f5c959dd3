//! Prompt rendering for the three reasoning agents and the debate roles, and
//! parsing of model completions back into scores.
//!
//! Every agent prompt has the same layout: an instruction paragraph, an
//! `Examples:` block of in-context demonstrations, then a `Test:` block with
//! one `Input: ... Output:` line per test instance. The common-sense
//! instruction, its five demonstrations and the two debate preambles are
//! fixed texts; the spatial and temporal wording is our own reconstruction
//! in the same format.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("no test instances to render")]
    NoTests,
    #[error("transition {0} does not change the relation")]
    IdentityTransition(String),
    #[error("the judge needs a non-empty debate history")]
    EmptyHistory,
}

pub const TEST_HEADER: &str = "Test:";
pub const EXAMPLES_HEADER: &str = "Examples:";

pub const COMMON_SENSE_INSTRUCTION: &str = "You are an agent to give scores for all input examples based on their common sense rationality. Each input example is in the format <person, relation, object>. Your task is to score each input example based on the rationality of the relation between the person and the object. The output scores are between 0 and 1. Given an input example, you output the score. Please think step by step and then give the answer.";

pub const COMMON_SENSE_DEMONSTRATIONS: [(&str, &str); 5] = [
    ("<person,sit on,chair>", "1.0"),
    ("<person,sit on,table>", "0.6"),
    ("<person,hug,table>", "0.1"),
    ("<person,ride,elephant>", "0.7"),
    ("<person,ride,bicycle>", "1.0"),
];

pub const SPATIAL_AWARENESS_INSTRUCTION: &str = "You are an agent that decides whether a relation between a person and an object is spatial-aware. A relation is spatial-aware when it only holds for particular relative positions of the person and the object in the image, so that the two bounding boxes alone can confirm or refute it. Each input example is a relation name. Answer yes if the relation is spatial-aware and no otherwise.";

pub const SPATIAL_AWARENESS_DEMONSTRATIONS: [(&str, &str); 2] = [("ride", "yes"), ("look at", "no")];

pub const SPATIAL_SCORING_INSTRUCTION: &str = "You are an agent to give scores for all input examples based on their spatial rationality. Each input example is a triplet in the format <person,relation,object> followed by the pixel bounding boxes [x1,y1,x2,y2] of the person and of the object, where y grows downwards. Your task is to score whether the relation is rational given where the person and the object are. The output scores are between 0 and 1. Given an input example, you output the score.";

pub const SPATIAL_SCORING_DEMONSTRATIONS: [(&str, &str); 3] = [
    ("<person,ride,bicycle> person box [200,60,320,300], object box [190,200,340,380]", "1.0"),
    ("<person,ride,bicycle> person box [20,60,140,300], object box [300,200,450,380]", "0.1"),
    ("<person,sit on,chair> person box [100,50,200,260], object box [90,180,210,330]", "1.0"),
];

pub const TEMPORAL_INSTRUCTION: &str = "You are an agent to give scores for changes of a relation between a person and an object across two consecutive video frames. Each input example shows the triplet <person,relation,object> at frame i and the triplet predicted for the same person and object at frame i+1. Your task is to score whether this change is reasonable given how people act over a fraction of a second. The output scores are between 0 and 1. Given an input example, you output the score.";

pub const TEMPORAL_DEMONSTRATIONS: [(&str, &str); 3] = [
    ("frame i: <person,hold,cup>, frame i+1: <person,drink from,cup>", "1.0"),
    ("frame i: <person,sit on,sofa>, frame i+1: <person,lie on,sofa>", "0.8"),
    ("frame i: <person,drink from,cup>, frame i+1: <person,kick,cup>", "0.1"),
];

pub const DEBATER_PREAMBLE: &str = "You are a debater among a panel of agents, each of whom will give their responses to the posed question in a debate setting. You do not need to fully agree with each other's perspectives, as our objective is to discuss and find the most reasonable answer. Please share your opinions in brief.";

pub const JUDGE_PREAMBLE: &str = "You are a moderator. There will be three debaters involved in discussing a question. They will present their answers and discuss their perspectives on the correct answer. At the end of the debate, you will be responsible for deciding which answer is the most reasonable one based on the debate content.";

/// Instruction, demonstrations and test instances of one agent call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub instruction: String,
    pub demonstrations: Vec<(String, String)>,
    pub tests: Vec<String>,
}

impl PromptBundle {
    fn new(instruction: &str, demos: &[(&str, &str)], tests: Vec<String>) -> Result<Self, PromptError> {
        if tests.is_empty() {
            return Err(PromptError::NoTests);
        }
        Ok(Self {
            instruction: instruction.to_string(),
            demonstrations: demos.iter().map(|(i, o)| (i.to_string(), o.to_string())).collect(),
            tests,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction);
        out.push_str("\n\n");
        out.push_str(EXAMPLES_HEADER);
        out.push('\n');
        for (input, output) in &self.demonstrations {
            out.push_str(&format!("Input:{input} Output: {output}\n"));
        }
        out.push('\n');
        out.push_str(TEST_HEADER);
        out.push('\n');
        for test in &self.tests {
            out.push_str(&format!("Input: {test} Output:\n"));
        }
        out
    }
}

/// Test instances of a rendered prompt, in order. Empty when the prompt has
/// no `Test:` block.
pub fn test_items(prompt: &str) -> Vec<String> {
    let mut lines = prompt.lines();
    if !lines.any(|l| l.trim_end() == TEST_HEADER) {
        return Vec::new();
    }
    lines
        .filter_map(|l| {
            let l = l.trim();
            let rest = l.strip_prefix("Input:")?;
            let item = rest.strip_suffix("Output:")?;
            Some(item.trim().to_string())
        })
        .collect()
}

pub fn render_common_sense(tests: &[String]) -> Result<PromptBundle, PromptError> {
    PromptBundle::new(COMMON_SENSE_INSTRUCTION, &COMMON_SENSE_DEMONSTRATIONS, tests.to_vec())
}

/// Payload of the two spatial queries.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialStage {
    /// Relation names to classify as spatial-aware or not.
    Awareness(Vec<String>),
    /// Items from [`spatial_item`].
    Scoring(Vec<String>),
}

pub fn render_spatial(stage: &SpatialStage) -> Result<PromptBundle, PromptError> {
    match stage {
        SpatialStage::Awareness(relations) => PromptBundle::new(
            SPATIAL_AWARENESS_INSTRUCTION,
            &SPATIAL_AWARENESS_DEMONSTRATIONS,
            relations.clone(),
        ),
        SpatialStage::Scoring(items) => {
            PromptBundle::new(SPATIAL_SCORING_INSTRUCTION, &SPATIAL_SCORING_DEMONSTRATIONS, items.clone())
        }
    }
}

/// `<person,ride,bicycle> person box [x1,y1,x2,y2], object box [x1,y1,x2,y2]`
pub fn spatial_item(triplet: &str, human_box: &crate::BoundingBox, object_box: &crate::BoundingBox) -> String {
    format!(
        "{triplet} person box {}, object box {}",
        human_box.to_pixel_string(),
        object_box.to_pixel_string()
    )
}

/// `frame i: <old>, frame i+1: <new>`
pub fn temporal_item(old: &str, new: &str) -> String {
    format!("frame i: {old}, frame i+1: {new}")
}

pub fn render_temporal(transitions: &[(String, String)]) -> Result<PromptBundle, PromptError> {
    let mut tests = Vec::with_capacity(transitions.len());
    for (old, new) in transitions {
        if old == new {
            return Err(PromptError::IdentityTransition(old.clone()));
        }
        tests.push(temporal_item(old, new));
    }
    PromptBundle::new(TEMPORAL_INSTRUCTION, &TEMPORAL_DEMONSTRATIONS, tests)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebateRole {
    Debater,
    Judge,
}

/// One entry of the debate history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub speaker: String,
    pub text: String,
}

pub fn render_debate_turn(role: DebateRole, question: &str, history: &[HistoryEntry]) -> Result<String, PromptError> {
    let preamble = match role {
        DebateRole::Debater => DEBATER_PREAMBLE,
        DebateRole::Judge => {
            if history.is_empty() {
                return Err(PromptError::EmptyHistory);
            }
            JUDGE_PREAMBLE
        }
    };
    let mut out = format!("{preamble}\n\nQuestion: {question}\n");
    if !history.is_empty() {
        out.push_str("\nDebate history:\n");
        for entry in history {
            out.push_str(&format!("[{}] {}\n", entry.speaker, entry.text));
        }
    }
    Ok(out)
}

/// Values within this distance outside [0,1] are clamped; anything further
/// is a parse failure.
pub const CLAMP_TOLERANCE: f64 = 0.05;

/// One score per test slot; `None` marks a slot that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScores(pub Vec<Option<f64>>);

impl ParsedScores {
    pub fn get(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied().flatten()
    }

    pub fn failures(&self) -> usize {
        self.0.iter().filter(|s| s.is_none()).count()
    }
}

static OUTPUT_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)output\s*:").unwrap());
static LEADING_NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^[\s*"'`]*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)"#).unwrap()
});

fn clamp_score(v: f64) -> Option<f64> {
    if !v.is_finite() || !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&v) {
        return None;
    }
    let c = v.clamp(0.0, 1.0);
    if c != v {
        tracing::warn!(raw = v, clamped = c, "score outside [0,1] clamped");
    }
    Some(c)
}

/// The k-th slot is the number directly after the k-th `Output:` marker.
/// Prose between markers is ignored; missing markers leave failures.
pub fn parse_score_output(raw: &str, n_tests: usize) -> ParsedScores {
    let markers: Vec<_> = OUTPUT_MARKER.find_iter(raw).collect();
    let mut slots = Vec::with_capacity(n_tests);
    for k in 0..n_tests {
        let value = markers.get(k).and_then(|m| {
            let end = markers.get(k + 1).map_or(raw.len(), |n| n.start());
            let segment = &raw[m.end()..end];
            let caps = LEADING_NUMBER.captures(segment)?;
            caps[1].parse::<f64>().ok().and_then(clamp_score)
        });
        slots.push(value);
    }
    ParsedScores(slots)
}

/// First standalone `yes` or `no` word, case-insensitive; `None` if neither
/// occurs.
pub fn parse_binary_output(raw: &str) -> Option<bool> {
    raw.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .find_map(|w| {
            if w.eq_ignore_ascii_case("yes") {
                Some(true)
            } else if w.eq_ignore_ascii_case("no") {
                Some(false)
            } else {
                None
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::BoundingBox;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn common_sense_bundle_carries_demonstrations() {
        let b = render_common_sense(&s(&["<person,hug,person>"])).unwrap();
        assert_eq!(b.instruction, COMMON_SENSE_INSTRUCTION);
        assert!(b
            .demonstrations
            .contains(&("<person,ride,bicycle>".to_string(), "1.0".to_string())));
        let text = b.render();
        assert!(text.contains("Input:<person,sit on,chair> Output: 1.0\n"));
        assert!(text.ends_with("Test:\nInput: <person,hug,person> Output:\n"));
    }

    #[test]
    fn tests_render_in_order() {
        let b = render_common_sense(&s(&["<person,hug,person>", "<person,hold,bicycle>"])).unwrap();
        let text = b.render();
        let a = text.find("Input: <person,hug,person> Output:").unwrap();
        let c = text.find("Input: <person,hold,bicycle> Output:").unwrap();
        assert!(a < c);
        assert_eq!(test_items(&text), s(&["<person,hug,person>", "<person,hold,bicycle>"]));
    }

    #[test]
    fn empty_tests_rejected() {
        assert_eq!(render_common_sense(&[]), Err(PromptError::NoTests));
        assert_eq!(render_temporal(&[]), Err(PromptError::NoTests));
    }

    #[test]
    fn spatial_awareness_prompt() {
        let b = render_spatial(&SpatialStage::Awareness(s(&["ride"]))).unwrap();
        let text = b.render();
        assert!(text.contains("Input:ride Output: yes"));
        assert!(text.contains("Input:look at Output: no"));
        assert_eq!(test_items(&text), s(&["ride"]));
    }

    #[test]
    fn spatial_scoring_line() {
        let item = spatial_item(
            "<person,ride,bike>",
            &BoundingBox::new(10.0, 10.0, 50.0, 100.0),
            &BoundingBox::new(12.0, 80.0, 55.0, 140.0),
        );
        assert_eq!(item, "<person,ride,bike> person box [10,10,50,100], object box [12,80,55,140]");
        let text = render_spatial(&SpatialStage::Scoring(vec![item.clone()])).unwrap().render();
        assert!(text.contains(&format!("Input: {item} Output:")));
    }

    #[test]
    fn temporal_prompt() {
        let b = render_temporal(&[("<person,ride,bike>".into(), "<person,carry,bike>".into())]).unwrap();
        assert_eq!(b.tests, s(&["frame i: <person,ride,bike>, frame i+1: <person,carry,bike>"]));
        assert!(matches!(
            render_temporal(&[("<a>".into(), "<a>".into())]),
            Err(PromptError::IdentityTransition(_))
        ));
        let two = render_temporal(&[
            ("<person,ride,bike>".into(), "<person,carry,bike>".into()),
            ("<person,hold,cup>".into(), "<person,drink from,cup>".into()),
        ])
        .unwrap();
        assert_eq!(two.tests.len(), 2);
        assert!(two.tests[1].contains("drink from"));
    }

    #[test]
    fn debate_turns() {
        let q = "How rational is <person,ride,bicycle>?";
        let empty = render_debate_turn(DebateRole::Debater, q, &[]).unwrap();
        assert_eq!(empty, format!("{DEBATER_PREAMBLE}\n\nQuestion: {q}\n"));

        let h1 = HistoryEntry { speaker: "alpha".into(), text: "Output: 0.9".into() };
        let one = render_debate_turn(DebateRole::Debater, q, std::slice::from_ref(&h1)).unwrap();
        assert!(one.find(q).unwrap() < one.find("[alpha] Output: 0.9").unwrap());

        let history: Vec<HistoryEntry> = (0..10)
            .map(|i| HistoryEntry { speaker: format!("s{i}"), text: format!("turn {i}") })
            .collect();
        let judge = render_debate_turn(DebateRole::Judge, q, &history).unwrap();
        assert!(judge.starts_with(JUDGE_PREAMBLE));
        for e in &history {
            assert!(judge.contains(&format!("[{}] {}", e.speaker, e.text)));
        }
        assert_eq!(render_debate_turn(DebateRole::Judge, q, &[]), Err(PromptError::EmptyHistory));
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score_output("Output: 0.7", 1), ParsedScores(vec![Some(0.7)]));
        assert_eq!(
            parse_score_output("reasoning... Output: 1.0 ... Output: 0.1", 2),
            ParsedScores(vec![Some(1.0), Some(0.1)])
        );
        assert_eq!(parse_score_output("I cannot answer", 1), ParsedScores(vec![None]));
        assert_eq!(parse_score_output("Output: 0.4", 3), ParsedScores(vec![Some(0.4), None, None]));
    }

    #[test]
    fn score_clamping() {
        assert_eq!(parse_score_output("Output: 1.00001", 1).get(0), Some(1.0));
        assert_eq!(parse_score_output("Output: -0.03", 1).get(0), Some(0.0));
        assert_eq!(parse_score_output("Output: 7", 1).get(0), None);
        assert_eq!(parse_score_output("Output: 1.2", 1).get(0), None);
    }

    #[test]
    fn number_must_follow_marker() {
        // a box coordinate on the next line must not be taken as the score
        let raw = "Output: unsure\nInput: <person,ride,bike> person box [10,10,50,100]";
        assert_eq!(parse_score_output(raw, 1).get(0), None);
        assert_eq!(parse_score_output("**Output:** 0.25", 1).get(0), Some(0.25));
        assert_eq!(parse_score_output("Output: **0.25**", 1).get(0), Some(0.25));
    }

    #[test]
    fn demonstrations_parse_back() {
        let ideal: String = COMMON_SENSE_DEMONSTRATIONS
            .iter()
            .map(|(i, o)| format!("Input:{i} Output: {o}\n"))
            .collect();
        let parsed = parse_score_output(&ideal, 5);
        let expected: Vec<Option<f64>> =
            COMMON_SENSE_DEMONSTRATIONS.iter().map(|(_, o)| Some(o.parse().unwrap())).collect();
        assert_eq!(parsed.0, expected);
    }

    #[test]
    fn binary_parsing() {
        assert_eq!(parse_binary_output("Yes, riding requires the person above"), Some(true));
        assert_eq!(parse_binary_output("no"), Some(false));
        assert_eq!(parse_binary_output("maybe"), None);
        assert_eq!(parse_binary_output("Let me think. Output: NO."), Some(false));
        assert_eq!(parse_binary_output("I know it"), None);
    }

    #[test]
    fn no_test_block_means_no_items() {
        assert!(test_items("Input: x Output:").is_empty());
    }

    proptest! {
        #[test]
        fn rendering_is_deterministic(tests in proptest::collection::vec("[a-z<>, ]{1,20}", 1..5)) {
            let a = render_common_sense(&tests).unwrap().render();
            let b = render_common_sense(&tests).unwrap().render();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn parsed_scores_in_unit_interval(v in -1.0f64..2.0, prose in "[a-z ]{0,30}") {
            let raw = format!("{prose} Output: {v}");
            if let Some(x) = parse_score_output(&raw, 1).get(0) {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
