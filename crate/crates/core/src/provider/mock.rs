use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, ProviderError, ProviderSpec};
use crate::prompt::test_items;

/// Answer for anything no rule matches.
pub const DEFAULT_MOCK_RESPONSE: &str = "Output: 0.5";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    /// Test item is exactly this triplet text; in a prompt without a test
    /// block, the prompt contains it.
    ExactTriplet,
    /// Test item is exactly this relation name (the spatial-awareness query).
    RelationName,
    /// Test item (or the whole prompt) contains the key.
    ContainsSubstring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher_kind: MatcherKind,
    pub key: String,
    pub response: String,
}

impl MockRule {
    pub fn new(matcher_kind: MatcherKind, key: impl Into<String>, response: impl Into<String>) -> Self {
        Self { matcher_kind, key: key.into(), response: response.into() }
    }

    fn matches_item(&self, item: &str) -> bool {
        match self.matcher_kind {
            MatcherKind::ExactTriplet | MatcherKind::RelationName => item == self.key,
            MatcherKind::ContainsSubstring => item.contains(&self.key),
        }
    }

    fn matches_prompt(&self, prompt: &str) -> bool {
        match self.matcher_kind {
            MatcherKind::ExactTriplet | MatcherKind::ContainsSubstring => prompt.contains(&self.key),
            MatcherKind::RelationName => prompt.trim() == self.key,
        }
    }
}

/// Ordered rules; the first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleTable {
    pub rules: Vec<MockRule>,
}

impl RuleTable {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self { rules }
    }

    /// One JSON record per line:
    /// `{"matcher_kind":"exact_triplet","key":"<person,hug,table>","response":"Output: 0.1"}`
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(line)
                .map_err(|e| ProviderError::RuleTable { line: i + 1, message: e.to_string() })?;
            if rule.key.is_empty() {
                return Err(ProviderError::RuleTable { line: i + 1, message: "empty key".into() });
            }
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.rules
            .iter()
            .map(|r| serde_json::to_string(r).expect("rule serializes") + "\n")
            .collect()
    }

    fn item_answer(&self, item: &str) -> String {
        let response = self
            .rules
            .iter()
            .find(|r| r.matches_item(item))
            .map_or(DEFAULT_MOCK_RESPONSE, |r| r.response.as_str());
        if response.to_ascii_lowercase().contains("output:") {
            response.to_string()
        } else {
            format!("Output: {response}")
        }
    }

    /// Deterministic answer to `prompt`. Prompts with a test block get one
    /// answer line per test item; other prompts are matched as a whole.
    pub fn respond(&self, prompt: &str) -> String {
        let items = test_items(prompt);
        if items.is_empty() {
            return self
                .rules
                .iter()
                .find(|r| r.matches_prompt(prompt))
                .map_or(DEFAULT_MOCK_RESPONSE, |r| r.response.as_str())
                .to_string();
        }
        items.iter().map(|i| self.item_answer(i)).collect::<Vec<_>>().join("\n")
    }
}

/// Offline backend answering from a [`RuleTable`].
pub struct MockBackend {
    table: RuleTable,
}

impl MockBackend {
    pub fn new(table: RuleTable) -> Self {
        Self { table }
    }
}

impl Backend for MockBackend {
    fn call(&self, _: &ProviderSpec, req: &CompletionRequest) -> Result<String, ProviderError> {
        Ok(self.table.respond(&req.prompt))
    }
}
