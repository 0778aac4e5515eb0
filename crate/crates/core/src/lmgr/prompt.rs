//! Prompt templates and response parsers.
//!
//! Generation responses are expected as one candidate per line:
//!
//! ```text
//! 1. Albert Einstein :: German-born theoretical physicist.
//! ```

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Editable prompt templates.
///
/// Generation templates may use `{conversation}` and `{n}`; grounding
/// templates may use `{title}`, `{description}` and `{options}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub generation_system: String,
    pub generation_user: String,
    pub grounding_system: String,
    pub grounding_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generation_system: "You suggest Wikipedia articles that add useful context to an ongoing \
                                conversation between several people."
                .into(),
            generation_user: "Conversation:\n{conversation}\n\n\
                              List up to {n} Wikipedia articles that would be useful to the participants \
                              of this conversation. Write exactly one article per line in the format\n\
                              <number>. <article title> :: <one-sentence description>\n\
                              Do not write anything else."
                .into(),
            grounding_system: "You link generated concepts to the Wikipedia article that describes the \
                               same concept."
                .into(),
            grounding_user: "Generated concept:\n{title} :: {description}\n\n\
                             Candidate Wikipedia articles:\n{options}\n0. None of the above\n\n\
                             Which candidate describes the same concept as the generated one? \
                             Answer with the number only."
                .into(),
        }
    }
}

impl PromptTemplates {
    pub fn generation(&self, conversation: &str, n: usize) -> (String, String) {
        let user = self
            .generation_user
            .replace("{n}", &n.to_string())
            .replace("{conversation}", conversation);
        (self.generation_system.clone(), user)
    }

    /// `options` are `(title, first_sentence)` pairs, numbered from 1.
    pub fn grounding(&self, title: &str, description: &str, options: &[(&str, &str)]) -> (String, String) {
        let listed = options
            .iter()
            .enumerate()
            .map(|(i, (t, s))| format!("{}. {t} :: {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let user = self
            .grounding_user
            .replace("{title}", title)
            .replace("{description}", description)
            .replace("{options}", &listed);
        (self.grounding_system.clone(), user)
    }
}

static CANDIDATE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.+?)\s*::\s*(.+?)\s*$").unwrap());

/// Parses `N. Title :: description` lines, ignoring anything else.
/// Titles repeated (case-insensitively) keep their first occurrence.
pub fn parse_candidates(text: &str) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(caps) = CANDIDATE_LINE.captures(line) else {
            continue;
        };
        let title = caps[1].trim().to_string();
        let description = caps[2].trim().to_string();
        if title.is_empty() || description.is_empty() {
            continue;
        }
        if seen.insert(title.to_lowercase()) {
            out.push((title, description));
        }
    }
    out
}

/// Parsed answer of a grounding prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    /// 0-based option index.
    Option(usize),
    None,
    /// The answer could not be understood.
    Unparseable,
}

static FIRST_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// Reads the first number of the answer; 0 or the word "none" reject.
pub fn parse_choice(answer: &str, option_count: usize) -> Choice {
    if let Some(m) = FIRST_NUMBER.find(answer) {
        return match m.as_str().parse::<usize>() {
            Ok(0) => Choice::None,
            Ok(i) if i <= option_count => Choice::Option(i - 1),
            _ => Choice::Unparseable,
        };
    }
    if answer.to_lowercase().contains("none") {
        Choice::None
    } else {
        Choice::Unparseable
    }
}
