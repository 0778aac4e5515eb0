//! Deterministic offline providers for tests and CI runs.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::prompt::PromptTemplates;
use super::provider::{ChatMessage, CompletionParams, EmbeddingProvider, LlmProvider, Role};
use crate::error::{Error, Result};
use crate::index::tokenize;

/// Bag-of-words feature hashing into a fixed number of dimensions.
///
/// Each lowercase token adds +1 or -1 to one dimension chosen by its SHA-256
/// digest; the result is scaled to unit length. Texts without tokens map to
/// the first basis vector.
#[derive(Debug)]
pub struct MockEmbedder {
    dimension: usize,
    model_id: String,
    calls: AtomicUsize,
    texts_embedded: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        MockEmbedder {
            dimension,
            model_id: format!("mock-hash-{dimension}"),
            calls: AtomicUsize::new(0),
            texts_embedded: AtomicUsize::new(0),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        for token in tokenize(text) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % self.dimension;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
        v
    }

    /// Number of `embed` calls made so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::SeqCst)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(256)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts_embedded.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

static CAPITALIZED_RUN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Z][\w'-]*(?:[ \t]+[A-Z][\w'-]*)*").unwrap());
static NUMBERED_OPTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(\d+)\s*[.)]\s*(.+?)\s*::").unwrap());

const COMMON_CAPITALIZED: &[&str] = &[
    "I", "A", "An", "The", "This", "That", "These", "Those", "It", "He", "She", "We", "They", "You",
    "My", "Our", "Your", "His", "Her", "Their", "If", "But", "And", "Or", "So", "Yes", "No", "What",
    "Why", "How", "When", "Where", "Who", "Which", "Is", "Are", "Was", "Do", "Does", "Did", "In",
    "On", "At", "Of", "For", "To", "With", "As", "Not", "Also", "Just", "There", "Here", "Well",
    "Oh", "Ok", "OK", "Lol", "Edit", "Thanks", "Maybe", "Actually", "Also", "Then", "Some", "All",
];

/// Rule-based stand-in for a chat model that understands the default
/// prompt templates.
///
/// Generation answers list every distinct capitalized phrase of the
/// conversation (leading function words stripped) in order of appearance.
/// Grounding answers pick the option whose title shares the most tokens
/// with the generated title, lowest number first on ties, or `0` when no
/// option shares a token.
#[derive(Debug, Clone)]
pub struct MockLlm {
    templates: PromptTemplates,
}

impl MockLlm {
    pub fn new(templates: PromptTemplates) -> Self {
        MockLlm { templates }
    }

    fn conversation_of<'a>(&self, user: &'a str) -> &'a str {
        let template = &self.templates.generation_user;
        let Some((prefix, suffix)) = template.split_once("{conversation}") else {
            return user;
        };
        let mut body = user.strip_prefix(prefix).unwrap_or(user);
        let fixed_suffix = suffix.split("{n}").next().unwrap_or("");
        if !fixed_suffix.is_empty() {
            if let Some(at) = body.rfind(fixed_suffix) {
                body = &body[..at];
            }
        }
        body
    }

    fn generate(&self, user: &str) -> String {
        let conversation = self.conversation_of(user);
        let mut seen = HashSet::new();
        let mut lines = Vec::new();
        for m in CAPITALIZED_RUN.find_iter(conversation) {
            let words: Vec<&str> = m
                .as_str()
                .split_whitespace()
                .skip_while(|w| COMMON_CAPITALIZED.contains(w))
                .collect();
            if words.is_empty() {
                continue;
            }
            let phrase = words.join(" ");
            if seen.insert(phrase.to_lowercase()) {
                lines.push(format!(
                    "{}. {phrase} :: {phrase} is mentioned in the conversation.",
                    lines.len() + 1
                ));
            }
        }
        lines.join("\n")
    }

    fn choose(&self, user: &str) -> String {
        let mut concept = None;
        let mut options = Vec::new();
        for line in user.lines() {
            if let Some(caps) = NUMBERED_OPTION.captures(line) {
                options.push(caps[2].to_string());
            } else if concept.is_none() {
                if let Some((title, _)) = line.split_once("::") {
                    concept = Some(title.trim().to_string());
                }
            }
        }
        let concept: HashSet<String> = tokenize(concept.as_deref().unwrap_or("")).into_iter().collect();
        let mut best = (0usize, 0usize);
        for (i, title) in options.iter().enumerate() {
            let shared = tokenize(title)
                .into_iter()
                .collect::<HashSet<_>>()
                .intersection(&concept)
                .count();
            if shared > best.0 {
                best = (shared, i + 1);
            }
        }
        best.1.to_string()
    }
}

impl Default for MockLlm {
    fn default() -> Self {
        MockLlm::new(PromptTemplates::default())
    }
}

impl LlmProvider for MockLlm {
    fn complete(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<String> {
        let system = messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str());
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| Error::Provider("mock llm received no user message".into()))?;
        match system {
            Some(s) if s == self.templates.generation_system => Ok(self.generate(user)),
            Some(s) if s == self.templates.grounding_system => Ok(self.choose(user)),
            _ => Err(Error::Provider("mock llm does not recognise the prompt".into())),
        }
    }
}

/// Chat provider backed by a closure, for scripted answers.
pub struct FnLlm<F>(pub F);

impl<F> LlmProvider for FnLlm<F>
where
    F: Fn(&[ChatMessage]) -> Result<String> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], _: &CompletionParams) -> Result<String> {
        (self.0)(messages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARAMS: CompletionParams = CompletionParams {
        temperature: 0.0,
        max_tokens: 64,
    };

    #[test]
    fn embedder_is_unit_and_deterministic() {
        let e = MockEmbedder::new(64);
        let a = e.vector("Albert Einstein physicist");
        let norm: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a, e.vector("albert einstein, PHYSICIST"));
        assert_eq!(e.vector("")[0], 1.0);
    }

    #[test]
    fn generation_lists_capitalized_phrases() {
        let t = PromptTemplates::default();
        let (system, user) = t.generation("Trip\nThe Eiffel Tower is in Paris.\nI loved Paris and the Louvre", 20);
        let out = MockLlm::new(t).complete(&[ChatMessage::system(system), ChatMessage::user(user)], &PARAMS).unwrap();
        let titles: Vec<String> = super::super::prompt::parse_candidates(&out).into_iter().map(|c| c.0).collect();
        assert_eq!(titles, ["Trip", "Eiffel Tower", "Paris", "Louvre"]);
    }

    #[test]
    fn grounding_picks_overlap() {
        let t = PromptTemplates::default();
        let (system, user) = t.grounding(
            "Eiffel Tower",
            "A tower.",
            &[("Paris", "Capital."), ("Eiffel Tower", "Lattice tower."), ("Tower Bridge", "Bridge.")],
        );
        let llm = MockLlm::new(t.clone());
        let msgs = [ChatMessage::system(system), ChatMessage::user(user)];
        assert_eq!(llm.complete(&msgs, &PARAMS).unwrap(), "2");
        let (system, user) = t.grounding("Mozart", "Composer.", &[("Paris", "Capital.")]);
        assert_eq!(llm.complete(&[ChatMessage::system(system), ChatMessage::user(user)], &PARAMS).unwrap(), "0");
    }
}
