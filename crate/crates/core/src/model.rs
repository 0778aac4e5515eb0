//! Domain types shared by every stage of the benchmark.
//!
//! All values are validated on construction (or right after deserialization)
//! and are immutable afterwards. Turn indices are 1-based everywhere.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-level relevance grade: 0 irrelevant, 1 partially relevant,
/// 2 provides useful context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Grade(u8);

impl Grade {
    pub const IRRELEVANT: Grade = Grade(0);
    pub const PARTIAL: Grade = Grade(1);
    pub const RELEVANT: Grade = Grade(2);
    pub const ALL: [Grade; 3] = [Grade(0), Grade(1), Grade(2)];

    pub fn new(value: u8) -> Result<Self> {
        if value <= 2 {
            Ok(Grade(value))
        } else {
            Err(Error::validation(format!("grade {value} outside {{0,1,2}}")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn gain(self) -> f64 {
        f64::from(self.0)
    }
}

impl TryFrom<u8> for Grade {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Grade::new(value)
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g.0
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One message of a conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(rename = "turn")]
    pub turn_index: u32,
    #[serde(rename = "author")]
    pub author_id: String,
    pub text: String,
}

impl Utterance {
    pub fn new(turn_index: u32, author_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let u = Utterance {
            turn_index,
            author_id: author_id.into(),
            text: text.into(),
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turn_index < 1 {
            return Err(Error::validation("utterance turn index must be >= 1"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::validation(format!(
                "utterance {} has empty text",
                self.turn_index
            )));
        }
        Ok(())
    }

    /// Length of the text in Unicode scalar values, the unit of evidence offsets.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Sparse label: a Wikipedia link mentioned in the thread, resolved to a corpus document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WikiLink {
    pub doc_id: String,
    #[serde(rename = "turn")]
    pub turn_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub category: String,
    pub title: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub wiki_links: Vec<WikiLink>,
    /// Identifier of the originating post; several chains may share one post.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
    /// Creation time of the root post in epoch seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<i64>,
    /// Score of the root post.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<i64>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::validation(format!(
                "conversation {} has no utterances",
                self.id
            )));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            u.validate()?;
            if u.turn_index as usize != i + 1 {
                return Err(Error::validation(format!(
                    "conversation {}: expected turn {} at position {}, found {}",
                    self.id,
                    i + 1,
                    i + 1,
                    u.turn_index
                )));
            }
        }
        let m = self.len() as u32;
        for link in &self.wiki_links {
            if link.turn_index < 1 || link.turn_index > m {
                return Err(Error::validation(format!(
                    "conversation {}: link to {} at turn {} outside 1..={m}",
                    self.id, link.doc_id, link.turn_index
                )));
            }
        }
        Ok(())
    }

    /// Number of turns `m`.
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterance(&self, turn: u32) -> Option<&Utterance> {
        if turn == 0 {
            return None;
        }
        self.utterances.get(turn as usize - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub first_sentence: String,
}

impl Document {
    /// Builds a document deriving `first_sentence` from `text`.
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let doc = Document {
            doc_id: doc_id.into(),
            title: title.into(),
            first_sentence: first_sentence(&text).to_string(),
            text,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.doc_id.is_empty() {
            return Err(Error::validation("document with empty doc_id"));
        }
        if self.title.trim().is_empty() {
            return Err(Error::validation(format!(
                "document {} has an empty title",
                self.doc_id
            )));
        }
        if !self.text.trim_start().starts_with(self.first_sentence.trim()) {
            return Err(Error::validation(format!(
                "document {}: first_sentence is not a prefix of text",
                self.doc_id
            )));
        }
        Ok(())
    }
}

/// First sentence of `text`: everything up to and including the first `.`, `!`
/// or `?` that is followed by whitespace (or ends the text), trimmed.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return &text[..i + c.len_utf8()],
                _ => {}
            }
        } else if c == '\n' {
            return text[..i].trim_end();
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrel {
    pub conversation_id: String,
    pub doc_id: String,
    pub grade: Grade,
    /// Earliest turn at which the document becomes relevant.
    pub ideal_turn: u32,
}

impl Qrel {
    pub fn new(
        conversation_id: impl Into<String>,
        doc_id: impl Into<String>,
        grade: u8,
        ideal_turn: u32,
    ) -> Result<Self> {
        let q = Qrel {
            conversation_id: conversation_id.into(),
            doc_id: doc_id.into(),
            grade: Grade::new(grade)?,
            ideal_turn,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ideal_turn < 1 {
            return Err(Error::validation("ideal_turn must be >= 1"));
        }
        check_token("conversation_id", &self.conversation_id)?;
        check_token("doc_id", &self.doc_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// A ranked list emitted at one conversation turn. An empty list means "wait".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRun {
    pub conversation_id: String,
    pub turn_index: u32,
    pub ranked: Vec<ScoredDoc>,
    pub run_tag: String,
}

impl TurnRun {
    pub fn new(
        conversation_id: impl Into<String>,
        turn_index: u32,
        ranked: Vec<ScoredDoc>,
        run_tag: impl Into<String>,
    ) -> Result<Self> {
        let r = TurnRun {
            conversation_id: conversation_id.into(),
            turn_index,
            ranked,
            run_tag: run_tag.into(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turn_index < 1 {
            return Err(Error::validation("run turn index must be >= 1"));
        }
        check_token("conversation_id", &self.conversation_id)?;
        check_token("run tag", &self.run_tag)?;
        let mut seen = HashSet::with_capacity(self.ranked.len());
        let mut prev = f64::INFINITY;
        for (rank, d) in self.ranked.iter().enumerate() {
            check_token("doc_id", &d.doc_id)?;
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::validation(format!(
                    "conversation {} turn {}: duplicate doc {} at rank {}",
                    self.conversation_id,
                    self.turn_index,
                    d.doc_id,
                    rank + 1
                )));
            }
            if d.score.is_nan() || d.score > prev {
                return Err(Error::validation(format!(
                    "conversation {} turn {}: score at rank {} increases",
                    self.conversation_id,
                    self.turn_index,
                    rank + 1
                )));
            }
            prev = d.score;
        }
        Ok(())
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|d| d.doc_id.as_str())
    }

    pub fn is_wait(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Graded judgments for one conversation, keyed by doc id.
pub type ConversationQrels = BTreeMap<String, QrelEntry>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrelEntry {
    pub grade: Grade,
    pub ideal_turn: u32,
}

/// A qrels set with unique (conversation, doc) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_conversation: BTreeMap<String, ConversationQrels>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a qrel, rejecting a second entry for the same pair.
    pub fn insert(&mut self, qrel: Qrel) -> Result<()> {
        qrel.validate()?;
        let entry = QrelEntry {
            grade: qrel.grade,
            ideal_turn: qrel.ideal_turn,
        };
        let per_conv = self.by_conversation.entry(qrel.conversation_id).or_default();
        if per_conv.contains_key(&qrel.doc_id) {
            return Err(Error::validation(format!(
                "duplicate qrel for doc {}",
                qrel.doc_id
            )));
        }
        per_conv.insert(qrel.doc_id, entry);
        Ok(())
    }

    pub fn from_qrels(qrels: impl IntoIterator<Item = Qrel>) -> Result<Self> {
        let mut set = Qrels::new();
        for q in qrels {
            set.insert(q)?;
        }
        Ok(set)
    }

    pub fn conversation(&self, conversation_id: &str) -> Option<&ConversationQrels> {
        self.by_conversation.get(conversation_id)
    }

    pub fn conversation_ids(&self) -> impl Iterator<Item = &str> {
        self.by_conversation.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_conversation.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All qrels ordered by conversation id, then doc id.
    pub fn iter(&self) -> impl Iterator<Item = Qrel> + '_ {
        self.by_conversation.iter().flat_map(|(conv, docs)| {
            docs.iter().map(move |(doc, e)| Qrel {
                conversation_id: conv.clone(),
                doc_id: doc.clone(),
                grade: e.grade,
                ideal_turn: e.ideal_turn,
            })
        })
    }
}

/// Character span (Unicode scalar offsets, end exclusive) inside one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvidenceSpan {
    #[serde(rename = "turn")]
    pub turn_index: u32,
    pub char_start: usize,
    pub char_end: usize,
}

/// One worker's label for one (conversation, document) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub worker_id: String,
    pub conversation_id: String,
    pub doc_id: String,
    pub label: Grade,
    #[serde(default)]
    pub evidence: Vec<EvidenceSpan>,
    pub summary: String,
}

pub const MIN_SUMMARY_WORDS: usize = 6;

/// A single field-level validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl Judgment {
    /// Checks the judgment against the conversation it refers to.
    pub fn validate(&self, conversation: &Conversation) -> std::result::Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        if self.conversation_id != conversation.id {
            errors.push(FieldError::new("conversation_id", "does not match conversation"));
        }
        let words = self.summary.split_whitespace().count();
        if words < MIN_SUMMARY_WORDS {
            errors.push(FieldError::new(
                "summary",
                format!("summary too short: {words} words, at least {MIN_SUMMARY_WORDS} required"),
            ));
        }
        if self.label >= Grade::PARTIAL && self.evidence.is_empty() {
            errors.push(FieldError::new(
                format!("judgments[{}].evidence", self.doc_id),
                "evidence is required for labels 1 and 2",
            ));
        }
        for (i, span) in self.evidence.iter().enumerate() {
            let field = format!("judgments[{}].evidence[{i}]", self.doc_id);
            match conversation.utterance(span.turn_index) {
                None => errors.push(FieldError::new(
                    field,
                    format!("turn {} outside 1..={}", span.turn_index, conversation.len()),
                )),
                Some(u) => {
                    if span.char_start >= span.char_end || span.char_end > u.char_len() {
                        errors.push(FieldError::new(
                            field,
                            format!(
                                "span {}..{} outside utterance bounds 0..{}",
                                span.char_start,
                                span.char_end,
                                u.char_len()
                            ),
                        ));
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Identifiers and tags end up as columns of whitespace-separated files.
pub(crate) fn check_token(what: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::validation(format!("{what} is empty")));
    }
    if value.chars().any(char::is_whitespace) {
        return Err(Error::validation(format!(
            "{what} {value:?} contains whitespace"
        )));
    }
    Ok(())
}
