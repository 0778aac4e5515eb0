//! Thread-level quality filters and text cleaning.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;

use super::RawThread;
use crate::index::tokenize;

/// Why a thread was dropped. Rejection is a value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Nsfw,
    Media,
    ExternalLink(String),
    NonEnglish,
    Malformed(String),
}

impl Rejection {
    pub fn kind(&self) -> &'static str {
        match self {
            Rejection::Nsfw => "nsfw",
            Rejection::Media => "media",
            Rejection::ExternalLink(_) => "external_link",
            Rejection::NonEnglish => "non_english",
            Rejection::Malformed(_) => "malformed",
        }
    }
}

/// Decides whether a text is English.
pub trait LanguagePredicate: Sync {
    fn is_english(&self, text: &str) -> bool;
}

impl<F: Fn(&str) -> bool + Sync> LanguagePredicate for F {
    fn is_english(&self, text: &str) -> bool {
        self(text)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "an", "and", "are", "as", "at", "be", "because", "but", "by",
    "can", "do", "for", "from", "had", "has", "have", "he", "her", "his", "i", "if", "in", "is",
    "it", "just", "like", "me", "my", "no", "not", "of", "on", "one", "or", "our", "she", "so",
    "that", "the", "their", "there", "they", "this", "to", "was", "we", "were", "what", "when",
    "which", "who", "will", "with", "would", "you", "your",
];

/// ASCII-letter ratio plus English stopword hit rate.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicLanguageId {
    pub min_ascii_ratio: f64,
    pub min_stopword_rate: f64,
    /// Texts with fewer tokens skip the stopword test.
    pub min_tokens_for_stopwords: usize,
}

impl Default for HeuristicLanguageId {
    fn default() -> Self {
        HeuristicLanguageId {
            min_ascii_ratio: 0.9,
            min_stopword_rate: 0.1,
            min_tokens_for_stopwords: 8,
        }
    }
}

impl LanguagePredicate for HeuristicLanguageId {
    fn is_english(&self, text: &str) -> bool {
        let (letters, ascii) = text
            .chars()
            .filter(|c| c.is_alphabetic())
            .fold((0usize, 0usize), |(l, a), c| (l + 1, a + usize::from(c.is_ascii())));
        if letters > 0 && (ascii as f64) / (letters as f64) < self.min_ascii_ratio {
            return false;
        }
        let tokens = tokenize(text);
        if tokens.len() < self.min_tokens_for_stopwords {
            return true;
        }
        let stop: HashSet<&str> = STOPWORDS.iter().copied().collect();
        let hits = tokens.iter().filter(|t| stop.contains(t.as_str())).count();
        (hits as f64) / (tokens.len() as f64) >= self.min_stopword_rate
    }
}

/// A post or comment after cleaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanNode {
    pub id: String,
    pub parent: Option<String>,
    pub author: String,
    pub text: String,
    pub created_at: i64,
    /// Wikipedia titles linked from this node, in order of appearance.
    pub link_titles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredThread {
    pub post: CleanNode,
    pub title: String,
    pub category: String,
    pub score: i64,
    /// Kept comments in input order. Every parent is the post or a kept comment.
    pub comments: Vec<CleanNode>,
}

static MD_IMAGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\([^)]*\)").unwrap());
static HTML_MEDIA: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<\s*(img|video|iframe|embed|object|source)\b").unwrap());
static HTML_ANCHOR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)<a\s[^>]*href\s*=\s*["']([^"']+)["'][^>]*>(.*?)</a\s*>"#).unwrap()
});
static MD_LINK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[([^\]]*)\]\(\s*<?((?:https?://|www\.)[^\s)>]+)>?\s*\)").unwrap());
static BARE_URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\b(?:https?://|www\.)[^\s<>"'\]\[]+"#).unwrap());
static HTML_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]+>").unwrap());
static WIKI_URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:https?://)?(?:www\.|en\.|en\.m\.|m\.)?wikipedia\.org/wiki/([^?#]+)").unwrap()
});
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[ \t]+").unwrap());

const MEDIA_HOSTS: &[&str] = &[
    "i.redd.it", "v.redd.it", "imgur.com", "i.imgur.com", "youtube.com", "www.youtube.com",
    "youtu.be", "gfycat.com", "giphy.com", "streamable.com", "preview.redd.it",
];
const MEDIA_EXTENSIONS: &[&str] = &[
    ".jpg", ".jpeg", ".png", ".gif", ".gifv", ".webp", ".mp4", ".webm", ".mov", ".svg",
];

fn url_host(url: &str) -> String {
    let rest = url
        .split_once("://")
        .map_or(url, |(_, r)| r);
    rest.split(['/', '?', '#'])
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn is_media_url(url: &str) -> bool {
    let host = url_host(url);
    if MEDIA_HOSTS.iter().any(|h| host == *h || host.ends_with(&format!(".{h}"))) {
        return true;
    }
    let path = url.split(['?', '#']).next().unwrap_or_default().to_ascii_lowercase();
    MEDIA_EXTENSIONS.iter().any(|ext| path.ends_with(ext))
}

fn trim_url(url: &str) -> &str {
    url.trim_end_matches(['.', ',', ';', ':', '!', '?', ')'])
}

/// Title of an English Wikipedia article URL, percent-decoded, or `None`.
pub fn wikipedia_title(url: &str) -> Option<String> {
    let caps = WIKI_URL.captures(trim_url(url))?;
    let raw = caps.get(1)?.as_str().replace("\\_", "_");
    let title = percent_decode(&raw);
    let title = title.trim();
    (!title.is_empty()).then(|| title.to_string())
}

/// Decodes `%XX` escapes; invalid sequences are kept verbatim.
pub fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hi = (bytes[i + 1] as char).to_digit(16);
            let lo = (bytes[i + 2] as char).to_digit(16);
            if let (Some(hi), Some(lo)) = (hi, lo) {
                out.push((hi * 16 + lo) as u8);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn decode_entities(s: &str) -> String {
    static ENTITY: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[a-zA-Z]+);").unwrap());
    ENTITY
        .replace_all(s, |caps: &regex::Captures<'_>| {
            let name = &caps[1];
            let decoded = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
            } else if let Some(dec) = name.strip_prefix('#') {
                dec.parse().ok().and_then(char::from_u32)
            } else {
                match name {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" => Some('\''),
                    "nbsp" => Some(' '),
                    _ => None,
                }
            };
            decoded.map_or_else(|| caps[0].to_string(), |c| c.to_string())
        })
        .into_owned()
}

/// Result of cleaning one text field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedText {
    pub text: String,
    pub link_titles: Vec<String>,
}

/// Cleans one text: rejects media and non-Wikipedia links, removes link
/// markup (keeping anchor text), bare Wikipedia URLs and HTML formatting.
pub fn clean_text(raw: &str) -> Result<CleanedText, Rejection> {
    if MD_IMAGE.is_match(raw) || HTML_MEDIA.is_match(raw) {
        return Err(Rejection::Media);
    }
    let mut titles = Vec::new();
    let check_url = |url: &str, titles: &mut Vec<String>| -> Result<(), Rejection> {
        let url = trim_url(url);
        if is_media_url(url) {
            return Err(Rejection::Media);
        }
        match wikipedia_title(url) {
            Some(t) => {
                titles.push(t);
                Ok(())
            }
            None => Err(Rejection::ExternalLink(url.to_string())),
        }
    };

    let decoded = decode_entities(raw);

    // Anchors and markdown links keep their visible text.
    let mut failure = None;
    let step = HTML_ANCHOR.replace_all(&decoded, |caps: &regex::Captures<'_>| {
        if let Err(e) = check_url(&caps[1], &mut titles) {
            failure.get_or_insert(e);
        }
        caps[2].to_string()
    });
    let step = MD_LINK.replace_all(&step, |caps: &regex::Captures<'_>| {
        if let Err(e) = check_url(&caps[2], &mut titles) {
            failure.get_or_insert(e);
        }
        caps[1].to_string()
    });
    let step = BARE_URL.replace_all(&step, |caps: &regex::Captures<'_>| {
        if let Err(e) = check_url(&caps[0], &mut titles) {
            failure.get_or_insert(e);
        }
        String::new()
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let stripped = HTML_TAG.replace_all(&step, "");
    let text = stripped
        .lines()
        .map(|l| SPACES.replace_all(l.trim(), " ").into_owned())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(CleanedText {
        text,
        link_titles: titles,
    })
}

fn is_removed(text: &str) -> bool {
    let t = text.trim();
    t.is_empty() || t == "[deleted]" || t == "[removed]"
}

/// Checks that the comment forest hangs off the post without cycles.
fn check_tree(thread: &RawThread) -> Result<(), Rejection> {
    let mut parents: HashMap<&str, &str> = HashMap::new();
    for c in &thread.comments {
        if c.id == thread.post.id || parents.insert(&c.id, &c.parent).is_some() {
            return Err(Rejection::Malformed(format!("duplicate node id {}", c.id)));
        }
    }
    for c in &thread.comments {
        let mut cur = c.parent.as_str();
        let mut steps = 0;
        while cur != thread.post.id {
            cur = match parents.get(cur) {
                Some(p) => p,
                None => {
                    return Err(Rejection::Malformed(format!(
                        "comment {} has unknown parent {}",
                        c.id, cur
                    )))
                }
            };
            steps += 1;
            if steps > thread.comments.len() {
                return Err(Rejection::Malformed(format!("cycle through comment {}", c.id)));
            }
        }
    }
    Ok(())
}

/// Applies the thread filters and cleans every retained text.
///
/// Removed or empty comments are dropped together with their replies.
pub fn filter_thread(thread: &RawThread, lang: &dyn LanguagePredicate) -> Result<FilteredThread, Rejection> {
    check_tree(thread)?;
    if thread.post.nsfw {
        return Err(Rejection::Nsfw);
    }
    let title = clean_text(&thread.post.title)?;
    let body = clean_text(&thread.post.body)?;
    let mut cleaned = Vec::with_capacity(thread.comments.len());
    for c in &thread.comments {
        cleaned.push(clean_text(&c.body)?);
    }

    let mut all_text = String::new();
    for t in std::iter::once(&title).chain(std::iter::once(&body)).chain(cleaned.iter()) {
        all_text.push_str(&t.text);
        all_text.push('\n');
    }
    if !lang.is_english(&all_text) {
        return Err(Rejection::NonEnglish);
    }

    let mut post_links = title.link_titles;
    post_links.extend(body.link_titles);
    let post_text = if is_removed(&body.text) {
        title.text.clone()
    } else {
        body.text
    };
    if post_text.trim().is_empty() {
        return Err(Rejection::Malformed("post has neither title nor body text".into()));
    }
    let post = CleanNode {
        id: thread.post.id.clone(),
        parent: None,
        author: thread.post.author.clone(),
        text: post_text,
        created_at: thread.post.created_at,
        link_titles: post_links,
    };

    // Comments are not guaranteed to precede their replies, so resolve kept
    // status by walking up the ancestry.
    let by_id: HashMap<&str, usize> = thread
        .comments
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let keep: Vec<bool> = (0..thread.comments.len())
        .map(|i| {
            let mut cur = i;
            loop {
                if is_removed(&cleaned[cur].text) {
                    return false;
                }
                match by_id.get(thread.comments[cur].parent.as_str()) {
                    Some(&p) => cur = p,
                    None => return true,
                }
            }
        })
        .collect();

    let comments = thread
        .comments
        .iter()
        .zip(cleaned)
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((c, t), _)| CleanNode {
            id: c.id.clone(),
            parent: Some(c.parent.clone()),
            author: c.author.clone(),
            text: t.text,
            created_at: c.created_at,
            link_titles: t.link_titles,
        })
        .collect();

    Ok(FilteredThread {
        post,
        title: title.text,
        category: thread.post.subreddit.clone(),
        score: thread.post.score,
        comments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{RawComment, RawPost};

    pub(crate) fn thread(body: &str, comments: &[(&str, &str, &str)]) -> RawThread {
        RawThread {
            post: RawPost {
                id: "p".into(),
                subreddit: "history".into(),
                title: "What do you think about this topic".into(),
                body: body.into(),
                author: "op".into(),
                created_at: 1_600_000_000,
                score: 25,
                nsfw: false,
            },
            comments: comments
                .iter()
                .enumerate()
                .map(|(i, (id, parent, body))| RawComment {
                    id: id.to_string(),
                    parent: parent.to_string(),
                    author: format!("user{i}"),
                    body: body.to_string(),
                    created_at: 1_600_000_100 + i as i64,
                })
                .collect(),
        }
    }

    fn english() -> HeuristicLanguageId {
        HeuristicLanguageId::default()
    }

    #[test]
    fn nsfw_rejected() {
        let mut t = thread("This is the body of the post", &[]);
        t.post.nsfw = true;
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::Nsfw));
    }

    #[test]
    fn wikipedia_link_accepted_and_markup_removed() {
        let t = thread(
            "I was reading about [Einstein](https://en.wikipedia.org/wiki/Albert_Einstein) and it is great.",
            &[("c1", "p", "See also https://en.wikipedia.org/wiki/Theory_of_relativity for more")],
        );
        let f = filter_thread(&t, &english()).unwrap();
        assert_eq!(f.post.text, "I was reading about Einstein and it is great.");
        assert_eq!(f.post.link_titles, ["Albert_Einstein"]);
        assert!(!f.comments[0].text.contains("http"));
        assert!(!f.comments[0].text.contains("wikipedia"));
        assert_eq!(f.comments[0].link_titles, ["Theory_of_relativity"]);
    }

    #[test]
    fn image_embed_rejected() {
        let t = thread("Look at this ![pic](https://example.com/a.png)", &[]);
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::Media));
        let t = thread("Look at this https://i.imgur.com/abc", &[]);
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::Media));
        let t = thread("Look <img src=\"x\"> here", &[]);
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::Media));
    }

    #[test]
    fn external_link_rejected() {
        let t = thread("Source: https://www.nytimes.com/article", &[]);
        assert!(matches!(
            filter_thread(&t, &english()),
            Err(Rejection::ExternalLink(_))
        ));
        let t = thread("Source: https://de.wikipedia.org/wiki/Ulm", &[]);
        assert!(matches!(
            filter_thread(&t, &english()),
            Err(Rejection::ExternalLink(_))
        ));
    }

    #[test]
    fn html_is_stripped() {
        let c = clean_text("<p>Hello &amp; <b>welcome</b></p> <a href=\"https://en.wikipedia.org/wiki/Ulm\">Ulm</a>").unwrap();
        assert_eq!(c.text, "Hello & welcome Ulm");
        assert_eq!(c.link_titles, ["Ulm"]);
    }

    #[test]
    fn non_english_rejected() {
        let t = thread("Это очень интересная тема для обсуждения", &[]);
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::NonEnglish));
        let mut t = thread("Der Hund und die Katze sind zusammen im Garten gewesen heute", &[]);
        t.post.title = "Was denkt ihr darüber".into();
        assert_eq!(filter_thread(&t, &english()), Err(Rejection::NonEnglish));
        let always_no = |_: &str| false;
        let t = thread("This is English", &[]);
        assert_eq!(filter_thread(&t, &always_no), Err(Rejection::NonEnglish));
    }

    #[test]
    fn deleted_comments_drop_their_subtree() {
        let t = thread(
            "A body of text",
            &[("c1", "p", "[deleted]"), ("c2", "c1", "reply"), ("c3", "p", "kept")],
        );
        let f = filter_thread(&t, &english()).unwrap();
        let ids: Vec<_> = f.comments.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["c3"]);
    }

    #[test]
    fn malformed_trees_rejected() {
        let t = thread("body", &[("c1", "c2", "a"), ("c2", "c1", "b")]);
        assert!(matches!(filter_thread(&t, &english()), Err(Rejection::Malformed(_))));
        let t = thread("body", &[("c1", "nope", "a")]);
        assert!(matches!(filter_thread(&t, &english()), Err(Rejection::Malformed(_))));
    }

    #[test]
    fn wiki_title_decoding() {
        assert_eq!(
            wikipedia_title("https://en.wikipedia.org/wiki/Caf%C3%A9#History").as_deref(),
            Some("Café")
        );
        assert_eq!(
            wikipedia_title("https://en.m.wikipedia.org/wiki/Albert\\_Einstein").as_deref(),
            Some("Albert_Einstein")
        );
        assert_eq!(wikipedia_title("https://example.org/wiki/X"), None);
    }
}
