//! Line-delimited readers and writers for conversations, corpora, runs and qrels.
//!
//! Conversations and documents are JSON objects, one per line. Runs and qrels
//! are TREC-style whitespace separated text with an extra turn column:
//!
//! ```text
//! run.tsv    conv_id  turn  rank  doc_id  score  tag
//! qrels.tsv  conv_id  doc_id  grade  ideal_turn
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_token, Conversation, Document, Grade, Qrel, Qrels, ScoredDoc, TurnRun};

/// A malformed record in a line-delimited file. Streams continue past these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

/// Records that carry their own validation rules.
pub trait Record: DeserializeOwned {
    fn check(&self) -> Result<()>;
}

impl Record for Conversation {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Record for Document {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

/// Streaming JSONL reader. Blank lines are skipped; malformed lines are
/// yielded as [`LineError`]s with 1-based line numbers.
pub struct JsonlReader<T, R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    _marker: PhantomData<T>,
}

impl<T: Record, R: BufRead> JsonlReader<T, R> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            lines: reader.lines(),
            line_no: 0,
            _marker: PhantomData,
        }
    }
}

impl<T: Record, R: BufRead> Iterator for JsonlReader<T, R> {
    type Item = std::result::Result<T, LineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(LineError {
                        line: self.line_no,
                        reason: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<T>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| rec.check().map(|_| rec).map_err(|e| e.to_string()));
            return Some(parsed.map_err(|reason| LineError {
                line: self.line_no,
                reason,
            }));
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams records of any [`Record`] type.
pub fn read_records<T: Record>(path: &Path) -> Result<JsonlReader<T, BufReader<File>>> {
    Ok(JsonlReader::new(open(path)?))
}

pub fn read_conversations(path: &Path) -> Result<JsonlReader<Conversation, BufReader<File>>> {
    Ok(JsonlReader::new(open(path)?))
}

pub fn read_corpus(path: &Path) -> Result<JsonlReader<Document, BufReader<File>>> {
    Ok(JsonlReader::new(open(path)?))
}

/// Reads every record, failing on the first malformed line.
pub fn read_all<T: Record>(path: &Path) -> Result<Vec<T>> {
    let display = path.display().to_string();
    JsonlReader::<T, _>::new(open(path)?)
        .map(|r| {
            r.map_err(|e| Error::Parse {
                path: display.clone(),
                line: e.line,
                reason: e.reason,
            })
        })
        .collect()
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut w = create(path)?;
    write_jsonl_to(&mut w, records).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl_to<'a, T: Serialize + 'a, W: Write>(
    w: &mut W,
    records: impl IntoIterator<Item = &'a T>,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes run lines. Empty ("wait") turn runs produce no lines.
pub fn write_run_to<W: Write>(w: &mut W, runs: &[TurnRun]) -> Result<()> {
    let mut keys = HashSet::new();
    for run in runs {
        run.validate()?;
        if !keys.insert((&run.conversation_id, run.turn_index, &run.run_tag)) {
            return Err(Error::validation(format!(
                "two result lists for conversation {} turn {} tag {}",
                run.conversation_id, run.turn_index, run.run_tag
            )));
        }
    }
    let io_err = |e| Error::io("<run>", e);
    for run in runs {
        for (rank, d) in run.ranked.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                run.conversation_id,
                run.turn_index,
                rank + 1,
                d.doc_id,
                d.score,
                run.run_tag
            )
            .map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn write_run(runs: &[TurnRun], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_run_to(&mut w, runs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(
    source: &str,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        path: source.to_string(),
        line,
        reason: format!("invalid {name} {raw:?}"),
    })
}

struct RunGroup {
    key: (String, u32, String),
    first_line: usize,
    entries: Vec<(usize, String, f64, usize)>,
}

/// Parses a run, grouping lines by (conversation, turn, tag) in first-seen order.
pub fn read_run_from<R: BufRead>(reader: R, source: &str) -> Result<Vec<TurnRun>> {
    let mut groups: Vec<RunGroup> = Vec::new();
    let mut index: HashMap<(String, u32, String), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: line_no,
                reason: format!("expected 6 columns, found {}", fields.len()),
            });
        }
        let turn: u32 = parse_field(source, line_no, "turn", fields[1])?;
        let rank: usize = parse_field(source, line_no, "rank", fields[2])?;
        let score: f64 = parse_field(source, line_no, "score", fields[4])?;
        if turn < 1 || rank < 1 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: line_no,
                reason: "turn and rank are 1-based".into(),
            });
        }
        let key = (fields[0].to_string(), turn, fields[5].to_string());
        let gi = *index.entry(key.clone()).or_insert_with(|| {
            groups.push(RunGroup {
                key,
                first_line: line_no,
                entries: Vec::new(),
            });
            groups.len() - 1
        });
        groups[gi]
            .entries
            .push((rank, fields[3].to_string(), score, line_no));
    }

    let mut runs = Vec::with_capacity(groups.len());
    for mut g in groups {
        g.entries.sort_by_key(|e| (e.0, e.3));
        let mut seen = HashSet::new();
        for (expected, (rank, doc, _, line)) in g.entries.iter().enumerate() {
            if *rank != expected + 1 {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: *line,
                    reason: format!(
                        "rank gap or repeat in conversation {} turn {}: expected rank {}, found {}",
                        g.key.0,
                        g.key.1,
                        expected + 1,
                        rank
                    ),
                });
            }
            if !seen.insert(doc.as_str()) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: *line,
                    reason: format!(
                        "duplicate doc {doc} in conversation {} turn {}",
                        g.key.0, g.key.1
                    ),
                });
            }
        }
        let (conv, turn, tag) = g.key;
        let ranked = g
            .entries
            .into_iter()
            .map(|(_, doc, score, _)| ScoredDoc { doc_id: doc, score })
            .collect();
        let run = TurnRun {
            conversation_id: conv,
            turn_index: turn,
            ranked,
            run_tag: tag,
        };
        run.validate().map_err(|e| Error::Parse {
            path: source.to_string(),
            line: g.first_line,
            reason: e.to_string(),
        })?;
        runs.push(run);
    }
    Ok(runs)
}

pub fn read_run(path: &Path) -> Result<Vec<TurnRun>> {
    read_run_from(open(path)?, &path.display().to_string())
}

pub fn write_qrels_to<W: Write>(w: &mut W, qrels: &Qrels) -> std::io::Result<()> {
    for q in qrels.iter() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            q.conversation_id, q.doc_id, q.grade, q.ideal_turn
        )?;
    }
    Ok(())
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_qrels_to(&mut w, qrels).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_qrels_from<R: BufRead>(reader: R, source: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at_line = |reason: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(at_line(format!("expected 4 columns, found {}", fields.len())));
        }
        let grade: u8 = parse_field(source, line_no, "grade", fields[2])?;
        let grade = Grade::new(grade).map_err(|e| at_line(e.to_string()))?;
        let ideal_turn: u32 = parse_field(source, line_no, "ideal_turn", fields[3])?;
        let qrel = Qrel {
            conversation_id: fields[0].to_string(),
            doc_id: fields[1].to_string(),
            grade,
            ideal_turn,
        };
        qrels.insert(qrel).map_err(|e| at_line(e.to_string()))?;
    }
    Ok(qrels)
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    read_qrels_from(open(path)?, &path.display().to_string())
}

/// Reads classifier scores: `conv_id  turn  score`.
pub fn read_turn_scores(path: &Path) -> Result<HashMap<(String, u32), f64>> {
    let source = path.display().to_string();
    let mut scores = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: source,
                line: line_no,
                reason: format!("expected 3 columns, found {}", fields.len()),
            });
        }
        check_token("conversation_id", fields[0]).map_err(|e| Error::Parse {
            path: source.clone(),
            line: line_no,
            reason: e.to_string(),
        })?;
        let turn: u32 = parse_field(&source, line_no, "turn", fields[1])?;
        let score: f64 = parse_field(&source, line_no, "score", fields[2])?;
        scores.insert((fields[0].to_string(), turn), score);
    }
    Ok(scores)
}
