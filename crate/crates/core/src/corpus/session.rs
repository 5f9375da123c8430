use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One tokenised turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Utterance(pub Vec<String>);

impl Utterance {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Utterance(tokens.into_iter().map(Into::into).collect())
    }

    /// Splits on ASCII/Unicode whitespace.
    pub fn parse(text: &str) -> Self {
        Utterance(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn text(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for Utterance {
    type Target = [String];
    fn deref(&self) -> &[String] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Result of reading `sessions.jsonl`.
#[derive(Debug, Default)]
pub struct SessionFile {
    pub sessions: Vec<Session>,
    pub skipped: usize,
}

pub fn parse_sessions(reader: impl BufRead) -> Result<SessionFile> {
    let mut out = SessionFile::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Session>(&line) {
            Ok(s) if s.utterances.iter().flat_map(|u| u.iter()).all(|t| !t.is_empty() && !t.contains(char::is_whitespace)) => {
                out.sessions.push(s)
            }
            Ok(_) => {
                log::warn!("sessions line {}: token with embedded whitespace, skipped", lineno + 1);
                out.skipped += 1;
            }
            Err(e) => {
                log::warn!("sessions line {}: {e}, skipped", lineno + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

pub fn read_sessions(path: &Path) -> Result<SessionFile> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_sessions(BufReader::new(file))
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in sessions {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Default, PartialEq)]
pub struct FilterReport {
    pub sessions: Vec<Session>,
    pub dropped_short: usize,
    pub dropped_empty: usize,
}

/// Session-level filtering: a session must have more than two turns and no
/// empty utterance. Instance-level deduplication and the per-reply cap are
/// applied later by [`super::filter_instances`].
pub fn filter_sessions(raw: Vec<Session>) -> FilterReport {
    let mut report = FilterReport::default();
    for s in raw {
        if s.utterances.iter().any(|u| u.is_empty()) {
            report.dropped_empty += 1;
        } else if s.utterances.len() <= 2 {
            report.dropped_short += 1;
        } else {
            report.sessions.push(s);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(id: &str, turns: &[&str]) -> Session {
        Session {
            id: id.into(),
            utterances: turns.iter().map(|t| Utterance::parse(t)).collect(),
        }
    }

    #[test]
    fn two_turn_session_is_removed() {
        let report = filter_sessions(vec![session("a", &["hi", "hello"]), session("b", &["x", "y", "z"])]);
        assert_eq!(report.sessions.len(), 1);
        assert_eq!(report.sessions[0].id, "b");
        assert_eq!(report.dropped_short, 1);
    }

    #[test]
    fn empty_utterance_drops_session() {
        let mut s = session("a", &["x", "y", "z"]);
        s.utterances[1] = Utterance::default();
        let report = filter_sessions(vec![s]);
        assert!(report.sessions.is_empty());
        assert_eq!(report.dropped_empty, 1);
    }

    #[test]
    fn unreadable_lines_are_counted() {
        let text = r#"{"id":"1","utterances":[["a","b"],["c"],["d"]]}
not json
{"id":"2","utterances":[["a b"],["c"],["d"]]}
{"id":"3","utterances":[["e"],["f"],["g"]]}
"#;
        let file = parse_sessions(text.as_bytes()).unwrap();
        assert_eq!(file.sessions.len(), 2);
        assert_eq!(file.skipped, 2);
    }
}
