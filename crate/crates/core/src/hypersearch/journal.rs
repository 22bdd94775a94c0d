//! Append-only newline-delimited JSON log of search events.
//!
//! The journal carries no timestamps, so single-worker searches with equal
//! inputs produce byte-identical files.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::asha::AshaSchedule;
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::synthdata::MixtureSpec;
use crate::wgan::WganConfig;

pub const JOURNAL_SCHEMA: u32 = 1;
pub const JOURNAL_FILE: &str = "journal.ndjson";

/// First line of every journal: everything needed to resume the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema_version: u32,
    pub seed: u64,
    pub trial_budget: usize,
    pub schedule: AshaSchedule,
    pub space: SearchSpace,
    pub dataset: MixtureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Header(Header),
    Sampled {
        trial: usize,
        config: WganConfig,
    },
    Started {
        trial: usize,
        rung: usize,
        budget: u64,
    },
    Scored {
        trial: usize,
        rung: usize,
        budget: u64,
        score: f64,
    },
    Promoted {
        trial: usize,
        from_rung: usize,
        to_rung: usize,
    },
    Failed {
        trial: usize,
        rung: usize,
        budget: u64,
        reason: String,
    },
}

/// Appends events, one flushed line each.
#[derive(Debug)]
pub struct JournalWriter {
    path: PathBuf,
    file: File,
}

impl JournalWriter {
    /// Creates a new journal; fails if one already exists.
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Opens an existing journal for appending after truncating it to
    /// `valid_len` bytes (dropping a torn final line).
    pub fn append(path: &Path, valid_len: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.set_len(valid_len).map_err(|e| Error::io(path, e))?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Parsed journal contents.
#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub header: Header,
    /// Events after the header, in file order.
    pub events: Vec<Event>,
    /// Byte length of the complete lines.
    pub valid_len: u64,
    /// Whether an unterminated final line was dropped.
    pub torn_tail: bool,
}

/// Reads a journal. An unterminated last line is treated as an
/// interrupted write and dropped; any other unparsable line is an error
/// naming its 1-based line number.
pub fn read(path: &Path) -> Result<JournalContents> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (complete, torn_tail) = match text.rfind('\n') {
        Some(i) => (&text[..=i], i + 1 < text.len()),
        None => ("", !text.is_empty()),
    };
    let mut header = None;
    let mut events = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        let line_no = i + 1;
        let event: Event = serde_json::from_str(line).map_err(|e| Error::CorruptJournal {
            line: line_no,
            reason: e.to_string(),
        })?;
        match (line_no, event) {
            (1, Event::Header(h)) => {
                if h.schema_version != JOURNAL_SCHEMA {
                    return Err(Error::CorruptJournal {
                        line: 1,
                        reason: format!("unsupported schema version {}", h.schema_version),
                    });
                }
                header = Some(h);
            }
            (1, _) => {
                return Err(Error::CorruptJournal {
                    line: 1,
                    reason: "first line is not a header".into(),
                })
            }
            (_, Event::Header(_)) => {
                return Err(Error::CorruptJournal {
                    line: line_no,
                    reason: "duplicate header".into(),
                })
            }
            (_, e) => events.push(e),
        }
    }
    let header = header.ok_or(Error::CorruptJournal {
        line: 1,
        reason: "missing header".into(),
    })?;
    Ok(JournalContents {
        header,
        events,
        valid_len: complete.len() as u64,
        torn_tail,
    })
}
