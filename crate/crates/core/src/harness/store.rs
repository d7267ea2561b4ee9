//! Line-delimited score persistence with id-keyed resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::judge::{JudgeChoice, JudgeVerdict};
use crate::aggregate::ScoreBundle;
use crate::model::OutputMode;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path} was written under config {found}, current config is {expected}")]
    FingerprintMismatch { path: String, expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One line of a score file. Labels stay empty until a judge has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub mode: OutputMode,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub main_answer: Option<String>,
    #[serde(default)]
    pub scores: Option<ScoreBundle>,
    #[serde(default)]
    pub judge_choice: Option<JudgeChoice>,
    #[serde(default)]
    pub hallucinated: Option<bool>,
}

impl ScoreRecord {
    pub fn skipped(id: impl Into<String>, mode: OutputMode, reason: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            mode,
            skipped: true,
            reason: Some(reason.into()),
            main_answer: None,
            scores: None,
            judge_choice: None,
            hallucinated: None,
        }
    }

    pub fn set_label(&mut self, verdict: &JudgeVerdict) {
        self.judge_choice = Some(verdict.choice);
        self.hallucinated = Some(verdict.hallucinated);
    }

    pub fn is_labeled(&self) -> bool {
        self.hallucinated.is_some()
    }
}

/// Sidecar describing how a score file was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_fingerprint: String,
    pub mode: OutputMode,
    pub engine_version: String,
}

pub fn meta_path(scores: &Path) -> PathBuf {
    let mut name = scores.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn read_meta(scores: &Path) -> Result<Option<RunMeta>, StoreError> {
    let path = meta_path(scores);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Parse {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

pub fn write_meta(scores: &Path, meta: &RunMeta) -> Result<(), StoreError> {
    let path = meta_path(scores);
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Ids already persisted in `path`, for resuming.
///
/// A final line without a newline (or that fails to parse) is taken as an
/// interrupted write and truncated away. Corruption anywhere else is an
/// error.
pub fn recover_for_resume(path: &Path) -> Result<Vec<String>, StoreError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut ids = Vec::new();
    let mut good_len = 0usize;
    let mut start = 0usize;
    let mut line_no = 0usize;
    while start < bytes.len() {
        line_no += 1;
        let end = bytes[start..].iter().position(|b| *b == b'\n').map(|p| start + p);
        let slice = &bytes[start..end.unwrap_or(bytes.len())];
        let parsed = std::str::from_utf8(slice)
            .map_err(|e| e.to_string())
            .and_then(|s| {
                if s.trim().is_empty() {
                    Ok(None)
                } else {
                    serde_json::from_str::<ScoreRecord>(s).map(Some).map_err(|e| e.to_string())
                }
            });
        match (parsed, end) {
            (Ok(rec), Some(end)) => {
                ids.extend(rec.map(|r| r.id));
                good_len = end + 1;
                start = end + 1;
            }
            (Ok(_) | Err(_), None) => break,
            (Err(message), Some(_)) => {
                return Err(StoreError::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    message,
                })
            }
        }
    }
    if good_len < bytes.len() {
        tracing::warn!(path = %path.display(), dropped = bytes.len() - good_len, "truncating partial trailing line");
        let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        file.set_len(good_len as u64).map_err(io_err(path))?;
    }
    Ok(ids)
}

/// Appends records one flushed line at a time.
pub struct ScoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ScoreWriter {
    pub fn append(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, rec: &ScoreRecord) -> Result<(), StoreError> {
        let line = serde_json::to_string(rec).expect("score record serializes");
        let path = self.path.clone();
        writeln!(self.out, "{line}").map_err(io_err(&path))?;
        self.out.flush().map_err(io_err(&path))
    }
}

/// Rewrites a whole score file through a temporary sibling and a rename.
pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<(), StoreError> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut out = BufWriter::new(file);
        for rec in records {
            let line = serde_json::to_string(rec).expect("score record serializes");
            writeln!(out, "{line}").map_err(io_err(&tmp))?;
        }
        out.flush().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
