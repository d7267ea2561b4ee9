use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::model::QueryRecord;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
}

/// Reads one JSON record per line. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<QueryRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.id.is_empty() || record.question.trim().is_empty() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "id and question must be non-empty".into(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}
