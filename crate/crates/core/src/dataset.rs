//! Instruction-tuning records and JSONL ingestion.
//!
//! Lines use the alpaca key names: `instruction`, optional `input`, `output`
//! (the response) and an optional `id`. Records without an id get `line-<k>`
//! where `k` is the 1-based line number.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of malformed lines above which ingestion aborts.
pub const MALFORMED_LINE_LIMIT: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub response: String,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            instruction: instruction.into(),
            input: None,
            response: response.into(),
        }
    }

    pub fn with_input(mut self, input: impl Into<String>) -> Self {
        self.input = Some(input.into());
        self
    }

    /// Instruction and optional input joined the way the probe sees them.
    pub fn prompt(&self) -> String {
        match &self.input {
            Some(input) if !input.is_empty() => format!("{}\n{}", self.instruction, input),
            _ => self.instruction.clone(),
        }
    }

    /// Serialises back to the alpaca-style line format.
    pub fn to_jsonl_line(&self) -> String {
        let line = AlpacaLine {
            id: Some(self.id.clone()),
            instruction: Some(self.instruction.clone()),
            input: self.input.clone(),
            output: Some(self.response.clone()),
        };
        serde_json::to_string(&line).expect("string-only record always serialises")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AlpacaLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default)]
    instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default)]
    output: Option<String>,
}

/// A record together with where it came from. `raw` holds the original line so
/// pruned outputs can be written back byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestedRecord {
    pub record: SampleRecord,
    pub line: usize,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<IngestedRecord>,
    /// Lines that were not JSON objects of the expected shape.
    pub malformed: Vec<LineIssue>,
    /// Well-formed lines dropped for content reasons (empty response, duplicate id).
    pub skipped: Vec<LineIssue>,
}

impl Dataset {
    pub fn samples(&self) -> Vec<SampleRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} non-empty lines are malformed (limit {limit:.0}%)", limit = MALFORMED_LINE_LIMIT * 100.0)]
    TooManyMalformedLines {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },
}

pub fn ingest_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dataset = parse_dataset(&text);
    let total = dataset.records.len() + dataset.malformed.len() + dataset.skipped.len();
    if dataset.malformed.len() as f64 > MALFORMED_LINE_LIMIT * total as f64 {
        return Err(DatasetError::TooManyMalformedLines {
            path: path.to_path_buf(),
            malformed: dataset.malformed.len(),
            total,
        });
    }
    for issue in &dataset.malformed {
        log::warn!("{}:{}: malformed line: {}", path.display(), issue.line, issue.reason);
    }
    Ok(dataset)
}

/// Parses JSONL text without applying the malformed-line threshold.
pub fn parse_dataset(text: &str) -> Dataset {
    let mut dataset = Dataset::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: AlpacaLine = match serde_json::from_str(raw) {
            Ok(p) => p,
            Err(e) => {
                dataset.malformed.push(LineIssue {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let (Some(instruction), Some(response)) = (parsed.instruction, parsed.output) else {
            dataset.malformed.push(LineIssue {
                line,
                reason: "missing `instruction` or `output`".into(),
            });
            continue;
        };
        if response.trim().is_empty() {
            dataset.skipped.push(LineIssue {
                line,
                reason: "empty output".into(),
            });
            continue;
        }
        let id = parsed.id.unwrap_or_else(|| format!("line-{line}"));
        if !seen.insert(id.clone()) {
            dataset.skipped.push(LineIssue {
                line,
                reason: format!("duplicate id `{id}`"),
            });
            continue;
        }
        dataset.records.push(IngestedRecord {
            record: SampleRecord {
                id,
                instruction,
                input: parsed.input,
                response,
            },
            line,
            raw: raw.to_string(),
        });
    }
    dataset
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assigns_line_ids() {
        let text = "{\"instruction\":\"a\",\"output\":\"b\"}\n{\"instruction\":\"c\",\"input\":\"x\",\"output\":\"d\"}\n";
        let ds = parse_dataset(text);
        let ids: Vec<_> = ds.records.iter().map(|r| r.record.id.as_str()).collect();
        assert_eq!(ids, ["line-1", "line-2"]);
        assert_eq!(ds.records[1].record.input.as_deref(), Some("x"));
        assert_eq!(ds.records[1].record.prompt(), "c\nx");
    }

    #[test]
    fn explicit_id_wins() {
        let ds = parse_dataset("{\"id\":\"q7\",\"instruction\":\"a\",\"output\":\"b\"}");
        assert_eq!(ds.records[0].record.id, "q7");
    }

    #[test]
    fn empty_output_is_skipped_not_fatal() {
        let text = "{\"instruction\":\"a\",\"output\":\"  \"}\n{\"instruction\":\"a\",\"output\":\"b\"}";
        let ds = parse_dataset(text);
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.skipped, vec![LineIssue { line: 1, reason: "empty output".into() }]);
        assert!(ds.malformed.is_empty());
    }

    #[test]
    fn one_bad_line_among_hundred() {
        let mut text = String::new();
        for i in 0..100 {
            text.push_str(&format!("{{\"instruction\":\"q{i}\",\"output\":\"r{i}\"}}\n"));
            if i == 41 {
                text.push_str("not json at all\n");
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, text).unwrap();
        let ds = ingest_dataset(&path).unwrap();
        assert_eq!(ds.records.len(), 100);
        assert_eq!(ds.malformed.len(), 1);
        assert_eq!(ds.malformed[0].line, 43);
    }

    #[test]
    fn too_many_malformed_lines_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{\"instruction\":\"a\",\"output\":\"b\"}\n{oops\n[1,2]\n").unwrap();
        let err = ingest_dataset(&path).unwrap_err();
        assert!(matches!(err, DatasetError::TooManyMalformedLines { malformed: 2, total: 3, .. }));
    }

    #[test]
    fn duplicate_ids_are_skipped() {
        let ds = parse_dataset(
            "{\"id\":\"a\",\"instruction\":\"x\",\"output\":\"y\"}\n{\"id\":\"a\",\"instruction\":\"x\",\"output\":\"z\"}",
        );
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.skipped.len(), 1);
    }

    #[test]
    fn raw_line_is_preserved() {
        let line = "{\"output\": \"b\",  \"instruction\":\"a\"}";
        let ds = parse_dataset(line);
        assert_eq!(ds.records[0].raw, line);
    }

    #[test]
    fn jsonl_line_round_trips() {
        let rec = SampleRecord::new("s1", "do it", "done").with_input("ctx");
        let ds = parse_dataset(&rec.to_jsonl_line());
        assert_eq!(ds.records[0].record, rec);
    }
}
