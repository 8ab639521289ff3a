use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// How the answer is pulled out of generated text (and out of the
/// reference).
///
/// Written as `last-number`, `exact` or `regex:<pattern>`.
#[derive(Debug, Clone)]
pub enum ExtractionRule {
    /// The final integer or decimal literal, commas removed.
    LastNumber,
    /// The whole text, trimmed.
    Exact,
    /// The first capture group of the first match (the whole match if the
    /// pattern has no groups).
    Regex(Regex),
}

impl PartialEq for ExtractionRule {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl fmt::Display for ExtractionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LastNumber => f.write_str("last-number"),
            Self::Exact => f.write_str("exact"),
            Self::Regex(r) => write!(f, "regex:{}", r.as_str()),
        }
    }
}

impl FromStr for ExtractionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last-number" => Ok(Self::LastNumber),
            "exact" => Ok(Self::Exact),
            _ => match s.strip_prefix("regex:") {
                Some(pattern) => Regex::new(pattern).map(Self::Regex).map_err(|e| e.to_string()),
                None => Err(format!("unknown extraction rule `{s}`")),
            },
        }
    }
}

impl Serialize for ExtractionRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExtractionRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prompt: String,
    pub reference: String,
    pub extraction: ExtractionRule,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record `{id}` has an empty prompt")]
    EmptyPrompt { line: usize, id: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

/// Reads a JSON-Lines dataset; blank lines are ignored.
pub fn load_dataset(path: &Path) -> Result<Vec<EvalRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<EvalRecord>, DatasetError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(raw).map_err(|e| DatasetError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if record.prompt.trim().is_empty() {
            return Err(DatasetError::EmptyPrompt { line, id: record.id });
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

/// One JSON object per line.
pub fn to_jsonl(records: &[EvalRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#####"{"id": "a", "prompt": "What is 2 + 2?", "reference": "#### 4", "extraction": "last-number"}
{"id": "b", "prompt": "Say yes.", "reference": "Yes", "extraction": "exact"}

{"id": "c", "prompt": "Total?", "reference": "#### 1,234", "extraction": "regex:####\\s*([\\d,]+)"}
"#####;

    #[test]
    fn empty_text_gives_no_records() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn fixture_round_trips() {
        let records = parse_dataset(FIXTURE).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].id, "a");
        assert_eq!(records[1].extraction, ExtractionRule::Exact);
        assert_eq!(records[2].extraction.to_string(), r"regex:####\s*([\d,]+)");
        assert_eq!(parse_dataset(&to_jsonl(&records)).unwrap(), records);
    }

    #[test]
    fn duplicate_id_named() {
        let text = r#"{"id": "q1", "prompt": "p", "reference": "1", "extraction": "exact"}
{"id": "q1", "prompt": "p2", "reference": "2", "extraction": "exact"}"#;
        let err = parse_dataset(text).unwrap_err();
        assert!(matches!(&err, DatasetError::DuplicateId { line: 2, id } if id == "q1"));
        assert!(err.to_string().contains("q1"));
    }

    #[test]
    fn malformed_line_numbered() {
        let text = "{\"id\": \"a\", \"prompt\": \"p\", \"reference\": \"1\", \"extraction\": \"exact\"}\n{not json";
        assert!(matches!(
            parse_dataset(text),
            Err(DatasetError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn bad_rules_and_prompts_rejected() {
        let unknown = r#"{"id": "a", "prompt": "p", "reference": "1", "extraction": "first-number"}"#;
        let err = parse_dataset(unknown).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("first-number"), "{err}");
        let bad_regex = r#"{"id": "a", "prompt": "p", "reference": "1", "extraction": "regex:("}"#;
        assert!(parse_dataset(bad_regex).is_err());
        let empty = r#"{"id": "a", "prompt": "  ", "reference": "1", "extraction": "exact"}"#;
        assert!(matches!(parse_dataset(empty), Err(DatasetError::EmptyPrompt { .. })));
    }
}
