//! Prediction-log ingestion.
//!
//! A record file is line-delimited JSON. The first line is a header
//! `{"version": "v1"}`; every following non-blank line is one
//! [`PredictionRecord`]. The schema is closed: unknown fields are rejected.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordErrors, Result, Violation};
use crate::qa::{normalize_answer, KnowledgeSource, Question};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: String,
}

impl Default for Header {
    fn default() -> Self {
        Header {
            version: SCHEMA_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub source: KnowledgeSource,
    #[serde(default)]
    pub contexts: Vec<String>,
    pub answer: String,
    #[serde(default)]
    pub token_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_medium: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_overlap: Option<bool>,
}

impl PredictionRecord {
    pub fn to_question(&self) -> Question {
        Question {
            id: self.id.clone(),
            text: self.question.clone(),
            gold_answers: self.gold_answers.clone(),
            question_overlap: self.question_overlap,
        }
    }

    /// Field-level invariant checks; `line` is attached to each violation.
    pub fn violations(&self, line: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Violation {
                line,
                field: field.to_string(),
                message,
            })
        };
        if self.id.is_empty() {
            bad("id", "must be nonempty".into());
        }
        if self.gold_answers.is_empty() {
            bad("gold_answers", "must list at least one answer".into());
        }
        for (i, g) in self.gold_answers.iter().enumerate() {
            if normalize_answer(g).is_empty() {
                bad("gold_answers", format!("entry {i} is empty after normalization"));
            }
        }
        for (i, p) in self.token_probs.iter().enumerate() {
            if !(*p > 0.0 && *p <= 1.0) {
                bad("token_probs", format!("entry {i} = {p} outside (0, 1]"));
            }
        }
        for (name, v) in [("p_true", self.p_true), ("p_high", self.p_high), ("p_medium", self.p_medium)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    bad(name, format!("{v} outside [0, 1]"));
                }
            }
        }
        if let (Some(h), Some(m)) = (self.p_high, self.p_medium) {
            if h + m > 1.0 + 1e-9 {
                bad("p_medium", format!("p_high + p_medium = {} exceeds 1", h + m));
            }
        }
        if matches!(&self.samples, Some(s) if s.is_empty()) {
            bad("samples", "must be nonempty when present".into());
        }
        out
    }
}

/// Field name mentioned in a serde error message, if any.
fn serde_field(msg: &str) -> String {
    for marker in ["unknown field `", "missing field `", "duplicate field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<record>".to_string()
}

/// Parses and validates a whole record file, collecting every violation.
pub fn parse_records(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut violations = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        None => violations.push(Violation {
            line: 1,
            field: "version".into(),
            message: "missing header line".into(),
        }),
        Some((n, line)) => match serde_json::from_str::<Header>(line) {
            Ok(h) if h.version == SCHEMA_VERSION => {}
            Ok(h) => violations.push(Violation {
                line: n,
                field: "version".into(),
                message: format!("unsupported schema version {:?}", h.version),
            }),
            Err(e) => violations.push(Violation {
                line: n,
                field: "version".into(),
                message: format!("bad header: {e}"),
            }),
        },
    }
    let mut records = Vec::new();
    let mut seen: HashSet<(String, KnowledgeSource)> = HashSet::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionRecord>(line) {
            Ok(rec) => {
                violations.extend(rec.violations(n));
                if !seen.insert((rec.id.clone(), rec.source)) {
                    violations.push(Violation {
                        line: n,
                        field: "id".into(),
                        message: format!("duplicate (id, source) = ({:?}, {})", rec.id, rec.source),
                    });
                }
                records.push(rec);
            }
            Err(e) => {
                let msg = e.to_string();
                violations.push(Violation {
                    line: n,
                    field: serde_field(&msg),
                    message: msg,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(records)
    } else {
        Err(Error::Records(RecordErrors(violations)))
    }
}

pub fn validate_and_load(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

/// Serializes records with the header line, one record per line, LF endings.
pub fn write_records(records: &[PredictionRecord]) -> Result<String> {
    let mut out = serde_json::to_string(&Header::default())?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Pairing<'a> {
    /// (document, qa_history) records sharing an id, ordered by id.
    pub pairs: Vec<(&'a PredictionRecord, &'a PredictionRecord)>,
    /// Records without a counterpart, ordered by (id, source).
    pub unpaired: Vec<&'a PredictionRecord>,
}

pub fn pair_records(records: &[PredictionRecord]) -> Pairing<'_> {
    let mut by_id: BTreeMap<&str, [Option<&PredictionRecord>; 2]> = BTreeMap::new();
    for r in records {
        let slot = match r.source {
            KnowledgeSource::Document => 0,
            KnowledgeSource::QaHistory => 1,
        };
        by_id.entry(r.id.as_str()).or_default()[slot] = Some(r);
    }
    let mut pairing = Pairing::default();
    for (_, sides) in by_id {
        match sides {
            [Some(d), Some(q)] => pairing.pairs.push((d, q)),
            [Some(r), None] | [None, Some(r)] => pairing.unpaired.push(r),
            [None, None] => {}
        }
    }
    pairing
}
