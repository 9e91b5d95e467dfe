//! QA-history passage construction, context assembly, and the verbalized
//! calibration output template.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa::{ContextSet, KnowledgeSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    /// 1-based retrieval rank.
    pub retrieval_rank: u32,
}

/// Renders retrieved QA pairs as one pseudo-passage.
///
/// The first line holds the target question with an empty answer slot
/// (`"Question: {q}, Answer: "`, trailing space kept); each following line is
/// one pair in ascending rank order. Lines are joined by `\n`.
pub fn build_qa_history_passage(target_question: &str, pairs: &[QaPair]) -> Result<String> {
    if pairs.is_empty() {
        return Err(Error::invalid("QA history needs at least one pair"));
    }
    let mut ranked: Vec<&QaPair> = pairs.iter().collect();
    ranked.sort_by_key(|p| p.retrieval_rank);
    if ranked[0].retrieval_rank == 0 {
        return Err(Error::invalid("retrieval ranks start at 1"));
    }
    if let Some(w) = ranked.windows(2).find(|w| w[0].retrieval_rank == w[1].retrieval_rank) {
        return Err(Error::invalid(format!(
            "duplicate retrieval rank {}",
            w[0].retrieval_rank
        )));
    }
    let mut lines = Vec::with_capacity(pairs.len() + 1);
    lines.push(format!("Question: {target_question}, Answer: "));
    lines.extend(
        ranked
            .iter()
            .map(|p| format!("Question: {}, Answer: {}", p.question, p.answer)),
    );
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    /// One context set per source; each is read independently and the
    /// answers are compared afterwards.
    #[default]
    Separate,
    /// Baseline: the QA-history passage is appended after the documents.
    Concat,
}

pub fn assemble_contexts(
    doc_passages: &[String],
    qa_passage: Option<&str>,
    mode: AssemblyMode,
) -> Result<Vec<ContextSet>> {
    if doc_passages.is_empty() && qa_passage.is_none() {
        return Err(Error::invalid("no document passages and no QA-history passage"));
    }
    Ok(match mode {
        AssemblyMode::Separate => {
            let mut sets = Vec::with_capacity(2);
            if !doc_passages.is_empty() {
                sets.push(ContextSet {
                    source: KnowledgeSource::Document,
                    passages: doc_passages.to_vec(),
                });
            }
            if let Some(qa) = qa_passage {
                sets.push(ContextSet {
                    source: KnowledgeSource::QaHistory,
                    passages: vec![qa.to_string()],
                });
            }
            sets
        }
        AssemblyMode::Concat => {
            let mut passages = doc_passages.to_vec();
            passages.extend(qa_passage.map(str::to_string));
            vec![ContextSet {
                source: KnowledgeSource::Document,
                passages,
            }]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConsistencyBucket {
    Low,
    Medium,
    High,
}

impl ConsistencyBucket {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyBucket::Low => "Low",
            ConsistencyBucket::Medium => "Medium",
            ConsistencyBucket::High => "High",
        }
    }
}

impl fmt::Display for ConsistencyBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConsistencyBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Low" => Ok(ConsistencyBucket::Low),
            "Medium" => Ok(ConsistencyBucket::Medium),
            "High" => Ok(ConsistencyBucket::High),
            other => Err(Error::invalid(format!("unknown consistency word {other:?}"))),
        }
    }
}

/// Verbalized supervision target: `Answer: {a} Answerable: {True|False} Consistency: {High|Medium|Low}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub answer_text: String,
    pub answerable: bool,
    pub consistency: ConsistencyBucket,
    pub rendered: String,
}

const ANSWER_FIELD: &str = "Answer: ";
const ANSWERABLE_FIELD: &str = " Answerable: ";
const CONSISTENCY_FIELD: &str = " Consistency: ";

fn answerable_word(answerable: bool) -> &'static str {
    if answerable {
        "True"
    } else {
        "False"
    }
}

pub fn render_calibration_target(
    answer: &str,
    answerable: bool,
    consistency: ConsistencyBucket,
) -> CalibrationTarget {
    let rendered = format!(
        "{ANSWER_FIELD}{answer}{ANSWERABLE_FIELD}{}{CONSISTENCY_FIELD}{}",
        answerable_word(answerable),
        consistency
    );
    CalibrationTarget {
        answer_text: answer.to_string(),
        answerable,
        consistency,
        rendered,
    }
}

/// Parses a rendered template. Field boundaries are the last occurrences of
/// the delimiters, so answers may themselves contain delimiter text.
pub fn parse_calibration_target(text: &str) -> Result<CalibrationTarget> {
    let malformed = || Error::invalid(format!("malformed calibration target {text:?}"));
    let body = text.strip_prefix(ANSWER_FIELD).ok_or_else(malformed)?;
    let c = body.rfind(CONSISTENCY_FIELD).ok_or_else(malformed)?;
    let consistency: ConsistencyBucket = body[c + CONSISTENCY_FIELD.len()..].parse()?;
    let head = &body[..c];
    let a = head.rfind(ANSWERABLE_FIELD).ok_or_else(malformed)?;
    let answerable = match &head[a + ANSWERABLE_FIELD.len()..] {
        "True" => true,
        "False" => false,
        _ => return Err(malformed()),
    };
    Ok(CalibrationTarget {
        answer_text: head[..a].to_string(),
        answerable,
        consistency,
        rendered: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(q: &str, a: &str, rank: u32) -> QaPair {
        QaPair {
            question: q.into(),
            answer: a.into(),
            retrieval_rank: rank,
        }
    }

    #[test]
    fn passage_matches_template() {
        let out = build_qa_history_passage("who won X", &[pair("q1", "a1", 1)]).unwrap();
        assert_eq!(out, "Question: who won X, Answer: \nQuestion: q1, Answer: a1");
    }

    #[test]
    fn passage_line_count_and_order() {
        let pairs: Vec<QaPair> = (1..=50).rev().map(|r| pair(&format!("q{r}"), &format!("a{r}"), r)).collect();
        let out = build_qa_history_passage("t", &pairs).unwrap();
        let lines: Vec<&str> = out.split('\n').collect();
        assert_eq!(lines.len(), 51);
        assert_eq!(lines[0], "Question: t, Answer: ");
        assert_eq!(lines[1], "Question: q1, Answer: a1");
        assert_eq!(lines[50], "Question: q50, Answer: a50");
    }

    #[test]
    fn passage_errors() {
        assert!(build_qa_history_passage("t", &[]).is_err());
        assert!(build_qa_history_passage("t", &[pair("a", "b", 1), pair("c", "d", 1)]).is_err());
        assert!(build_qa_history_passage("t", &[pair("a", "b", 0)]).is_err());
    }

    #[test]
    fn assembly_modes() {
        let docs: Vec<String> = vec!["d1".into(), "d2".into(), "d3".into()];
        let concat = assemble_contexts(&docs, Some("qa"), AssemblyMode::Concat).unwrap();
        assert_eq!(concat.len(), 1);
        assert_eq!(concat[0].passages, vec!["d1", "d2", "d3", "qa"]);

        let sep = assemble_contexts(&docs, Some("qa"), AssemblyMode::Separate).unwrap();
        assert_eq!(sep.iter().map(|c| c.passages.len()).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(sep[1].source, KnowledgeSource::QaHistory);

        let qa_only = assemble_contexts(&[], Some("qa"), AssemblyMode::Separate).unwrap();
        assert_eq!(qa_only.len(), 1);
        assert_eq!(qa_only[0].source, KnowledgeSource::QaHistory);

        assert!(assemble_contexts(&[], None, AssemblyMode::Concat).is_err());
    }

    #[test]
    fn render_examples() {
        assert_eq!(
            render_calibration_target("paris", true, ConsistencyBucket::High).rendered,
            "Answer: paris Answerable: True Consistency: High"
        );
        assert_eq!(
            render_calibration_target("", false, ConsistencyBucket::Low).rendered,
            "Answer:  Answerable: False Consistency: Low"
        );
        assert!(parse_calibration_target("Answer: x Answerable: Maybe Consistency: Low").is_err());
        assert!(parse_calibration_target("x Answerable: True Consistency: Low").is_err());
    }

    fn bucket() -> impl Strategy<Value = ConsistencyBucket> {
        prop_oneof![
            Just(ConsistencyBucket::Low),
            Just(ConsistencyBucket::Medium),
            Just(ConsistencyBucket::High)
        ]
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            answer in "(\\PC{0,12}| Answerable: True| Consistency: Low){0,3}",
            answerable in any::<bool>(),
            b in bucket(),
        ) {
            let t = render_calibration_target(&answer, answerable, b);
            prop_assert_eq!(parse_calibration_target(&t.rendered).unwrap(), t);
        }

        #[test]
        fn concat_puts_qa_last_once(docs in proptest::collection::vec("[a-z]{1,5}", 0..6)) {
            let out = assemble_contexts(&docs, Some("QA"), AssemblyMode::Concat).unwrap();
            let p = &out[0].passages;
            prop_assert_eq!(p.len(), docs.len() + 1);
            prop_assert_eq!(&p[..docs.len()], &docs[..]);
            prop_assert_eq!(p.last().unwrap(), "QA");
            prop_assert_eq!(p.iter().filter(|s| *s == "QA").count(), 1);
        }
    }
}
