//! Core QA types plus the answer normalization and matching predicates
//! shared by labeling, selection and evaluation.
//!
//! Normalization follows the SQuAD convention: lowercase, strip ASCII
//! punctuation, drop the articles `a`/`an`/`the`, collapse whitespace.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Where a context (and the answer decoded from it) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSource {
    Document,
    QaHistory,
}

impl KnowledgeSource {
    pub const ALL: [KnowledgeSource; 2] = [KnowledgeSource::Document, KnowledgeSource::QaHistory];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeSource::Document => "document",
            KnowledgeSource::QaHistory => "qa_history",
        }
    }
}

impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_overlap: Option<bool>,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_answers: Vec<String>,
        question_overlap: Option<bool>,
    ) -> Result<Self> {
        let q = Question {
            id: id.into(),
            text: text.into(),
            gold_answers,
            question_overlap,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("question id is empty"));
        }
        validate_golds(&self.gold_answers)
    }
}

/// Gold answers must be nonempty and survive normalization.
pub fn validate_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::invalid("gold answer list is empty"));
    }
    if let Some(g) = golds.iter().find(|g| normalize_answer(g).is_empty()) {
        return Err(Error::invalid(format!(
            "gold answer {g:?} is empty after normalization"
        )));
    }
    Ok(())
}

/// Ordered passages from one knowledge source, in retrieval-rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSet {
    pub source: KnowledgeSource,
    pub passages: Vec<String>,
}

/// How passages are searched for a gold answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Containment {
    /// Search the space-joined concatenation of all passages.
    #[default]
    Joint,
    /// Require the answer inside a single passage.
    PerPassage,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, golds: &[String]) -> Result<bool> {
    if golds.is_empty() {
        return Err(Error::invalid("gold answer list is empty"));
    }
    let pred = normalize_answer(prediction);
    Ok(golds.iter().any(|g| normalize_answer(g) == pred))
}

pub fn contains_answer(passages: &[String], golds: &[String]) -> Result<bool> {
    contains_answer_with(passages, golds, Containment::Joint)
}

pub fn contains_answer_with(
    passages: &[String],
    golds: &[String],
    mode: Containment,
) -> Result<bool> {
    if golds.is_empty() {
        return Err(Error::invalid("gold answer list is empty"));
    }
    // An empty normalized gold would match every context.
    let golds: Vec<String> = golds
        .iter()
        .map(|g| normalize_answer(g))
        .filter(|g| !g.is_empty())
        .collect();
    let hit = |haystack: &str| golds.iter().any(|g| haystack.contains(g.as_str()));
    Ok(match mode {
        Containment::Joint => hit(&normalize_answer(&passages.join(" "))),
        Containment::PerPassage => passages.iter().any(|p| hit(&normalize_answer(p))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The Eiffel Tower!"), "eiffel tower");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("An  apple,  a day"), "apple day");
        assert_eq!(normalize_answer("  Théâtre  "), "théâtre");
        // articles only go as whole words
        assert_eq!(normalize_answer("Anthem of a theme"), "anthem of theme");
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match("Eric Liddell", &golds(&["eric liddell"])).unwrap());
        assert!(!exact_match("Hugh Hudson", &golds(&["Eric Liddell"])).unwrap());
        assert!(exact_match("the paris", &golds(&["Paris!"])).unwrap());
        assert!(exact_match("x", &[]).is_err());
    }

    #[test]
    fn containment_examples() {
        let g = golds(&["Eric Liddell"]);
        assert!(contains_answer(&golds(&["Eric Liddell won the 400m in 1924"]), &g).unwrap());
        assert!(!contains_answer(&golds(&["Hugh Hudson directed the film"]), &g).unwrap());
        assert!(contains_answer(&[], &g).is_ok_and(|b| !b));
        assert!(contains_answer(&g, &[]).is_err());
    }

    #[test]
    fn containment_across_passage_boundary() {
        let passages = golds(&["...first half Eric", "Liddell second half..."]);
        let g = golds(&["Eric Liddell"]);
        // brute force: scan every window of the joined normalized text
        let hay = normalize_answer(&passages.join(" "));
        let needle = normalize_answer(&g[0]);
        let brute = (0..=hay.len().saturating_sub(needle.len()))
            .any(|i| hay.get(i..i + needle.len()) == Some(needle.as_str()));
        assert!(brute);
        assert_eq!(contains_answer(&passages, &g).unwrap(), brute);
        assert!(!contains_answer_with(&passages, &g, Containment::PerPassage).unwrap());
    }

    #[test]
    fn question_validation() {
        assert!(Question::new("q1", "who", golds(&["x"]), None).is_ok());
        assert!(Question::new("q1", "who", vec![], None).is_err());
        assert!(Question::new("q1", "who", golds(&["The ..."]), None).is_err());
        assert!(Question::new("", "who", golds(&["x"]), None).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn exact_match_ignores_gold_order_and_surface_edits(
            words in proptest::collection::vec("[a-z]{1,6}", 1..4),
            others in proptest::collection::vec("[a-z]{1,8}", 0..4),
            rot in 0usize..8,
        ) {
            let answer = words.join(" ");
            let mut gs: Vec<String> = others.clone();
            gs.push(answer.clone());
            let base = exact_match(&answer, &gs).unwrap();
            prop_assert!(base);
            let n = gs.len();
            gs.rotate_left(rot % n);
            let edited = format!("The {}!!", answer.to_uppercase());
            prop_assert_eq!(exact_match(&edited, &gs).unwrap(), base);
        }

        #[test]
        fn containment_is_monotone(
            passages in proptest::collection::vec("[a-z ]{0,20}", 0..5),
            extra in "[a-z ]{0,20}",
            gold in "[a-z]{1,3}",
        ) {
            let g = vec![gold];
            let before = contains_answer(&passages, &g).unwrap();
            let mut more = passages.clone();
            more.push(extra);
            if before {
                prop_assert!(contains_answer(&more, &g).unwrap());
            }
        }
    }
}
