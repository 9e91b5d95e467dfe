//! Source selection and the evaluation metrics: density-based ECE,
//! risk-coverage and its AUC, oracle upper bound, selection ratios and
//! retrieval recall.
//!
//! All sorts break confidence ties by record id, so every report is
//! reproducible bit for bit.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibrate::ConfidenceBreakdown;
use crate::error::{Error, Result};
use crate::qa::{contains_answer, KnowledgeSource, Question};

/// One scored prediction reduced to what the calibration metrics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub id: String,
    pub confidence: f64,
    pub correct: bool,
}

impl Judgement {
    pub fn new(id: impl Into<String>, confidence: f64, correct: bool) -> Self {
        Judgement {
            id: id.into(),
            confidence,
            correct,
        }
    }

    /// Ids are zero-padded positions, so id order equals input order.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Vec<Judgement> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(c, ok))| Judgement::new(format!("{i:08}"), c, ok))
            .collect()
    }
}

fn by_confidence(a: &Judgement, b: &Judgement) -> Ordering {
    a.confidence
        .total_cmp(&b.confidence)
        .then_with(|| a.id.cmp(&b.id))
}

fn check_confidences(preds: &[Judgement]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    if let Some(p) = preds.iter().find(|p| !p.confidence.is_finite()) {
        return Err(Error::invalid(format!("non-finite confidence for {}", p.id)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Likelihood,
    Answerability,
    Consistency,
    #[default]
    Ensemble,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Likelihood,
        Criterion::Answerability,
        Criterion::Consistency,
        Criterion::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Likelihood => "likelihood",
            Criterion::Answerability => "answerability",
            Criterion::Consistency => "consistency",
            Criterion::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown criterion {s:?}")))
    }
}

/// Confidence signals available for one prediction. Any of them may be
/// missing when the upstream log did not provide the inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub lm_likelihood: Option<f64>,
    pub p_answerable: Option<f64>,
    pub p_consistent: Option<f64>,
}

impl Scores {
    pub fn get(&self, criterion: Criterion) -> Option<f64> {
        match criterion {
            Criterion::Likelihood => self.lm_likelihood,
            Criterion::Answerability => self.p_answerable,
            Criterion::Consistency => self.p_consistent,
            Criterion::Ensemble => self.breakdown().map(|b| b.ensemble),
        }
    }

    pub fn breakdown(&self) -> Option<ConfidenceBreakdown> {
        let (l, a, c) = (self.lm_likelihood?, self.p_answerable?, self.p_consistent?);
        crate::calibrate::ensemble_confidence(l, a, c).ok()
    }
}

impl From<ConfidenceBreakdown> for Scores {
    fn from(b: ConfidenceBreakdown) -> Self {
        Scores {
            lm_likelihood: Some(b.lm_likelihood),
            p_answerable: Some(b.p_answerable),
            p_consistent: Some(b.p_consistent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub answer: String,
    pub scores: Scores,
    pub correct: bool,
}

impl ScoredPrediction {
    pub fn confidence(&self, criterion: Criterion) -> Result<f64> {
        self.scores.get(criterion).ok_or_else(|| {
            Error::invalid(format!("prediction {:?} has no {criterion} score", self.answer))
        })
    }
}

/// The document-side and QA-history-side predictions for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPrediction {
    pub question: Question,
    pub doc: ScoredPrediction,
    pub qa: ScoredPrediction,
}

impl PairedPrediction {
    pub fn side(&self, source: KnowledgeSource) -> &ScoredPrediction {
        match source {
            KnowledgeSource::Document => &self.doc,
            KnowledgeSource::QaHistory => &self.qa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub source: KnowledgeSource,
    pub answer: String,
    pub confidence: f64,
    pub correct: bool,
}

/// Picks the QA-history answer when its confidence is at least the
/// document answer's confidence; exact ties go to QA history.
pub fn select_answer(pair: &PairedPrediction, criterion: Criterion) -> Result<Selection> {
    let conf_d = pair.doc.confidence(criterion)?;
    let conf_k = pair.qa.confidence(criterion)?;
    let (source, confidence) = if conf_k >= conf_d {
        (KnowledgeSource::QaHistory, conf_k)
    } else {
        (KnowledgeSource::Document, conf_d)
    };
    let side = pair.side(source);
    Ok(Selection {
        source,
        answer: side.answer.clone(),
        confidence,
        correct: side.correct,
    })
}

/// Sizes of `m` contiguous bins over `n` items; the first `n % m` bins get
/// one extra item.
pub fn bin_sizes(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| n / m + usize::from(i < n % m)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub index: usize,
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

/// Equal-count bins over predictions sorted by ascending confidence.
pub fn reliability_bins(preds: &[Judgement], bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_confidences(preds)?;
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if bins > preds.len() {
        return Err(Error::invalid(format!(
            "{bins} bins requested for {} predictions",
            preds.len()
        )));
    }
    let mut sorted: Vec<&Judgement> = preds.iter().collect();
    sorted.sort_by(|a, b| by_confidence(a, b));
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for (index, size) in bin_sizes(sorted.len(), bins).into_iter().enumerate() {
        let chunk = &sorted[start..start + size];
        start += size;
        let conf: f64 = chunk.iter().map(|p| p.confidence).sum();
        let hits = chunk.iter().filter(|p| p.correct).count();
        out.push(ReliabilityBin {
            index,
            count: size,
            mean_confidence: conf / size as f64,
            mean_accuracy: hits as f64 / size as f64,
        });
    }
    Ok(out)
}

/// Density-based expected calibration error: the unweighted mean over `bins`
/// equal-count bins of |accuracy - confidence|.
pub fn ece(preds: &[Judgement], bins: usize) -> Result<f64> {
    let rows = reliability_bins(preds, bins)?;
    let gap: f64 = rows
        .iter()
        .map(|b| (b.mean_accuracy - b.mean_confidence).abs())
        .sum();
    Ok(gap / bins as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

impl RiskCoveragePoint {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.risk
    }
}

/// Risk (error rate) among the `k` most confident predictions, for each
/// coverage `k / n`.
pub fn risk_coverage(preds: &[Judgement]) -> Result<Vec<RiskCoveragePoint>> {
    check_confidences(preds)?;
    let mut sorted: Vec<&Judgement> = preds.iter().collect();
    sorted.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.id.cmp(&b.id))
    });
    let n = sorted.len();
    let mut errors = 0usize;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            errors += usize::from(!p.correct);
            let k = i + 1;
            RiskCoveragePoint {
                coverage: k as f64 / n as f64,
                risk: errors as f64 / k as f64,
            }
        })
        .collect())
}

/// Mean risk over the coverage grid.
pub fn auc(points: &[RiskCoveragePoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| p.risk).sum::<f64>() / points.len() as f64
}

pub fn risk_coverage_auc(preds: &[Judgement]) -> Result<f64> {
    Ok(auc(&risk_coverage(preds)?))
}

pub fn accuracy(preds: &[Judgement]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.correct).count() as f64 / preds.len() as f64
}

/// Fraction of questions where at least one source is correct.
pub fn oracle_upper_bound(pairs: &[PairedPrediction]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no paired predictions"));
    }
    let hits = pairs.iter().filter(|p| p.doc.correct || p.qa.correct).count();
    Ok(hits as f64 / pairs.len() as f64)
}

pub fn selection_accuracy(pairs: &[PairedPrediction], criterion: Criterion) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no paired predictions"));
    }
    let mut hits = 0usize;
    for p in pairs {
        hits += usize::from(select_answer(p, criterion)?.correct);
    }
    Ok(hits as f64 / pairs.len() as f64)
}

pub fn source_accuracy(pairs: &[PairedPrediction], source: KnowledgeSource) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|p| p.side(source).correct).count() as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    QuestionOverlap,
    NoOverlap,
    /// Only the document answer is correct.
    Case1,
    /// Only the QA-history answer is correct.
    Case2,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::All,
        Subset::QuestionOverlap,
        Subset::NoOverlap,
        Subset::Case1,
        Subset::Case2,
    ];

    pub fn contains(self, p: &PairedPrediction) -> bool {
        match self {
            Subset::All => true,
            Subset::QuestionOverlap => p.question.question_overlap == Some(true),
            Subset::NoOverlap => p.question.question_overlap == Some(false),
            Subset::Case1 => p.doc.correct && !p.qa.correct,
            Subset::Case2 => !p.doc.correct && p.qa.correct,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::QuestionOverlap => "question_overlap",
            Subset::NoOverlap => "no_overlap",
            Subset::Case1 => "case1",
            Subset::Case2 => "case2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRatio {
    pub subset: Subset,
    pub n: usize,
    pub document: f64,
    pub qa_history: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRatioReport {
    pub criterion: Criterion,
    /// Subsets with no members are omitted.
    pub subsets: Vec<SubsetRatio>,
    /// Share of case-2 questions routed to the (wrong) document answer.
    pub case2_residual_error: Option<f64>,
}

impl SelectionRatioReport {
    pub fn get(&self, subset: Subset) -> Option<&SubsetRatio> {
        self.subsets.iter().find(|s| s.subset == subset)
    }
}

pub fn selection_ratio(
    pairs: &[PairedPrediction],
    criterion: Criterion,
) -> Result<SelectionRatioReport> {
    let routes: Vec<KnowledgeSource> = pairs
        .iter()
        .map(|p| select_answer(p, criterion).map(|s| s.source))
        .collect::<Result<_>>()?;
    let mut subsets = Vec::new();
    for subset in Subset::ALL {
        let mut n = 0usize;
        let mut docs = 0usize;
        for (p, &route) in pairs.iter().zip(&routes) {
            if subset.contains(p) {
                n += 1;
                docs += usize::from(route == KnowledgeSource::Document);
            }
        }
        if n == 0 {
            continue;
        }
        subsets.push(SubsetRatio {
            subset,
            n,
            document: docs as f64 / n as f64,
            qa_history: (n - docs) as f64 / n as f64,
        });
    }
    let case2_residual_error = subsets
        .iter()
        .find(|s| s.subset == Subset::Case2)
        .map(|s| s.document);
    Ok(SelectionRatioReport {
        criterion,
        subsets,
        case2_residual_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallOutcome {
    pub k: usize,
    pub recall: f64,
    /// Questions with fewer than `k` ranked contexts (evaluated over what exists).
    pub short_lists: usize,
}

/// Fraction of questions whose top-`k` contexts contain a gold answer.
pub fn recall_at_k(retrievals: &[(Vec<String>, Vec<String>)], k: usize) -> Result<RecallOutcome> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if retrievals.is_empty() {
        return Err(Error::invalid("no retrievals"));
    }
    let mut hits = 0usize;
    let mut short_lists = 0usize;
    for (contexts, golds) in retrievals {
        if contexts.len() < k {
            short_lists += 1;
        }
        let top = &contexts[..k.min(contexts.len())];
        hits += usize::from(contains_answer(top, golds)?);
    }
    Ok(RecallOutcome {
        k,
        recall: hits as f64 / retrievals.len() as f64,
        short_lists,
    })
}
