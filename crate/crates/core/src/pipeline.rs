//! Record-level stages: label, score, select, evaluate, and curve/report
//! rendering. Each stage is a pure function of the records and the config.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibrate::{
    answerability_label, consistent_count, extract_verbal_probs, fit_quantiles, sequence_likelihood,
    CalibrationLabels, QuantileThresholds,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ece, oracle_upper_bound, reliability_bins, risk_coverage, select_answer, selection_ratio,
    source_accuracy, Criterion, Judgement, PairedPrediction, ReliabilityBin, RiskCoveragePoint,
    ScoredPrediction, Scores, SelectionRatioReport,
};
use crate::prompting::{render_calibration_target, ConsistencyBucket};
use crate::qa::{exact_match, ContextSet, KnowledgeSource};
use crate::records::{pair_records, PredictionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub source: KnowledgeSource,
    pub answer: String,
    pub correct: bool,
    #[serde(flatten)]
    pub scores: Scores,
    pub ensemble: Option<f64>,
}

impl ScoredRecord {
    pub fn prediction(&self) -> ScoredPrediction {
        ScoredPrediction {
            answer: self.answer.clone(),
            scores: self.scores,
            correct: self.correct,
        }
    }

    pub fn judgement(&self, criterion: Criterion) -> Option<Judgement> {
        self.scores
            .get(criterion)
            .map(|c| Judgement::new(self.id.clone(), c, self.correct))
    }
}

pub fn score_record(rec: &PredictionRecord, length_normalize: bool) -> Result<ScoredRecord> {
    let tag = |e: Error| Error::invalid(format!("record ({}, {}): {e}", rec.id, rec.source));
    let lm_likelihood = if rec.token_probs.is_empty() {
        None
    } else {
        Some(sequence_likelihood(&rec.token_probs, length_normalize).map_err(tag)?)
    };
    let (p_answerable, p_consistent) = match (rec.p_true, rec.p_high, rec.p_medium) {
        (Some(t), Some(h), Some(m)) => {
            let (a, c) = extract_verbal_probs(t, h, m).map_err(tag)?;
            (Some(a), Some(c))
        }
        (t, _, _) => (t, None),
    };
    let scores = Scores {
        lm_likelihood,
        p_answerable,
        p_consistent,
    };
    Ok(ScoredRecord {
        id: rec.id.clone(),
        source: rec.source,
        answer: rec.answer.clone(),
        correct: exact_match(&rec.answer, &rec.gold_answers).map_err(tag)?,
        ensemble: scores.get(Criterion::Ensemble),
        scores,
    })
}

pub fn score_records(records: &[PredictionRecord], cfg: &RunConfig) -> Result<Vec<ScoredRecord>> {
    records
        .iter()
        .map(|r| score_record(r, cfg.length_normalize))
        .collect()
}

/// `(matched, n)` for records that carry samples.
pub fn consistency_counts(rec: &PredictionRecord) -> Result<Option<(usize, usize)>> {
    match &rec.samples {
        None => Ok(None),
        Some(s) => Ok(Some((consistent_count(s, &rec.gold_answers)?, s.len()))),
    }
}

/// Fits bucket thresholds on every consistency label available in `records`.
/// Returns `None` when no record carries samples.
pub fn fit_thresholds(records: &[PredictionRecord]) -> Result<Option<QuantileThresholds>> {
    let mut values = Vec::new();
    for r in records {
        if let Some((m, n)) = consistency_counts(r)? {
            values.push(m as f64 / n as f64);
        }
    }
    if values.is_empty() {
        return Ok(None);
    }
    fit_quantiles(&values).map(Some)
}

pub fn resolve_thresholds(
    cfg: &RunConfig,
    records: &[PredictionRecord],
) -> Result<Option<QuantileThresholds>> {
    if let Some(t) = cfg.quantiles.explicit()? {
        return Ok(Some(t));
    }
    match &cfg.quantiles.fit_from {
        Some(path) => fit_thresholds(&crate::records::validate_and_load(path)?),
        None => fit_thresholds(records),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub source: KnowledgeSource,
    pub answerability: u8,
    pub consistency: Option<f64>,
    pub consistency_bucket: Option<ConsistencyBucket>,
    pub n_samples: Option<usize>,
    /// Verbalized training target for the calibration template.
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub thresholds: Option<QuantileThresholds>,
    pub rows: Vec<LabelRow>,
}

pub fn label_records(
    records: &[PredictionRecord],
    thresholds: Option<QuantileThresholds>,
) -> Result<LabelReport> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let contexts = ContextSet {
            source: r.source,
            passages: r.contexts.clone(),
        };
        let answerability = answerability_label(&contexts, &r.gold_answers)?;
        let labels = match (consistency_counts(r)?, &thresholds) {
            (Some((m, n)), Some(t)) => Some(CalibrationLabels::new(answerability, m, n, t)?),
            _ => None,
        };
        let row = match labels {
            Some(l) => LabelRow {
                id: r.id.clone(),
                source: r.source,
                answerability,
                consistency: Some(l.consistency),
                consistency_bucket: Some(l.consistency_bucket),
                n_samples: Some(l.n_samples),
                target: Some(
                    render_calibration_target(&r.answer, answerability == 1, l.consistency_bucket)
                        .rendered,
                ),
            },
            None => LabelRow {
                id: r.id.clone(),
                source: r.source,
                answerability,
                consistency: None,
                consistency_bucket: None,
                n_samples: None,
                target: None,
            },
        };
        rows.push(row);
    }
    Ok(LabelReport { thresholds, rows })
}

/// Scores both sides of every id that has a document and a QA-history record.
/// Also returns `(id, source)` of the unpaired records.
pub fn build_pairs(
    records: &[PredictionRecord],
    cfg: &RunConfig,
) -> Result<(Vec<PairedPrediction>, Vec<(String, KnowledgeSource)>)> {
    let pairing = pair_records(records);
    let mut pairs = Vec::with_capacity(pairing.pairs.len());
    for (d, q) in pairing.pairs {
        let mut question = d.to_question();
        question.question_overlap = d.question_overlap.or(q.question_overlap);
        pairs.push(PairedPrediction {
            question,
            doc: score_record(d, cfg.length_normalize)?.prediction(),
            qa: score_record(q, cfg.length_normalize)?.prediction(),
        });
    }
    let unpaired = pairing
        .unpaired
        .iter()
        .map(|r| (r.id.clone(), r.source))
        .collect();
    Ok((pairs, unpaired))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub id: String,
    pub source: KnowledgeSource,
    pub answer: String,
    pub confidence: f64,
    pub correct: bool,
}

pub fn select_pairs(pairs: &[PairedPrediction], criterion: Criterion) -> Result<Vec<SelectionRow>> {
    pairs
        .iter()
        .map(|p| {
            let s = select_answer(p, criterion)?;
            Ok(SelectionRow {
                id: p.question.id.clone(),
                source: s.source,
                answer: s.answer,
                confidence: s.confidence,
                correct: s.correct,
            })
        })
        .collect()
}

fn selected_judgements(rows: &[SelectionRow]) -> Vec<Judgement> {
    rows.iter()
        .map(|r| Judgement::new(r.id.clone(), r.confidence, r.correct))
        .collect()
}

/// Calibration of one confidence estimate on one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub predictions: String,
    pub criterion: Criterion,
    pub n: usize,
    pub em_accuracy: f64,
    pub ece: f64,
    pub auc: f64,
}

fn calibration_row(
    predictions: &str,
    criterion: Criterion,
    judgements: &[Judgement],
    bins: usize,
) -> Result<CalibrationRow> {
    Ok(CalibrationRow {
        predictions: predictions.to_string(),
        criterion,
        n: judgements.len(),
        em_accuracy: crate::eval::accuracy(judgements),
        ece: ece(judgements, bins)?,
        auc: crate::eval::risk_coverage_auc(judgements)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionAccuracy {
    pub criterion: Criterion,
    pub em_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criterion: Criterion,
    pub bins: usize,
    pub length_normalize: bool,
    pub n_records: usize,
    pub n_pairs: usize,
    pub unpaired: Vec<String>,
    /// EM accuracy of the selected answers.
    pub em_accuracy: f64,
    /// ECE of the selected answers' confidences.
    pub ece: f64,
    /// Risk-coverage AUC of the selected answers.
    pub auc: f64,
    pub oracle_accuracy: f64,
    pub document_accuracy: f64,
    pub qa_history_accuracy: f64,
    /// Selection accuracy for every criterion scorable on all pairs.
    pub selection: Vec<CriterionAccuracy>,
    /// Single-source calibration for every criterion scorable on that source.
    pub calibration: Vec<CalibrationRow>,
    pub selection_ratios: SelectionRatioReport,
}

/// Per-source judgements under `criterion`, or `None` if any record lacks the score.
fn source_judgements(
    scored: &[ScoredRecord],
    source: KnowledgeSource,
    criterion: Criterion,
) -> Option<Vec<Judgement>> {
    scored
        .iter()
        .filter(|s| s.source == source)
        .map(|s| s.judgement(criterion))
        .collect()
}

pub fn evaluate(records: &[PredictionRecord], cfg: &RunConfig) -> Result<EvalReport> {
    let (pairs, unpaired) = build_pairs(records, cfg)?;
    if pairs.is_empty() {
        return Err(Error::invalid("no (document, qa_history) record pairs to evaluate"));
    }
    let rows = select_pairs(&pairs, cfg.criterion)?;
    let selected = selected_judgements(&rows);

    let mut selection = Vec::new();
    for criterion in Criterion::ALL {
        if let Ok(acc) = crate::eval::selection_accuracy(&pairs, criterion) {
            selection.push(CriterionAccuracy {
                criterion,
                em_accuracy: acc,
            });
        }
    }

    let scored = score_records(records, cfg)?;
    let mut calibration = Vec::new();
    for source in KnowledgeSource::ALL {
        for criterion in Criterion::ALL {
            if let Some(j) = source_judgements(&scored, source, criterion) {
                if j.len() >= cfg.bins {
                    calibration.push(calibration_row(source.as_str(), criterion, &j, cfg.bins)?);
                }
            }
        }
    }

    Ok(EvalReport {
        criterion: cfg.criterion,
        bins: cfg.bins,
        length_normalize: cfg.length_normalize,
        n_records: records.len(),
        n_pairs: pairs.len(),
        unpaired: unpaired
            .iter()
            .map(|(id, s)| format!("{id}/{s}"))
            .collect(),
        em_accuracy: crate::eval::accuracy(&selected),
        ece: ece(&selected, cfg.bins)?,
        auc: crate::eval::risk_coverage_auc(&selected)?,
        oracle_accuracy: oracle_upper_bound(&pairs)?,
        document_accuracy: source_accuracy(&pairs, KnowledgeSource::Document),
        qa_history_accuracy: source_accuracy(&pairs, KnowledgeSource::QaHistory),
        selection,
        calibration,
        selection_ratios: selection_ratio(&pairs, cfg.criterion)?,
    })
}

/// Named curve data for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub risk_coverage: Vec<(String, Vec<RiskCoveragePoint>)>,
    pub reliability: Vec<(String, Vec<ReliabilityBin>)>,
}

/// Curves for the selected answers and for each source alone, all under the
/// configured criterion.
pub fn curves(records: &[PredictionRecord], cfg: &RunConfig) -> Result<Curves> {
    let (pairs, _) = build_pairs(records, cfg)?;
    let scored = score_records(records, cfg)?;
    let mut sets: Vec<(String, Vec<Judgement>)> = Vec::new();
    if !pairs.is_empty() {
        sets.push((
            "selected".into(),
            selected_judgements(&select_pairs(&pairs, cfg.criterion)?),
        ));
    }
    for source in KnowledgeSource::ALL {
        let j = source_judgements(&scored, source, cfg.criterion).ok_or_else(|| {
            Error::invalid(format!("some {source} records have no {} score", cfg.criterion))
        })?;
        if !j.is_empty() {
            sets.push((source.as_str().into(), j));
        }
    }
    let mut out = Curves {
        risk_coverage: Vec::new(),
        reliability: Vec::new(),
    };
    for (name, j) in sets {
        out.risk_coverage.push((name.clone(), risk_coverage(&j)?));
        out.reliability.push((name, reliability_bins(&j, cfg.bins.min(j.len()))?));
    }
    Ok(out)
}

pub fn risk_coverage_csv(points: &[RiskCoveragePoint]) -> String {
    let mut s = String::from("coverage,risk\n");
    for p in points {
        s.push_str(&format!("{:.4},{:.4}\n", p.coverage, p.risk));
    }
    s
}

pub fn accuracy_coverage_csv(points: &[RiskCoveragePoint]) -> String {
    let mut s = String::from("coverage,accuracy\n");
    for p in points {
        s.push_str(&format!("{:.4},{:.4}\n", p.coverage, p.accuracy()));
    }
    s
}

pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut s = String::from("bin_index,mean_confidence,mean_accuracy\n");
    for b in bins {
        s.push_str(&format!(
            "{},{:.4},{:.4}\n",
            b.index, b.mean_confidence, b.mean_accuracy
        ));
    }
    s
}

fn round4(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            if let Some(r) = serde_json::Number::from_f64((x * 1e4).round() / 1e4) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round4),
        Value::Object(o) => o.values_mut().for_each(round4),
        _ => {}
    }
}

/// Pretty JSON with every real number rounded to 4 decimal places.
pub fn render_report<T: Serialize>(report: &T) -> Result<String> {
    let mut v = serde_json::to_value(report)?;
    round4(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// One JSON object per line.
pub fn render_lines<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        let mut v = serde_json::to_value(r)?;
        round4(&mut v);
        s.push_str(&serde_json::to_string(&v)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub k: usize,
    pub recall: f64,
    pub short_lists: usize,
}

/// Recall@K over the ranked contexts of every `source` record.
pub fn recall_table(
    records: &[PredictionRecord],
    source: KnowledgeSource,
    ks: &[usize],
) -> Result<Vec<RecallRow>> {
    let retrievals: Vec<(Vec<String>, Vec<String>)> = records
        .iter()
        .filter(|r| r.source == source)
        .map(|r| (r.contexts.clone(), r.gold_answers.clone()))
        .collect();
    ks.iter()
        .map(|&k| {
            let o = crate::eval::recall_at_k(&retrievals, k)?;
            Ok(RecallRow {
                k: o.k,
                recall: o.recall,
                short_lists: o.short_lists,
            })
        })
        .collect()
}
