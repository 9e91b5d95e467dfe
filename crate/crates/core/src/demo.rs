//! End-to-end run on a bundled toy world.
//!
//! A demo bundle holds one table model plus questions with their retrieved
//! documents and QA pairs. For each question and each source the model is
//! decoded greedily (answer and step probabilities), sampled `n_samples`
//! times (consistency label), and queried through the calibration prompt for
//! the verbal token likelihoods. The resulting records go through the same
//! label, score, select and evaluate stages as external logs.
//!
//! Prompt keys in the model table:
//! - `{id}|document`, `{id}|qa_history`: answer generation per source,
//! - `{id}|{source}|calibration`: the verbal estimator (`True`/`False`, then
//!   `High`/`Medium`/`Low`),
//! - `{id}|concat` (optional): the single-reader concatenation baseline.

use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_temperature, temperature_scale, QuantileThresholds};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{ece, risk_coverage_auc, Criterion, Judgement};
use crate::pipeline::{
    curves, evaluate, fit_thresholds, label_records, recall_table, score_records, Curves, EvalReport,
    RecallRow,
};
use crate::prompting::{assemble_contexts, build_qa_history_passage, AssemblyMode, ConsistencyBucket, QaPair};
use crate::qa::{exact_match, KnowledgeSource, Question};
use crate::records::PredictionRecord;
use crate::toy_lm::{derive_seed, greedy_decode, sample_decode, ConditionalTable, ModelFile};

const BUILTIN: &str = include_str!("../fixtures/demo.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoQuestion {
    pub id: String,
    pub text: String,
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub question_overlap: Option<bool>,
    pub split: Split,
    pub documents: Vec<String>,
    pub qa_pairs: Vec<QaPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoBundle {
    pub model: ModelFile,
    pub questions: Vec<DemoQuestion>,
}

impl DemoBundle {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("bundled demo fixture parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("demo bundle: {e}")))
    }
}

pub fn answer_prompt(id: &str, source: KnowledgeSource) -> String {
    format!("{id}|{source}")
}

pub fn calibration_prompt(id: &str, source: KnowledgeSource) -> String {
    format!("{id}|{source}|calibration")
}

pub fn concat_prompt(id: &str) -> String {
    format!("{id}|concat")
}

/// Token likelihoods read off the calibration prompt: `P(True)`, then
/// `P(High)` and `P(Medium)` after the greedily chosen answerability token.
pub fn verbal_likelihoods(model: &ConditionalTable, prompt: &str) -> Result<(f64, f64, f64)> {
    let vocab = model.vocab();
    let id = |t: &str| {
        vocab
            .id(t)
            .ok_or_else(|| Error::Model(format!("vocabulary lacks calibration token {t:?}")))
    };
    let (t_true, t_high, t_medium) = (id("True")?, id("High")?, id("Medium")?);
    let p_true = model.token_probability(prompt, &[], t_true)?;
    let first = greedy_decode(model, prompt, model.max_len())?;
    let answerable = id(&first.tokens[0])?;
    let p_high = model.token_probability(prompt, &[answerable], t_high)?;
    let p_medium = model.token_probability(prompt, &[answerable], t_medium)?;
    Ok((p_true, p_high, p_medium))
}

fn decode_record(
    model: &ConditionalTable,
    q: &DemoQuestion,
    source: KnowledgeSource,
    passages: Vec<String>,
    cfg: &RunConfig,
) -> Result<PredictionRecord> {
    let prompt = answer_prompt(&q.id, source);
    let greedy = greedy_decode(model, &prompt, model.max_len())?;
    let samples = (0..cfg.n_samples)
        .map(|i| {
            let seed = derive_seed(cfg.global_seed, &format!("{prompt}|{i}"));
            sample_decode(model, &prompt, seed, 1.0).map(|d| d.answer_text)
        })
        .collect::<Result<Vec<_>>>()?;
    let (p_true, p_high, p_medium) = verbal_likelihoods(model, &calibration_prompt(&q.id, source))?;
    Ok(PredictionRecord {
        id: q.id.clone(),
        question: q.text.clone(),
        gold_answers: q.gold_answers.clone(),
        source,
        contexts: passages,
        answer: greedy.answer_text,
        token_probs: greedy.step_probs,
        p_true: Some(p_true),
        p_high: Some(p_high),
        p_medium: Some(p_medium),
        samples: Some(samples),
        question_overlap: q.question_overlap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    pub criterion: Criterion,
    pub temperature: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub auc_before: f64,
    pub auc_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub global_seed: u64,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Consistency-bucket cut points fit on the training split.
    pub thresholds: QuantileThresholds,
    pub train_buckets: BucketCounts,
    pub example_targets: Vec<String>,
    pub test: EvalReport,
    pub concat_baseline_accuracy: Option<f64>,
    /// Likelihood confidences tempered with a temperature fit on the training split.
    pub temperature_scaling: TemperatureReport,
    pub document_recall: Vec<RecallRow>,
}

pub struct DemoOutput {
    pub report: DemoReport,
    /// Generated records, training split first.
    pub records: Vec<PredictionRecord>,
    /// Curves for the test split.
    pub curves: Curves,
}

fn likelihood_judgements(records: &[PredictionRecord], cfg: &RunConfig) -> Result<Vec<Judgement>> {
    score_records(records, cfg)?
        .iter()
        .map(|s| {
            s.judgement(Criterion::Likelihood)
                .map(|mut j| {
                    j.id = format!("{}/{}", s.id, s.source);
                    j
                })
                .ok_or_else(|| Error::invalid("record without likelihood"))
        })
        .collect()
}

pub fn run_demo(bundle: &DemoBundle, cfg: &RunConfig) -> Result<DemoOutput> {
    cfg.validate()?;
    let model = bundle.model.build()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut concat_hits = Vec::new();
    for q in &bundle.questions {
        Question::new(&q.id, &q.text, q.gold_answers.clone(), q.question_overlap)?;
        let qa_passage = if q.qa_pairs.is_empty() {
            None
        } else {
            Some(build_qa_history_passage(&q.text, &q.qa_pairs)?)
        };
        let contexts = assemble_contexts(&q.documents, qa_passage.as_deref(), AssemblyMode::Separate)?;
        if contexts.len() != 2 {
            return Err(Error::invalid(format!(
                "demo question {} needs both documents and QA pairs",
                q.id
            )));
        }
        let split = if q.split == Split::Train { &mut train } else { &mut test };
        for ctx in contexts {
            split.push(decode_record(&model, q, ctx.source, ctx.passages, cfg)?);
        }
        if q.split == Split::Test && model.has_prompt(&concat_prompt(&q.id)) {
            let d = greedy_decode(&model, &concat_prompt(&q.id), model.max_len())?;
            concat_hits.push(exact_match(&d.answer_text, &q.gold_answers)?);
        }
    }

    let thresholds = fit_thresholds(&train)?
        .ok_or_else(|| Error::invalid("demo training split is empty"))?;
    let labels = label_records(&train, Some(thresholds))?;
    let mut train_buckets = BucketCounts {
        low: 0,
        medium: 0,
        high: 0,
    };
    for row in &labels.rows {
        match row.consistency_bucket {
            Some(ConsistencyBucket::Low) => train_buckets.low += 1,
            Some(ConsistencyBucket::Medium) => train_buckets.medium += 1,
            Some(ConsistencyBucket::High) => train_buckets.high += 1,
            None => {}
        }
    }
    let example_targets = labels
        .rows
        .iter()
        .filter_map(|r| r.target.clone())
        .take(3)
        .collect();

    let test_report = evaluate(&test, cfg)?;

    let dev = likelihood_judgements(&train, cfg)?;
    let temperature = fit_temperature(&dev, cfg.bins.min(dev.len()))?;
    let before = likelihood_judgements(&test, cfg)?;
    let after: Vec<Judgement> = before
        .iter()
        .map(|j| {
            temperature_scale(j.confidence, temperature).map(|c| Judgement::new(j.id.clone(), c, j.correct))
        })
        .collect::<Result<_>>()?;
    let temperature_scaling = TemperatureReport {
        criterion: Criterion::Likelihood,
        temperature,
        ece_before: ece(&before, cfg.bins)?,
        ece_after: ece(&after, cfg.bins)?,
        auc_before: risk_coverage_auc(&before)?,
        auc_after: risk_coverage_auc(&after)?,
    };

    let max_docs = test
        .iter()
        .filter(|r| r.source == KnowledgeSource::Document)
        .map(|r| r.contexts.len())
        .max()
        .unwrap_or(1);
    let ks: Vec<usize> = (1..=max_docs).collect();
    let document_recall = recall_table(&test, KnowledgeSource::Document, &ks)?;

    let curves = curves(&test, cfg)?;
    let concat_baseline_accuracy = if concat_hits.is_empty() {
        None
    } else {
        Some(concat_hits.iter().filter(|&&h| h).count() as f64 / concat_hits.len() as f64)
    };
    let report = DemoReport {
        global_seed: cfg.global_seed,
        n_samples: cfg.n_samples,
        n_train: train.len() / 2,
        n_test: test.len() / 2,
        thresholds,
        train_buckets,
        example_targets,
        test: test_report,
        concat_baseline_accuracy,
        temperature_scaling,
        document_recall,
    };
    let mut records = train;
    records.extend(test);
    Ok(DemoOutput {
        report,
        records,
        curves,
    })
}
