//! wasm-bindgen bindings for the browser demo. Every export takes plain
//! values and returns a JSON string.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use selqa_core::calibrate::{ensemble_confidence, extract_verbal_probs, sequence_likelihood, temperature_scale};
use selqa_core::config::RunConfig;
use selqa_core::demo::{run_demo, DemoBundle};
use selqa_core::eval::{
    ece, reliability_bins, risk_coverage, select_answer, Criterion, Judgement, PairedPrediction, ReliabilityBin,
    RiskCoveragePoint, ScoredPrediction, Selection,
};
use selqa_core::pipeline::score_records;
use selqa_core::{ConfidenceBreakdown, KnowledgeSource, Question};

type Out = Result<String, String>;

fn to_json<T: Serialize>(v: &T) -> Out {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn demo_config(seed: u64, criterion: &str, bins: usize) -> Result<RunConfig, String> {
    let criterion: Criterion = criterion.parse().map_err(|e: selqa_core::Error| e.to_string())?;
    let cfg = RunConfig {
        global_seed: seed,
        criterion,
        bins,
        ..RunConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Serialize)]
struct DemoView<'a> {
    report: &'a selqa_core::demo::DemoReport,
    risk_coverage: Vec<(&'a str, &'a [RiskCoveragePoint])>,
    reliability: Vec<(&'a str, &'a [ReliabilityBin])>,
}

pub fn demo_json(seed: u64, criterion: &str, bins: usize) -> Out {
    let cfg = demo_config(seed, criterion, bins)?;
    let out = run_demo(&DemoBundle::builtin(), &cfg).map_err(|e| e.to_string())?;
    to_json(&DemoView {
        report: &out.report,
        risk_coverage: out.curves.risk_coverage.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect(),
        reliability: out.curves.reliability.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect(),
    })
}

#[derive(Serialize)]
struct TemperedView {
    temperature: f64,
    ece: f64,
    auc: f64,
    risk_coverage: Vec<RiskCoveragePoint>,
    reliability: Vec<ReliabilityBin>,
}

/// Likelihood confidences on the demo test split, tempered with `temperature`.
pub fn tempered_json(seed: u64, temperature: f64, bins: usize) -> Out {
    let cfg = demo_config(seed, "likelihood", bins)?;
    let out = run_demo(&DemoBundle::builtin(), &cfg).map_err(|e| e.to_string())?;
    let test: Vec<_> = out.records[out.report.n_train * 2..].to_vec();
    let scored = score_records(&test, &cfg).map_err(|e| e.to_string())?;
    let judged = scored
        .iter()
        .filter_map(|s| {
            let j = s.judgement(Criterion::Likelihood)?;
            Some(
                temperature_scale(j.confidence, temperature)
                    .map(|c| Judgement::new(format!("{}/{}", s.id, s.source), c, j.correct)),
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let points = risk_coverage(&judged).map_err(|e| e.to_string())?;
    to_json(&TemperedView {
        temperature,
        ece: ece(&judged, bins).map_err(|e| e.to_string())?,
        auc: selqa_core::eval::auc(&points),
        risk_coverage: points,
        reliability: reliability_bins(&judged, bins).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct SideInput {
    pub answer: String,
    pub step_probs: Vec<f64>,
    pub p_true: f64,
    pub p_high: f64,
    pub p_medium: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareInput {
    pub gold: String,
    pub document: SideInput,
    pub qa_history: SideInput,
    #[serde(default = "yes")]
    pub length_normalize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct CompareView {
    document: ConfidenceBreakdown,
    qa_history: ConfidenceBreakdown,
    selections: Vec<(Criterion, Selection)>,
}

fn score_side(s: &SideInput, gold: &[String], length_normalize: bool) -> Result<ScoredPrediction, String> {
    let l = sequence_likelihood(&s.step_probs, length_normalize).map_err(|e| e.to_string())?;
    let (a, c) = extract_verbal_probs(s.p_true, s.p_high, s.p_medium).map_err(|e| e.to_string())?;
    let b = ensemble_confidence(l, a, c).map_err(|e| e.to_string())?;
    let correct = selqa_core::qa::exact_match(&s.answer, gold).map_err(|e| e.to_string())?;
    Ok(ScoredPrediction {
        answer: s.answer.clone(),
        scores: b.into(),
        correct,
    })
}

/// Scores two hand-entered answers and shows which one each criterion picks.
pub fn compare_json(input: &str) -> Out {
    let inp: CompareInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let gold = vec![inp.gold.clone()];
    let question = Question::new("q", "q", gold.clone(), None).map_err(|e| e.to_string())?;
    let pair = PairedPrediction {
        question,
        doc: score_side(&inp.document, &gold, inp.length_normalize)?,
        qa: score_side(&inp.qa_history, &gold, inp.length_normalize)?,
    };
    let selections = Criterion::ALL
        .into_iter()
        .map(|c| select_answer(&pair, c).map(|s| (c, s)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let side = |s: KnowledgeSource| pair.side(s).scores.breakdown().expect("all scores present");
    to_json(&CompareView {
        document: side(KnowledgeSource::Document),
        qa_history: side(KnowledgeSource::QaHistory),
        selections,
    })
}

fn js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runDemo)]
pub fn run_demo_js(seed: u32, criterion: &str, bins: u32) -> Result<String, JsError> {
    js(demo_json(seed as u64, criterion, bins as usize))
}

#[wasm_bindgen(js_name = temperLikelihood)]
pub fn temper_likelihood_js(seed: u32, temperature: f64, bins: u32) -> Result<String, JsError> {
    js(tempered_json(seed as u64, temperature, bins as usize))
}

#[wasm_bindgen(js_name = compareAnswers)]
pub fn compare_answers_js(input: &str) -> Result<String, JsError> {
    js(compare_json(input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn demo_view_has_report_and_curves() {
        let v: Value = serde_json::from_str(&demo_json(7, "ensemble", 10).unwrap()).unwrap();
        assert!(v["report"]["test"]["oracle_accuracy"].as_f64().unwrap() > 0.0);
        assert_eq!(v["risk_coverage"][0][0], "selected");
        assert!(demo_json(7, "bogus", 10).is_err());
        assert!(demo_json(7, "ensemble", 0).is_err());
    }

    #[test]
    fn tempering_keeps_auc() {
        let a: Value = serde_json::from_str(&tempered_json(7, 1.0, 10).unwrap()).unwrap();
        let b: Value = serde_json::from_str(&tempered_json(7, 3.5, 10).unwrap()).unwrap();
        assert_eq!(a["auc"], b["auc"]);
        assert_ne!(a["ece"], b["ece"]);
        assert!(tempered_json(7, 0.0, 10).is_err());
    }

    #[test]
    fn compare_picks_per_criterion() {
        let input = r#"{
            "gold": "Paris",
            "document": {"answer": "paris", "step_probs": [0.9, 1.0], "p_true": 0.3, "p_high": 0.1, "p_medium": 0.2},
            "qa_history": {"answer": "rome", "step_probs": [0.4, 1.0], "p_true": 0.9, "p_high": 0.8, "p_medium": 0.1}
        }"#;
        let v: Value = serde_json::from_str(&compare_json(input).unwrap()).unwrap();
        assert_eq!(v["document"]["p_consistent"].as_f64().unwrap(), 0.2);
        let sel = v["selections"].as_array().unwrap();
        assert_eq!(sel[0][0], "likelihood");
        assert_eq!(sel[0][1]["source"], "document");
        assert_eq!(sel[1][1]["source"], "qa_history");
        assert!(compare_json("{}").is_err());
    }
}
