//! Confidence estimates for a decoded answer and their supervision labels.
//!
//! Three signals are combined:
//! - the sequence likelihood of the greedy answer (optionally length-normalized
//!   by geometric mean),
//! - answerability: does the context contain a gold answer,
//! - sampling consistency: the fraction of temperature-1 samples that match gold.
//!
//! At inference time the last two are read off a verbal estimator as token
//! likelihoods (`True`, and `High`/`Medium`), then averaged with the first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ece, Judgement};
use crate::prompting::ConsistencyBucket;
use crate::qa::{contains_answer, exact_match, validate_golds, ContextSet};

/// Number of samples drawn for a consistency label.
pub const DEFAULT_SAMPLES: usize = 30;

const VERBAL_SLACK: f64 = 1e-9;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Product of the chosen-token probabilities, or its geometric mean when
/// `length_normalize` is set.
pub fn sequence_likelihood(step_probs: &[f64], length_normalize: bool) -> Result<f64> {
    if step_probs.is_empty() {
        return Err(Error::invalid("step probabilities are empty"));
    }
    if let Some(p) = step_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid(format!("step probability {p} outside (0, 1]")));
    }
    if length_normalize {
        // log domain so long answers do not underflow
        let mean_log = step_probs.iter().map(|p| p.ln()).sum::<f64>() / step_probs.len() as f64;
        Ok(mean_log.exp())
    } else {
        Ok(step_probs.iter().product())
    }
}

pub fn answerability_label(contexts: &ContextSet, golds: &[String]) -> Result<u8> {
    Ok(u8::from(contains_answer(&contexts.passages, golds)?))
}

/// Number of samples that exactly match a gold answer.
pub fn consistent_count(samples: &[String], golds: &[String]) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples for consistency label"));
    }
    validate_golds(golds)?;
    let mut n = 0;
    for s in samples {
        if exact_match(s, golds)? {
            n += 1;
        }
    }
    Ok(n)
}

pub fn consistency_label(samples: &[String], golds: &[String]) -> Result<f64> {
    Ok(consistent_count(samples, golds)? as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLabels {
    pub answerability: u8,
    pub consistency: f64,
    pub consistency_bucket: ConsistencyBucket,
    pub n_samples: usize,
}

impl CalibrationLabels {
    pub fn new(
        answerability: u8,
        matched: usize,
        n_samples: usize,
        thresholds: &QuantileThresholds,
    ) -> Result<Self> {
        if answerability > 1 {
            return Err(Error::invalid("answerability label must be 0 or 1"));
        }
        if n_samples == 0 || matched > n_samples {
            return Err(Error::invalid(format!(
                "consistent count {matched} out of range for {n_samples} samples"
            )));
        }
        let consistency = matched as f64 / n_samples as f64;
        Ok(CalibrationLabels {
            answerability,
            consistency,
            consistency_bucket: thresholds.bucketize(consistency),
            n_samples,
        })
    }
}

/// Cut points between the Low/Medium and Medium/High consistency buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileThresholds {
    pub low: f64,
    pub high: f64,
}

impl QuantileThresholds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !low.is_finite() || !high.is_finite() || low > high {
            return Err(Error::invalid(format!("invalid thresholds ({low}, {high})")));
        }
        Ok(QuantileThresholds { low, high })
    }

    /// Values at a cut point fall into the lower bucket.
    pub fn bucketize(&self, value: f64) -> ConsistencyBucket {
        if value <= self.low {
            ConsistencyBucket::Low
        } else if value <= self.high {
            ConsistencyBucket::Medium
        } else {
            ConsistencyBucket::High
        }
    }
}

/// Sizes of the Low, Medium and High groups for `n` sorted values; the
/// remainder of `n / 3` goes to the lower groups.
pub fn tercile_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    let extra = n % 3;
    [0, 1, 2].map(|i| base + usize::from(i < extra))
}

/// Splits the sorted training values into three equal-count groups
/// (Low, Medium, High) and returns the maxima of the first two.
pub fn fit_quantiles(values: &[f64]) -> Result<QuantileThresholds> {
    if values.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 values to fit quantiles, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite consistency value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let [low, medium, _] = tercile_sizes(sorted.len());
    QuantileThresholds::new(sorted[low - 1], sorted[low + medium - 1])
}

/// Reads answerability and consistency off the verbal estimator's token
/// likelihoods: `P(True)` and `1 * P(High) + 0.5 * P(Medium)` (Low weighs 0).
pub fn extract_verbal_probs(p_true: f64, p_high: f64, p_medium: f64) -> Result<(f64, f64)> {
    check_unit("p_true", p_true)?;
    check_unit("p_high", p_high)?;
    check_unit("p_medium", p_medium)?;
    if p_high + p_medium > 1.0 + VERBAL_SLACK {
        return Err(Error::invalid(format!(
            "p_high + p_medium = {} exceeds 1",
            p_high + p_medium
        )));
    }
    Ok((p_true, p_high + 0.5 * p_medium))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBreakdown {
    pub lm_likelihood: f64,
    pub p_answerable: f64,
    pub p_consistent: f64,
    pub ensemble: f64,
}

pub fn ensemble_confidence(
    lm_likelihood: f64,
    p_answerable: f64,
    p_consistent: f64,
) -> Result<ConfidenceBreakdown> {
    check_unit("lm_likelihood", lm_likelihood)?;
    check_unit("p_answerable", p_answerable)?;
    check_unit("p_consistent", p_consistent)?;
    Ok(ConfidenceBreakdown {
        lm_likelihood,
        p_answerable,
        p_consistent,
        ensemble: (lm_likelihood + p_answerable + p_consistent) / 3.0,
    })
}

/// Sequence-level tempering, `exp(ln c / T)`. Strictly increasing in `c`.
pub fn temperature_scale(confidence: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(Error::invalid(format!("confidence {confidence} outside (0, 1]")));
    }
    if temperature == 1.0 {
        return Ok(confidence);
    }
    Ok((confidence.ln() / temperature).exp())
}

/// Temperatures tried by [`fit_temperature`]: 0.05, 0.10, ..., 10.
pub fn temperature_grid() -> impl Iterator<Item = f64> {
    (1..=200).map(|k| k as f64 / 20.0)
}

/// Grid search over [`temperature_grid`] for the temperature minimizing
/// density-based ECE on `dev`; ties keep the smallest temperature.
pub fn fit_temperature(dev: &[Judgement], bins: usize) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::invalid("empty dev set for temperature fitting"));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut scaled = dev.to_vec();
    for t in temperature_grid() {
        for (s, d) in scaled.iter_mut().zip(dev) {
            s.confidence = temperature_scale(d.confidence, t)?;
        }
        let e = ece(&scaled, bins)?;
        if best.is_none_or(|(_, be)| e < be) {
            best = Some((t, e));
        }
    }
    Ok(best.map(|(t, _)| t).expect("grid is nonempty"))
}
