//! Selective question answering over two knowledge sources.
//!
//! A reader answers each question twice, once from retrieved documents and
//! once from a pseudo-passage of retrieved question-answer pairs. Each answer
//! gets a calibrated confidence (sequence likelihood, answerability and
//! sampling consistency, averaged), and the more confident answer is kept.
//!
//! Modules:
//! - [`qa`]: domain types, answer normalization, exact match, containment
//! - [`toy_lm`]: table-driven token model (greedy, sampling, enumeration)
//! - [`prompting`]: QA-history passage, context assembly, calibration template
//! - [`calibrate`]: confidence estimates, labels, quantiles, ensemble, tempering
//! - [`eval`]: selection rule, ECE, risk-coverage, oracle, ratios, recall
//! - [`records`], [`pipeline`], [`config`], [`demo`]: log ingestion and the end-to-end runs

pub mod calibrate;
pub mod config;
pub mod demo;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompting;
pub mod qa;
pub mod records;
pub mod toy_lm;

pub use calibrate::{ConfidenceBreakdown, QuantileThresholds};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{Criterion, Judgement, PairedPrediction};
pub use qa::{KnowledgeSource, Question};
pub use records::PredictionRecord;
