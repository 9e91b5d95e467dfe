//! Table-driven conditional token model.
//!
//! A [`ConditionalTable`] maps `(prompt, decoded prefix)` to a distribution
//! over a fixed [`Vocabulary`]. It stands in for a trained generator: greedy
//! decoding, tempered sampling and exhaustive enumeration all run against the
//! table, so every downstream confidence is exactly computable.
//!
//! The length horizon is part of the table: every distribution at prefix
//! length `max_len - 1` must put all of its mass on end-of-sequence, so each
//! sequence terminates within `max_len` tokens and enumeration is exact.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

const SUM_TOLERANCE: f64 = 1e-9;

/// Below this temperature sampling dispatches to greedy decoding.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos: &str) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Model(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let eos = *index
            .get(eos)
            .ok_or_else(|| Error::Model(format!("end-of-sequence token {eos:?} not in vocabulary")))?;
        Ok(Vocabulary { tokens, index, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Joins the tokens with single spaces, dropping end-of-sequence.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&t| t != self.eos)
            .map(|&t| self.token(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAnswer {
    pub tokens: Vec<String>,
    /// Table probability of each emitted token, end-of-sequence included.
    pub step_probs: Vec<f64>,
    pub answer_text: String,
}

impl DecodedAnswer {
    /// Product of the step probabilities.
    pub fn path_probability(&self) -> f64 {
        self.step_probs.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct ConditionalTable {
    vocab: Vocabulary,
    max_len: usize,
    table: HashMap<String, HashMap<Vec<TokenId>, Vec<f64>>>,
}

impl ConditionalTable {
    /// Builds and validates a table. Distributions are given per state as a
    /// dense vector aligned with the vocabulary.
    pub fn new(
        vocab: Vocabulary,
        max_len: usize,
        entries: impl IntoIterator<Item = (String, Vec<TokenId>, Vec<f64>)>,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Model("max_len must be at least 1".into()));
        }
        let mut table: HashMap<String, HashMap<Vec<TokenId>, Vec<f64>>> = HashMap::new();
        for (prompt, prefix, dist) in entries {
            let state = describe(&vocab, &prompt, &prefix);
            if dist.len() != vocab.len() {
                return Err(Error::Model(format!("{state}: distribution has wrong arity")));
            }
            if prefix.iter().any(|&t| t >= vocab.len()) {
                return Err(Error::Model(format!("{state}: prefix token out of range")));
            }
            if prefix.contains(&vocab.eos) {
                return Err(Error::Model(format!("{state}: prefix contains end-of-sequence")));
            }
            if prefix.len() >= max_len {
                return Err(Error::Model(format!("{state}: prefix longer than max_len - 1")));
            }
            if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Model(format!("{state}: negative or non-finite probability")));
            }
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::Model(format!("{state}: probabilities sum to {total}")));
            }
            if prefix.len() == max_len - 1
                && dist.iter().enumerate().any(|(t, &p)| t != vocab.eos && p > 0.0)
            {
                return Err(Error::Model(format!(
                    "{state}: distribution at the length horizon must put all mass on end-of-sequence"
                )));
            }
            let slot = table.entry(prompt).or_default();
            if slot.insert(prefix, dist).is_some() {
                return Err(Error::Model(format!("{state}: duplicate entry")));
            }
        }
        let model = ConditionalTable {
            vocab,
            max_len,
            table,
        };
        model.check_coverage()?;
        Ok(model)
    }

    /// Every state reachable with positive probability must have an entry.
    fn check_coverage(&self) -> Result<()> {
        let mut prompts: Vec<&String> = self.table.keys().collect();
        prompts.sort();
        for prompt in prompts {
            let mut stack = vec![Vec::new()];
            while let Some(prefix) = stack.pop() {
                let dist = self.distribution(prompt, &prefix)?;
                for (t, &p) in dist.iter().enumerate() {
                    if p > 0.0 && t != self.vocab.eos {
                        let mut next = prefix.clone();
                        next.push(t);
                        stack.push(next);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn has_prompt(&self, prompt: &str) -> bool {
        self.table.contains_key(prompt)
    }

    pub fn distribution(&self, prompt: &str, prefix: &[TokenId]) -> Result<&[f64]> {
        self.table
            .get(prompt)
            .and_then(|m| m.get(prefix))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Coverage {
                prompt: prompt.to_string(),
                prefix: prefix.iter().map(|&t| self.vocab.token(t).to_string()).collect(),
            })
    }

    /// Probability of `token` as the next token after `prefix`.
    pub fn token_probability(&self, prompt: &str, prefix: &[TokenId], token: TokenId) -> Result<f64> {
        Ok(self.distribution(prompt, prefix)?[token])
    }

    fn finish(&self, ids: Vec<TokenId>, step_probs: Vec<f64>) -> DecodedAnswer {
        DecodedAnswer {
            answer_text: self.vocab.detokenize(&ids),
            tokens: ids.iter().map(|&t| self.vocab.token(t).to_string()).collect(),
            step_probs,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("model file: {e}")))?;
        file.build()
    }
}

fn describe(vocab: &Vocabulary, prompt: &str, prefix: &[TokenId]) -> String {
    let toks: Vec<&str> = prefix
        .iter()
        .map(|&t| if t < vocab.len() { vocab.token(t) } else { "?" })
        .collect();
    format!("state (prompt {prompt:?}, prefix {toks:?})")
}

/// Greedy decoding: argmax at each step, ties to the earliest vocabulary token.
///
/// Fails if `max_len` tokens are emitted without reaching end-of-sequence.
pub fn greedy_decode(model: &ConditionalTable, prompt: &str, max_len: usize) -> Result<DecodedAnswer> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let eos = model.vocab.eos;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    loop {
        let dist = model.distribution(prompt, &ids)?;
        let (tok, p) = argmax(dist);
        ids.push(tok);
        probs.push(p);
        if tok == eos {
            return Ok(model.finish(ids, probs));
        }
        if ids.len() >= max_len {
            return Err(Error::invalid(format!(
                "greedy decode of {prompt:?} did not reach end-of-sequence within {max_len} tokens"
            )));
        }
    }
}

fn argmax(dist: &[f64]) -> (TokenId, f64) {
    let mut best = (0, dist[0]);
    for (t, &p) in dist.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (t, p);
        }
    }
    best
}

/// Uniform draw in [0, 1) from the top 53 bits of a u64.
fn unit_draw(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Tempered ancestral sampling. Each step draws from `p^(1/temperature)`
/// renormalized; `step_probs` keep the untempered table probabilities.
pub fn sample_decode(
    model: &ConditionalTable,
    prompt: &str,
    seed: u64,
    temperature: f64,
) -> Result<DecodedAnswer> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if temperature < GREEDY_TEMPERATURE {
        return greedy_decode(model, prompt, model.max_len);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eos = model.vocab.eos;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    let mut weights = vec![0.0; model.vocab.len()];
    loop {
        let dist = model.distribution(prompt, &ids)?;
        let inv = 1.0 / temperature;
        for (w, &p) in weights.iter_mut().zip(dist) {
            *w = if p > 0.0 {
                if temperature == 1.0 { p } else { p.powf(inv) }
            } else {
                0.0
            };
        }
        let total: f64 = weights.iter().sum();
        let target = unit_draw(&mut rng) * total;
        let mut acc = 0.0;
        // fall back to the last positive-weight token if rounding leaves target uncovered
        let mut tok = weights.iter().rposition(|&w| w > 0.0).unwrap_or(eos);
        for (t, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            if target < acc {
                tok = t;
                break;
            }
        }
        ids.push(tok);
        probs.push(dist[tok]);
        if tok == eos {
            return Ok(model.finish(ids, probs));
        }
    }
}

/// Every complete output with its exact probability, identical answer texts
/// merged. Sorted by descending probability, then by text.
pub fn enumerate_outputs(
    model: &ConditionalTable,
    prompt: &str,
    max_len: usize,
) -> Result<Vec<(String, f64)>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let eos = model.vocab.eos;
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 1.0)];
    while let Some((prefix, mass)) = stack.pop() {
        let dist = model.distribution(prompt, &prefix)?;
        for (t, &p) in dist.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let mut next = prefix.clone();
            next.push(t);
            if t == eos {
                *merged.entry(model.vocab.detokenize(&next)).or_insert(0.0) += mass * p;
            } else if next.len() < max_len {
                stack.push((next, mass * p));
            } else {
                return Err(Error::invalid(format!(
                    "prompt {prompt:?} has outputs longer than {max_len} tokens"
                )));
            }
        }
    }
    let mut out: Vec<(String, f64)> = merged.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Per-record seed: FNV-1a over the record id, folded with the global seed
/// through a SplitMix64 finalizer. Stable across platforms and releases.
pub fn derive_seed(global_seed: u64, record_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in record_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(global_seed ^ splitmix64(h))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// On-disk model description.
///
/// ```json
/// {"vocabulary": ["paris", "london", "<eos>"], "eos": "<eos>", "max_len": 2,
///  "entries": [{"prompt": "q1", "prefix": [], "distribution": {"paris": 0.7, "london": 0.3}}]}
/// ```
/// Tokens missing from a distribution have probability zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub vocabulary: Vec<String>,
    pub eos: String,
    pub max_len: usize,
    pub entries: Vec<ModelEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub prompt: String,
    #[serde(default)]
    pub prefix: Vec<String>,
    pub distribution: BTreeMap<String, f64>,
}

impl ModelFile {
    pub fn build(&self) -> Result<ConditionalTable> {
        let vocab = Vocabulary::new(self.vocabulary.clone(), &self.eos)?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let lookup = |t: &String| {
                vocab.id(t).ok_or_else(|| {
                    Error::Model(format!(
                        "entry for prompt {:?}, prefix {:?}: unknown token {t:?}",
                        e.prompt, e.prefix
                    ))
                })
            };
            let prefix = e.prefix.iter().map(lookup).collect::<Result<Vec<_>>>()?;
            let mut dist = vec![0.0; vocab.len()];
            for (tok, &p) in &e.distribution {
                dist[lookup(tok)?] = p;
            }
            entries.push((e.prompt.clone(), prefix, dist));
        }
        ConditionalTable::new(vocab, self.max_len, entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// "q1": {paris 0.7, london 0.3}, then end-of-sequence.
    pub(crate) fn fixture_f() -> ConditionalTable {
        ConditionalTable::from_json(
            r#"{"vocabulary": ["paris", "london", "<eos>"], "eos": "<eos>", "max_len": 2,
                "entries": [
                  {"prompt": "q1", "prefix": [], "distribution": {"paris": 0.7, "london": 0.3}},
                  {"prompt": "q1", "prefix": ["paris"], "distribution": {"<eos>": 1.0}},
                  {"prompt": "q1", "prefix": ["london"], "distribution": {"<eos>": 1.0}}
                ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn greedy_picks_argmax() {
        let f = fixture_f();
        let d = greedy_decode(&f, "q1", 2).unwrap();
        assert_eq!(d.tokens, vec!["paris", "<eos>"]);
        assert_eq!(d.step_probs, vec![0.7, 1.0]);
        assert_eq!(d.answer_text, "paris");
    }

    #[test]
    fn greedy_tie_goes_to_earliest_token() {
        let m = ConditionalTable::from_json(
            r#"{"vocabulary": ["a", "b", "<eos>"], "eos": "<eos>", "max_len": 2,
                "entries": [
                  {"prompt": "p", "distribution": {"b": 0.5, "a": 0.5}},
                  {"prompt": "p", "prefix": ["a"], "distribution": {"<eos>": 1.0}},
                  {"prompt": "p", "prefix": ["b"], "distribution": {"<eos>": 1.0}}
                ]}"#,
        )
        .unwrap();
        assert_eq!(greedy_decode(&m, "p", 2).unwrap().answer_text, "a");
    }

    #[test]
    fn horizon_one_forces_eos() {
        let m = ConditionalTable::from_json(
            r#"{"vocabulary": ["paris", "<eos>"], "eos": "<eos>", "max_len": 1,
                "entries": [{"prompt": "q1", "distribution": {"<eos>": 1.0}}]}"#,
        )
        .unwrap();
        let d = greedy_decode(&m, "q1", 1).unwrap();
        assert_eq!(d.tokens, vec!["<eos>"]);
        assert_eq!(d.answer_text, "");
        // fixture F cannot finish within one token
        assert!(greedy_decode(&fixture_f(), "q1", 1).is_err());
    }

    #[test]
    fn missing_state_names_it() {
        let err = greedy_decode(&fixture_f(), "nope", 2).unwrap_err();
        assert!(matches!(err, Error::Coverage { ref prompt, .. } if prompt == "nope"));
    }

    #[test]
    fn loader_rejects_bad_tables() {
        let bad_sum = r#"{"vocabulary": ["a", "<eos>"], "eos": "<eos>", "max_len": 2,
            "entries": [{"prompt": "p", "distribution": {"a": 0.5, "<eos>": 0.4}},
                        {"prompt": "p", "prefix": ["a"], "distribution": {"<eos>": 1.0}}]}"#;
        assert!(ConditionalTable::from_json(bad_sum).unwrap_err().to_string().contains("sum"));

        let uncovered = r#"{"vocabulary": ["a", "<eos>"], "eos": "<eos>", "max_len": 2,
            "entries": [{"prompt": "p", "distribution": {"a": 0.5, "<eos>": 0.5}}]}"#;
        assert!(matches!(
            ConditionalTable::from_json(uncovered).unwrap_err(),
            Error::Coverage { .. }
        ));

        let horizon = r#"{"vocabulary": ["a", "<eos>"], "eos": "<eos>", "max_len": 1,
            "entries": [{"prompt": "p", "distribution": {"a": 0.5, "<eos>": 0.5}}]}"#;
        assert!(ConditionalTable::from_json(horizon).unwrap_err().to_string().contains("horizon"));

        let no_eos = r#"{"vocabulary": ["a"], "eos": "<eos>", "max_len": 1, "entries": []}"#;
        assert!(ConditionalTable::from_json(no_eos).is_err());

        let extra = r#"{"vocabulary": ["<eos>"], "eos": "<eos>", "max_len": 1, "entries": [], "x": 1}"#;
        assert!(ConditionalTable::from_json(extra).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let f = fixture_f();
        let a = sample_decode(&f, "q1", 42, 1.0).unwrap();
        let b = sample_decode(&f, "q1", 42, 1.0).unwrap();
        assert_eq!(a, b);

        let k = 3000;
        let hits = (0..k)
            .filter(|&s| sample_decode(&f, "q1", derive_seed(7, &s.to_string()), 1.0).unwrap().answer_text == "paris")
            .count();
        let freq = hits as f64 / k as f64;
        let bound = 3.0 * (0.7_f64 * 0.3 / k as f64).sqrt();
        assert!((freq - 0.7).abs() <= bound, "freq {freq}");
    }

    #[test]
    fn tempered_sampling_keeps_table_probabilities() {
        let f = fixture_f();
        for seed in 0..50 {
            let d = sample_decode(&f, "q1", seed, 3.0).unwrap();
            let expected = if d.answer_text == "paris" { 0.7 } else { 0.3 };
            assert_eq!(d.step_probs, vec![expected, 1.0]);
        }
        assert_eq!(
            sample_decode(&f, "q1", 9, 1e-9).unwrap(),
            greedy_decode(&f, "q1", 2).unwrap()
        );
        assert!(sample_decode(&f, "q1", 9, 0.0).is_err());
    }

    #[test]
    fn enumerate_fixture() {
        let out = enumerate_outputs(&fixture_f(), "q1", 2).unwrap();
        assert_eq!(out, vec![("paris".to_string(), 0.7), ("london".to_string(), 0.3)]);
    }

    #[test]
    fn enumerate_keeps_distinct_texts() {
        let m = ConditionalTable::from_json(
            r#"{"vocabulary": ["x", "y", "z", "<eos>"], "eos": "<eos>", "max_len": 3,
                "entries": [
                  {"prompt": "p", "distribution": {"x": 0.5, "y": 0.5}},
                  {"prompt": "p", "prefix": ["x"], "distribution": {"z": 1.0}},
                  {"prompt": "p", "prefix": ["y"], "distribution": {"z": 1.0}},
                  {"prompt": "p", "prefix": ["x", "z"], "distribution": {"<eos>": 1.0}},
                  {"prompt": "p", "prefix": ["y", "z"], "distribution": {"<eos>": 1.0}}
                ]}"#,
        )
        .unwrap();
        let out = enumerate_outputs(&m, "p", 3).unwrap();
        assert_eq!(out, vec![("x z".to_string(), 0.5), ("y z".to_string(), 0.5)]);
    }

    #[test]
    fn seed_mixing_is_stable() {
        assert_eq!(derive_seed(1, "q1"), derive_seed(1, "q1"));
        assert_ne!(derive_seed(1, "q1"), derive_seed(2, "q1"));
        assert_ne!(derive_seed(1, "q1"), derive_seed(1, "q2"));
        // frozen so that reports stay reproducible across builds
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
