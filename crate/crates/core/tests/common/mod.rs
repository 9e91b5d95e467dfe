#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use selqa_core::eval::{PairedPrediction, ScoredPrediction, Scores};
use selqa_core::toy_lm::{ConditionalTable, TokenId, Vocabulary};
use selqa_core::Question;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Random distribution over `n` tokens, some entries zero, never all zero.
pub fn random_distribution(rng: &mut StdRng, n: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.01..1.0) })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

/// Random table model: tokens t0..t{v-1} plus `<eos>` last, one prompt "p".
pub fn random_model(rng: &mut StdRng) -> ConditionalTable {
    let v = rng.gen_range(2..5);
    let max_len = rng.gen_range(1..4);
    let mut tokens: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
    tokens.push("<eos>".into());
    let eos = v;
    let vocab = Vocabulary::new(tokens, "<eos>").unwrap();
    let mut entries = Vec::new();
    let mut stack: Vec<Vec<TokenId>> = vec![vec![]];
    while let Some(prefix) = stack.pop() {
        let dist = if prefix.len() == max_len - 1 {
            let mut d = vec![0.0; v + 1];
            d[eos] = 1.0;
            d
        } else {
            random_distribution(rng, v + 1)
        };
        for (t, &p) in dist.iter().enumerate() {
            if p > 0.0 && t != eos {
                let mut next = prefix.clone();
                next.push(t);
                stack.push(next);
            }
        }
        entries.push(("p".to_string(), prefix, dist));
    }
    ConditionalTable::new(vocab, max_len, entries).unwrap()
}

/// (confidence, correct) pairs with confidences in (0, 1].
pub fn random_judged(rng: &mut StdRng, n: usize) -> Vec<(f64, bool)> {
    (0..n)
        .map(|_| (rng.gen_range(1e-3..=1.0), rng.gen_bool(0.6)))
        .collect()
}

fn scored(answer: &str, likelihood: f64, ans: f64, con: f64, correct: bool) -> ScoredPrediction {
    ScoredPrediction {
        answer: answer.into(),
        scores: Scores {
            lm_likelihood: Some(likelihood),
            p_answerable: Some(ans),
            p_consistent: Some(con),
        },
        correct,
    }
}

pub fn random_pairs(rng: &mut StdRng, n: usize) -> Vec<PairedPrediction> {
    (0..n)
        .map(|i| {
            let mut side = |name: &str| {
                scored(
                    name,
                    rng.gen_range(1e-3..=1.0),
                    rng.gen_range(0.0..=1.0),
                    rng.gen_range(0.0..=1.0),
                    rng.gen_bool(0.5),
                )
            };
            let doc = side("doc");
            let qa = side("qa");
            PairedPrediction {
                question: Question::new(format!("q{i:04}"), "q", vec!["gold".into()], Some(rng.gen_bool(0.5)))
                    .unwrap(),
                doc,
                qa,
            }
        })
        .collect()
}

/// Replaces every score with the correctness indicator.
pub fn with_oracle_confidences(pairs: &[PairedPrediction]) -> Vec<PairedPrediction> {
    pairs
        .iter()
        .map(|p| {
            let mut p = p.clone();
            for side in [&mut p.doc, &mut p.qa] {
                let c = if side.correct { 1.0 } else { 0.0 };
                side.scores = Scores {
                    lm_likelihood: Some(c),
                    p_answerable: Some(c),
                    p_consistent: Some(c),
                };
            }
            p
        })
        .collect()
}

/// Exact-mass fixture: prompt "q1" answers "paris" with probability 0.7.
pub fn fixture_f() -> ConditionalTable {
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

/// Brute-force density ECE: rank items by (confidence, id), assign rank r to
/// the bin whose cumulative boundary first exceeds r.
pub fn brute_force_ece(items: &[(String, f64, bool)], m: usize) -> f64 {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .1
            .partial_cmp(&items[b].1)
            .unwrap()
            .then(items[a].0.cmp(&items[b].0))
    });
    let mut boundaries = Vec::new();
    let mut acc = 0;
    for b in 0..m {
        acc += if b < n % m { n / m + 1 } else { n / m };
        boundaries.push(acc);
    }
    let mut conf = vec![0.0; m];
    let mut hits = vec![0.0; m];
    let mut count = vec![0.0; m];
    for (rank, &i) in order.iter().enumerate() {
        let b = boundaries.iter().position(|&e| rank < e).unwrap();
        conf[b] += items[i].1;
        hits[b] += if items[i].2 { 1.0 } else { 0.0 };
        count[b] += 1.0;
    }
    (0..m)
        .map(|b| (hits[b] / count[b] - conf[b] / count[b]).abs())
        .sum::<f64>()
        / m as f64
}

/// AUC of a fixed answering order: mean over k of the error rate of the first k.
pub fn ordering_auc(correct_in_order: &[bool]) -> f64 {
    let n = correct_in_order.len();
    let mut total = 0.0;
    for k in 1..=n {
        let errs = correct_in_order[..k].iter().filter(|c| !**c).count();
        total += errs as f64 / k as f64;
    }
    total / n as f64
}

/// Minimum AUC over every permutation of the predictions.
pub fn min_auc_over_orderings(correct: &[bool]) -> f64 {
    fn permute(items: &mut Vec<bool>, k: usize, best: &mut f64) {
        if k == items.len() {
            *best = best.min(ordering_auc(items));
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, best);
            items.swap(k, i);
        }
    }
    let mut v = correct.to_vec();
    let mut best = f64::INFINITY;
    permute(&mut v, 0, &mut best);
    best
}
