mod common;

use selqa_core::toy_lm::{derive_seed, enumerate_outputs, greedy_decode, sample_decode};

#[test]
fn greedy_follows_raw_table_argmax() {
    let mut rng = common::rng(1);
    for _ in 0..200 {
        let m = common::random_model(&mut rng);
        let d = greedy_decode(&m, "p", m.max_len()).unwrap();
        let mut prefix = Vec::new();
        for (tok, &p) in d.tokens.iter().zip(&d.step_probs) {
            let dist = m.distribution("p", &prefix).unwrap();
            let max = dist.iter().cloned().fold(f64::MIN, f64::max);
            let first_max = dist.iter().position(|&x| x == max).unwrap();
            assert_eq!(m.vocab().token(first_max), tok);
            assert_eq!(p, max);
            prefix.push(first_max);
        }
        assert_eq!(d.tokens.last().map(String::as_str), Some("<eos>"));
        assert_eq!(d.tokens.len(), d.step_probs.len());
        assert!(d.step_probs.iter().all(|&p| p > 0.0 && p <= 1.0));
    }
}

#[test]
fn enumeration_is_a_distribution_containing_greedy() {
    let mut rng = common::rng(2);
    for _ in 0..200 {
        let m = common::random_model(&mut rng);
        let out = enumerate_outputs(&m, "p", m.max_len()).unwrap();
        let total: f64 = out.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() <= 1e-9, "total {total}");

        let g = greedy_decode(&m, "p", m.max_len()).unwrap();
        let path: f64 = g.step_probs.iter().product();
        assert_eq!(g.path_probability(), path);
        let merged = out.iter().find(|(t, _)| *t == g.answer_text).unwrap().1;
        // distinct token paths never share text here, so the entry is exactly the path mass
        assert!((merged - path).abs() <= 1e-12);
    }
}

#[test]
fn sampling_frequencies_match_enumeration() {
    let mut rng = common::rng(3);
    let k = 3000;
    for case in 0..5 {
        let m = common::random_model(&mut rng);
        let exact = enumerate_outputs(&m, "p", m.max_len()).unwrap();
        let mut counts = std::collections::HashMap::new();
        for s in 0..k {
            let d = sample_decode(&m, "p", derive_seed(case, &s.to_string()), 1.0).unwrap();
            *counts.entry(d.answer_text).or_insert(0usize) += 1;
        }
        for (text, p) in &exact {
            let freq = *counts.get(text).unwrap_or(&0) as f64 / k as f64;
            let se = (p * (1.0 - p) / k as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se + 1e-12, "{text}: {freq} vs {p}");
        }
    }
}

#[test]
fn fixture_mass() {
    let out = enumerate_outputs(&common::fixture_f(), "q1", 2).unwrap();
    assert_eq!(out[0], ("paris".to_string(), 0.7));
}
