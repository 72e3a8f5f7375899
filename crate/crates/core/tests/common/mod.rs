#![allow(dead_code)]

use nlidiv_core::corpus::{Conversation, Turn};
use nlidiv_core::nli::{MockNli, NliLabel, NliResult, PairwiseNliMatrix};
use rand::Rng;

pub fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

pub fn conversation(id: &str) -> Conversation {
    Conversation::new(id, vec![Turn::new("A", "how was your weekend?")]).unwrap()
}

pub fn random_result<R: Rng>(rng: &mut R) -> NliResult {
    loop {
        let raw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 {
            if let Ok(r) = NliResult::from_unnormalized(raw.map(|p| p / sum)) {
                return r;
            }
        }
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize) -> PairwiseNliMatrix {
    PairwiseNliMatrix::from_fn(n, |_, _| random_result(rng)).unwrap()
}

/// Mock table over `r0..r{n-1}` with every ordered pair drawn at random.
pub fn random_table<R: Rng>(rng: &mut R, n: usize) -> (MockNli, Vec<String>) {
    let names: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let mut mock = MockNli::new("mock");
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mock.insert(&names[i], &names[j], random_result(rng));
            }
        }
    }
    (mock, names)
}

/// Directed contradictions among `r0..r4` giving 9 ordered C pairs, with
/// `r*` contradicting `r0`, `r1`, `r2` (one direction each). Everything
/// else falls back to neutral.
pub fn nine_to_twelve_table() -> MockNli {
    let c = NliLabel::Contradiction;
    MockNli::new("mock")
        .with_symmetric("r0", "r1", c, 0.9)
        .with_symmetric("r0", "r2", c, 0.9)
        .with_symmetric("r0", "r3", c, 0.9)
        .with_symmetric("r1", "r2", c, 0.9)
        .with("r1", "r3", c, 0.9)
        .with("r*", "r0", c, 0.9)
        .with("r*", "r1", c, 0.9)
        .with("r*", "r2", c, 0.9)
}

/// Naive O(n^2) average ranks.
pub fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let below = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
