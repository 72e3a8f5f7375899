//! Multi-reference relevancy: BLEU computed here, BERTScore delegated.
//!
//! BLEU uses uniform weights over orders 1..=4, counts clipped by the
//! maximum count in any single reference, and the brevity penalty against
//! the reference length closest to the candidate (shorter on ties). A zero
//! clipped count at an order is replaced by `1e-9 / total`. Orders for which
//! the candidate has no n-grams at all are left out and the remaining
//! weights renormalized, so a candidate identical to a reference scores 1
//! whatever its length. Tokens are whitespace-separated and case-sensitive.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nli::PairScorer;

pub const BLEU_MAX_ORDER: usize = 4;
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bleu {
    pub value: f64,
    /// Set when the candidate had no tokens; `value` is then 0.
    pub empty_candidate: bool,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn split_refs(references: &[String]) -> Result<Vec<Vec<&str>>> {
    let refs: Vec<Vec<&str>> = references
        .iter()
        .map(|r| r.split_whitespace().collect::<Vec<_>>())
        .filter(|r| !r.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(Error::Input("BLEU needs at least one non-empty reference".into()));
    }
    Ok(refs)
}

/// Clipped precision per order 1..=4 (`None` where the candidate has no
/// n-grams of that order), before smoothing.
pub fn modified_precisions(candidate: &str, references: &[String]) -> Result<Vec<Option<f64>>> {
    let refs = split_refs(references)?;
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    Ok(clipped_counts(&cand, &refs)
        .into_iter()
        .map(|(clipped, total)| (total > 0).then(|| clipped as f64 / total as f64))
        .collect())
}

fn clipped_counts(cand: &[&str], refs: &[Vec<&str>]) -> Vec<(usize, usize)> {
    (1..=BLEU_MAX_ORDER)
        .map(|n| {
            let cand_counts = ngram_counts(cand, n);
            let total: usize = cand_counts.values().sum();
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            let clipped: usize = cand_counts
                .iter()
                .map(|(g, &k)| {
                    let max_ref = ref_counts
                        .iter()
                        .map(|rc| rc.get(g).copied().unwrap_or(0))
                        .max()
                        .unwrap_or(0);
                    k.min(max_ref)
                })
                .sum();
            (clipped, total)
        })
        .collect()
}

pub fn bleu_multi_ref(candidate: &str, references: &[String]) -> Result<Bleu> {
    let refs = split_refs(references)?;
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    if cand.is_empty() {
        log::warn!("BLEU of an empty candidate is 0");
        return Ok(Bleu {
            value: 0.0,
            empty_candidate: true,
        });
    }

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for (clipped, total) in clipped_counts(&cand, &refs) {
        if total == 0 {
            continue;
        }
        let p = if clipped == 0 {
            BLEU_EPSILON / total as f64
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
        orders += 1;
    }

    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(c);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(Bleu {
        value: bp * (log_sum / orders as f64).exp(),
        empty_candidate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Starting,
    Ending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancyReport {
    pub conversation_id: String,
    pub phase: Phase,
    pub bleu: f64,
    pub bertscore: f64,
}

/// Mean BLEU and mean BERTScore of `responses` against `references`.
pub fn set_relevancy<S: PairScorer + ?Sized>(
    conversation_id: &str,
    phase: Phase,
    responses: &[String],
    references: &[String],
    scorer: &S,
) -> Result<RelevancyReport> {
    if responses.is_empty() {
        return Err(Error::InsufficientResponses { needed: 1, got: 0 });
    }
    let mut bleu = 0.0;
    let mut bert = 0.0;
    for r in responses {
        bleu += bleu_multi_ref(r, references)?.value;
        bert += scorer.bertscore(r, references)?;
    }
    let n = responses.len() as f64;
    Ok(RelevancyReport {
        conversation_id: conversation_id.to_string(),
        phase,
        bleu: bleu / n,
        bertscore: bert / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::MockScorer;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn identical_candidate_scores_one() {
        let b = bleu_multi_ref("the cat sat on the mat", &s(&["a dog", "the cat sat on the mat"])).unwrap();
        assert!((b.value - 1.0).abs() < 1e-12);
        // shorter than the max order
        let b = bleu_multi_ref("ok", &s(&["ok"])).unwrap();
        assert_eq!(b.value, 1.0);
    }

    #[test]
    fn disjoint_candidate_is_epsilon_floored() {
        let b = bleu_multi_ref("p q r s", &s(&["a b c d"])).unwrap();
        assert!(b.value > 0.0 && b.value < 1e-8, "{}", b.value);
    }

    #[test]
    fn empty_candidate_flags() {
        let b = bleu_multi_ref("   ", &s(&["a"])).unwrap();
        assert_eq!(
            b,
            Bleu {
                value: 0.0,
                empty_candidate: true
            }
        );
        assert!(bleu_multi_ref("a", &s(&[""])).is_err());
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        // candidate 2 tokens, refs of 3 and 8 tokens; closest is 3
        let b = bleu_multi_ref("a b", &s(&["a b c", "a b c d e f g h"])).unwrap();
        let expected = (1.0f64 - 3.0 / 2.0).exp();
        assert!((b.value - expected).abs() < 1e-12);
    }

    #[test]
    fn set_relevancy_means() {
        let refs = s(&["hello there friend", "x y z", "p", "q", "r"]);
        let responses = s(&["hello there friend", "hello there friend"]);
        let rep = set_relevancy("c", Phase::Starting, &responses, &refs, &MockScorer::new()).unwrap();
        assert_eq!(rep.bleu, 1.0);
        assert_eq!(rep.bertscore, 1.0);
        let rep = set_relevancy("c", Phase::Ending, &s(&["m n"]), &refs, &MockScorer::new()).unwrap();
        assert_eq!(rep.bertscore, 0.0);
    }
}
