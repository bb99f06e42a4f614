//! Sentence-level and corpus-level BLEU over token-id sequences.
//!
//! `sentence_bleu` is the reranking metric for sentence-oracle selection:
//! modified n-gram precisions for n = 1..4 with add-one smoothing on n >= 2
//! (unigrams unsmoothed), geometric mean, brevity penalty
//! `min(1, exp(1 - |ref|/|hyp|))`. `corpus_bleu` is the standard unsmoothed
//! aggregate used for validation and test reporting; it is self-consistent,
//! not calibrated against any external script.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::TokenId;

pub const MAX_NGRAM: usize = 4;

/// Counted n-grams of a token sequence for n = 1..=4.
#[derive(Debug, Clone, Default)]
pub struct NGramProfile {
    counts: [HashMap<Vec<TokenId>, u64>; MAX_NGRAM],
}

impl NGramProfile {
    pub fn of(tokens: &[TokenId]) -> NGramProfile {
        let mut profile = NGramProfile::default();
        for n in 1..=MAX_NGRAM {
            if tokens.len() < n {
                break;
            }
            let map = &mut profile.counts[n - 1];
            for w in tokens.windows(n) {
                *map.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        profile
    }

    /// Number of distinct-position n-grams, `max(0, len - n + 1)`.
    pub fn total(&self, n: usize) -> u64 {
        self.counts[n - 1].values().sum()
    }

    /// Clipped match count against a reference profile:
    /// `sum over n-grams of min(count_self, count_ref)`.
    pub fn clipped_matches(&self, reference: &NGramProfile, n: usize) -> u64 {
        self.counts[n - 1]
            .iter()
            .map(|(gram, c)| {
                let r = reference.counts[n - 1].get(gram).copied().unwrap_or(0);
                (*c).min(r)
            })
            .sum()
    }
}

/// Smoothed sentence BLEU in `[0, 1]`.
///
/// Degenerate inputs (empty hypothesis, or zero unigram matches) score 0.
pub fn sentence_bleu(hyp: &[TokenId], reference: &[TokenId]) -> f64 {
    debug_assert!(!reference.is_empty(), "reference must be nonempty");
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let hp = NGramProfile::of(hyp);
    let rp = NGramProfile::of(reference);

    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let candidates = hp.total(n);
        let matches = if candidates > 0 {
            hp.clipped_matches(&rp, n)
        } else {
            0
        };
        let precision = if n == 1 {
            if candidates == 0 {
                return 0.0;
            }
            matches as f64 / candidates as f64
        } else {
            (matches + 1) as f64 / (candidates + 1) as f64
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let geo_mean = (log_sum / MAX_NGRAM as f64).exp();
    brevity_penalty(hyp.len() as u64, reference.len() as u64) * geo_mean
}

fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Unsmoothed corpus BLEU in `[0, 1]`: counts aggregated over all pairs,
/// brevity penalty from total lengths.
pub fn corpus_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument {
            op: "corpus_bleu",
            msg: format!("{} hypotheses vs {} references", hyps.len(), refs.len()),
        });
    }
    let mut matches = [0u64; MAX_NGRAM];
    let mut totals = [0u64; MAX_NGRAM];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hyps.iter().zip(refs.iter()) {
        if r.is_empty() {
            return Err(Error::InvalidArgument {
                op: "corpus_bleu",
                msg: "empty reference".into(),
            });
        }
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        let hp = NGramProfile::of(h);
        let rp = NGramProfile::of(r);
        for n in 1..=MAX_NGRAM {
            totals[n - 1] += hp.total(n);
            matches[n - 1] += hp.clipped_matches(&rp, n);
        }
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        if totals[n - 1] == 0 || matches[n - 1] == 0 {
            return Ok(0.0);
        }
        log_sum += (matches[n - 1] as f64 / totals[n - 1] as f64).ln();
    }
    let geo_mean = (log_sum / MAX_NGRAM as f64).exp();
    Ok(brevity_penalty(hyp_len, ref_len) * geo_mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent n-gram counter: enumerates positions directly instead of
    /// going through `NGramProfile`.
    fn brute_counts(hyp: &[TokenId], rf: &[TokenId], n: usize) -> (u64, u64) {
        if hyp.len() < n {
            return (0, 0);
        }
        let grams: Vec<&[TokenId]> = hyp.windows(n).collect();
        let total = grams.len() as u64;
        let mut matched = 0u64;
        let mut seen: Vec<&[TokenId]> = Vec::new();
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_hyp = grams.iter().filter(|x| x == &g).count() as u64;
            let in_ref = if rf.len() >= n {
                rf.windows(n).filter(|x| x == g).count() as u64
            } else {
                0
            };
            matched += in_hyp.min(in_ref);
        }
        (matched, total)
    }

    fn brute_sentence_bleu(hyp: &[TokenId], rf: &[TokenId]) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let mut product = 1.0;
        for n in 1..=4 {
            let (m, t) = brute_counts(hyp, rf, n);
            let p = if n == 1 {
                if t == 0 {
                    return 0.0;
                }
                m as f64 / t as f64
            } else {
                (m + 1) as f64 / (t + 1) as f64
            };
            product *= p;
        }
        let bp = if hyp.len() >= rf.len() {
            1.0
        } else {
            (1.0 - rf.len() as f64 / hyp.len() as f64).exp()
        };
        bp * product.powf(0.25)
    }

    #[test]
    fn perfect_match_scores_one() {
        let s: Vec<TokenId> = vec![4, 5, 6, 7, 8];
        assert!((sentence_bleu(&s, &s) - 1.0).abs() < 1e-12);
        // smoothing keeps short perfect matches at 1 as well (|x| >= 1)
        for len in 1..4 {
            let s: Vec<TokenId> = (4..4 + len).collect();
            assert!((sentence_bleu(&s, &s) - 1.0).abs() < 1e-12, "len {len}");
        }
    }

    #[test]
    fn worked_example_abcd_vs_abce() {
        // p1 = 3/4, p2 = 3/4, p3 = 2/3, p4 = 1/2, BP = 1
        // (0.1875)^(1/4) = 0.65804...
        let hyp = vec![4, 5, 6, 7];
        let rf = vec![4, 5, 6, 8];
        let got = sentence_bleu(&hyp, &rf);
        let expect = 0.1875f64.powf(0.25);
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.6581).abs() < 1e-4);
    }

    #[test]
    fn worked_example_short_hyp_brevity_penalty() {
        // hyp = first two tokens of a 4-token reference:
        // p1 = 1, p2 = 1, p3 and p4 smoothed to 1/1; BP = exp(1 - 4/2)
        let hyp = vec![4, 5];
        let rf = vec![4, 5, 6, 7];
        let got = sentence_bleu(&hyp, &rf);
        let expect = (-1.0f64).exp();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        assert_eq!(sentence_bleu(&[], &[4, 5]), 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_pairs() {
        use crate::numerics::Rng;
        let mut rng = Rng::new(2024);
        for _ in 0..500 {
            let hl = 1 + rng.below(12);
            let rl = 1 + rng.below(12);
            let hyp: Vec<TokenId> = (0..hl).map(|_| 4 + rng.below(6) as TokenId).collect();
            let rf: Vec<TokenId> = (0..rl).map(|_| 4 + rng.below(6) as TokenId).collect();
            let a = sentence_bleu(&hyp, &rf);
            let b = brute_sentence_bleu(&hyp, &rf);
            assert!((a - b).abs() < 1e-12, "{hyp:?} vs {rf:?}: {a} vs {b}");
        }
    }

    #[test]
    fn corpus_bleu_perfect_and_single_pair() {
        let refs = vec![vec![4, 5, 6, 7], vec![8, 9, 10, 11, 12]];
        assert!((corpus_bleu(&refs, &refs).unwrap() - 1.0).abs() < 1e-12);

        // single pair: equals the unsmoothed sentence computation
        let hyp = vec![vec![4, 5, 6, 7, 9]];
        let rf = vec![vec![4, 5, 6, 7, 8]];
        let got = corpus_bleu(&hyp, &rf).unwrap();
        // p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2, BP = 1
        let expect = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn corpus_bleu_two_pair_matches_aggregation_oracle() {
        let hyps = vec![vec![4, 5, 6, 7, 8], vec![5, 5, 6, 9]];
        let refs = vec![vec![4, 5, 6, 9, 8], vec![5, 5, 6, 7]];
        let mut m = [0u64; 4];
        let mut t = [0u64; 4];
        for (h, r) in hyps.iter().zip(refs.iter()) {
            for n in 1..=4 {
                let (mm, tt) = brute_counts(h, r, n);
                m[n - 1] += mm;
                t[n - 1] += tt;
            }
        }
        let mut prod = 1.0;
        for n in 0..4 {
            prod *= m[n] as f64 / t[n] as f64;
        }
        let expect = prod.powf(0.25); // equal total lengths, BP = 1
        let got = corpus_bleu(&hyps, &refs).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn corpus_bleu_rejects_length_mismatch() {
        assert!(corpus_bleu(&[vec![4]], &[]).is_err());
    }

    #[test]
    fn corpus_bleu_order_invariant() {
        let hyps = vec![vec![4, 5, 6, 7], vec![8, 9, 4, 5, 6], vec![4, 4, 5]];
        let refs = vec![vec![4, 5, 6, 8], vec![8, 9, 4, 5, 7], vec![4, 5, 5]];
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let hyps_r: Vec<_> = hyps.iter().rev().cloned().collect();
        let refs_r: Vec<_> = refs.iter().rev().cloned().collect();
        let b = corpus_bleu(&hyps_r, &refs_r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permutations_never_beat_identity_on_higher_ngrams() {
        // all 24 permutations of a length-4 hypothesis against ref == identity
        fn perms(xs: &[TokenId]) -> Vec<Vec<TokenId>> {
            if xs.len() <= 1 {
                return vec![xs.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..xs.len() {
                let mut rest = xs.to_vec();
                let head = rest.remove(i);
                for mut tail in perms(&rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }
        for rf in [vec![4, 5, 6, 7], vec![4, 4, 5, 6]] {
            let rp = NGramProfile::of(&rf);
            let identity = NGramProfile::of(&rf);
            for perm in perms(&rf) {
                let pp = NGramProfile::of(&perm);
                for n in 2..=4 {
                    assert!(
                        pp.clipped_matches(&rp, n) <= identity.clipped_matches(&rp, n),
                        "perm {perm:?} n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn ngram_totals_follow_length_formula() {
        let s: Vec<TokenId> = vec![4, 5, 6];
        let p = NGramProfile::of(&s);
        assert_eq!(p.total(1), 3);
        assert_eq!(p.total(2), 2);
        assert_eq!(p.total(3), 1);
        assert_eq!(p.total(4), 0);
    }
}
