//! Beam search for inference and length-constrained force decoding for
//! sentence-oracle generation.
//!
//! Both searches are generic over a [`StepModel`] so they run against the
//! real decoder and against hand-built probability tables in tests. When
//! noise is supplied, each expansion ranks and scores tokens by the
//! Gumbel-perturbed distribution `softmax((o + eta) / tau)` with fresh noise
//! per step per hypothesis.

use crate::data::{BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_slice, Rng};
use crate::oracle::perturbed_log_probs;
use crate::TokenId;

/// Per-step decoder interface consumed by the searches.
pub trait StepModel {
    type State: Clone;

    /// State ahead of the first step (the first fed token is always BOS).
    fn initial_state(&self) -> Self::State;

    /// Advance one step with `y_prev` as context; returns the new state and
    /// the unnormalized logits over the target vocabulary.
    fn step(&self, state: &Self::State, y_prev: TokenId) -> Result<(Self::State, Vec<f64>)>;

    fn vocab_size(&self) -> usize;
}

/// Partial translation tracked by the searches. `tokens` excludes BOS and
/// includes the terminal EOS once finished; `score` is the sum of the log
/// probabilities of the selection distribution.
#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub state: S,
    pub finished: bool,
}

/// Default inference length bound: `2 * |src| + 5`.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 5
}

/// Gumbel perturbation settings for a search.
pub struct Noise<'a> {
    pub rng: &'a mut Rng,
    pub tau: f64,
}

fn selection_log_probs(logits: &[f64], noise: &mut Option<Noise<'_>>) -> Vec<f64> {
    match noise {
        None => log_softmax_slice(logits),
        Some(n) => perturbed_log_probs(logits, n.tau, n.rng),
    }
}

/// Top `k` allowed tokens by log probability; ties by lower token id.
fn top_tokens(
    log_probs: &[f64],
    k: usize,
    allow: impl Fn(TokenId) -> bool,
) -> Vec<(TokenId, f64)> {
    let mut cands: Vec<(TokenId, f64)> = log_probs
        .iter()
        .enumerate()
        .filter(|(t, _)| allow(*t as TokenId))
        .map(|(t, lp)| (t as TokenId, *lp))
        .collect();
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite log probs"));
    cands.truncate(k);
    cands
}

struct Candidate<S> {
    from: usize,
    token: TokenId,
    log_prob: f64,
    state: S,
}

fn expand_live<M: StepModel>(
    model: &M,
    live: &[Hypothesis<M::State>],
    per_hyp: usize,
    noise: &mut Option<Noise<'_>>,
    allow: impl Fn(TokenId) -> bool + Copy,
) -> Result<Vec<Candidate<M::State>>> {
    let mut cands = Vec::new();
    for (bi, hyp) in live.iter().enumerate() {
        let y_prev = hyp.tokens.last().copied().unwrap_or(BOS);
        let (state, logits) = model.step(&hyp.state, y_prev)?;
        let log_probs = selection_log_probs(&logits, noise);
        for (token, log_prob) in top_tokens(&log_probs, per_hyp, allow) {
            cands.push(Candidate {
                from: bi,
                token,
                log_prob,
                state: state.clone(),
            });
        }
    }
    Ok(cands)
}

/// Keep the global top `k` candidates by cumulative score. The sort is
/// stable, so ties resolve to the earlier beam index, then the higher-ranked
/// token within it.
fn select_top<S>(
    mut cands: Vec<Candidate<S>>,
    live: &[Hypothesis<S>],
    k: usize,
) -> Vec<Candidate<S>> {
    cands.sort_by(|a, b| {
        let sa = live[a.from].score + a.log_prob;
        let sb = live[b.from].score + b.log_prob;
        sb.partial_cmp(&sa).expect("finite scores")
    });
    cands.truncate(k);
    cands
}

fn extend<S: Clone>(live: &[Hypothesis<S>], c: Candidate<S>) -> Hypothesis<S> {
    let parent = &live[c.from];
    let mut tokens = parent.tokens.clone();
    tokens.push(c.token);
    Hypothesis {
        tokens,
        score: parent.score + c.log_prob,
        state: c.state,
        finished: c.token == EOS,
    }
}

/// Standard beam search. Returns up to `beam` finished hypotheses sorted by
/// score descending. PAD and BOS never appear in expansions; a hypothesis
/// finishes on EOS; at `max_len` every live hypothesis is closed with EOS.
pub fn beam_search<M: StepModel>(
    model: &M,
    beam: usize,
    max_len: usize,
    mut noise: Option<Noise<'_>>,
) -> Result<Vec<Hypothesis<M::State>>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::InvalidArgument {
            op: "beam_search",
            msg: format!("beam {beam} and max_len {max_len} must be >= 1"),
        });
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: model.initial_state(),
        finished: false,
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();

    for step in 1..=max_len {
        let slots = beam - finished.len();
        if slots == 0 || live.is_empty() {
            break;
        }
        let last_step = step == max_len;
        let allow = |t: TokenId| {
            if last_step {
                t == EOS
            } else {
                t != PAD && t != BOS
            }
        };
        let cands = expand_live(model, &live, slots, &mut noise, allow)?;
        let selected = select_top(cands, &live, slots);
        let mut next_live = Vec::new();
        for c in selected {
            let hyp = extend(&live, c);
            if hyp.finished {
                finished.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
    }
    finished.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    Ok(finished)
}

/// Length-constrained beam search: every returned hypothesis has exactly
/// `ref_len + 1` tokens and ends in EOS.
///
/// For steps up to `ref_len`, EOS (and PAD/BOS) are excluded from the
/// candidate pool, so whenever EOS would rank among the chosen expansions the
/// next-best ordinary word takes its place; at step `ref_len + 1` every
/// hypothesis is closed with EOS regardless of its rank. UNK stays eligible.
pub fn force_decode<M: StepModel>(
    model: &M,
    ref_len: usize,
    beam: usize,
    mut noise: Option<Noise<'_>>,
) -> Result<Vec<Hypothesis<M::State>>> {
    if beam == 0 || ref_len == 0 {
        return Err(Error::InvalidArgument {
            op: "force_decode",
            msg: format!("beam {beam} and ref_len {ref_len} must be >= 1"),
        });
    }
    if model.vocab_size() < 6 {
        return Err(Error::InvalidArgument {
            op: "force_decode",
            msg: format!(
                "vocabulary of {} has fewer than 2 ordinary words; no second-best exists",
                model.vocab_size()
            ),
        });
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        state: model.initial_state(),
        finished: false,
    }];
    let allow = |t: TokenId| t == UNK || t > EOS;
    for _ in 1..=ref_len {
        let cands = expand_live(model, &live, beam, &mut noise, allow)?;
        let selected = select_top(cands, &live, beam);
        live = selected.into_iter().map(|c| extend(&live, c)).collect();
    }
    // terminal step: EOS for everyone
    let cands = expand_live(model, &live, 1, &mut noise, |t| t == EOS)?;
    let mut out: Vec<Hypothesis<M::State>> =
        cands.into_iter().map(|c| extend(&live, c)).collect();
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    Ok(out)
}
