//! Word-level and sentence-level oracle selection with Gumbel-Max
//! perturbation.
//!
//! The word oracle is the argmax of the (optionally perturbed) predicted
//! distribution at the previous step. The sentence oracle force-decodes beam
//! candidates of exactly the reference length and keeps the one with the
//! highest smoothed sentence BLEU. Perturbation adds Gumbel noise
//! `eta = -log(-log u)` to the logits and divides by the temperature before
//! the softmax; it only influences which token is selected, never the loss.

use crate::error::{Error, Result};
use crate::metrics::sentence_bleu;
use crate::model::{ModelParams, SentenceDecoder};
use crate::numerics::{argmax_slice, log_softmax_slice, softmax_slice, Rng};
use crate::search::{force_decode, Noise, StepModel};
use crate::TokenId;

/// Which context stream trains the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Pure teacher forcing.
    None,
    /// Per-step argmax of the predicted distribution.
    Word,
    /// Per-step argmax of the Gumbel-perturbed distribution.
    WordNoise,
    /// Force-decoded beam candidate reranked by sentence BLEU.
    Sentence,
    /// Sentence oracle with Gumbel-perturbed beam expansion.
    SentenceNoise,
}

impl OracleMode {
    pub fn uses_noise(&self) -> bool {
        matches!(self, OracleMode::WordNoise | OracleMode::SentenceNoise)
    }

    pub fn is_word(&self) -> bool {
        matches!(self, OracleMode::Word | OracleMode::WordNoise)
    }

    pub fn is_sentence(&self) -> bool {
        matches!(self, OracleMode::Sentence | OracleMode::SentenceNoise)
    }

    pub const ALL: [OracleMode; 5] = [
        OracleMode::None,
        OracleMode::Word,
        OracleMode::WordNoise,
        OracleMode::Sentence,
        OracleMode::SentenceNoise,
    ];
}

impl std::fmt::Display for OracleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OracleMode::None => "none",
            OracleMode::Word => "word",
            OracleMode::WordNoise => "word-noise",
            OracleMode::Sentence => "sentence",
            OracleMode::SentenceNoise => "sentence-noise",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for OracleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<OracleMode> {
        match s {
            "none" => Ok(OracleMode::None),
            "word" => Ok(OracleMode::Word),
            "word-noise" => Ok(OracleMode::WordNoise),
            "sentence" => Ok(OracleMode::Sentence),
            "sentence-noise" => Ok(OracleMode::SentenceNoise),
            other => Err(Error::Config(format!(
                "unknown oracle mode `{other}` (expected none, word, word-noise, sentence, sentence-noise)"
            ))),
        }
    }
}

/// Temperature for Gumbel perturbation; must be positive.
#[derive(Debug, Clone, Copy)]
pub struct GumbelConfig {
    pub tau: f64,
}

impl GumbelConfig {
    pub fn new(tau: f64) -> Result<GumbelConfig> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument {
                op: "gumbel_config",
                msg: format!("tau must be positive, got {tau}"),
            });
        }
        Ok(GumbelConfig { tau })
    }
}

/// `u` clamped away from 0 and 1 so the double log stays finite.
const U_EPS: f64 = 1e-12;

/// Gumbel(0,1) sample from a uniform draw: `-log(-log u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_EPS, 1.0 - U_EPS);
    -(-u.ln()).ln()
}

/// Fresh i.i.d. Gumbel noise vector.
pub fn gumbel_noise(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| gumbel_from_uniform(rng.next_f64())).collect()
}

/// Perturbed distribution `softmax((o + eta) / tau)`.
pub fn perturb(logits: &[f64], cfg: GumbelConfig, rng: &mut Rng) -> Vec<f64> {
    let eta = gumbel_noise(rng, logits.len());
    let scaled: Vec<f64> = logits
        .iter()
        .zip(eta.iter())
        .map(|(o, e)| (o + e) / cfg.tau)
        .collect();
    softmax_slice(&scaled)
}

/// Log of the perturbed distribution, used to rank and score beam
/// expansions under noise.
pub fn perturbed_log_probs(logits: &[f64], tau: f64, rng: &mut Rng) -> Vec<f64> {
    debug_assert!(tau > 0.0);
    let eta = gumbel_noise(rng, logits.len());
    let scaled: Vec<f64> = logits
        .iter()
        .zip(eta.iter())
        .map(|(o, e)| (o + e) / tau)
        .collect();
    log_softmax_slice(&scaled)
}

/// Word-level oracle: argmax of the predicted distribution, perturbed when
/// noise is supplied. Ties break to the lowest id.
pub fn word_oracle(logits: &[f64], noise: Option<(&mut Rng, f64)>) -> TokenId {
    match noise {
        None => argmax_slice(logits) as TokenId,
        Some((rng, tau)) => {
            let p = perturb(logits, GumbelConfig { tau }, rng);
            argmax_slice(&p) as TokenId
        }
    }
}

/// Sentence oracle tokens aligned to a ground-truth target.
#[derive(Debug, Clone)]
pub struct OracleSelection {
    pub mode: OracleMode,
    /// Oracle sentence, exactly the reference length, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Smoothed sentence BLEU of the selected candidate.
    pub bleu: f64,
}

/// Sentence oracle over any step model: force-decode `k` candidates of the
/// reference length, score each against the reference with smoothed sentence
/// BLEU, return the best. Ties keep the higher model score, then the lower
/// beam index (the order force decoding returns them in).
///
/// Reranking operates on the EOS-stripped token ids. Force decoding
/// guarantees every candidate has exactly the reference length, so the
/// brevity penalty is constant across candidates and the comparison reduces
/// to the smoothed precisions.
pub fn sentence_oracle_with<M: StepModel>(
    model: &M,
    tgt_ref: &[TokenId],
    beam: usize,
    noise: Option<(&mut Rng, f64)>,
    mode: OracleMode,
) -> Result<OracleSelection> {
    if tgt_ref.is_empty() {
        return Err(Error::InvalidArgument {
            op: "sentence_oracle",
            msg: "empty reference".into(),
        });
    }
    let noise = noise.map(|(rng, tau)| Noise { rng, tau });
    let candidates = force_decode(model, tgt_ref.len(), beam, noise)?;
    let mut best: Option<(f64, &crate::search::Hypothesis<M::State>)> = None;
    for hyp in &candidates {
        let words = &hyp.tokens[..hyp.tokens.len() - 1]; // strip EOS
        let b = sentence_bleu(words, tgt_ref);
        if best.as_ref().is_none_or(|(bb, _)| b > *bb) {
            best = Some((b, hyp));
        }
    }
    let (bleu, hyp) = best.expect("force_decode returns at least one candidate");
    Ok(OracleSelection {
        mode,
        tokens: hyp.tokens[..hyp.tokens.len() - 1].to_vec(),
        bleu,
    })
}

/// Sentence oracle for a real model and source sentence. Candidate
/// generation runs in evaluation mode (no dropout) and contributes no
/// gradients.
pub fn sentence_oracle(
    params: &ModelParams,
    src: &[TokenId],
    tgt_ref: &[TokenId],
    beam: usize,
    noise: Option<(&mut Rng, f64)>,
    mode: OracleMode,
) -> Result<OracleSelection> {
    let decoder = SentenceDecoder::new(params, src)?;
    sentence_oracle_with(&decoder, tgt_ref, beam, noise, mode)
}
