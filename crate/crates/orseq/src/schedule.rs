//! Epoch-decayed probability of feeding the ground-truth token, and the
//! per-step context sampler that mixes ground truth with oracle words.

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::TokenId;

/// Decay hyper-parameter and epoch index for [`truth_prob`].
#[derive(Debug, Clone, Copy)]
pub struct DecayConfig {
    /// Strictly positive decay hyper-parameter.
    pub mu: f64,
    /// Training epoch index, starting from 0.
    pub epoch: usize,
}

/// Probability of sampling the ground-truth word as context:
/// `p = mu / (mu + exp(epoch / mu))`.
///
/// Strictly monotone decreasing in the epoch; `mu / (mu + 1)` at epoch 0.
pub fn truth_prob(cfg: DecayConfig) -> Result<f64> {
    if !(cfg.mu > 0.0) {
        return Err(Error::InvalidArgument {
            op: "truth_prob",
            msg: format!("mu must be positive, got {}", cfg.mu),
        });
    }
    Ok(cfg.mu / (cfg.mu + (cfg.epoch as f64 / cfg.mu).exp()))
}

/// One Bernoulli draw per decoding step: the ground-truth word with
/// probability `p`, the oracle word otherwise.
pub fn sample_context(truth_word: TokenId, oracle_word: TokenId, p: f64, rng: &mut Rng) -> TokenId {
    debug_assert!((0.0..=1.0).contains(&p));
    if rng.bernoulli(p) {
        truth_word
    } else {
        oracle_word
    }
}
