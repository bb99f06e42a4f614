//! MLE training with oracle-sampled contexts: per-sentence loss graphs,
//! adadelta/SGD updates with gradient clipping, per-epoch validation BLEU
//! with best-model selection and patience, metrics CSV emission, and
//! checkpointing.
//!
//! Every stochastic element draws from a stream derived from the master seed
//! plus structural coordinates (purpose, epoch, batch, sentence), so runs
//! replay bit-exactly and resuming from a checkpoint continues the identical
//! trajectory.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::data::{SentencePair, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::model::{
    att_precompute_nodes, decode_step_nodes, encode_nodes, ModelDims, ModelParams, SentenceDecoder,
};
use crate::numerics::{GradStore, Graph, ParamSet, Rng, Tensor};
use crate::oracle::{sentence_oracle, word_oracle, OracleMode};
use crate::schedule::{sample_context, truth_prob, DecayConfig};
use crate::search::{beam_search, default_max_len};
use crate::TokenId;

// Stream tags for seed derivation.
const TAG_INIT: u64 = 0x494e_4954;
const TAG_CTX: u64 = 0x4354_5800;
const TAG_NOISE: u64 = 0x4e4f_4953;
const TAG_DROP: u64 = 0x4452_4f50;
const TAG_SORACLE: u64 = 0x534f_5241;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adadelta { rho: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adadelta {
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

/// Full training configuration. Defaults follow the reference setup:
/// adadelta (rho 0.95, eps 1e-6), dropout 0.5, batch 80, tau 0.5, mu 12,
/// oracle beam 3, evaluation beam 10.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub oracle: OracleMode,
    pub tau: f64,
    pub mu: f64,
    pub oracle_beam: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub dropout: f64,
    pub seed: u64,
    pub patience: usize,
    pub eval_beam: usize,
    pub max_sentence_len: usize,
    pub clip_norm: f64,
    /// When false the metrics `seconds` column is written as 0.000 so two
    /// identical runs produce byte-identical CSVs.
    pub wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 64,
            hidden_dim: 64,
            oracle: OracleMode::None,
            tau: 0.5,
            mu: 12.0,
            oracle_beam: 3,
            epochs: 30,
            batch_size: 80,
            optimizer: OptimizerConfig::default(),
            dropout: 0.5,
            seed: 1,
            patience: 10,
            eval_beam: 10,
            max_sentence_len: 50,
            clip_norm: 5.0,
            wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.oracle_beam == 0 {
            return Err(Error::Config("oracle_beam must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_beam == 0 {
            return Err(Error::Config(
                "epochs, batch_size, and eval_beam must be >= 1".into(),
            ));
        }
        match self.optimizer {
            OptimizerConfig::Sgd { lr } if !(lr > 0.0) => {
                Err(Error::Config(format!("sgd lr must be > 0, got {lr}")))
            }
            OptimizerConfig::Adadelta { rho, eps } if !(0.0..1.0).contains(&rho) || !(eps > 0.0) => {
                Err(Error::Config(format!(
                    "adadelta needs rho in [0,1) and eps > 0, got rho {rho}, eps {eps}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Adadelta accumulators, aligned with the parameter set.
#[derive(Debug, Clone)]
pub struct OptState {
    pub eg2: Vec<Tensor>,
    pub edx2: Vec<Tensor>,
}

impl OptState {
    pub fn zeros_like(params: &ParamSet) -> OptState {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        OptState {
            eg2: zeros.clone(),
            edx2: zeros,
        }
    }
}

/// Standard adadelta recurrences:
/// `E[g^2] <- rho E[g^2] + (1-rho) g^2`;
/// `dx = -(RMS[dx]/RMS[g]) g`;
/// `E[dx^2] <- rho E[dx^2] + (1-rho) dx^2`; apply `dx`.
pub fn adadelta_update(
    params: &mut ParamSet,
    grads: &GradStore,
    state: &mut OptState,
    rho: f64,
    eps: f64,
) {
    for (i, (id, g)) in grads.iter().enumerate() {
        let eg2 = state.eg2[i].data_mut();
        let edx2 = state.edx2[i].data_mut();
        let x = params.get_mut(id).data_mut();
        for k in 0..x.len() {
            let gk = g.data()[k];
            eg2[k] = rho * eg2[k] + (1.0 - rho) * gk * gk;
            let dx = -((edx2[k] + eps).sqrt() / (eg2[k] + eps).sqrt()) * gk;
            edx2[k] = rho * edx2[k] + (1.0 - rho) * dx * dx;
            x[k] += dx;
        }
    }
}

pub fn sgd_update(params: &mut ParamSet, grads: &GradStore, lr: f64) {
    for (id, g) in grads.iter() {
        let x = params.get_mut(id).data_mut();
        for k in 0..x.len() {
            x[k] -= lr * g.data()[k];
        }
    }
}

/// Per-sentence settings for one loss evaluation.
pub struct StepSettings<'a> {
    pub mode: OracleMode,
    pub p_truth: f64,
    pub tau: f64,
    pub dropout: f64,
    /// Oracle sentence for the sentence modes; must match the target length.
    pub sentence_oracle: Option<&'a [TokenId]>,
    pub ctx_rng: Rng,
    pub noise_rng: Rng,
    pub dropout_rng: Rng,
}

impl StepSettings<'_> {
    /// Teacher forcing with no dropout; rngs unused.
    pub fn teacher_forcing() -> StepSettings<'static> {
        StepSettings {
            mode: OracleMode::None,
            p_truth: 1.0,
            tau: 0.5,
            dropout: 0.0,
            sentence_oracle: None,
            ctx_rng: Rng::new(0),
            noise_rng: Rng::new(0),
            dropout_rng: Rng::new(0),
        }
    }
}

pub struct StepOutcome {
    /// Summed negative log-likelihood of the ground-truth tokens (plus EOS).
    pub loss: f64,
    /// Number of predictions (|tgt| + 1).
    pub predictions: usize,
    pub grads: GradStore,
    /// Realized context tokens, BOS first.
    pub contexts: Vec<TokenId>,
    /// The tokens whose log-probabilities entered the loss (tgt then EOS).
    pub targets: Vec<TokenId>,
}

fn dropout_mask(rng: &mut Rng, len: usize, rate: f64) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let data: Vec<f64> = (0..len)
        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
        .collect();
    Tensor::vector(&data)
}

/// Loss and gradients for one sentence pair. Decodes `|tgt| + 1` steps; the
/// first fed context is BOS; at step `j >= 2` the context is sampled between
/// the ground-truth word and the oracle word. The loss always scores the
/// ground-truth token regardless of the fed context, and no gradients flow
/// through oracle selection or the sampling decision.
pub fn step_loss(
    params: &ModelParams,
    pair: &SentencePair,
    mut st: StepSettings<'_>,
) -> Result<StepOutcome> {
    if pair.tgt.is_empty() {
        return Err(Error::InvalidArgument {
            op: "step_loss",
            msg: "empty target".into(),
        });
    }
    if st.mode.is_sentence() {
        let so = st.sentence_oracle.ok_or_else(|| Error::InvalidArgument {
            op: "step_loss",
            msg: "sentence oracle mode without an oracle sentence".into(),
        })?;
        if so.len() != pair.tgt.len() {
            return Err(Error::InvalidArgument {
                op: "step_loss",
                msg: format!(
                    "oracle sentence length {} != target length {}",
                    so.len(),
                    pair.tgt.len()
                ),
            });
        }
    }

    let mut targets: Vec<TokenId> = pair.tgt.clone();
    targets.push(EOS);

    let mut g = Graph::new(params.param_set());
    let h = encode_nodes(&mut g, params, &pair.src)?;
    let ua = att_precompute_nodes(&mut g, params, &h)?;
    let mut s_prev = g.constant(Tensor::zeros(&[params.dims.hidden]));

    let mut contexts = Vec::with_capacity(targets.len());
    let mut prev_logits: Vec<f64> = Vec::new();
    let mut total: Option<crate::numerics::NodeId> = None;

    for (j, target) in targets.iter().enumerate() {
        let ctx = if j == 0 {
            BOS
        } else {
            let truth = pair.tgt[j - 1];
            match st.mode {
                OracleMode::None => truth,
                OracleMode::Word | OracleMode::WordNoise => {
                    let noise = (st.mode == OracleMode::WordNoise)
                        .then_some((&mut st.noise_rng, st.tau));
                    let oracle = word_oracle(&prev_logits, noise);
                    sample_context(truth, oracle, st.p_truth, &mut st.ctx_rng)
                }
                OracleMode::Sentence | OracleMode::SentenceNoise => {
                    let oracle = st.sentence_oracle.expect("checked above")[j - 1];
                    sample_context(truth, oracle, st.p_truth, &mut st.ctx_rng)
                }
            }
        };
        contexts.push(ctx);

        let mask = (st.dropout > 0.0)
            .then(|| dropout_mask(&mut st.dropout_rng, params.dims.hidden, st.dropout));
        let step = decode_step_nodes(&mut g, params, ctx, s_prev, &h, &ua, mask.as_ref())?;
        prev_logits = g.value(step.logits).data().to_vec();

        let lsm = g.log_softmax(step.logits)?;
        let term = g.pick(lsm, *target as usize)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
        s_prev = step.s;
    }

    let loss_node = g.neg(total.expect("at least one step"));
    let (loss, grads) = g.evaluate_and_backward(loss_node)?;
    Ok(StepOutcome {
        loss,
        predictions: targets.len(),
        grads,
        contexts,
        targets,
    })
}

/// Forward-only loss with a fixed realized context sequence (and fixed
/// dropout masks). Mirrors `step_loss` op for op, so with identical inputs
/// the value is bit-identical.
pub fn forward_loss_with_contexts(
    params: &ModelParams,
    src: &[TokenId],
    contexts: &[TokenId],
    targets: &[TokenId],
    dropout_masks: Option<&[Tensor]>,
) -> Result<f64> {
    if contexts.len() != targets.len() || targets.is_empty() {
        return Err(Error::InvalidArgument {
            op: "forward_loss_with_contexts",
            msg: "contexts and targets must be the same nonempty length".into(),
        });
    }
    let mut g = Graph::new(params.param_set());
    let h = encode_nodes(&mut g, params, src)?;
    let ua = att_precompute_nodes(&mut g, params, &h)?;
    let mut s_prev = g.constant(Tensor::zeros(&[params.dims.hidden]));
    let mut total: Option<crate::numerics::NodeId> = None;
    for (j, (ctx, target)) in contexts.iter().zip(targets.iter()).enumerate() {
        let mask = dropout_masks.map(|m| &m[j]);
        let step = decode_step_nodes(&mut g, params, *ctx, s_prev, &h, &ua, mask)?;
        let lsm = g.log_softmax(step.logits)?;
        let term = g.pick(lsm, *target as usize)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
        s_prev = step.s;
    }
    let loss_node = g.neg(total.expect("at least one step"));
    Ok(g.value(loss_node).item())
}

/// Decode every source with beam search (no noise, no dropout) and return
/// the top hypothesis token ids, EOS stripped. Parallel over sentences.
pub fn decode_corpus(
    params: &ModelParams,
    pairs: &[SentencePair],
    beam: usize,
) -> Result<Vec<Vec<TokenId>>> {
    pairs
        .par_iter()
        .map(|pair| {
            let decoder = SentenceDecoder::new(params, &pair.src)?;
            let hyps = beam_search(&decoder, beam, default_max_len(pair.src.len()), None)?;
            let best = hyps.first().expect("beam search returns >= 1 hypothesis");
            Ok(best.tokens[..best.tokens.len() - 1].to_vec())
        })
        .collect()
}

/// Corpus BLEU of beam-decoded hypotheses against the pair targets.
pub fn evaluate(
    params: &ModelParams,
    pairs: &[SentencePair],
    beam: usize,
) -> Result<(f64, Vec<Vec<TokenId>>)> {
    let hyps = decode_corpus(params, pairs, beam)?;
    let refs: Vec<Vec<TokenId>> = pairs.iter().map(|p| p.tgt.clone()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?;
    Ok((bleu, hyps))
}

/// Corpora and vocabularies for one training job.
pub struct DataSet {
    pub train: Vec<SentencePair>,
    pub val: Vec<SentencePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

pub struct TrainReport {
    pub best_epoch: usize,
    pub best_val_bleu: f64,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
}

struct MetricsRow {
    epoch: usize,
    batch: usize,
    loss_per_token: f64,
    p_truth: f64,
    val_bleu: Option<f64>,
    seconds: f64,
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        let val = match self.val_bleu {
            Some(b) => format!("{b:.6}"),
            None => String::new(),
        };
        format!(
            "{},{},{:.6},{:.6},{},{:.3}\n",
            self.epoch, self.batch, self.loss_per_token, self.p_truth, val, self.seconds
        )
    }
}

pub const METRICS_HEADER: &str = "epoch,batch,loss_per_token,p_truth,val_bleu,seconds\n";

/// Run the training loop, writing `metrics.csv`, `last.ckpt`, and
/// `best.ckpt` into `out_dir`. `resume` continues from a `last.ckpt`
/// written by an identical config; the continuation is bit-identical to the
/// uninterrupted run because all random streams derive from (seed, epoch,
/// batch, sentence).
pub fn train(
    cfg: &TrainConfig,
    ds: &DataSet,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dims = ModelDims {
        embed: cfg.embed_dim,
        hidden: cfg.hidden_dim,
        src_vocab: ds.src_vocab.len(),
        tgt_vocab: ds.tgt_vocab.len(),
    };
    let master = Rng::new(cfg.seed);

    let (mut params, mut opt, start_epoch, mut best_bleu, mut best_epoch, mut since_best) =
        match resume {
            None => {
                let mut init_rng = master.derive(&[TAG_INIT]);
                let params = ModelParams::init(&mut init_rng, dims)?;
                let opt = match cfg.optimizer {
                    OptimizerConfig::Adadelta { .. } => {
                        Some(OptState::zeros_like(params.param_set()))
                    }
                    OptimizerConfig::Sgd { .. } => None,
                };
                (params, opt, 0, f64::NEG_INFINITY, 0, 0usize)
            }
            Some(path) => {
                let ckpt = checkpoint::load(path)?;
                if ckpt.dims != dims {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint dims {:?} do not match data/config dims {dims:?}",
                        ckpt.dims
                    )));
                }
                (
                    ckpt.params,
                    ckpt.opt,
                    ckpt.epoch + 1,
                    ckpt.best_bleu,
                    ckpt.best_epoch,
                    ckpt.since_best,
                )
            }
        };

    let metrics_path = out_dir.join("metrics.csv");
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let mut metrics = std::io::BufWriter::new(
        std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?,
    );
    metrics
        .write_all(METRICS_HEADER.as_bytes())
        .map_err(|e| Error::io(&metrics_path, e))?;

    let started = Instant::now();
    let mut epochs_run = 0;
    for epoch in start_epoch..cfg.epochs {
        let p = truth_prob(DecayConfig {
            mu: cfg.mu,
            epoch,
        })?;
        let batches = crate::data::batch_iter(&ds.train, cfg.batch_size, &master, epoch);
        let mut rows: Vec<MetricsRow> = Vec::with_capacity(batches.len());

        for (bi, batch) in batches.iter().enumerate() {
            // sentence oracles for the whole batch, before the gradient pass
            let sent_oracles: Option<Vec<Vec<TokenId>>> = if cfg.oracle.is_sentence() {
                let collected: Result<Vec<Vec<TokenId>>> = batch
                    .par_iter()
                    .enumerate()
                    .map(|(si, pair)| {
                        let mut rng =
                            master.derive(&[TAG_SORACLE, epoch as u64, bi as u64, si as u64]);
                        let noise = (cfg.oracle == OracleMode::SentenceNoise)
                            .then_some((&mut rng, cfg.tau));
                        sentence_oracle(
                            &params,
                            &pair.src,
                            &pair.tgt,
                            cfg.oracle_beam,
                            noise,
                            cfg.oracle,
                        )
                        .map(|sel| sel.tokens)
                    })
                    .collect();
                Some(collected?)
            } else {
                None
            };

            let mut grads = GradStore::zeros_like(params.param_set());
            let mut loss_sum = 0.0;
            let mut predictions = 0usize;
            for (si, pair) in batch.iter().enumerate() {
                let coords = [epoch as u64, bi as u64, si as u64];
                let settings = StepSettings {
                    mode: cfg.oracle,
                    p_truth: p,
                    tau: cfg.tau,
                    dropout: cfg.dropout,
                    sentence_oracle: sent_oracles.as_ref().map(|so| so[si].as_slice()),
                    ctx_rng: master.derive(&[TAG_CTX, coords[0], coords[1], coords[2]]),
                    noise_rng: master.derive(&[TAG_NOISE, coords[0], coords[1], coords[2]]),
                    dropout_rng: master.derive(&[TAG_DROP, coords[0], coords[1], coords[2]]),
                };
                let outcome = step_loss(&params, pair, settings)?;
                grads.accumulate(&outcome.grads);
                loss_sum += outcome.loss;
                predictions += outcome.predictions;
            }
            grads.scale(1.0 / batch.len() as f64);
            grads.clip_global_norm(cfg.clip_norm);
            match (&cfg.optimizer, opt.as_mut()) {
                (OptimizerConfig::Adadelta { rho, eps }, Some(state)) => {
                    adadelta_update(params.param_set_mut(), &grads, state, *rho, *eps);
                }
                (OptimizerConfig::Sgd { lr }, _) => {
                    sgd_update(params.param_set_mut(), &grads, *lr);
                }
                (OptimizerConfig::Adadelta { .. }, None) => {
                    return Err(Error::Config(
                        "adadelta selected but optimizer state missing".into(),
                    ))
                }
            }
            rows.push(MetricsRow {
                epoch,
                batch: bi,
                loss_per_token: loss_sum / predictions as f64,
                p_truth: p,
                val_bleu: None,
                seconds: elapsed(cfg, started),
            });
        }

        let (val_bleu, _) = evaluate(&params, &ds.val, cfg.eval_beam)?;
        if let Some(last) = rows.last_mut() {
            last.val_bleu = Some(val_bleu);
            last.seconds = elapsed(cfg, started);
        }
        for row in &rows {
            metrics
                .write_all(row.to_csv().as_bytes())
                .map_err(|e| Error::io(&metrics_path, e))?;
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

        if val_bleu > best_bleu {
            best_bleu = val_bleu;
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let ckpt = Checkpoint {
            config: cfg.clone(),
            dims,
            params: params.clone(),
            opt: opt.clone(),
            epoch,
            best_bleu,
            best_epoch,
            since_best,
        };
        checkpoint::save(&last_path, &ckpt)?;
        if since_best == 0 {
            checkpoint::save(&best_path, &ckpt)?;
        }
        epochs_run = epoch + 1;
        if since_best >= cfg.patience {
            break;
        }
    }

    Ok(TrainReport {
        best_epoch,
        best_val_bleu: best_bleu,
        epochs_run,
        metrics_path,
        best_path,
        last_path,
    })
}

fn elapsed(cfg: &TrainConfig, started: Instant) -> f64 {
    if cfg.wall_time {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    }
}
