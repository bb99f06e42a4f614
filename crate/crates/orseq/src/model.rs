//! Attention-based encoder-decoder with a two-GRU decoder.
//!
//! Encoder: bidirectional GRU over source embeddings; the annotation of
//! position `i` is the concatenation of forward and backward states.
//! Decoder, per step `j` with context token `y_{j-1}`:
//!
//! ```text
//! s~_j    = GRU1(e[y_{j-1}], s_{j-1})
//! r_ij    = v_a . tanh(W_a s~_j + U_a h_i)        (scores, then softmax)
//! c_j     = sum_i alpha_ij h_i
//! s_j     = GRU2(c_j, s~_j)
//! t_j     = tanh(W_t [e[y_{j-1}]; c_j; s_j] + b_t)   (readout; dropout here)
//! o_j     = W_o t_j                                   (logits)
//! ```
//!
//! The attention query is the freshest GRU1 state. The readout is a linear
//! map of the concatenation followed by tanh. Dropout applies to the readout
//! output only, and only in training.
//!
//! Everything is built on the [`crate::numerics::graph`] tape; the eval-mode
//! wrappers ([`encode`], [`attention`], [`decoder_step`]) run the same
//! builders on throwaway graphs and extract plain tensors.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamSet, Rng, Tensor};
use crate::search::StepModel;
use crate::TokenId;

pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

/// Parameter handles for one GRU cell.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

/// All learnable arrays of the encoder/attention/decoder/output stack,
/// backed by a [`ParamSet`] whose order fixes the checkpoint layout.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub dims: ModelDims,
    set: ParamSet,
    src_embed: ParamId,
    tgt_embed: ParamId,
    enc_fwd: GruIds,
    enc_bwd: GruIds,
    att_w: ParamId,
    att_u: ParamId,
    att_v: ParamId,
    dec_gru1: GruIds,
    dec_gru2: GruIds,
    readout_w: ParamId,
    readout_b: ParamId,
    out_w: ParamId,
}

fn add_gru(set: &mut ParamSet, prefix: &str, input: usize, hidden: usize) -> GruIds {
    let mut mat = |name: &str, r: usize, c: usize| set.add(format!("{prefix}.{name}"), Tensor::zeros(&[r, c]));
    let wz = mat("wz", hidden, input);
    let uz = mat("uz", hidden, hidden);
    let wr = mat("wr", hidden, input);
    let ur = mat("ur", hidden, hidden);
    let wh = mat("wh", hidden, input);
    let uh = mat("uh", hidden, hidden);
    let bz = set.add(format!("{prefix}.bz"), Tensor::zeros(&[hidden]));
    let br = set.add(format!("{prefix}.br"), Tensor::zeros(&[hidden]));
    let bh = set.add(format!("{prefix}.bh"), Tensor::zeros(&[hidden]));
    GruIds {
        wz,
        uz,
        bz,
        wr,
        ur,
        br,
        wh,
        uh,
        bh,
    }
}

impl ModelParams {
    /// All-zero parameters with consistent shapes.
    pub fn zeros(dims: ModelDims) -> Result<ModelParams> {
        if dims.embed == 0 || dims.hidden == 0 || dims.src_vocab == 0 || dims.tgt_vocab == 0 {
            return Err(Error::Config(format!("bad model dims {dims:?}")));
        }
        let (d_e, d_h) = (dims.embed, dims.hidden);
        let mut set = ParamSet::new();
        let src_embed = set.add("src_embed", Tensor::zeros(&[dims.src_vocab, d_e]));
        let tgt_embed = set.add("tgt_embed", Tensor::zeros(&[dims.tgt_vocab, d_e]));
        let enc_fwd = add_gru(&mut set, "enc_fwd", d_e, d_h);
        let enc_bwd = add_gru(&mut set, "enc_bwd", d_e, d_h);
        let att_w = set.add("att.w", Tensor::zeros(&[d_h, d_h]));
        let att_u = set.add("att.u", Tensor::zeros(&[d_h, 2 * d_h]));
        let att_v = set.add("att.v", Tensor::zeros(&[d_h]));
        let dec_gru1 = add_gru(&mut set, "dec_gru1", d_e, d_h);
        let dec_gru2 = add_gru(&mut set, "dec_gru2", 2 * d_h, d_h);
        let readout_w = set.add("readout.w", Tensor::zeros(&[d_h, d_e + 2 * d_h + d_h]));
        let readout_b = set.add("readout.b", Tensor::zeros(&[d_h]));
        let out_w = set.add("out.w", Tensor::zeros(&[dims.tgt_vocab, d_h]));
        Ok(ModelParams {
            dims,
            set,
            src_embed,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            att_w,
            att_u,
            att_v,
            dec_gru1,
            dec_gru2,
            readout_w,
            readout_b,
            out_w,
        })
    }

    /// Every learnable value drawn from U(-0.1, 0.1).
    pub fn init(rng: &mut Rng, dims: ModelDims) -> Result<ModelParams> {
        let mut p = ModelParams::zeros(dims)?;
        for t in p.set.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.uniform(-INIT_RANGE, INIT_RANGE)?;
            }
        }
        Ok(p)
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.set
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    fn check_src(&self, ids: &[TokenId]) -> Result<()> {
        for id in ids {
            if *id as usize >= self.dims.src_vocab {
                return Err(Error::TokenOutOfRange {
                    id: *id,
                    vocab_size: self.dims.src_vocab,
                });
            }
        }
        Ok(())
    }

    fn check_tgt(&self, id: TokenId) -> Result<()> {
        if id as usize >= self.dims.tgt_vocab {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.dims.tgt_vocab,
            });
        }
        Ok(())
    }
}

/// One GRU step on the tape: `x` is the input vector, `h_prev` the state.
fn gru_step(g: &mut Graph, ids: &GruIds, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
    let (wz, uz, bz) = (g.param(ids.wz), g.param(ids.uz), g.param(ids.bz));
    let (wr, ur, br) = (g.param(ids.wr), g.param(ids.ur), g.param(ids.br));
    let (wh, uh, bh) = (g.param(ids.wh), g.param(ids.uh), g.param(ids.bh));

    let zx = g.mat_vec(wz, x)?;
    let zh = g.mat_vec(uz, h_prev)?;
    let z_in = g.add(zx, zh)?;
    let z_in = g.add(z_in, bz)?;
    let z = g.sigmoid(z_in);

    let rx = g.mat_vec(wr, x)?;
    let rh = g.mat_vec(ur, h_prev)?;
    let r_in = g.add(rx, rh)?;
    let r_in = g.add(r_in, br)?;
    let r = g.sigmoid(r_in);

    let gated = g.mul(r, h_prev)?;
    let hx = g.mat_vec(wh, x)?;
    let hg = g.mat_vec(uh, gated)?;
    let h_in = g.add(hx, hg)?;
    let h_in = g.add(h_in, bh)?;
    let h_bar = g.tanh(h_in);

    let keep = g.one_minus(z);
    let kept = g.mul(keep, h_prev)?;
    let fresh = g.mul(z, h_bar)?;
    g.add(kept, fresh)
}

/// Bidirectional encoding on the tape: annotation nodes, one 2d-vector per
/// source position.
pub fn encode_nodes(g: &mut Graph, p: &ModelParams, src: &[TokenId]) -> Result<Vec<NodeId>> {
    if src.is_empty() {
        return Err(Error::InvalidArgument {
            op: "encode",
            msg: "empty source sequence".into(),
        });
    }
    p.check_src(src)?;
    let embed = g.param(p.src_embed);
    let embs: Vec<NodeId> = src
        .iter()
        .map(|t| g.embed_row(embed, *t as usize))
        .collect::<Result<_>>()?;

    let zero = g.constant(Tensor::zeros(&[p.dims.hidden]));
    let mut fwd = Vec::with_capacity(src.len());
    let mut h = zero;
    for e in &embs {
        h = gru_step(g, &p.enc_fwd, *e, h)?;
        fwd.push(h);
    }
    let mut bwd = vec![zero; src.len()];
    let mut hb = zero;
    for (i, e) in embs.iter().enumerate().rev() {
        hb = gru_step(g, &p.enc_bwd, *e, hb)?;
        bwd[i] = hb;
    }
    fwd.iter()
        .zip(bwd.iter())
        .map(|(f, b)| g.concat(&[*f, *b]))
        .collect()
}

/// Per-sentence cache of `U_a h_i`, reused by every decoding step.
pub fn att_precompute_nodes(g: &mut Graph, p: &ModelParams, h: &[NodeId]) -> Result<Vec<NodeId>> {
    let ua = g.param(p.att_u);
    h.iter().map(|hi| g.mat_vec(ua, *hi)).collect()
}

/// Attention on the tape: normalized weights and the context vector.
pub fn attention_nodes(
    g: &mut Graph,
    p: &ModelParams,
    query: NodeId,
    h: &[NodeId],
    ua_h: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    let wa = g.param(p.att_w);
    let va = g.param(p.att_v);
    let wq = g.mat_vec(wa, query)?;
    let mut scores = Vec::with_capacity(h.len());
    for uh in ua_h {
        let pre = g.add(wq, *uh)?;
        let act = g.tanh(pre);
        scores.push(g.dot(va, act)?);
    }
    let stacked = g.stack(&scores)?;
    let alpha = g.softmax(stacked)?;
    let mut context: Option<NodeId> = None;
    for (i, hi) in h.iter().enumerate() {
        let w = g.pick(alpha, i)?;
        let term = g.scalar_mul(w, *hi)?;
        context = Some(match context {
            None => term,
            Some(c) => g.add(c, term)?,
        });
    }
    Ok((alpha, context.expect("nonempty annotations")))
}

/// Tape nodes produced by one decoder step.
pub struct StepNodes {
    pub s_tilde: NodeId,
    pub s: NodeId,
    pub alpha: NodeId,
    pub context: NodeId,
    pub logits: NodeId,
}

/// One decoder step on the tape. `dropout_mask`, when given, is multiplied
/// into the readout output (entries are 0 or 1/(1-rate)).
pub fn decode_step_nodes(
    g: &mut Graph,
    p: &ModelParams,
    y_prev: TokenId,
    s_prev: NodeId,
    h: &[NodeId],
    ua_h: &[NodeId],
    dropout_mask: Option<&Tensor>,
) -> Result<StepNodes> {
    p.check_tgt(y_prev)?;
    let embed = g.param(p.tgt_embed);
    let e_prev = g.embed_row(embed, y_prev as usize)?;

    let s_tilde = gru_step(g, &p.dec_gru1, e_prev, s_prev)?;
    let (alpha, context) = attention_nodes(g, p, s_tilde, h, ua_h)?;
    let s = gru_step(g, &p.dec_gru2, context, s_tilde)?;

    let readout_in = g.concat(&[e_prev, context, s])?;
    let rw = g.param(p.readout_w);
    let rb = g.param(p.readout_b);
    let pre = g.mat_vec(rw, readout_in)?;
    let pre = g.add(pre, rb)?;
    let mut t = g.tanh(pre);
    if let Some(mask) = dropout_mask {
        let m = g.constant(mask.clone());
        t = g.mul(t, m)?;
    }
    let wo = g.param(p.out_w);
    let logits = g.mat_vec(wo, t)?;
    Ok(StepNodes {
        s_tilde,
        s,
        alpha,
        context,
        logits,
    })
}

/// Source annotations in value form: `h[i]` is the 2d annotation of position
/// `i`; `ua[i]` caches `U_a h_i` for attention.
#[derive(Debug, Clone)]
pub struct EncoderAnnotations {
    pub h: Vec<Tensor>,
    pub ua: Vec<Tensor>,
}

impl EncoderAnnotations {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Decoder recurrence values after a step: `s` (GRU2) drives the next step;
/// `s_tilde` (GRU1) is kept for inspection.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub s: Tensor,
    pub s_tilde: Tensor,
}

/// Zero state ahead of the first step.
pub fn init_state(p: &ModelParams) -> DecoderState {
    DecoderState {
        s: Tensor::zeros(&[p.dims.hidden]),
        s_tilde: Tensor::zeros(&[p.dims.hidden]),
    }
}

/// Eval-mode encode: runs the tape builders forward and extracts values.
pub fn encode(p: &ModelParams, src: &[TokenId]) -> Result<EncoderAnnotations> {
    let mut g = Graph::new(p.param_set());
    let h_nodes = encode_nodes(&mut g, p, src)?;
    let ua_nodes = att_precompute_nodes(&mut g, p, &h_nodes)?;
    Ok(EncoderAnnotations {
        h: h_nodes.iter().map(|n| g.value(*n).clone()).collect(),
        ua: ua_nodes.iter().map(|n| g.value(*n).clone()).collect(),
    })
}

/// Eval-mode attention: weights over source positions and the context vector.
pub fn attention(
    p: &ModelParams,
    s_tilde: &Tensor,
    ann: &EncoderAnnotations,
) -> Result<(Vec<f64>, Tensor)> {
    let mut g = Graph::new(p.param_set());
    let query = g.constant(s_tilde.clone());
    let h: Vec<NodeId> = ann.h.iter().map(|t| g.constant(t.clone())).collect();
    let ua: Vec<NodeId> = ann.ua.iter().map(|t| g.constant(t.clone())).collect();
    let (alpha, context) = attention_nodes(&mut g, p, query, &h, &ua)?;
    Ok((
        g.value(alpha).data().to_vec(),
        g.value(context).clone(),
    ))
}

/// Eval-mode decoder step: pure function of its arguments, no dropout.
pub fn decoder_step(
    p: &ModelParams,
    y_prev: TokenId,
    state: &DecoderState,
    ann: &EncoderAnnotations,
) -> Result<(DecoderState, Vec<f64>)> {
    let mut g = Graph::new(p.param_set());
    let s_prev = g.constant(state.s.clone());
    let h: Vec<NodeId> = ann.h.iter().map(|t| g.constant(t.clone())).collect();
    let ua: Vec<NodeId> = ann.ua.iter().map(|t| g.constant(t.clone())).collect();
    let step = decode_step_nodes(&mut g, p, y_prev, s_prev, &h, &ua, None)?;
    Ok((
        DecoderState {
            s: g.value(step.s).clone(),
            s_tilde: g.value(step.s_tilde).clone(),
        },
        g.value(step.logits).data().to_vec(),
    ))
}

/// Per-sentence decoder exposing the [`StepModel`] interface used by beam
/// search and force decoding.
pub struct SentenceDecoder<'a> {
    params: &'a ModelParams,
    ann: EncoderAnnotations,
}

impl<'a> SentenceDecoder<'a> {
    pub fn new(params: &'a ModelParams, src: &[TokenId]) -> Result<SentenceDecoder<'a>> {
        Ok(SentenceDecoder {
            params,
            ann: encode(params, src)?,
        })
    }

    pub fn annotations(&self) -> &EncoderAnnotations {
        &self.ann
    }
}

impl StepModel for SentenceDecoder<'_> {
    type State = DecoderState;

    fn initial_state(&self) -> DecoderState {
        init_state(self.params)
    }

    fn step(&self, state: &DecoderState, y_prev: TokenId) -> Result<(DecoderState, Vec<f64>)> {
        decoder_step(self.params, y_prev, state, &self.ann)
    }

    fn vocab_size(&self) -> usize {
        self.params.dims.tgt_vocab
    }
}
