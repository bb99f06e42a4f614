//! Versioned text checkpoint: header line `ORSEQ-CKPT v1`, a serialized
//! config echo, then named arrays as `(name, shape, row-major values)`.
//!
//! Parameters are stored under `param.<name>`, adadelta accumulators under
//! `opt.eg2.<name>` / `opt.edx2.<name>`, and trainer bookkeeping under
//! `meta.<name>` as one-element arrays. Values use Rust's shortest
//! round-trip decimal formatting, so save/load is value-exact and identical
//! runs produce byte-identical files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::numerics::Tensor;
use crate::trainer::{OptState, TrainConfig};

pub const HEADER: &str = "ORSEQ-CKPT v1";

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    config: TrainConfig,
    dims: ModelDims,
}

/// Everything needed to evaluate or to resume training.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub params: ModelParams,
    pub opt: Option<OptState>,
    /// Last completed epoch.
    pub epoch: usize,
    pub best_bleu: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

fn push_array(out: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    let _ = write!(out, "array {name}");
    for d in shape {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

pub fn to_string(ckpt: &Checkpoint) -> Result<String> {
    let echo = ConfigEcho {
        config: ckpt.config.clone(),
        dims: ckpt.dims,
    };
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(
        out,
        "config {}",
        serde_json::to_string(&echo).map_err(|e| Error::Checkpoint(e.to_string()))?
    );
    for (_, name, t) in ckpt.params.param_set().iter() {
        push_array(&mut out, &format!("param.{name}"), t.shape(), t.data());
    }
    if let Some(opt) = &ckpt.opt {
        for (i, (_, name, t)) in ckpt.params.param_set().iter().enumerate() {
            push_array(
                &mut out,
                &format!("opt.eg2.{name}"),
                t.shape(),
                opt.eg2[i].data(),
            );
            push_array(
                &mut out,
                &format!("opt.edx2.{name}"),
                t.shape(),
                opt.edx2[i].data(),
            );
        }
    }
    push_array(&mut out, "meta.epoch", &[1], &[ckpt.epoch as f64]);
    push_array(&mut out, "meta.best_bleu", &[1], &[ckpt.best_bleu]);
    push_array(&mut out, "meta.best_epoch", &[1], &[ckpt.best_epoch as f64]);
    push_array(&mut out, "meta.since_best", &[1], &[ckpt.since_best as f64]);
    out.push_str("end\n");
    Ok(out)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, to_string(ckpt)?).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
    if header != HEADER {
        return Err(bad(format!("bad header `{header}`, expected `{HEADER}`")));
    }
    let config_line = lines.next().ok_or_else(|| bad("missing config line"))?;
    let json = config_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("second line must start with `config `"))?;
    let echo: ConfigEcho =
        serde_json::from_str(json).map_err(|e| bad(format!("config echo: {e}")))?;

    let mut arrays: Vec<(String, Tensor)> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("missing `end` line"))?;
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("array ")
            .ok_or_else(|| bad(format!("expected `array`, got `{line}`")))?;
        let mut fields = rest.split_whitespace();
        let name = fields.next().ok_or_else(|| bad("array without name"))?;
        let shape: Vec<usize> = fields
            .map(|f| f.parse().map_err(|_| bad(format!("bad dim `{f}` in {name}"))))
            .collect::<Result<_>>()?;
        let value_line = lines
            .next()
            .ok_or_else(|| bad(format!("array {name} missing values")))?;
        let values: Vec<f64> = value_line
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(format!("bad value `{v}` in {name}")))
            })
            .collect::<Result<_>>()?;
        let tensor = Tensor::from_vec(&shape, values)
            .map_err(|e| bad(format!("array {name}: {e}")))?;
        arrays.push((name.to_string(), tensor));
    }

    let mut params = ModelParams::zeros(echo.dims)?;
    let mut by_name: HashMap<String, Tensor> = arrays.into_iter().collect();

    for i in 0..params.param_set().len() {
        let name = {
            let set = params.param_set();
            let (_, n, _) = set.iter().nth(i).expect("index in range");
            n.to_string()
        };
        let stored = by_name
            .remove(&format!("param.{name}"))
            .ok_or_else(|| bad(format!("missing array param.{name}")))?;
        let id = params
            .param_set()
            .by_name(&name)
            .expect("name from iteration");
        let slot = params.param_set_mut().get_mut(id);
        if slot.shape() != stored.shape() {
            return Err(bad(format!(
                "param.{name} has shape {:?}, expected {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored;
    }

    let has_opt = by_name.keys().any(|k| k.starts_with("opt."));
    let opt = if has_opt {
        let mut eg2 = Vec::new();
        let mut edx2 = Vec::new();
        for (_, name, t) in params.param_set().iter() {
            let a = by_name
                .remove(&format!("opt.eg2.{name}"))
                .ok_or_else(|| bad(format!("missing array opt.eg2.{name}")))?;
            let b = by_name
                .remove(&format!("opt.edx2.{name}"))
                .ok_or_else(|| bad(format!("missing array opt.edx2.{name}")))?;
            if a.shape() != t.shape() || b.shape() != t.shape() {
                return Err(bad(format!("optimizer state shape mismatch for {name}")));
            }
            eg2.push(a);
            edx2.push(b);
        }
        Some(OptState { eg2, edx2 })
    } else {
        None
    };

    let meta = |by_name: &mut HashMap<String, Tensor>, key: &str| -> Result<f64> {
        by_name
            .remove(&format!("meta.{key}"))
            .map(|t| t.item())
            .ok_or_else(|| bad(format!("missing array meta.{key}")))
    };
    let epoch = meta(&mut by_name, "epoch")? as usize;
    let best_bleu = meta(&mut by_name, "best_bleu")?;
    let best_epoch = meta(&mut by_name, "best_epoch")? as usize;
    let since_best = meta(&mut by_name, "since_best")? as usize;

    if let Some(stray) = by_name.keys().next() {
        return Err(bad(format!("unrecognized array `{stray}`")));
    }

    Ok(Checkpoint {
        config: echo.config,
        dims: echo.dims,
        params,
        opt,
        epoch,
        best_bleu,
        best_epoch,
        since_best,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
