//! Neural building blocks expressed as compositions of tape operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::params::{xavier_uniform, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// Softmax along the given axis.
    Softmax(usize),
}

pub fn activation(tape: &mut Tape, kind: Activation, x: Var) -> Result<Var> {
    match kind {
        Activation::Identity => Ok(x),
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Softmax(axis) => tape.softmax(x, axis),
    }
}

/// `x · weight + bias` over the last dimension of `x`.
pub fn linear_forward(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    tape.linear(x, weight, Some(bias))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Cce,
    Mse,
}

pub fn loss(tape: &mut Tape, kind: LossKind, prediction: Var, target: &Tensor) -> Result<Var> {
    let l = match kind {
        LossKind::Bce => tape.bce(prediction, target)?,
        LossKind::Cce => tape.cce(prediction, target)?,
        LossKind::Mse => tape.mse(prediction, target)?,
    };
    tape.value(l).ensure_finite("loss")?;
    Ok(l)
}

/// Fixed sinusoidal table: even channels `sin(pos / 10000^(2i/d))`, odd channels the matching cosine.
pub fn positional_encoding(seq_len: usize, model_dim: usize) -> Result<Tensor> {
    if model_dim == 0 || model_dim % 2 != 0 || seq_len == 0 {
        return Err(NumericsError::Config(format!(
            "positional encoding needs a positive even model dim and positive length, got ({seq_len}, {model_dim})"
        )));
    }
    let mut pe = Tensor::zeros(vec![seq_len, model_dim]);
    for pos in 0..seq_len {
        for i in 0..model_dim / 2 {
            let freq = 10000f64.powf(2.0 * i as f64 / model_dim as f64);
            let angle = pos as f64 / freq;
            pe.set(&[pos, 2 * i], angle.sin());
            pe.set(&[pos, 2 * i + 1], angle.cos());
        }
    }
    Ok(pe)
}

/// Tape handles for one attention block's projections (`[d, d]` weights, `[d]` biases).
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttentionVars {
    pub const NAMES: [&'static str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

    /// Registers freshly initialized projections under `prefix.wq`, `prefix.bq`, ...
    pub fn init_params<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) {
        for name in Self::NAMES {
            let t = if name.starts_with('w') {
                xavier_uniform(rng, dim, dim)
            } else {
                Tensor::zeros(vec![dim])
            };
            store.add(format!("{prefix}.{name}"), t);
        }
    }

    /// Picks the eight handles out of `vars` (bound in store order) starting at `offset`.
    pub fn from_slice(vars: &[Var], offset: usize) -> Self {
        let v = &vars[offset..offset + 8];
        Self {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
        }
    }
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head attention probabilities, each `[b, l, l]`.
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention over `x[b, l, d]` with `heads` heads.
///
/// Dropout (inverted) is applied to the projected output only when `training`.
pub fn multi_head_self_attention<R: Rng>(
    tape: &mut Tape,
    x: Var,
    p: &AttentionVars,
    heads: usize,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<AttentionOutput> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(NumericsError::Dimension {
            op: "attention input (needs [b, l, d])",
            lhs: shape,
            rhs: vec![],
        });
    }
    let d = shape[2];
    if heads == 0 || d % heads != 0 {
        return Err(NumericsError::Config(format!(
            "model dim {d} not divisible by {heads} heads"
        )));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(NumericsError::Config(format!(
            "dropout rate {dropout_rate} outside [0, 1)"
        )));
    }
    let dh = d / heads;
    let q = tape.linear(x, p.wq, Some(p.bq))?;
    let k = tape.linear(x, p.wk, Some(p.bk))?;
    let v = tape.linear(x, p.wv, Some(p.bv))?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.narrow_last(q, h * dh, dh)?;
        let kh = tape.narrow_last(k, h * dh, dh)?;
        let vh = tape.narrow_last(v, h * dh, dh)?;
        let kt = tape.transpose_last2(kh)?;
        let scores = tape.bmm(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let att = tape.softmax(scores, 2)?;
        outs.push(tape.bmm(att, vh)?);
        weights.push(att);
    }
    let merged = if heads == 1 {
        outs[0]
    } else {
        tape.concat_last(&outs)?
    };
    let mut output = tape.linear(merged, p.wo, Some(p.bo))?;
    if training {
        output = tape.dropout(output, dropout_rate, rng)?;
    }
    Ok(AttentionOutput { output, weights })
}
