use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sa_numerics::layers::{self, multi_head_self_attention, positional_encoding};
use sa_numerics::params::xavier_uniform;
use sa_numerics::{Activation, AttentionVars, Checkpoint, LossKind, ParamStore, RngSeed, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Three independent sigmoids, one per SA level.
    Binary,
    /// Softmax over the three accumulated classes.
    Ternary,
}

impl HeadKind {
    pub fn loss(self) -> LossKind {
        match self {
            HeadKind::Binary => LossKind::Bce,
            HeadKind::Ternary => LossKind::Cce,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Binary => "binary",
            HeadKind::Ternary => "ternary",
        })
    }
}

impl FromStr for HeadKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(HeadKind::Binary),
            "ternary" => Ok(HeadKind::Ternary),
            _ => Err(CoreError::Config(format!("unknown head `{s}` (expected binary or ternary)"))),
        }
    }
}

pub const OUTPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaModelConfig {
    pub seq_len: usize,
    pub input_dim: usize,
    pub proj_dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub head: HeadKind,
    pub residual: bool,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub seed: RngSeed,
}

impl Default for SaModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 15,
            input_dim: 70,
            proj_dim: 16,
            ff_dim: 32,
            layers: 2,
            heads: 2,
            dropout: 0.1,
            head: HeadKind::Ternary,
            residual: true,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 5,
            batch_size: 32,
            folds: 10,
            seed: RngSeed::default(),
        }
    }
}

impl SaModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("input_dim", self.input_dim),
            ("proj_dim", self.proj_dim),
            ("ff_dim", self.ff_dim),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if self.proj_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "proj_dim {} not divisible by {} heads",
                self.proj_dim, self.heads
            )));
        }
        if self.proj_dim % 2 != 0 {
            return Err(CoreError::Config("proj_dim must be even for the positional encoding".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters per transformer block: attention (8) + two feed-forward layers (4).
const BLOCK_PARAMS: usize = AttentionVars::NAMES.len() + 4;

#[derive(Debug, Clone)]
pub struct SaModel {
    pub config: SaModelConfig,
    pub params: ParamStore,
    positions: Tensor,
}

impl SaModel {
    pub fn new(config: SaModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = config.seed.derive(0).rng();
        let (f, d, ff) = (config.input_dim, config.proj_dim, config.ff_dim);
        let mut params = ParamStore::new();
        params.add("input.weight", xavier_uniform(&mut rng, f, d));
        params.add("input.bias", Tensor::zeros(vec![d]));
        for i in 0..config.layers {
            AttentionVars::init_params(&mut params, &format!("block{i}.attn"), d, &mut rng);
            params.add(format!("block{i}.ff1.weight"), xavier_uniform(&mut rng, d, ff));
            params.add(format!("block{i}.ff1.bias"), Tensor::zeros(vec![ff]));
            params.add(format!("block{i}.ff2.weight"), xavier_uniform(&mut rng, ff, d));
            params.add(format!("block{i}.ff2.bias"), Tensor::zeros(vec![d]));
        }
        params.add("output.weight", xavier_uniform(&mut rng, config.seq_len * d, OUTPUTS));
        params.add("output.bias", Tensor::zeros(vec![OUTPUTS]));
        let positions = positional_encoding(config.seq_len, d)?;
        Ok(Self {
            config,
            params,
            positions,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn with_params(config: SaModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(CoreError::invalid(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((want, wt), (got, gt)) in model.params.iter().zip(params.iter()) {
            if want != got || wt.shape() != gt.shape() {
                return Err(CoreError::invalid(format!(
                    "parameter `{got}` {:?} does not match `{want}` {:?}",
                    gt.shape(),
                    wt.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Head probabilities `[b, 3]` for `x[b, seq_len, input_dim]`.
    ///
    /// `vars` are the parameters bound on `tape` in store order.
    pub fn forward_on<R: Rng>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let c = &self.config;
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] != c.seq_len || s[2] != c.input_dim {
            return Err(sa_numerics::NumericsError::Dimension {
                op: "model input (needs [b, seq_len, input_dim])",
                lhs: s,
                rhs: vec![c.seq_len, c.input_dim],
            }
            .into());
        }
        let batch = s[0];
        let mut h = tape.linear(x, vars[0], Some(vars[1]))?;
        h = tape.add_const(h, &self.positions)?;
        for i in 0..c.layers {
            let base = 2 + i * BLOCK_PARAMS;
            let att = AttentionVars::from_slice(vars, base);
            let a = multi_head_self_attention(tape, h, &att, c.heads, c.dropout, training, rng)?.output;
            h = if c.residual { tape.add(h, a)? } else { a };
            let ff = base + AttentionVars::NAMES.len();
            let mut f = tape.linear(h, vars[ff], Some(vars[ff + 1]))?;
            f = tape.relu(f)?;
            f = tape.linear(f, vars[ff + 2], Some(vars[ff + 3]))?;
            if training {
                f = tape.dropout(f, c.dropout, rng)?;
            }
            h = if c.residual { tape.add(h, f)? } else { f };
        }
        let flat = tape.reshape(h, vec![batch, c.seq_len * c.proj_dim])?;
        let out = 2 + c.layers * BLOCK_PARAMS;
        let logits = tape.linear(flat, vars[out], Some(vars[out + 1]))?;
        let act = match c.head {
            HeadKind::Binary => Activation::Sigmoid,
            HeadKind::Ternary => Activation::Softmax(1),
        };
        Ok(layers::activation(tape, act, logits)?)
    }

    /// Loss of the head on one batch, recorded on `tape`.
    pub fn loss_on<R: Rng>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &Tensor,
        targets: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let p = self.forward_on(tape, vars, xv, training, rng)?;
        Ok(layers::loss(tape, self.config.head.loss(), p, targets)?)
    }

    /// Inference-mode probabilities for a batch.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let xv = tape.constant(x.clone());
        // inference never draws from the generator
        let mut rng = RngSeed(0).rng();
        let p = self.forward_on(&mut tape, &vars, xv, false, &mut rng)?;
        Ok(tape.value(p).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let hyper = serde_json::to_value(&self.config).map_err(|e| CoreError::invalid(e.to_string()))?;
        Ok(Checkpoint::from_params(&self.params, hyper))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: SaModelConfig = serde_json::from_value(ckpt.hyperparameters.clone())
            .map_err(|e| CoreError::invalid(format!("model checkpoint config: {e}")))?;
        Self::with_params(config, ckpt.to_params()?)
    }
}
