//! Per-frame interaction graphs and the graph-convolutional autoencoder.

use std::io::{BufWriter, Write};
use std::path::Path;

use sa_numerics::params::xavier_uniform;
use sa_numerics::{
    layers, Activation, AdamConfig, AdamState, Checkpoint, LossKind, ParamStore, RngSeed, Tape, Tensor, Var,
};
use serde::{Deserialize, Serialize};

use crate::data::frames::{FrameFeatures, Role, NUM_KEYPOINTS};
use crate::error::{CoreError, Result};
use crate::optim::{collect_grads, permutation};

pub const NUM_NODES: usize = 4;
/// Center (2) + depth (1) + keypoints (34).
pub const NODE_DIM: usize = 3 + 2 * NUM_KEYPOINTS;

/// Node attributes `[N, NODE_DIM]` in `Role::ALL` order, plus the adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    pub node_attrs: Tensor,
    pub adjacency: Tensor,
}

pub fn fully_connected(n: usize) -> Tensor {
    Tensor::full(vec![n, n], 1.0)
}

/// `D^-1/2 A D^-1/2` with `D` the row sums of `A`.
pub fn symmetric_normalize(adj: &Tensor) -> Tensor {
    let n = adj.shape()[0];
    let d: Vec<f64> = (0..n).map(|i| adj.row(i).iter().sum::<f64>()).collect();
    let mut out = adj.clone();
    for i in 0..n {
        for j in 0..n {
            let s = (d[i] * d[j]).sqrt();
            out.set(&[i, j], if s > 0.0 { adj.at(&[i, j]) / s } else { 0.0 });
        }
    }
    out
}

pub fn assemble_graph(frame: &FrameFeatures) -> Result<InteractionGraph> {
    let mut data = Vec::with_capacity(NUM_NODES * NODE_DIM);
    for role in Role::ALL {
        let o = frame.object(role)?;
        data.extend_from_slice(&o.center());
        data.push(o.depth);
        match &o.keypoints {
            Some(kp) => data.extend(kp.iter().flatten()),
            None => data.extend(std::iter::repeat(0.0).take(2 * NUM_KEYPOINTS)),
        }
    }
    Ok(InteractionGraph {
        node_attrs: Tensor::new(vec![NUM_NODES, NODE_DIM], data)?,
        adjacency: fully_connected(NUM_NODES),
    })
}

/// One propagation step `σ(A · Φ · W)`. `phi` may carry leading batch dimensions.
pub fn gcn_layer(tape: &mut Tape, phi: Var, adj: Var, weight: Var, act: Activation) -> Result<Var> {
    let xw = tape.linear(phi, weight, None)?;
    let propagated = tape.adj_matmul(adj, xw)?;
    Ok(layers::activation(tape, act, propagated)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub normalize_adjacency: bool,
    pub seed: RngSeed,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            input_dim: NODE_DIM,
            hidden_dim: 16,
            embed_dim: 8,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            normalize_adjacency: false,
            seed: RngSeed::default(),
        }
    }
}

const ENCODER: [&str; 2] = ["encoder.0", "encoder.1"];
const DECODER: [&str; 2] = ["decoder.0", "decoder.1"];

#[derive(Debug, Clone)]
pub struct GcnAutoencoder {
    pub config: GcnConfig,
    pub params: ParamStore,
}

impl GcnAutoencoder {
    pub fn new(config: GcnConfig) -> Result<Self> {
        Self::draw(config, 0)
    }

    /// Initialization number `attempt`; attempt 0 is [`GcnAutoencoder::new`].
    fn draw(config: GcnConfig, attempt: u64) -> Result<Self> {
        if [config.input_dim, config.hidden_dim, config.embed_dim, config.batch_size].contains(&0) {
            return Err(CoreError::Config("autoencoder dimensions and batch size must be positive".into()));
        }
        let seed = if attempt == 0 { config.seed.derive(0) } else { config.seed.derive(0).derive(attempt) };
        let mut rng = seed.rng();
        let (f, h, g) = (config.input_dim, config.hidden_dim, config.embed_dim);
        let mut params = ParamStore::new();
        params.add(ENCODER[0], xavier_uniform(&mut rng, f, h));
        params.add(ENCODER[1], xavier_uniform(&mut rng, h, g));
        params.add(DECODER[0], xavier_uniform(&mut rng, g, h));
        params.add(DECODER[1], xavier_uniform(&mut rng, h, f));
        Ok(Self { config, params })
    }

    fn adjacency(&self) -> Tensor {
        let a = fully_connected(NUM_NODES);
        if self.config.normalize_adjacency {
            symmetric_normalize(&a)
        } else {
            a
        }
    }

    /// Encoder on `[.., N, f]` node attributes; `vars` are the bound parameters.
    fn encode(&self, tape: &mut Tape, vars: &[Var], phi: Var) -> Result<Var> {
        let adj = tape.constant(self.adjacency());
        let h = gcn_layer(tape, phi, adj, vars[0], Activation::Relu)?;
        gcn_layer(tape, h, adj, vars[1], Activation::Relu)
    }

    fn reconstruct(&self, tape: &mut Tape, vars: &[Var], phi: Var) -> Result<Var> {
        let z = self.encode(tape, vars, phi)?;
        let adj = tape.constant(self.adjacency());
        let h = gcn_layer(tape, z, adj, vars[2], Activation::Relu)?;
        gcn_layer(tape, h, adj, vars[3], Activation::Identity)
    }

    /// Mean-squared reconstruction loss on a `[B, N, f]` batch, recorded on `tape`.
    pub fn reconstruction_loss(&self, tape: &mut Tape, vars: &[Var], batch: &Tensor) -> Result<Var> {
        let phi = tape.constant(batch.clone());
        let out = self.reconstruct(tape, vars, phi)?;
        Ok(layers::loss(tape, LossKind::Mse, out, batch)?)
    }

    pub fn embed(&self, graph: &InteractionGraph) -> Result<GraphEmbedding> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let phi = tape.constant(graph.node_attrs.clone());
        let z = self.encode(&mut tape, &vars, phi)?;
        Ok(GraphEmbedding {
            matrix: tape.value(z).clone(),
        })
    }

    /// Flattened embeddings of many graphs, computed in stacked batches.
    pub fn embed_all(&self, graphs: &[InteractionGraph]) -> Result<Vec<Vec<f64>>> {
        let width = NUM_NODES * self.config.embed_dim;
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(1024) {
            let refs: Vec<&InteractionGraph> = chunk.iter().collect();
            let mut tape = Tape::new();
            let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
            let phi = tape.constant(stack(&refs)?);
            let z = self.encode(&mut tape, &vars, phi)?;
            out.extend(tape.value(z).data().chunks(width).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let hyper = serde_json::to_value(&self.config).map_err(|e| CoreError::invalid(e.to_string()))?;
        Ok(Checkpoint::from_params(&self.params, hyper))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: GcnConfig = serde_json::from_value(ckpt.hyperparameters.clone())
            .map_err(|e| CoreError::invalid(format!("autoencoder checkpoint config: {e}")))?;
        let params = ckpt.to_params()?;
        let reference = Self::new(config.clone())?;
        for (name, t) in reference.params.iter() {
            let got = params.by_name(name)?;
            if got.shape() != t.shape() {
                return Err(CoreError::invalid(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding {
    /// `[N, g]`.
    pub matrix: Tensor,
}

impl GraphEmbedding {
    /// Row-major by role order.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.data().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutoencoderHistory {
    /// Mean loss over the dataset before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn stack(graphs: &[&InteractionGraph]) -> Result<Tensor> {
    let data: Vec<f64> = graphs.iter().flat_map(|g| g.node_attrs.data().iter().copied()).collect();
    let s = graphs[0].node_attrs.shape();
    Ok(Tensor::new(vec![graphs.len(), s[0], s[1]], data)?)
}

/// Trains with Adam on shuffled mini-batches; returns the model and its loss history.
pub fn train_autoencoder(
    graphs: &[InteractionGraph],
    config: GcnConfig,
) -> Result<(GcnAutoencoder, AutoencoderHistory)> {
    if graphs.is_empty() {
        return Err(CoreError::invalid("autoencoder training needs at least one graph"));
    }
    let expected = [NUM_NODES, config.input_dim];
    if let Some(g) = graphs.iter().find(|g| g.node_attrs.shape() != expected) {
        return Err(CoreError::invalid(format!(
            "graph node attributes {:?}, expected {expected:?}",
            g.node_attrs.shape()
        )));
    }
    let mut model = live_initialization(graphs, config)?;
    let batch_size = model.config.batch_size;
    let initial_loss = dataset_loss(&model, graphs)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(model.config.learning_rate), &model.params);
    let mut rng = model.config.seed.derive(1).rng();
    let mut epoch_losses = Vec::with_capacity(model.config.epochs);

    for epoch in 1..=model.config.epochs {
        let order = permutation(graphs.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&InteractionGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let x = stack(&batch)?;
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let loss = model
                .reconstruction_loss(&mut tape, &vars, &x)
                .map_err(|e| CoreError::Training { epoch, msg: e.to_string() })?;
            total += tape.value(loss).data()[0] * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&grads, &vars, &model.params);
            adam.step(&mut model.params, &grads)
                .map_err(|e| CoreError::Training { epoch, msg: e.to_string() })?;
        }
        let mean = total / graphs.len() as f64;
        if !mean.is_finite() {
            return Err(CoreError::Training {
                epoch,
                msg: format!("autoencoder loss is {mean}"),
            });
        }
        log::debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok((model, AutoencoderHistory { initial_loss, epoch_losses }))
}

/// Redraws after an initialization whose loss gradient vanishes for some
/// weight on a probe batch.
///
/// Node rows of `A·Φ` coincide under the all-ones adjacency and attributes are
/// non-negative, so one unlucky draw can leave a whole ReLU layer at zero on
/// every input; no gradient would ever reach it.
pub const MAX_INIT_ATTEMPTS: u64 = 16;

fn every_weight_has_gradient(model: &GcnAutoencoder, batch: &Tensor) -> Result<bool> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let loss = model.reconstruction_loss(&mut tape, &vars, batch)?;
    let grads = tape.backward(loss)?;
    let grads = collect_grads(&grads, &vars, &model.params);
    Ok(grads.iter().all(|g| g.data().iter().any(|&v| v != 0.0)))
}

fn live_initialization(graphs: &[InteractionGraph], config: GcnConfig) -> Result<GcnAutoencoder> {
    let probe: Vec<&InteractionGraph> = graphs.iter().take(256).collect();
    let x = stack(&probe)?;
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let model = GcnAutoencoder::draw(config.clone(), attempt)?;
        if every_weight_has_gradient(&model, &x)? {
            if attempt > 0 {
                log::info!("autoencoder initialization {attempt} used; earlier draws had dead layers");
            }
            return Ok(model);
        }
    }
    Err(CoreError::Training {
        epoch: 0,
        msg: format!("every one of {MAX_INIT_ATTEMPTS} autoencoder initializations has a dead layer"),
    })
}

/// Mean reconstruction loss over `graphs` with the current weights.
pub fn dataset_loss(model: &GcnAutoencoder, graphs: &[InteractionGraph]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in graphs.chunks(256) {
        let refs: Vec<&InteractionGraph> = chunk.iter().collect();
        let x = stack(&refs)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let l = model.reconstruction_loss(&mut tape, &vars, &x)?;
        total += tape.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / graphs.len() as f64)
}

#[derive(Serialize)]
struct EmbeddingRecord<'a> {
    video_id: &'a str,
    frame_idx: u64,
    g: &'a [f64],
}

pub fn write_embeddings(path: &Path, frames: &[FrameFeatures], embeddings: &[Vec<f64>]) -> Result<()> {
    if frames.len() != embeddings.len() {
        return Err(CoreError::invalid("one embedding per frame is required"));
    }
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (f, g) in frames.iter().zip(embeddings) {
        let rec = EmbeddingRecord {
            video_id: &f.video_id,
            frame_idx: f.frame_idx,
            g,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| CoreError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}
