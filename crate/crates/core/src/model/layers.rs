//! Building blocks recorded on a [`Tape`]: node attention, graph embedding
//! and the two-layer classifier head.

use rand::Rng;

use super::config::SigmaKind;
use super::init::fan_in_uniform;
use super::shapes::POOL;
use crate::autograd::{Activation, BatchNormStats, Mode, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latent nodes `Y` and the transform `(w, b)` producing `Ŷ = Y·wᵀ + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeAttentionParams {
    pub nodes: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    pub sigma: SigmaKind,
}

pub struct NodeAttentionOutput {
    /// Transformed nodes `Ŷ`, `N × C`.
    pub nodes_hat: Var,
    /// Similarities after σ, `[G, H·W, N]`.
    pub alpha: Var,
    /// Node-attentive features, `[G, N, H, W, C]`.
    pub z: Var,
}

impl NodeAttentionParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        init_nodes: Tensor<T>,
        sigma: SigmaKind,
        rng: &mut impl Rng,
    ) -> Self {
        let c = init_nodes.shape()[1];
        let nodes = store.add("nodes.Y", init_nodes);
        let w = store.add("attention.w", fan_in_uniform(&[c, c], c, rng));
        let b = store.add("attention.b", Tensor::zeros([c]));
        NodeAttentionParams { nodes, w, b, sigma }
    }

    /// `Ŷ = Y·wᵀ + b`.
    pub fn transformed_nodes<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var> {
        let y = tape.param(store, self.nodes);
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wt = tape.transpose(w)?;
        let yw = tape.matmul(y, wt)?;
        tape.add_bias(yw, b)
    }

    /// Attends segment features `x` (`[G, H, W, C]`) to every node:
    /// `α[g,h,w,j] = σ(Σ_c x[g,h,w,c]·Ŷ[j,c])`, `Z[g,j,h,w,c] = α[g,h,w,j]·Ŷ[j,c]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<NodeAttentionOutput> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("node_attention", format!("expected [G, H, W, C], got {xs:?}")));
        }
        let (g, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let nc = store.get(self.nodes).shape()[1];
        if c != nc {
            return Err(Error::shape("node_attention", format!("features have {c} channels, nodes have {nc}")));
        }
        let n = store.get(self.nodes).shape()[0];
        let nodes_hat = self.transformed_nodes(tape, store)?;
        let flat = tape.reshape(x, &[g * h * w, c])?;
        let nt = tape.transpose(nodes_hat)?;
        let sim = tape.matmul(flat, nt)?;
        let alpha = match self.sigma {
            SigmaKind::Sigmoid => tape.activation(sim, Activation::Sigmoid)?,
            SigmaKind::Tanh => tape.activation(sim, Activation::Tanh)?,
            SigmaKind::SoftmaxOverNodes => tape.softmax(sim, 1)?,
        };
        let alpha = tape.reshape(alpha, &[g, h * w, n])?;
        let z = tape.attend(alpha, nodes_hat)?;
        let z = tape.reshape(z, &[g, n, h, w, c])?;
        Ok(NodeAttentionOutput { nodes_hat, alpha, z })
    }
}

/// Kernel banks of one graph-embedding layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphEmbeddingParams {
    /// `C × t` timewise kernels.
    pub k_t: ParamId,
    /// `C × n` nodewise kernels.
    pub k_n: ParamId,
    /// `C × C` channel mixing, applied as `x·k_cᵀ + bias`.
    pub k_c: ParamId,
    pub k_c_bias: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    /// Index of this layer's running statistics in the model.
    pub bn_slot: usize,
}

impl GraphEmbeddingParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        time_kernel: usize,
        node_kernel: usize,
        bn_slot: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = channels;
        GraphEmbeddingParams {
            k_t: store.add(format!("{prefix}.k_t"), fan_in_uniform(&[c, time_kernel], time_kernel, rng)),
            k_n: store.add(format!("{prefix}.k_n"), fan_in_uniform(&[c, node_kernel], node_kernel, rng)),
            k_c: store.add(format!("{prefix}.k_c"), fan_in_uniform(&[c, c], c, rng)),
            k_c_bias: store.add(format!("{prefix}.k_c_bias"), Tensor::zeros([c])),
            bn_gamma: store.add(format!("{prefix}.bn_gamma"), Tensor::ones([c])),
            bn_beta: store.add(format!("{prefix}.bn_beta"), Tensor::zeros([c])),
            bn_slot,
        }
    }

    /// Timewise conv, nodewise conv, channel mixing, batch norm, ReLU, then
    /// 3×3 max pooling over time and nodes. `z` is `[..., T, N, H, W, C]`
    /// (rank 5, or rank 6 with a leading batch axis).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        stats: &mut BatchNormStats<T>,
        z: Var,
        mode: Mode,
    ) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 5 && shape.len() != 6 {
            return Err(Error::shape("graph_embedding", format!("expected [B?, T, N, H, W, C], got {shape:?}")));
        }
        let rank = shape.len();
        let (time_axis, node_axis) = (rank - 5, rank - 4);
        if shape[time_axis] < POOL || shape[node_axis] < POOL {
            return Err(Error::shape(
                "graph_embedding",
                format!("T={} and N={} must both be at least {POOL}", shape[time_axis], shape[node_axis]),
            ));
        }
        let c = shape[rank - 1];
        let k_t = tape.param(store, self.k_t);
        let k_n = tape.param(store, self.k_n);
        let k_c = tape.param(store, self.k_c);
        let bias = tape.param(store, self.k_c_bias);
        let gamma = tape.param(store, self.bn_gamma);
        let beta = tape.param(store, self.bn_beta);

        let x = tape.depthwise_conv1d(z, k_t, time_axis)?;
        let x = tape.depthwise_conv1d(x, k_n, node_axis)?;
        let rows = tape.reshape(x, &[shape.iter().product::<usize>() / c, c])?;
        let kct = tape.transpose(k_c)?;
        let mixed = tape.matmul(rows, kct)?;
        let mixed = tape.add_bias(mixed, bias)?;
        let x = tape.reshape(mixed, &shape)?;
        let x = tape.batch_norm(x, rank - 1, gamma, beta, stats, mode)?;
        let x = tape.relu(x)?;
        tape.max_pool(x, &[time_axis, node_axis], POOL, POOL)
    }
}

/// `FC(hidden) → BN → ReLU → FC(classes)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub bn_slot: usize,
}

impl ClassifierParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        input: usize,
        hidden: usize,
        classes: usize,
        bn_slot: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ClassifierParams {
            w1: store.add("fc1.w", fan_in_uniform(&[hidden, input], input, rng)),
            b1: store.add("fc1.b", Tensor::zeros([hidden])),
            bn_gamma: store.add("fc1.bn_gamma", Tensor::ones([hidden])),
            bn_beta: store.add("fc1.bn_beta", Tensor::zeros([hidden])),
            w2: store.add("fc2.w", fan_in_uniform(&[classes, hidden], hidden, rng)),
            b2: store.add("fc2.b", Tensor::zeros([classes])),
            bn_slot,
        }
    }

    /// `x` is `[B, input]`; returns logits `[B, classes]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        stats: &mut BatchNormStats<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let gamma = tape.param(store, self.bn_gamma);
        let beta = tape.param(store, self.bn_beta);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let w1t = tape.transpose(w1)?;
        let h = tape.matmul(x, w1t)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.batch_norm(h, 1, gamma, beta, stats, mode)?;
        let h = tape.relu(h)?;
        let w2t = tape.transpose(w2)?;
        let o = tape.matmul(h, w2t)?;
        tape.add_bias(o, b2)
    }
}
