//! Post-hoc analyses of trained models: latent-node spread, activity graph
//! extraction from embedding activations, force-directed layout, confusion
//! matrices, and DOT/JSON export.

mod export;
mod layout;

pub use export::{
    export_graph, graph_from_json, graph_to_dot, graph_to_json, import_graph_json, node_sizes, GraphFormat,
};
pub use layout::{force_layout, DEFAULT_LAYOUT_ITERATIONS};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean Euclidean distance over all unordered pairs of L2-normalized rows of
/// `nodes` (`N × C`). All-zero rows stay zero.
pub fn track_node_distances<T: Scalar>(nodes: &Tensor<T>) -> Result<f64> {
    if nodes.rank() != 2 || nodes.shape()[0] < 2 {
        return Err(Error::shape("track_node_distances", format!("need N >= 2 rows, got {:?}", nodes.shape())));
    }
    let (n, c) = (nodes.shape()[0], nodes.shape()[1]);
    let rows: Vec<Vec<f64>> = nodes
        .data()
        .chunks(c)
        .map(|r| {
            let r: Vec<f64> = r.iter().map(|v| v.to_f64_lossy()).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                r
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += euclidean(&rows[i], &rows[j]);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Post-ReLU activations of the last embedding layer for `M` videos of one
/// class, stored as `M × N' × T' × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStack<T> {
    z1: Tensor<T>,
}

impl<T: Scalar> ActivationStack<T> {
    pub fn new(z1: Tensor<T>) -> Result<Self> {
        if z1.rank() != 4 {
            return Err(Error::shape("ActivationStack", format!("expected M x N x T x C, got {:?}", z1.shape())));
        }
        if z1.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument("activation stack must be non-negative (post-ReLU)".into()));
        }
        Ok(ActivationStack { z1 })
    }

    /// Converts a layer output in the model's native `[M, T', N', H, W, C]`
    /// order: the spatial axes are averaged and time/node axes swapped.
    pub fn from_layer_output(out: &Tensor<T>) -> Result<Self> {
        let s = out.shape();
        if s.len() != 6 {
            return Err(Error::shape("ActivationStack", format!("expected [M, T, N, H, W, C], got {s:?}")));
        }
        let (m, t, n, hw, c) = (s[0], s[1], s[2], s[3] * s[4], s[5]);
        let data = out.data();
        let z1 = Tensor::from_fn([m, n, t, c], |i| {
            let base = ((i[0] * t + i[2]) * n + i[1]) * hw * c + i[3];
            let sum: f64 = (0..hw).map(|p| data[base + p * c].to_f64_lossy()).sum();
            T::from_f64_lossy(sum / hw as f64)
        });
        Self::new(z1)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.z1
    }
}

/// Activity graph: node importances, pairwise node distances, optional layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedGraph {
    pub class_id: usize,
    pub node_importance: Vec<f64>,
    /// Symmetric with zero diagonal.
    pub edge_weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

impl ExtractedGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_importance.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::InvalidArgument("graph has no nodes".into()));
        }
        if self.edge_weights.len() != n || self.edge_weights.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!("edge matrix must be {n} x {n}")));
        }
        for i in 0..n {
            if self.edge_weights[i][i] != 0.0 {
                return Err(Error::InvalidArgument(format!("edge diagonal at {i} is non-zero")));
            }
            for j in 0..i {
                if self.edge_weights[i][j] != self.edge_weights[j][i] {
                    return Err(Error::InvalidArgument(format!("edge matrix asymmetric at ({i}, {j})")));
                }
            }
        }
        if self.node_importance.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::InvalidArgument("node importances must be non-negative".into()));
        }
        if let Some(p) = &self.positions {
            if p.len() != n {
                return Err(Error::InvalidArgument(format!("{} positions for {n} nodes", p.len())));
            }
        }
        Ok(())
    }
}

/// Averages `z1` over videos (`z2`, `N'×T'×C`) and then over time (`z3`,
/// `N'×C`). Node importance is the channel sum of `z3`; edges are pairwise
/// Euclidean distances between rows of `z3`.
pub fn extract_activity_graph<T: Scalar>(stack: &ActivationStack<T>, class_id: usize) -> Result<ExtractedGraph> {
    let s = stack.z1.shape();
    let (m, n, t, c) = (s[0], s[1], s[2], s[3]);
    if m == 0 {
        return Err(Error::InvalidArgument("empty activation stack".into()));
    }
    let d = stack.z1.data();
    let mut z2 = vec![0.0; n * t * c];
    for vid in 0..m {
        for (acc, &v) in z2.iter_mut().zip(&d[vid * n * t * c..(vid + 1) * n * t * c]) {
            *acc += v.to_f64_lossy();
        }
    }
    z2.iter_mut().for_each(|v| *v /= m as f64);
    let mut z3 = vec![vec![0.0; c]; n];
    for (j, row) in z3.iter_mut().enumerate() {
        for step in 0..t {
            for (ch, acc) in row.iter_mut().enumerate() {
                *acc += z2[(j * t + step) * c + ch];
            }
        }
        row.iter_mut().for_each(|v| *v /= t as f64);
    }
    let node_importance: Vec<f64> = z3.iter().map(|r| r.iter().sum()).collect();
    let mut edge_weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dist = euclidean(&z3[i], &z3[j]);
            edge_weights[i][j] = dist;
            edge_weights[j][i] = dist;
        }
    }
    Ok(ExtractedGraph { class_id, node_importance, edge_weights, positions: None })
}

/// `K × K` counts indexed `[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(Error::InvalidArgument(format!("class index out of range: true {l}, predicted {p}, K {k}")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// CSV with a `true\predicted` header row and one row per true class.
pub fn confusion_csv(matrix: &[Vec<usize>]) -> String {
    let mut s = String::from("true\\predicted");
    for j in 0..matrix.len() {
        let _ = write!(s, ",{j}");
    }
    s.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(s, "{i}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
