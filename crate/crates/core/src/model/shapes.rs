//! Allocation-free shape inference for a [`VideoGraphConfig`].

use std::fmt;

use serde::Serialize;

use super::config::VideoGraphConfig;
use crate::error::{Error, Result};

/// Pooling window and stride over the time and node axes.
pub const POOL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub stage: String,
    pub shape: Vec<usize>,
}

impl fmt::Display for StageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        write!(f, "{:<18} ({})", self.stage, dims.join(", "))
    }
}

/// `(T, N)` after each embedding layer, starting with the unpooled input.
pub(crate) fn pooled_lengths(cfg: &VideoGraphConfig) -> Result<Vec<(usize, usize)>> {
    if cfg.num_embedding_layers == 0 {
        return Err(Error::InvalidArgument("num_embedding_layers must be at least 1".into()));
    }
    let mut dims = vec![(cfg.timesteps, cfg.nodes)];
    for layer in 1..=cfg.num_embedding_layers {
        let (t, n) = *dims.last().unwrap();
        if t < POOL || n < POOL {
            return Err(Error::shape(
                "shape_inference",
                format!("embedding layer {layer} receives T={t}, N={n}; both must be at least {POOL}"),
            ));
        }
        dims.push((t / POOL, n / POOL));
    }
    Ok(dims)
}

/// Shapes of every stage: input, per-step attention, node-attentive tensor,
/// each embedding layer output, classifier input and logits.
pub fn shape_inference(cfg: &VideoGraphConfig) -> Result<Vec<StageShape>> {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    if [cfg.timesteps, cfg.nodes, h, w, c, cfg.num_classes].contains(&0) {
        return Err(Error::shape("shape_inference", "zero-length axis in configuration"));
    }
    let dims = pooled_lengths(cfg)?;
    let mut stages = vec![
        StageShape { stage: "input".into(), shape: vec![cfg.timesteps, h, w, c] },
        StageShape { stage: "alpha (per step)".into(), shape: vec![h, w, cfg.nodes] },
        StageShape { stage: "Z".into(), shape: vec![cfg.timesteps, cfg.nodes, h, w, c] },
    ];
    for (i, &(t, n)) in dims.iter().enumerate().skip(1) {
        stages.push(StageShape { stage: format!("embedding {i}"), shape: vec![t, n, h, w, c] });
    }
    let &(t, n) = dims.last().unwrap();
    stages.push(StageShape { stage: "classifier input".into(), shape: vec![t * n * c] });
    stages.push(StageShape { stage: "logits".into(), shape: vec![cfg.num_classes] });
    Ok(stages)
}
