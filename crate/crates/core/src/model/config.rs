use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Single,
    Multi,
}

/// Nonlinearity applied to node similarities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    Sigmoid,
    SoftmaxOverNodes,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Random,
    Sobol,
    Kmeans,
}

/// Architecture hyperparameters. Serialized keys use the single-letter
/// dimension names (`T`, `N`, `H`, `W`, `C`, `t`, `n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoGraphConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "N")]
    pub nodes: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "t")]
    pub time_kernel: usize,
    #[serde(rename = "n")]
    pub node_kernel: usize,
    pub num_embedding_layers: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub label_mode: LabelMode,
    pub sigma_kind: SigmaKind,
    pub init_strategy: InitStrategy,
    pub seed: u64,
}

impl VideoGraphConfig {
    /// Full-size configuration: 64 segments of 7×7×1024 features, 128 nodes,
    /// kernels of 7, two embedding layers.
    pub fn full() -> Self {
        VideoGraphConfig {
            timesteps: 64,
            nodes: 128,
            height: 7,
            width: 7,
            channels: 1024,
            time_kernel: 7,
            node_kernel: 7,
            num_embedding_layers: 2,
            classifier_hidden: 512,
            num_classes: 12,
            label_mode: LabelMode::Single,
            sigma_kind: SigmaKind::Sigmoid,
            init_strategy: InitStrategy::Random,
            seed: 0,
        }
    }

    /// Laptop-scale configuration. A single embedding layer, since eight nodes
    /// cannot survive two rounds of pooling by three.
    pub fn desk() -> Self {
        VideoGraphConfig {
            timesteps: 16,
            nodes: 8,
            height: 1,
            width: 1,
            channels: 16,
            time_kernel: 7,
            node_kernel: 7,
            num_embedding_layers: 1,
            classifier_hidden: 64,
            num_classes: 4,
            label_mode: LabelMode::Single,
            sigma_kind: SigmaKind::Sigmoid,
            init_strategy: InitStrategy::Random,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.timesteps),
            ("H", self.height),
            ("W", self.width),
            ("C", self.channels),
            ("classifier_hidden", self.classifier_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.nodes < 2 {
            return Err(Error::InvalidArgument(format!("N must be at least 2, got {}", self.nodes)));
        }
        if self.time_kernel.is_multiple_of(2) || self.node_kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel sizes must be odd, got t={} n={}",
                self.time_kernel, self.node_kernel
            )));
        }
        super::shapes::pooled_lengths(self).map(|_| ())
    }
}
