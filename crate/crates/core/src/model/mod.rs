//! The VideoGraph network and the orderless mean-pool baseline.

mod config;
mod init;
mod layers;
mod shapes;

pub use config::{InitStrategy, LabelMode, SigmaKind, VideoGraphConfig};
pub use init::{fan_in_uniform, init_latent_nodes};
pub use layers::{ClassifierParams, GraphEmbeddingParams, NodeAttentionOutput, NodeAttentionParams};
pub use shapes::{shape_inference, StageShape, POOL};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, softmax_raw, BatchNormStats, Mode, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(rename = "videograph")]
    VideoGraph,
    MeanPool,
}

/// Values recorded by one forward pass.
pub struct ForwardOutput {
    pub logits: Var,
    /// `Ŷ` (absent for the baseline).
    pub nodes_hat: Option<Var>,
    /// Output of every graph-embedding layer, `[B, T', N', H, W, C]`.
    pub embeddings: Vec<Var>,
}

/// Shared interface of trainable video classifiers.
pub trait ActivityModel<T: Scalar> {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &VideoGraphConfig;
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn bn_stats(&self) -> &[BatchNormStats<T>];
    fn bn_stats_mut(&mut self) -> &mut [BatchNormStats<T>];

    /// Records a forward pass on `input` (`[B, T, H, W, C]`) using the given
    /// parameter values and running statistics.
    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        stats: &mut [BatchNormStats<T>],
        input: Var,
        mode: Mode,
    ) -> Result<ForwardOutput>;

    /// Train-mode pass; updates running statistics.
    fn forward_train(&mut self, tape: &mut Tape<T>, input: Var) -> Result<ForwardOutput> {
        let mut stats = self.bn_stats().to_vec();
        let out = self.forward_with(tape, self.params(), &mut stats, input, Mode::Train)?;
        self.bn_stats_mut().clone_from_slice(&stats);
        Ok(out)
    }

    /// Eval-mode pass; leaves the model untouched.
    fn forward_eval(&self, tape: &mut Tape<T>, input: Var) -> Result<ForwardOutput> {
        let mut stats = self.bn_stats().to_vec();
        self.forward_with(tape, self.params(), &mut stats, input, Mode::Eval)
    }

    /// Class scores `[B, K]`: softmax for single-label, sigmoid for multi-label.
    fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let out = self.forward_eval(&mut tape, x)?;
        Ok(scores_from_logits(tape.value(out.logits), self.config().label_mode))
    }
}

pub fn scores_from_logits<T: Scalar>(logits: &Tensor<T>, mode: LabelMode) -> Tensor<T> {
    match mode {
        LabelMode::Single => Tensor::new(logits.shape().to_vec(), softmax_raw(logits.data(), logits.shape(), 1))
            .expect("softmax of finite logits is finite"),
        LabelMode::Multi => logits.map(sigmoid),
    }
}

fn check_input<T: Scalar>(tape: &Tape<T>, input: Var, cfg: &VideoGraphConfig) -> Result<(usize, usize)> {
    let s = tape.shape(input);
    if s.len() != 5 || s[2] != cfg.height || s[3] != cfg.width || s[4] != cfg.channels {
        return Err(Error::shape(
            "forward",
            format!("expected [B, T, {}, {}, {}], got {s:?}", cfg.height, cfg.width, cfg.channels),
        ));
    }
    Ok((s[0], s[1]))
}

/// Node attention per segment, graph embeddings, spatial average, flatten,
/// classifier.
#[derive(Clone, Debug)]
pub struct VideoGraph<T> {
    pub config: VideoGraphConfig,
    pub params: ParamStore<T>,
    pub attention: NodeAttentionParams,
    pub layers: Vec<GraphEmbeddingParams>,
    pub classifier: ClassifierParams,
    pub stats: Vec<BatchNormStats<T>>,
}

impl<T: Scalar> VideoGraph<T> {
    /// Builds a model, initializing nodes per `config.init_strategy`.
    /// `feature_sample` (`M × C`) is required for k-means initialization.
    pub fn new(config: VideoGraphConfig, feature_sample: Option<&Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let nodes =
            init_latent_nodes(config.init_strategy, config.nodes, config.channels, config.seed, feature_sample)?;
        Self::with_nodes(config, nodes)
    }

    pub fn with_nodes(config: VideoGraphConfig, nodes: Tensor<T>) -> Result<Self> {
        config.validate()?;
        if nodes.shape() != [config.nodes, config.channels] {
            return Err(Error::shape(
                "VideoGraph::new",
                format!("nodes {:?} != [{}, {}]", nodes.shape(), config.nodes, config.channels),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_9a9e);
        let mut params = ParamStore::new();
        let attention = NodeAttentionParams::register(&mut params, nodes, config.sigma_kind, &mut rng);
        let c = config.channels;
        let layers: Vec<_> = (0..config.num_embedding_layers)
            .map(|l| {
                GraphEmbeddingParams::register(
                    &mut params,
                    &format!("embed{}", l + 1),
                    c,
                    config.time_kernel,
                    config.node_kernel,
                    l,
                    &mut rng,
                )
            })
            .collect();
        let stages = shape_inference(&config)?;
        let classifier_input = stages[stages.len() - 2].shape[0];
        let classifier = ClassifierParams::register(
            &mut params,
            classifier_input,
            config.classifier_hidden,
            config.num_classes,
            layers.len(),
            &mut rng,
        );
        let mut stats: Vec<_> = (0..layers.len()).map(|_| BatchNormStats::new(c)).collect();
        stats.push(BatchNormStats::new(config.classifier_hidden));
        Ok(VideoGraph { config, params, attention, layers, classifier, stats })
    }

    /// Current `Ŷ` as a plain tensor.
    pub fn transformed_nodes(&self) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.attention.transformed_nodes(&mut tape, &self.params)?;
        Ok(tape.value(v).clone())
    }
}

impl<T: Scalar> ActivityModel<T> for VideoGraph<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::VideoGraph
    }

    fn config(&self) -> &VideoGraphConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn bn_stats(&self) -> &[BatchNormStats<T>] {
        &self.stats
    }

    fn bn_stats_mut(&mut self) -> &mut [BatchNormStats<T>] {
        &mut self.stats
    }

    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        stats: &mut [BatchNormStats<T>],
        input: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (b, t) = check_input(tape, input, cfg)?;
        let (h, w, c, n) = (cfg.height, cfg.width, cfg.channels, cfg.nodes);
        let segments = tape.reshape(input, &[b * t, h, w, c])?;
        let att = self.attention.forward(tape, params, segments)?;
        let mut z = tape.reshape(att.z, &[b, t, n, h, w, c])?;
        let mut embeddings = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            z = layer.forward(tape, params, &mut stats[layer.bn_slot], z, mode)?;
            embeddings.push(z);
        }
        let pooled = tape.mean_axes(z, &[3, 4])?;
        let per_video: usize = tape.shape(pooled)[1..].iter().product();
        let flat = tape.reshape(pooled, &[b, per_video])?;
        let logits = self.classifier.forward(tape, params, &mut stats[self.classifier.bn_slot], flat, mode)?;
        Ok(ForwardOutput { logits, nodes_hat: Some(att.nodes_hat), embeddings })
    }
}

/// Orderless baseline: average over time and space, then the same classifier
/// head as VideoGraph.
#[derive(Clone, Debug)]
pub struct MeanPoolBaseline<T> {
    pub config: VideoGraphConfig,
    pub params: ParamStore<T>,
    pub classifier: ClassifierParams,
    pub stats: Vec<BatchNormStats<T>>,
}

impl<T: Scalar> MeanPoolBaseline<T> {
    pub fn new(config: VideoGraphConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba5e_11e0);
        let mut params = ParamStore::new();
        let classifier = ClassifierParams::register(
            &mut params,
            config.channels,
            config.classifier_hidden,
            config.num_classes,
            0,
            &mut rng,
        );
        let stats = vec![BatchNormStats::new(config.classifier_hidden)];
        Ok(MeanPoolBaseline { config, params, classifier, stats })
    }
}

impl<T: Scalar> ActivityModel<T> for MeanPoolBaseline<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::MeanPool
    }

    fn config(&self) -> &VideoGraphConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn bn_stats(&self) -> &[BatchNormStats<T>] {
        &self.stats
    }

    fn bn_stats_mut(&mut self) -> &mut [BatchNormStats<T>] {
        &mut self.stats
    }

    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        stats: &mut [BatchNormStats<T>],
        input: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        check_input(tape, input, &self.config)?;
        let pooled = tape.mean_axes(input, &[1, 2, 3])?;
        let logits = self.classifier.forward(tape, params, &mut stats[self.classifier.bn_slot], pooled, mode)?;
        Ok(ForwardOutput { logits, nodes_hat: None, embeddings: Vec::new() })
    }
}

/// Either model behind one type, for harness code that picks at runtime.
#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    VideoGraph(VideoGraph<T>),
    MeanPool(MeanPoolBaseline<T>),
}

impl<T: Scalar> AnyModel<T> {
    pub fn build(kind: ModelKind, config: VideoGraphConfig, feature_sample: Option<&Tensor<T>>) -> Result<Self> {
        Ok(match kind {
            ModelKind::VideoGraph => AnyModel::VideoGraph(VideoGraph::new(config, feature_sample)?),
            ModelKind::MeanPool => AnyModel::MeanPool(MeanPoolBaseline::new(config)?),
        })
    }

    /// Model with zero latent nodes, for when every parameter is about to be
    /// overwritten (checkpoint restore).
    pub fn skeleton(kind: ModelKind, config: VideoGraphConfig) -> Result<Self> {
        Ok(match kind {
            ModelKind::VideoGraph => {
                let nodes = Tensor::zeros([config.nodes, config.channels]);
                AnyModel::VideoGraph(VideoGraph::with_nodes(config, nodes)?)
            }
            ModelKind::MeanPool => AnyModel::MeanPool(MeanPoolBaseline::new(config)?),
        })
    }

    fn inner(&self) -> &dyn ActivityModel<T> {
        match self {
            AnyModel::VideoGraph(m) => m,
            AnyModel::MeanPool(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn ActivityModel<T> {
        match self {
            AnyModel::VideoGraph(m) => m,
            AnyModel::MeanPool(m) => m,
        }
    }

    pub fn as_videograph(&self) -> Option<&VideoGraph<T>> {
        match self {
            AnyModel::VideoGraph(m) => Some(m),
            AnyModel::MeanPool(_) => None,
        }
    }
}

impl<T: Scalar> ActivityModel<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn config(&self) -> &VideoGraphConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore<T> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.inner_mut().params_mut()
    }

    fn bn_stats(&self) -> &[BatchNormStats<T>] {
        self.inner().bn_stats()
    }

    fn bn_stats_mut(&mut self) -> &mut [BatchNormStats<T>] {
        self.inner_mut().bn_stats_mut()
    }

    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamStore<T>,
        stats: &mut [BatchNormStats<T>],
        input: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        self.inner().forward_with(tape, params, stats, input, mode)
    }
}
