//! The gradient verification suite: every differentiable op, plus full
//! forward+loss passes of both models, checked against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{grad_check, grad_check_params, GradCheckReport, DEFAULT_STEP};
use crate::autograd::{Activation, BatchNormStats, Mode, Tape, Var};
use crate::error::Result;
use crate::model::{ActivityModel, InitStrategy, LabelMode, MeanPoolBaseline, SigmaKind, VideoGraph, VideoGraphConfig};
use crate::tensor::Tensor;

/// Largest relative error accepted by the suite.
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error <= SUITE_TOLERANCE
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// Normal values pushed at least `gap` away from zero, to stay off kinks.
fn off_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    normal(shape, rng).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

/// Distinct values spaced at least 0.05 apart, in shuffled order.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).expect("finite")
}

fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Checks `op` composed with a fixed random projection to a scalar.
fn check_projected<F>(name: &str, point: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng, op: F) -> Result<SuiteEntry>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut probe = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| probe.constant(t.clone())).collect();
    let out_len = {
        let out = op(&mut probe, &vars)?;
        probe.value(out).len()
    };
    let w = weights(out_len, rng);
    let report = grad_check(
        |tape, v| {
            let out = op(tape, v)?;
            tape.dot_const(out, &w)
        },
        &point,
        DEFAULT_STEP,
    )?;
    Ok(SuiteEntry { name: name.to_string(), report })
}

/// Op-level checks at inputs drawn from `seed`.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let p = vec![normal(&[3, 4], r), normal(&[4, 2], r)];
    out.push(check_projected("matmul", p, r, |t, v| t.matmul(v[0], v[1]))?);
    let p = vec![normal(&[3, 4], r)];
    out.push(check_projected("transpose", p, r, |t, v| t.transpose(v[0]))?);
    let p = vec![normal(&[2, 6], r)];
    out.push(check_projected("reshape", p, r, |t, v| t.reshape(v[0], &[3, 4]))?);
    let p = vec![normal(&[2, 3, 4], r), normal(&[4], r)];
    out.push(check_projected("add_bias", p, r, |t, v| t.add_bias(v[0], v[1]))?);
    let p = vec![normal(&[2, 5, 3, 4], r), normal(&[4, 3], r)];
    out.push(check_projected("depthwise_conv1d[axis 1]", p, r, |t, v| t.depthwise_conv1d(v[0], v[1], 1))?);
    let p = vec![normal(&[6, 3], r), normal(&[3, 5], r)];
    out.push(check_projected("depthwise_conv1d[axis 0]", p, r, |t, v| t.depthwise_conv1d(v[0], v[1], 0))?);
    for (name, kind) in [("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid), ("tanh", Activation::Tanh)] {
        let p = vec![off_zero(&[3, 5], 0.05, r)];
        out.push(check_projected(name, p, r, move |t, v| t.activation(v[0], kind))?);
    }
    let p = vec![normal(&[3, 4], r)];
    out.push(check_projected("softmax[axis 1]", p, r, |t, v| t.softmax(v[0], 1))?);
    let p = vec![normal(&[3, 4], r)];
    out.push(check_projected("softmax[axis 0]", p, r, |t, v| t.softmax(v[0], 0))?);
    let p = vec![normal(&[4, 3, 5], r), normal(&[5], r), normal(&[5], r)];
    out.push(check_projected("batch_norm[train]", p, r, |t, v| {
        let mut stats = BatchNormStats::new(5);
        t.batch_norm(v[0], 2, v[1], v[2], &mut stats, Mode::Train)
    })?);
    let p = vec![normal(&[2, 5, 3], r), normal(&[5], r), normal(&[5], r)];
    let running = BatchNormStats {
        mean: weights(5, r),
        var: (0..5).map(|_| r.random_range(0.5..2.0)).collect(),
        initialized: true,
    };
    out.push(check_projected("batch_norm[eval]", p, r, move |t, v| {
        let mut stats = running.clone();
        t.batch_norm(v[0], 1, v[1], v[2], &mut stats, Mode::Eval)
    })?);
    let p = vec![distinct(&[6, 7, 2], r)];
    out.push(check_projected("max_pool", p, r, |t, v| t.max_pool(v[0], &[0, 1], 3, 3))?);
    let p = vec![normal(&[2, 3, 4], r), normal(&[4, 5], r)];
    out.push(check_projected("attend", p, r, |t, v| t.attend(v[0], v[1]))?);
    let p = vec![normal(&[2, 3, 4, 5], r)];
    out.push(check_projected("mean_axes", p, r, |t, v| t.mean_axes(v[0], &[1, 3]))?);
    let p = vec![normal(&[5], r)];
    out.push(check_projected("dot_const", p, r, |t, v| t.reshape(v[0], &[5]))?);
    let targets: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
    let p = vec![normal(&[4, 3], r)];
    let report = grad_check(|t, v| t.cross_entropy(v[0], &targets), &p, DEFAULT_STEP)?;
    out.push(SuiteEntry { name: "cross_entropy".into(), report });
    let targets: Vec<f64> = (0..12).map(|_| f64::from(r.random_bool(0.5))).collect();
    let p = vec![normal(&[3, 4], r)];
    let report = grad_check(|t, v| t.binary_cross_entropy(v[0], &targets), &p, DEFAULT_STEP)?;
    out.push(SuiteEntry { name: "binary_cross_entropy".into(), report });
    Ok(out)
}

/// Small configuration exercising every stage of the network.
pub fn suite_config(seed: u64) -> VideoGraphConfig {
    VideoGraphConfig {
        timesteps: 9,
        nodes: 6,
        height: 2,
        width: 1,
        channels: 3,
        time_kernel: 3,
        node_kernel: 3,
        num_embedding_layers: 1,
        classifier_hidden: 5,
        num_classes: 3,
        label_mode: LabelMode::Single,
        sigma_kind: SigmaKind::Sigmoid,
        init_strategy: InitStrategy::Random,
        seed,
    }
}

/// Full forward+loss checks over every parameter. Batch-norm layers run in
/// eval mode after one train-mode pass has set their running statistics:
/// under batch statistics a bias feeding batch norm has an identically zero
/// gradient, which finite differences only resolve to round-off.
pub fn model_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x9c4d);
    let mut out = Vec::new();
    let variants = [
        ("videograph[sigmoid]", SigmaKind::Sigmoid, LabelMode::Single),
        ("videograph[softmax_over_nodes]", SigmaKind::SoftmaxOverNodes, LabelMode::Single),
        ("videograph[tanh, multi-label]", SigmaKind::Tanh, LabelMode::Multi),
    ];
    for (name, sigma, label_mode) in variants {
        let mut cfg = suite_config(seed);
        cfg.sigma_kind = sigma;
        cfg.label_mode = label_mode;
        let mut model = VideoGraph::<f64>::new(cfg.clone(), None)?;
        perturb_params(model.params_mut(), r);
        out.push(check_model(name, &mut model, &cfg, r)?);
    }
    let mut cfg = suite_config(seed);
    cfg.nodes = 9;
    cfg.channels = 2;
    cfg.num_embedding_layers = 2;
    let mut model = VideoGraph::<f64>::new(cfg.clone(), None)?;
    perturb_params(model.params_mut(), r);
    out.push(check_model("videograph[2 layers]", &mut model, &cfg, r)?);
    let cfg = suite_config(seed);
    let mut baseline = MeanPoolBaseline::<f64>::new(cfg.clone())?;
    perturb_params(baseline.params_mut(), r);
    out.push(check_model("mean_pool_baseline", &mut baseline, &cfg, r)?);
    Ok(out)
}

/// Moves zero biases and unit gains off their initial values so every
/// parameter carries a generic gradient.
fn perturb_params(store: &mut crate::autograd::ParamStore<f64>, r: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            let n: f64 = StandardNormal.sample(&mut *r);
            *v += 0.1 * n;
        }
    }
}

fn check_model<M: ActivityModel<f64>>(
    name: &str,
    model: &mut M,
    cfg: &VideoGraphConfig,
    r: &mut ChaCha8Rng,
) -> Result<SuiteEntry> {
    let batch = 4;
    let x = normal(&[batch, cfg.timesteps, cfg.height, cfg.width, cfg.channels], r);
    let mut warm = Tape::new();
    let xv = warm.constant(x.clone());
    model.forward_train(&mut warm, xv)?;
    let k = cfg.num_classes;
    let single: Vec<usize> = (0..batch).map(|_| r.random_range(0..k)).collect();
    let multi: Vec<f64> = (0..batch * k).map(|_| f64::from(r.random_bool(0.5))).collect();
    let stats = model.bn_stats().to_vec();
    let mut params = model.params().clone();
    let report = grad_check_params(
        &mut params,
        |tape, store| {
            let xv = tape.constant(x.clone());
            let mut s = stats.clone();
            let fwd = model.forward_with(tape, store, &mut s, xv, Mode::Eval)?;
            match cfg.label_mode {
                LabelMode::Single => tape.cross_entropy(fwd.logits, &single),
                LabelMode::Multi => tape.binary_cross_entropy(fwd.logits, &multi),
            }
        },
        DEFAULT_STEP,
    )?;
    Ok(SuiteEntry { name: name.to_string(), report })
}

/// Op and model suites for one seed.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut all = op_suite(seed)?;
    all.extend(model_suite(seed)?);
    Ok(all)
}
