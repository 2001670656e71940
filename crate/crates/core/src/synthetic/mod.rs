//! Synthetic long-range activities: Markov walks over a vocabulary of
//! unit-actions, rendered as noisy prototype features.
//!
//! In the `MarginalConfound` regime every class has a doubly stochastic
//! transition matrix, so all classes share the uniform unit-action marginal
//! and only the order of unit-actions tells them apart.

mod manifest;

pub use manifest::{read_manifest, write_manifest, Dataset, ManifestRecord};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.3;
/// Weight of the uniform matrix blended into each class's cycle.
pub const DEFAULT_MIXING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    MarginalConfound,
    DistinctActions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Natural,
    Reversed,
    Random,
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(PerturbMode::Natural),
            "reversed" => Ok(PerturbMode::Reversed),
            "random" => Ok(PerturbMode::Random),
            other => Err(Error::InvalidArgument(format!("unknown perturbation `{other}`"))),
        }
    }
}

/// Prototype feature vector per unit-action.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitActionVocabulary {
    prototypes: Vec<Vec<f64>>,
    noise_sigma: f64,
}

impl UnitActionVocabulary {
    /// Validates pairwise separation: every prototype distance must exceed
    /// `4 · noise_sigma`.
    pub fn new(prototypes: Vec<Vec<f64>>, noise_sigma: f64) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::InvalidArgument("vocabulary needs at least two unit-actions".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma {noise_sigma} must be >= 0")));
        }
        let c = prototypes[0].len();
        if c == 0 || prototypes.iter().any(|p| p.len() != c) {
            return Err(Error::InvalidArgument("prototypes must share a positive dimension".into()));
        }
        for i in 0..prototypes.len() {
            for j in i + 1..prototypes.len() {
                let d = euclidean(&prototypes[i], &prototypes[j]);
                if d <= 4.0 * noise_sigma {
                    return Err(Error::InvalidArgument(format!(
                        "prototypes {i} and {j} are {d:.4} apart, not more than 4·sigma = {}",
                        4.0 * noise_sigma
                    )));
                }
            }
        }
        Ok(UnitActionVocabulary { prototypes, noise_sigma })
    }

    /// `units` random orthonormal prototypes in `channels` dimensions.
    pub fn orthonormal(units: usize, channels: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if units > channels {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {units} orthonormal prototypes in {channels} dimensions"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(units);
        while basis.len() < units {
            let mut v: Vec<f64> = (0..channels).map(|_| normal.sample(&mut rng)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Self::new(basis, noise_sigma)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.prototypes[0].len()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn prototype(&self, unit: usize) -> &[f64] {
        &self.prototypes[unit]
    }
}

/// First-order Markov structure of one activity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityClass {
    pub id: usize,
    /// Row-stochastic `U × U` matrix.
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl ActivityClass {
    pub fn new(id: usize, transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let u = initial.len();
        let stochastic = |row: &[f64]| {
            row.len() == u && row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if u < 2 || transition.len() != u || !transition.iter().all(|r| stochastic(r)) || !stochastic(&initial) {
            return Err(Error::InvalidArgument(format!(
                "class {id}: transition rows and initial must be distributions"
            )));
        }
        Ok(ActivityClass { id, transition, initial })
    }

    pub fn units(&self) -> usize {
        self.initial.len()
    }

    /// Unit-actions reachable from the initial distribution.
    pub fn support(&self) -> Vec<usize> {
        let mut seen: Vec<bool> = self.initial.iter().map(|&p| p > 0.0).collect();
        let mut stack: Vec<usize> = (0..self.units()).filter(|&i| seen[i]).collect();
        while let Some(i) = stack.pop() {
            for (j, &p) in self.transition[i].iter().enumerate() {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..self.units()).filter(|&j| seen[j]).collect()
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        let u = self.units();
        (0..u).all(|j| ((0..u).map(|i| self.transition[i][j]).sum::<f64>() - 1.0).abs() <= tol)
            && self.transition.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Markov walk of length `len`.
    pub fn walk(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut state = draw(&self.initial, rng);
        out.push(state);
        for _ in 1..len {
            state = draw(&self.transition[state], rng);
            out.push(state);
        }
        out
    }
}

fn draw(dist: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.random();
    for (i, &p) in dist.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

/// `(1 - mixing)·P_cycle + mixing/|S|` on the states of `cycle` (and zero
/// elsewhere), with a uniform start over the cycle.
fn cycle_class(id: usize, units: usize, cycle: &[usize], mixing: f64) -> Result<ActivityClass> {
    let s = cycle.len() as f64;
    let mut transition = vec![vec![0.0; units]; units];
    let mut initial = vec![0.0; units];
    for (pos, &from) in cycle.iter().enumerate() {
        let to = cycle[(pos + 1) % cycle.len()];
        for &j in cycle {
            transition[from][j] = mixing / s;
        }
        transition[from][to] += 1.0 - mixing;
        initial[from] = 1.0 / s;
    }
    // States outside the cycle are unreachable; give them a self-loop so the
    // matrix stays stochastic.
    for (u, row) in transition.iter_mut().enumerate() {
        if !cycle.contains(&u) {
            row[u] = 1.0;
        }
    }
    ActivityClass::new(id, transition, initial)
}

fn factorial_at_least(n: usize, k: usize) -> bool {
    let mut f: usize = 1;
    for i in 2..=n {
        f = f.saturating_mul(i);
        if f >= k {
            return true;
        }
    }
    f >= k
}

/// Builds `k` activity classes over `units` unit-actions.
///
/// * `MarginalConfound`: each class is a distinct directed Hamiltonian cycle
///   over all unit-actions blended with the uniform matrix, hence doubly
///   stochastic with a uniform start. At most `(U-1)!` classes exist.
/// * `DistinctActions`: classes get disjoint blocks of `⌊U/K⌋` unit-actions.
pub fn make_class_set(k: usize, units: usize, regime: Regime, mixing: f64, seed: u64) -> Result<Vec<ActivityClass>> {
    if k < 2 || units < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2 and U >= 2, got K={k}, U={units}")));
    }
    if !(0.0..1.0).contains(&mixing) {
        return Err(Error::InvalidArgument(format!("mixing {mixing} must lie in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match regime {
        Regime::MarginalConfound => {
            if !factorial_at_least(units - 1, k) {
                return Err(Error::InvalidArgument(format!(
                    "only (U-1)! distinct cycles exist for U={units}; cannot build {k} classes"
                )));
            }
            let mut cycles: Vec<Vec<usize>> = Vec::with_capacity(k);
            while cycles.len() < k {
                let mut rest: Vec<usize> = (1..units).collect();
                rest.shuffle(&mut rng);
                let mut cycle = vec![0];
                cycle.extend(rest);
                if !cycles.contains(&cycle) {
                    cycles.push(cycle);
                }
            }
            cycles.iter().enumerate().map(|(id, c)| cycle_class(id, units, c, mixing)).collect()
        }
        Regime::DistinctActions => {
            let block = units / k;
            if block == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{units} unit-actions cannot give {k} classes disjoint vocabularies"
                )));
            }
            let mut order: Vec<usize> = (0..units).collect();
            order.shuffle(&mut rng);
            (0..k)
                .map(|id| {
                    let mut cycle = order[id * block..(id + 1) * block].to_vec();
                    cycle[1..].shuffle(&mut rng);
                    cycle_class(id, units, &cycle, if block == 1 { 0.0 } else { mixing })
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Single(usize),
    Multi(Vec<usize>),
}

impl Label {
    pub fn single(&self) -> Option<usize> {
        match self {
            Label::Single(c) => Some(*c),
            Label::Multi(_) => None,
        }
    }

    /// `{0,1}` indicator vector over `k` classes.
    pub fn indicator(&self, k: usize) -> Vec<u8> {
        let mut v = vec![0u8; k];
        match self {
            Label::Single(c) => v[*c] = 1,
            Label::Multi(cs) => cs.iter().for_each(|&c| v[c] = 1),
        }
        v
    }
}

/// One video: segment features `[T, H, W, C]` plus its label. The unit-action
/// sequence is kept for diagnostics only.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample<T> {
    pub features: Tensor<T>,
    pub label: Label,
    pub units: Vec<usize>,
}

/// Walks `class` for `t` steps; each segment is its unit-action prototype plus
/// i.i.d. normal noise, tiled over `h × w`.
pub fn sample_video<T: Scalar>(
    class: &ActivityClass,
    vocab: &UnitActionVocabulary,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<VideoSample<T>> {
    if class.units() != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "class {} spans {} unit-actions, vocabulary has {}",
            class.id,
            class.units(),
            vocab.len()
        )));
    }
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument("T, H and W must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = class.walk(t, &mut rng);
    let c = vocab.channels();
    let sigma = vocab.noise_sigma();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(t * h * w * c);
    for &u in &units {
        let seg: Vec<f64> = vocab
            .prototype(u)
            .iter()
            .map(|&p| if sigma > 0.0 { p + sigma * normal.sample(&mut rng) } else { p })
            .collect();
        for _ in 0..h * w {
            data.extend(seg.iter().map(|&v| T::from_f64_lossy(v)));
        }
    }
    Ok(VideoSample { features: Tensor::new(vec![t, h, w, c], data)?, label: Label::Single(class.id), units })
}

/// Time-axis permutation applied by [`perturb_order`].
pub fn order_permutation(len: usize, mode: PerturbMode, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    match mode {
        PerturbMode::Natural => {}
        PerturbMode::Reversed => idx.reverse(),
        PerturbMode::Random => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    idx
}

/// Reorders the time axis (axis 0) of a `[T, ...]` tensor: output step `i`
/// is input step `perm[i]`.
pub fn permute_time<T: Scalar>(features: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let t = features.shape()[0];
    assert_eq!(perm.len(), t, "permutation length must equal T");
    let stride = features.len() / t;
    let src = features.data();
    let data = perm.iter().flat_map(|&p| src[p * stride..(p + 1) * stride].iter().copied()).collect();
    Tensor::from_raw(features.shape().to_vec(), data)
}

pub fn perturb_order<T: Scalar>(sample: &VideoSample<T>, mode: PerturbMode, seed: u64) -> VideoSample<T> {
    let perm = order_permutation(sample.features.shape()[0], mode, seed);
    VideoSample {
        features: permute_time(&sample.features, &perm),
        label: sample.label.clone(),
        units: perm.iter().map(|&p| sample.units.get(p).copied().unwrap_or(usize::MAX)).collect(),
    }
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub regime: Regime,
    pub num_classes: usize,
    pub num_units: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_mixing")]
    pub mixing: f64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_SIGMA
}

fn default_mixing() -> f64 {
    DEFAULT_MIXING
}

/// A generated train/validation split with its generating structure.
#[derive(Clone, Debug)]
pub struct SyntheticDataset<T> {
    pub classes: Vec<ActivityClass>,
    pub vocabulary: UnitActionVocabulary,
    pub train: Vec<VideoSample<T>>,
    pub val: Vec<VideoSample<T>>,
}

/// SplitMix64 finalizer; derives independent per-sample seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic in `(spec, seed)`. Samples are class-balanced and ordered
/// class by class.
pub fn generate_dataset<T: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset<T>> {
    let vocabulary =
        UnitActionVocabulary::orthonormal(spec.num_units, spec.channels, spec.noise_sigma, derive_seed(seed, 1))?;
    let classes = make_class_set(spec.num_classes, spec.num_units, spec.regime, spec.mixing, derive_seed(seed, 2))?;
    let make = |split: u64, per_class: usize| -> Result<Vec<VideoSample<T>>> {
        let mut out = Vec::with_capacity(per_class * classes.len());
        for class in &classes {
            for i in 0..per_class {
                let stream = (split << 48) | ((class.id as u64) << 24) | i as u64;
                out.push(sample_video(
                    class,
                    &vocabulary,
                    spec.timesteps,
                    spec.height,
                    spec.width,
                    derive_seed(seed, stream),
                )?);
            }
        }
        Ok(out)
    };
    let train = make(3, spec.train_per_class)?;
    let val = make(4, spec.val_per_class)?;
    Ok(SyntheticDataset { classes, vocabulary, train, val })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confound_classes_are_doubly_stochastic_and_distinct() {
        let classes = make_class_set(4, 4, Regime::MarginalConfound, DEFAULT_MIXING, 5).unwrap();
        assert_eq!(classes.len(), 4);
        for c in &classes {
            assert!(c.is_doubly_stochastic(1e-9));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                let frob: f64 = (0..4)
                    .flat_map(|a| (0..4).map(move |b| (a, b)))
                    .map(|(a, b)| (classes[i].transition[a][b] - classes[j].transition[a][b]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(frob >= 0.1, "classes {i},{j} too close: {frob}");
            }
        }
    }

    #[test]
    fn too_many_confound_classes() {
        // U = 3 admits only 2 directed cycles.
        assert!(make_class_set(3, 3, Regime::MarginalConfound, 0.1, 0).is_err());
        assert!(make_class_set(2, 3, Regime::MarginalConfound, 0.1, 0).is_ok());
    }

    #[test]
    fn distinct_actions_are_disjoint() {
        let classes = make_class_set(2, 4, Regime::DistinctActions, 0.1, 3).unwrap();
        let (a, b) = (classes[0].support(), classes[1].support());
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|u| !b.contains(u)));
    }

    #[test]
    fn identity_transition_is_absorbing() {
        let eye = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let class = ActivityClass::new(0, eye, vec![0.0, 1.0, 0.0]).unwrap();
        let vocab = UnitActionVocabulary::orthonormal(3, 4, 0.3, 1).unwrap();
        let s: VideoSample<f64> = sample_video(&class, &vocab, 12, 1, 1, 9).unwrap();
        assert!(s.units.iter().all(|&u| u == 1));
    }

    #[test]
    fn noiseless_features_equal_prototypes() {
        let classes = make_class_set(2, 4, Regime::MarginalConfound, 0.1, 0).unwrap();
        let vocab = UnitActionVocabulary::orthonormal(4, 6, 0.0, 2).unwrap();
        let s: VideoSample<f64> = sample_video(&classes[0], &vocab, 5, 2, 1, 4).unwrap();
        for (step, &u) in s.units.iter().enumerate() {
            for pos in 0..2 {
                for c in 0..6 {
                    assert_eq!(s.features.get(&[step, pos, 0, c]), vocab.prototype(u)[c]);
                }
            }
        }
    }

    #[test]
    fn vocabulary_separation_is_enforced() {
        let close = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(UnitActionVocabulary::new(close.clone(), 0.3).is_err());
        assert!(UnitActionVocabulary::new(close, 0.2).is_ok());
    }

    #[test]
    fn reversal_is_an_involution() {
        let classes = make_class_set(2, 4, Regime::MarginalConfound, 0.1, 0).unwrap();
        let vocab = UnitActionVocabulary::orthonormal(4, 4, 0.3, 2).unwrap();
        let s: VideoSample<f32> = sample_video(&classes[1], &vocab, 9, 1, 2, 4).unwrap();
        let twice = perturb_order(&perturb_order(&s, PerturbMode::Reversed, 0), PerturbMode::Reversed, 0);
        assert_eq!(twice, s);
        assert_eq!(perturb_order(&s, PerturbMode::Natural, 0), s);
    }

    #[test]
    fn random_order_is_seeded() {
        assert_eq!(order_permutation(20, PerturbMode::Random, 3), order_permutation(20, PerturbMode::Random, 3));
        assert_ne!(order_permutation(20, PerturbMode::Random, 3), order_permutation(20, PerturbMode::Random, 4));
    }
}
