//! Parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::InitStrategy;
use crate::error::{Error, Result};
use crate::features::{kmeans, Sobol, DEFAULT_MAX_ITERS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial latent node matrix `Y` (`N × C`).
///
/// * `Random`: i.i.d. normal with standard deviation `1/√C`.
/// * `Sobol`: the first `N` Sobol points in `C` dimensions mapped from
///   `[0, 1)` to `[-1, 1)`.
/// * `Kmeans`: `N` centroids of `feature_sample`, whose rows are individual
///   `C`-dimensional feature vectors.
pub fn init_latent_nodes<T: Scalar>(
    strategy: InitStrategy,
    nodes: usize,
    channels: usize,
    seed: u64,
    feature_sample: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if nodes < 2 || channels == 0 {
        return Err(Error::InvalidArgument(format!("need N >= 2 and C >= 1, got N={nodes}, C={channels}")));
    }
    match strategy {
        InitStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0 / (channels as f64).sqrt()).expect("positive std");
            let data = (0..nodes * channels).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
            Ok(Tensor::from_raw(vec![nodes, channels], data))
        }
        InitStrategy::Sobol => {
            let sobol = Sobol::new(channels)?;
            let data = sobol.take(nodes).flatten().map(|u| T::from_f64_lossy(2.0 * u - 1.0)).collect();
            Ok(Tensor::from_raw(vec![nodes, channels], data))
        }
        InitStrategy::Kmeans => {
            let sample = feature_sample
                .ok_or_else(|| Error::InvalidArgument("kmeans initialization requires a feature sample".into()))?;
            if sample.rank() != 2 || sample.shape()[1] != channels {
                return Err(Error::shape(
                    "init_latent_nodes",
                    format!("feature sample must be M x {channels}, got {:?}", sample.shape()),
                ));
            }
            if sample.shape()[0] < nodes {
                return Err(Error::InvalidArgument(format!(
                    "kmeans initialization needs at least {nodes} sample vectors, got {}",
                    sample.shape()[0]
                )));
            }
            Ok(kmeans(sample, nodes, seed, DEFAULT_MAX_ITERS)?.centroids)
        }
    }
}

/// Uniform in `[-√(6/fan_in), √(6/fan_in)]`.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
    Tensor::from_raw(shape.to_vec(), data)
}
