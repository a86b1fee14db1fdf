//! Classifier architectures and the GAN pair.

mod classifier;
mod gan;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

pub use classifier::{build_classifier, ArchKind, ArchSpec, Classifier, InitScheme};
pub use gan::{build_gan, Discriminator, GanSpec, Generator};
pub(crate) use gan::split_matrices;

/// Uniform fan-in scaled ("Kaiming uniform") weights: `U(-b, b)` with
/// `b = sqrt(6 / fan_in)`.
pub(crate) fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}
