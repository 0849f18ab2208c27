//! Small dense-network toolkit: ReLU MLPs with analytic backpropagation,
//! Adam, and the tanh-squashed Gaussian used by the SAC actor.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use gaussian::{squashed_gaussian_sample, GaussianHead, HeadGradient, SquashedSample};
pub use mlp::{Forward, Gradients, Linear, Mlp};
