//! Importance-weighted adversarial variational inference toolkit.
//!
//! Eight pieces, built bottom-up:
//!
//! - [`tensor`]: tape-recorded reverse-mode differentiation over dense f64
//!   tensors — the numeric substrate for everything else.
//! - [`rng`]: seeded, exactly-resumable random streams.
//! - [`nn`]: the three parametric models — implicit/tractable inference
//!   networks, generators, and discriminators.
//! - [`objectives`]: ELBO, IWAE, the adversarial (AVB/AAE) losses and their
//!   importance-weighted variants, VIMCO baselines, and gradient-SNR probes.
//! - [`train`]: alternating three-network optimization with checkpointing.
//! - [`spikes`]: the biophysical calcium-fluorescence model, synthetic data,
//!   and trace-file I/O.
//! - [`eval`]: log-likelihood estimators (importance-sampled and annealed),
//!   FID, spike correlation, paired t-tests, and inference timing.
//! - [`theory`]: an exact-enumeration oracle over small discrete models that
//!   verifies the objective identities and bound orderings numerically.

pub mod config;
pub mod eval;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod spikes;
pub mod tensor;
pub mod theory;
pub mod train;

pub use rng::RandomSource;
pub use tensor::{Tape, Tensor, TensorError, TensorId};
