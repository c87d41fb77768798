//! The three parametric models: inference networks, generators, and
//! discriminators, plus the layer primitives they share.
//!
//! Networks own their weights as [`Param`]s. Each training step binds the
//! weights onto a fresh tape (trainable or frozen), builds the loss graph,
//! and reads gradients back out by id. Frozen bindings insert constants, so
//! a stop-gradient boundary costs nothing in the backward sweep.

mod discriminator;
mod encoder;
mod generator;

pub use discriminator::{BoundDisc, ConvDisc, DenseDisc, Discriminator};
pub use encoder::{
    BoundEncoder, BoundGaussian, BoundImplicit, BoundSpike, EncoderNoise, GaussianMlp,
    GaussianSample, ImplicitMlp, InferenceNetwork, SpikeConv, SpikePosterior,
};
pub use generator::{
    BernoulliMlpGen, BiophysGen, BoundBiophys, BoundGenerator, GaussianDenseGen, Generator,
};

use crate::rng::RandomSource;
use crate::tensor::{Tape, TensorError, TensorId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("discriminator mode mismatch: {expected} discriminator given {got} input")]
    DiscriminatorMode { expected: &'static str, got: &'static str },

    #[error("{op}: non-finite result: {detail}")]
    NonFinite { op: &'static str, detail: String },

    #[error("invalid architecture: {0}")]
    Config(String),
}

/// A named weight array owned by a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { name: name.into(), shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        Param { name: name.into(), shape: shape.to_vec(), values }
    }

    /// Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut RandomSource,
    ) -> Self {
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * scale).collect();
        Param { name: name.into(), shape: shape.to_vec(), values }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<TensorId, TensorError> {
        if trainable {
            tape.leaf(&self.values, &self.shape)
        } else {
            tape.constant(&self.values, &self.shape)
        }
    }
}

/// Bind a parameter list in order, returning the flat id list used for
/// gradient extraction (same order as `params()`).
pub(crate) fn bind_list(
    tape: &mut Tape,
    params: &[&Param],
    trainable: bool,
) -> Result<Vec<TensorId>, TensorError> {
    params.iter().map(|p| p.bind(tape, trainable)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId, TensorError> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(NnError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer: `x [b, in] -> x W + bias [b, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseIds {
    pub w: TensorId,
    pub b: TensorId,
}

impl Dense {
    pub fn init(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut RandomSource) -> Self {
        Dense {
            w: Param::init_uniform(format!("{prefix}.w"), &[in_dim, out_dim], in_dim, rng),
            b: Param::zeros(format!("{prefix}.b"), &[1, out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<DenseIds, TensorError> {
        Ok(DenseIds { w: self.w.bind(tape, trainable)?, b: self.b.bind(tape, trainable)? })
    }

    pub fn forward(tape: &mut Tape, ids: DenseIds, x: TensorId) -> Result<TensorId, TensorError> {
        let xw = tape.matmul(x, ids.w)?;
        tape.add(xw, ids.b)
    }
}

/// 1-D "same"-padded convolution layer over `[c_in, t]` inputs.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1dIds {
    pub w: TensorId,
    pub b: TensorId,
}

impl Conv1dLayer {
    pub fn init(
        prefix: &str,
        c_in: usize,
        c_out: usize,
        width: usize,
        rng: &mut RandomSource,
    ) -> Self {
        Conv1dLayer {
            w: Param::init_uniform(
                format!("{prefix}.w"),
                &[c_out, c_in, width],
                c_in * width,
                rng,
            ),
            b: Param::zeros(format!("{prefix}.b"), &[c_out, 1]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape[1]
    }

    pub fn c_out(&self) -> usize {
        self.w.shape[0]
    }

    pub fn width(&self) -> usize {
        self.w.shape[2]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Conv1dIds, TensorError> {
        Ok(Conv1dIds { w: self.w.bind(tape, trainable)?, b: self.b.bind(tape, trainable)? })
    }

    pub fn forward(
        tape: &mut Tape,
        ids: Conv1dIds,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let conv = tape.conv1d_same(x, ids.w)?;
        tape.add(conv, ids.b)
    }
}

/// Sizes for the default networks; every field is overridable.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    /// Conv filter widths per encoder layer.
    pub conv_widths: Vec<usize>,
    /// Filters per conv layer.
    pub conv_filters: Vec<usize>,
    /// Hidden widths for dense networks.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    /// Noise inputs for implicit posteriors: dimensions (dense) or channels
    /// (conv) per injection site.
    pub noise_dim: usize,
    /// How many leading layers receive the noise input.
    pub noise_inject_layers: usize,
    /// Autoregressive history window for the correlated baseline posterior.
    pub ar_window: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            conv_widths: vec![31, 21, 21, 11],
            conv_filters: vec![20, 20, 20, 20],
            hidden_widths: vec![64, 64],
            latent_dim: 32,
            activation: Activation::Relu,
            noise_dim: 2,
            noise_inject_layers: 2,
            ar_window: 10,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.conv_widths.len() != self.conv_filters.len() {
            return Err(NnError::Config(format!(
                "conv_widths ({}) and conv_filters ({}) differ in length",
                self.conv_widths.len(),
                self.conv_filters.len()
            )));
        }
        for (label, vals) in [
            ("conv_widths", &self.conv_widths),
            ("conv_filters", &self.conv_filters),
            ("hidden_widths", &self.hidden_widths),
        ] {
            if vals.iter().any(|&v| v == 0) {
                return Err(NnError::Config(format!("{label} entries must be positive")));
            }
        }
        if self.latent_dim == 0 {
            return Err(NnError::Config("latent_dim must be positive".into()));
        }
        if self.ar_window == 0 {
            return Err(NnError::Config("ar_window must be positive".into()));
        }
        Ok(())
    }
}

/// The latent prior a model is trained against.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Standard normal over a `dim`-dimensional continuous latent.
    StdNormal { dim: usize },
    /// I.i.d. Bernoulli per-frame spike prior.
    SpikeBernoulli { rate: f64 },
}

impl Prior {
    /// Per-row log density of latent rows `z [b, dim]` (continuous prior) or
    /// the total log mass of a spike train `z [t]`.
    pub fn log_prob_rows(&self, tape: &mut Tape, z: TensorId) -> Result<TensorId, TensorError> {
        match self {
            Prior::StdNormal { dim } => {
                let zsq = tape.mul(z, z)?;
                let half = tape.constant_scalar(-0.5)?;
                let scaled = tape.mul(zsq, half)?;
                let row = tape.sum_axis(scaled, 1)?;
                let c = tape
                    .constant_scalar(-(*dim as f64) * 0.5 * (2.0 * std::f64::consts::PI).ln())?;
                tape.add(row, c)
            }
            Prior::SpikeBernoulli { rate } => {
                let log_r = tape.constant_scalar(rate.ln())?;
                let log_1r = tape.constant_scalar((1.0 - rate).ln())?;
                let on = tape.mul(z, log_r)?;
                let one = tape.constant_scalar(1.0)?;
                let off_ind = tape.sub(one, z)?;
                let off = tape.mul(off_ind, log_1r)?;
                let total = tape.add(on, off)?;
                tape.sum(total)
            }
        }
    }

    /// Sample one latent: a `dim`-vector or a `frames`-long spike train.
    pub fn sample_vec(&self, rng: &mut RandomSource, len: usize) -> Vec<f64> {
        match self {
            Prior::StdNormal { .. } => rng.gaussian_vec(len),
            Prior::SpikeBernoulli { rate } => {
                (0..len).map(|_| if rng.bernoulli(*rate) { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Prior::StdNormal { dim } => Some(*dim),
            Prior::SpikeBernoulli { .. } => None,
        }
    }
}

/// The generator / inference-network / discriminator triple under training.
/// VAE-family configurations carry no discriminator.
#[derive(Debug, Clone)]
pub struct ModelTriple {
    pub prior: Prior,
    pub encoder: InferenceNetwork,
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
}
