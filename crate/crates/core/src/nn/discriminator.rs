//! Discriminators: joint `(x, z)` mode for the AVB family, latent-only `z`
//! mode for the AAE family, over dense rows or trace channels.

use super::{bind_list, Activation, Conv1dIds, Conv1dLayer, Dense, DenseIds, NnError, Param};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Clone)]
pub enum Discriminator {
    JointDense(DenseDisc),
    LatentDense(DenseDisc),
    JointConv(ConvDisc),
    LatentConv(ConvDisc),
}

impl Discriminator {
    pub fn is_joint(&self) -> bool {
        matches!(self, Discriminator::JointDense(_) | Discriminator::JointConv(_))
    }

    pub fn mode_name(&self) -> &'static str {
        if self.is_joint() {
            "joint"
        } else {
            "latent-only"
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Discriminator::JointDense(d) | Discriminator::LatentDense(d) => d.params(),
            Discriminator::JointConv(d) | Discriminator::LatentConv(d) => d.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Discriminator::JointDense(d) | Discriminator::LatentDense(d) => d.params_mut(),
            Discriminator::JointConv(d) | Discriminator::LatentConv(d) => d.params_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundDisc, TensorError> {
        Ok(match self {
            Discriminator::JointDense(d) | Discriminator::LatentDense(d) => {
                BoundDisc::Dense(d.bind(tape, trainable)?)
            }
            Discriminator::JointConv(d) | Discriminator::LatentConv(d) => {
                BoundDisc::Conv(d.bind(tape, trainable)?)
            }
        })
    }

    /// Logits `[b]` for a batch of dense rows. Joint mode requires `x`;
    /// latent-only mode rejects it.
    pub fn logit_rows(
        &self,
        tape: &mut Tape,
        bound: &BoundDisc,
        x: Option<TensorId>,
        z: TensorId,
    ) -> Result<TensorId, NnError> {
        let (disc, ids) = match (self, bound) {
            (Discriminator::JointDense(d), BoundDisc::Dense(b)) => (d, b),
            (Discriminator::LatentDense(d), BoundDisc::Dense(b)) => (d, b),
            _ => {
                return Err(NnError::DiscriminatorMode {
                    expected: self.mode_name(),
                    got: "trace",
                })
            }
        };
        let input = match (self.is_joint(), x) {
            (true, Some(x)) => tape.concat(&[x, z], 1)?,
            (false, None) => z,
            (true, None) => {
                return Err(NnError::DiscriminatorMode { expected: "joint", got: "latent-only" })
            }
            (false, Some(_)) => {
                return Err(NnError::DiscriminatorMode { expected: "latent-only", got: "joint" })
            }
        };
        Ok(disc.forward(tape, ids, input)?)
    }

    /// Scalar logit for one trace. Joint mode stacks the fluorescence and
    /// spike channels; latent-only mode sees spikes alone.
    pub fn logit_trace(
        &self,
        tape: &mut Tape,
        bound: &BoundDisc,
        f: Option<TensorId>,
        s: TensorId,
    ) -> Result<TensorId, NnError> {
        let (disc, ids) = match (self, bound) {
            (Discriminator::JointConv(d), BoundDisc::Conv(b)) => (d, b),
            (Discriminator::LatentConv(d), BoundDisc::Conv(b)) => (d, b),
            _ => {
                return Err(NnError::DiscriminatorMode {
                    expected: self.mode_name(),
                    got: "dense-rows",
                })
            }
        };
        let t = tape.tensor(s).numel();
        let s_row = tape.reshape(s, &[1, t])?;
        let input = match (self.is_joint(), f) {
            (true, Some(f)) => {
                let f_row = tape.reshape(f, &[1, t])?;
                tape.concat(&[f_row, s_row], 0)?
            }
            (false, None) => s_row,
            (true, None) => {
                return Err(NnError::DiscriminatorMode { expected: "joint", got: "latent-only" })
            }
            (false, Some(_)) => {
                return Err(NnError::DiscriminatorMode { expected: "latent-only", got: "joint" })
            }
        };
        Ok(disc.forward(tape, ids, input)?)
    }
}

#[derive(Debug)]
pub enum BoundDisc {
    Dense(BoundDenseDisc),
    Conv(BoundConvDisc),
}

impl BoundDisc {
    pub fn flat_ids(&self) -> &[TensorId] {
        match self {
            BoundDisc::Dense(b) => &b.flat,
            BoundDisc::Conv(b) => &b.flat,
        }
    }
}

// ---------------------------------------------------------------------------

/// MLP discriminator over dense rows -> one logit per row.
#[derive(Debug, Clone)]
pub struct DenseDisc {
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct BoundDenseDisc {
    layers: Vec<DenseIds>,
    out: DenseIds,
    flat: Vec<TensorId>,
}

impl DenseDisc {
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::init(&format!("disc.l{i}"), d, h, rng));
            d = h;
        }
        DenseDisc { layers, out: Dense::init("disc.out", d, 1, rng), activation }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        out.extend([&self.out.w, &self.out.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        out.extend([&mut self.out.w, &mut self.out.b]);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundDenseDisc, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers = (0..self.layers.len())
            .map(|i| DenseIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.layers.len();
        Ok(BoundDenseDisc { layers, out: DenseIds { w: flat[base], b: flat[base + 1] }, flat })
    }

    /// `[b, d] -> [b]` logits.
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundDenseDisc,
        input: TensorId,
    ) -> Result<TensorId, TensorError> {
        let mut h = input;
        for ids in &bound.layers {
            h = Dense::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        let out = Dense::forward(tape, bound.out, h)?;
        let b = tape.tensor(out).shape()[0];
        tape.reshape(out, &[b])
    }
}

// ---------------------------------------------------------------------------

/// Conv discriminator over trace channels -> time-pooled scalar logit.
#[derive(Debug, Clone)]
pub struct ConvDisc {
    pub layers: Vec<Conv1dLayer>,
    pub head: Conv1dLayer,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct BoundConvDisc {
    layers: Vec<Conv1dIds>,
    head: Conv1dIds,
    flat: Vec<TensorId>,
}

impl ConvDisc {
    /// `in_channels` is 2 for joint (fluorescence + spikes), 1 for latent.
    pub fn new(
        in_channels: usize,
        widths: &[usize],
        filters: &[usize],
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Result<Self, NnError> {
        if widths.len() != filters.len() || widths.is_empty() {
            return Err(NnError::Config(
                "conv widths and filters must be non-empty and equal-length".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut c = in_channels;
        for (i, (&w, &f)) in widths.iter().zip(filters).enumerate() {
            layers.push(Conv1dLayer::init(&format!("disc.conv{i}"), c, f, w, rng));
            c = f;
        }
        let head = Conv1dLayer::init("disc.head", c, 1, 1, rng);
        Ok(ConvDisc { layers, head, activation })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        out.extend([&self.head.w, &self.head.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        out.extend([&mut self.head.w, &mut self.head.b]);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundConvDisc, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers: Vec<Conv1dIds> = (0..self.layers.len())
            .map(|i| Conv1dIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.layers.len();
        Ok(BoundConvDisc { layers, head: Conv1dIds { w: flat[base], b: flat[base + 1] }, flat })
    }

    /// `[c, t] -> scalar` logit: conv stack, 1x1 head, mean over time.
    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundConvDisc,
        input: TensorId,
    ) -> Result<TensorId, TensorError> {
        let mut h = input;
        for ids in &bound.layers {
            h = Conv1dLayer::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        let out = Conv1dLayer::forward(tape, bound.head, h)?;
        tape.mean(out)
    }
}
