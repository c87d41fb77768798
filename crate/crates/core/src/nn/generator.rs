//! Generators: Bernoulli pixel decoders, Gaussian dense decoders, and the
//! biophysical calcium-fluorescence trace model.

use super::{bind_list, Activation, Dense, DenseIds, NnError, Param};
use crate::tensor::{Tape, TensorError, TensorId};

const LOG_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub enum Generator {
    Bernoulli(BernoulliMlpGen),
    Gaussian(GaussianDenseGen),
    Biophys(BiophysGen),
}

impl Generator {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            Generator::Bernoulli(g) => g.params(),
            Generator::Gaussian(g) => g.params(),
            Generator::Biophys(g) => g.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Generator::Bernoulli(g) => g.params_mut(),
            Generator::Gaussian(g) => g.params_mut(),
            Generator::Biophys(g) => g.params_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundGenerator, TensorError> {
        Ok(match self {
            Generator::Bernoulli(g) => BoundGenerator::Bernoulli(g.bind(tape, trainable)?),
            Generator::Gaussian(g) => BoundGenerator::Gaussian(g.bind(tape, trainable)?),
            Generator::Biophys(g) => BoundGenerator::Biophys(g.bind(tape, trainable)?),
        })
    }

    /// `log p(x|z)` per row for batched vector data, or a scalar for traces.
    ///
    /// Vector generators: `z [b, dz]`, `x [b, dx]`, result `[b]`. The
    /// biophysical generator takes a spike train `z [t]` and trace `x [t]`
    /// and returns a scalar.
    pub fn log_lik(
        &self,
        tape: &mut Tape,
        bound: &BoundGenerator,
        z: TensorId,
        x: TensorId,
    ) -> Result<TensorId, NnError> {
        let out = match (self, bound) {
            (Generator::Bernoulli(g), BoundGenerator::Bernoulli(b)) => {
                g.log_lik_rows(tape, b, z, x)?
            }
            (Generator::Gaussian(g), BoundGenerator::Gaussian(b)) => {
                g.log_lik_rows(tape, b, z, x)?
            }
            (Generator::Biophys(g), BoundGenerator::Biophys(b)) => g.log_lik(tape, b, z, x)?,
            _ => panic!("generator bound against a different variant"),
        };
        if let Some(&bad) = tape.values(out).iter().find(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                op: "decode_log_likelihood",
                detail: format!("log-likelihood produced {bad}"),
            });
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub enum BoundGenerator {
    Bernoulli(BoundBernoulli),
    Gaussian(BoundGaussianGen),
    Biophys(BoundBiophys),
}

impl BoundGenerator {
    pub fn flat_ids(&self) -> &[TensorId] {
        match self {
            BoundGenerator::Bernoulli(b) => &b.flat,
            BoundGenerator::Gaussian(b) => &b.flat,
            BoundGenerator::Biophys(b) => &b.flat,
        }
    }
}

// ---------------------------------------------------------------------------

/// MLP decoder with factorized Bernoulli pixels: `z [b, dz] -> logits [b, dx]`.
#[derive(Debug, Clone)]
pub struct BernoulliMlpGen {
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct BoundBernoulli {
    layers: Vec<DenseIds>,
    out: DenseIds,
    flat: Vec<TensorId>,
}

impl BernoulliMlpGen {
    pub fn new(
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Self {
        let mut layers = Vec::new();
        let mut d = latent_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::init(&format!("gen.l{i}"), d, h, rng));
            d = h;
        }
        BernoulliMlpGen { layers, out: Dense::init("gen.out", d, data_dim, rng), activation }
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

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundBernoulli, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers = (0..self.layers.len())
            .map(|i| DenseIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.layers.len();
        Ok(BoundBernoulli { layers, out: DenseIds { w: flat[base], b: flat[base + 1] }, flat })
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundBernoulli,
        z: TensorId,
    ) -> Result<TensorId, TensorError> {
        let mut h = z;
        for ids in &bound.layers {
            h = Dense::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        Dense::forward(tape, bound.out, h)
    }

    /// Per-row Bernoulli log-likelihood of binary `x [b, dx]`.
    pub fn log_lik_rows(
        &self,
        tape: &mut Tape,
        bound: &BoundBernoulli,
        z: TensorId,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let logits = self.logits(tape, bound, z)?;
        // -x softplus(-l) - (1-x) softplus(l), summed per row
        let neg_l = tape.neg(logits)?;
        let sp_neg = tape.softplus(neg_l)?;
        let sp_pos = tape.softplus(logits)?;
        let on = tape.mul(x, sp_neg)?;
        let one = tape.constant_scalar(1.0)?;
        let off_ind = tape.sub(one, x)?;
        let off = tape.mul(off_ind, sp_pos)?;
        let total = tape.add(on, off)?;
        let row = tape.sum_axis(total, 1)?;
        tape.neg(row)
    }
}

// ---------------------------------------------------------------------------

/// Dense decoder with Gaussian observation noise: mean = MLP(z), a learned
/// per-model `log sigma` shared across output dimensions.
#[derive(Debug, Clone)]
pub struct GaussianDenseGen {
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub log_sigma: Param,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct BoundGaussianGen {
    layers: Vec<DenseIds>,
    out: DenseIds,
    log_sigma: TensorId,
    flat: Vec<TensorId>,
}

impl GaussianDenseGen {
    pub fn new(
        latent_dim: usize,
        hidden: &[usize],
        data_dim: usize,
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Self {
        let mut layers = Vec::new();
        let mut d = latent_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::init(&format!("gen.l{i}"), d, h, rng));
            d = h;
        }
        GaussianDenseGen {
            layers,
            out: Dense::init("gen.out", d, data_dim, rng),
            log_sigma: Param::zeros("gen.log_sigma", &[1]),
            activation,
        }
    }

    /// The 1-D linear-Gaussian test model `p(x|z) = N(w z + b, sigma^2)`.
    pub fn linear_1d(w: f64, b: f64, sigma: f64) -> Self {
        GaussianDenseGen {
            layers: Vec::new(),
            out: Dense {
                w: Param::from_values("gen.out.w", &[1, 1], vec![w]),
                b: Param::from_values("gen.out.b", &[1, 1], vec![b]),
            },
            log_sigma: Param::from_values("gen.log_sigma", &[1], vec![sigma.ln()]),
            activation: Activation::Relu,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        out.extend([&self.out.w, &self.out.b, &self.log_sigma]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        out.extend([&mut self.out.w, &mut self.out.b, &mut self.log_sigma]);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundGaussianGen, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers = (0..self.layers.len())
            .map(|i| DenseIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.layers.len();
        Ok(BoundGaussianGen {
            layers,
            out: DenseIds { w: flat[base], b: flat[base + 1] },
            log_sigma: flat[base + 2],
            flat,
        })
    }

    pub fn mean(
        &self,
        tape: &mut Tape,
        bound: &BoundGaussianGen,
        z: TensorId,
    ) -> Result<TensorId, TensorError> {
        let mut h = z;
        for ids in &bound.layers {
            h = Dense::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        Dense::forward(tape, bound.out, h)
    }

    pub fn log_lik_rows(
        &self,
        tape: &mut Tape,
        bound: &BoundGaussianGen,
        z: TensorId,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let dx = self.out.out_dim() as f64;
        let mean = self.mean(tape, bound, z)?;
        let diff = tape.sub(x, mean)?;
        let neg_ls = tape.neg(bound.log_sigma)?;
        let inv_sigma = tape.exp(neg_ls)?;
        let standardized = tape.mul(diff, inv_sigma)?;
        let sq = tape.mul(standardized, standardized)?;
        let mhalf = tape.constant_scalar(-0.5)?;
        let quad = tape.mul(sq, mhalf)?;
        let row = tape.sum_axis(quad, 1)?;
        // - dx log sigma - dx/2 log 2pi
        let dx_c = tape.constant_scalar(dx)?;
        let ls_term = tape.mul(bound.log_sigma, dx_c)?;
        let shifted = tape.sub(row, ls_term)?;
        let c = tape.constant_scalar(-0.5 * dx * LOG_2PI)?;
        tape.add(shifted, c)
    }
}

// ---------------------------------------------------------------------------

/// Biophysical trace model: spikes drive an exponentially decaying calcium
/// process read out as `f = alpha c + beta + noise`. `alpha`, `beta` and the
/// observation noise scale are differentiable; the decay time constant and
/// discretization step are fixed per model.
#[derive(Debug, Clone)]
pub struct BiophysGen {
    pub alpha: Param,
    pub beta: Param,
    pub log_sigma: Param,
    pub tau: f64,
    pub dt: f64,
}

#[derive(Debug)]
pub struct BoundBiophys {
    alpha: TensorId,
    beta: TensorId,
    log_sigma: TensorId,
    flat: Vec<TensorId>,
}

impl BiophysGen {
    pub fn new(alpha: f64, beta: f64, sigma: f64, tau: f64, dt: f64) -> Result<Self, NnError> {
        if tau <= 0.0 || dt <= 0.0 || dt >= tau {
            return Err(NnError::Config(format!(
                "calcium decay requires 0 < dt < tau, got dt={dt}, tau={tau}"
            )));
        }
        if sigma <= 0.0 {
            return Err(NnError::Config("observation noise sigma must be positive".into()));
        }
        Ok(BiophysGen {
            alpha: Param::from_values("gen.alpha", &[1], vec![alpha]),
            beta: Param::from_values("gen.beta", &[1], vec![beta]),
            log_sigma: Param::from_values("gen.log_sigma", &[1], vec![sigma.ln()]),
            tau,
            dt,
        })
    }

    pub fn decay_coeff(&self) -> f64 {
        1.0 - self.dt / self.tau
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.alpha, &self.beta, &self.log_sigma]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.alpha, &mut self.beta, &mut self.log_sigma]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundBiophys, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        Ok(BoundBiophys { alpha: flat[0], beta: flat[1], log_sigma: flat[2], flat })
    }

    /// `log p(f | s)`: Gaussian residuals around `alpha c(s) + beta`.
    /// Differentiable w.r.t. alpha/beta/log sigma and, through a
    /// straight-through spike sample, w.r.t. spike probabilities.
    pub fn log_lik(
        &self,
        tape: &mut Tape,
        bound: &BoundBiophys,
        spikes: TensorId,
        trace: TensorId,
    ) -> Result<TensorId, TensorError> {
        let t = tape.tensor(trace).numel() as f64;
        let calcium = tape.decay_filter(spikes, self.decay_coeff())?;
        let scaled = tape.mul(calcium, bound.alpha)?;
        let mean = tape.add(scaled, bound.beta)?;
        let diff = tape.sub(trace, mean)?;
        let neg_ls = tape.neg(bound.log_sigma)?;
        let inv_sigma = tape.exp(neg_ls)?;
        let standardized = tape.mul(diff, inv_sigma)?;
        let sq = tape.mul(standardized, standardized)?;
        let quad_sum = tape.sum(sq)?;
        let mhalf = tape.constant_scalar(-0.5)?;
        let quad = tape.mul(quad_sum, mhalf)?;
        let t_c = tape.constant_scalar(t)?;
        let ls_term = tape.mul(bound.log_sigma, t_c)?;
        let ls_flat = tape.reshape(ls_term, &[])?;
        let shifted = tape.sub(quad, ls_flat)?;
        let c = tape.constant_scalar(-0.5 * t * LOG_2PI)?;
        tape.add(shifted, c)
    }
}
