//! Inference networks: tractable Gaussian heads, implicit noise-driven MLPs,
//! and the convolutional spike encoders (factorized, autoregressive, and
//! implicit posteriors over binary spike trains).

use super::{bind_list, Activation, Conv1dIds, Conv1dLayer, Dense, DenseIds, NnError, Param};
use crate::tensor::{Tape, TensorError, TensorId};

const LOG_2PI: f64 = 1.8378770664093453;

/// Noise inputs for one posterior sample, already placed on the tape.
#[derive(Debug, Clone)]
pub enum EncoderNoise {
    /// No noise (deterministic or factorized encoders).
    None,
    /// One `[b, dim]` tensor per injection site.
    Dense(Vec<TensorId>),
    /// One `[channels, t]` tensor per injection site.
    Channels(Vec<TensorId>),
}

#[derive(Debug, Clone)]
pub enum InferenceNetwork {
    Gaussian(GaussianMlp),
    Implicit(ImplicitMlp),
    Spike(SpikeConv),
}

impl InferenceNetwork {
    pub fn params(&self) -> Vec<&Param> {
        match self {
            InferenceNetwork::Gaussian(net) => net.params(),
            InferenceNetwork::Implicit(net) => net.params(),
            InferenceNetwork::Spike(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            InferenceNetwork::Gaussian(net) => net.params_mut(),
            InferenceNetwork::Implicit(net) => net.params_mut(),
            InferenceNetwork::Spike(net) => net.params_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundEncoder, TensorError> {
        Ok(match self {
            InferenceNetwork::Gaussian(net) => BoundEncoder::Gaussian(net.bind(tape, trainable)?),
            InferenceNetwork::Implicit(net) => BoundEncoder::Implicit(net.bind(tape, trainable)?),
            InferenceNetwork::Spike(net) => BoundEncoder::Spike(net.bind(tape, trainable)?),
        })
    }

    /// Whether `log q(z|x)` can be evaluated (required by ELBO/IWAE/VIMCO).
    pub fn is_tractable(&self) -> bool {
        match self {
            InferenceNetwork::Gaussian(_) => true,
            InferenceNetwork::Implicit(_) => false,
            InferenceNetwork::Spike(net) => {
                !matches!(net.posterior, SpikePosterior::Implicit { .. })
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InferenceNetwork::Gaussian(_) => "gaussian",
            InferenceNetwork::Implicit(_) => "implicit",
            InferenceNetwork::Spike(net) => match net.posterior {
                SpikePosterior::Implicit { .. } => "spike-implicit",
                SpikePosterior::Factorized => "spike-factorized",
                SpikePosterior::Autoregressive { .. } => "spike-autoregressive",
            },
        }
    }
}

#[derive(Debug)]
pub enum BoundEncoder {
    Gaussian(BoundGaussian),
    Implicit(BoundImplicit),
    Spike(BoundSpike),
}

impl BoundEncoder {
    /// Bound parameter ids in `params()` order.
    pub fn flat_ids(&self) -> &[TensorId] {
        match self {
            BoundEncoder::Gaussian(b) => &b.flat,
            BoundEncoder::Implicit(b) => &b.flat,
            BoundEncoder::Spike(b) => &b.flat,
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian reparameterized encoder

/// Standard reparameterized encoder: `z = mu(x) + diag(sigma(x)) eps`.
#[derive(Debug, Clone)]
pub struct GaussianMlp {
    pub trunk: Vec<Dense>,
    pub mu: Dense,
    pub log_sigma: Dense,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct BoundGaussian {
    trunk: Vec<DenseIds>,
    mu: DenseIds,
    log_sigma: DenseIds,
    flat: Vec<TensorId>,
}

/// A reparameterized draw with the head tensors needed for `log q`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSample {
    pub z: TensorId,
    pub mu: TensorId,
    pub log_sigma: TensorId,
}

impl GaussianMlp {
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Self {
        let mut trunk = Vec::new();
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            trunk.push(Dense::init(&format!("enc.trunk{i}"), d, h, rng));
            d = h;
        }
        GaussianMlp {
            trunk,
            mu: Dense::init("enc.mu", d, latent_dim, rng),
            log_sigma: Dense::init("enc.log_sigma", d, latent_dim, rng),
            activation,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.out_dim()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.extend([&self.mu.w, &self.mu.b, &self.log_sigma.w, &self.log_sigma.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.trunk {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.extend([
            &mut self.mu.w,
            &mut self.mu.b,
            &mut self.log_sigma.w,
            &mut self.log_sigma.b,
        ]);
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundGaussian, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let trunk: Vec<DenseIds> = (0..self.trunk.len())
            .map(|i| DenseIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.trunk.len();
        Ok(BoundGaussian {
            trunk,
            mu: DenseIds { w: flat[base], b: flat[base + 1] },
            log_sigma: DenseIds { w: flat[base + 2], b: flat[base + 3] },
            flat,
        })
    }

    /// Head tensors `(mu, log_sigma)` for a batch `x [b, in]`.
    pub fn heads(
        &self,
        tape: &mut Tape,
        bound: &BoundGaussian,
        x: TensorId,
    ) -> Result<(TensorId, TensorId), TensorError> {
        let mut h = x;
        for ids in &bound.trunk {
            h = Dense::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        let mu = Dense::forward(tape, bound.mu, h)?;
        let log_sigma = Dense::forward(tape, bound.log_sigma, h)?;
        Ok((mu, log_sigma))
    }

    /// Reparameterized draw: `z = mu + exp(log_sigma) * eps`, `eps [b, dz]`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        bound: &BoundGaussian,
        x: TensorId,
        eps: TensorId,
    ) -> Result<GaussianSample, TensorError> {
        let (mu, log_sigma) = self.heads(tape, bound, x)?;
        if tape.tensor(eps).shape() != tape.tensor(mu).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sample_posterior",
                lhs: tape.tensor(mu).shape().to_vec(),
                rhs: tape.tensor(eps).shape().to_vec(),
            });
        }
        let sigma = tape.exp(log_sigma)?;
        let scaled = tape.mul(sigma, eps)?;
        let z = tape.add(mu, scaled)?;
        Ok(GaussianSample { z, mu, log_sigma })
    }

    /// Per-row `log q(z|x)` for arbitrary `z [b, dz]` against head tensors.
    pub fn log_q_rows(
        tape: &mut Tape,
        mu: TensorId,
        log_sigma: TensorId,
        z: TensorId,
    ) -> Result<TensorId, TensorError> {
        let dz = tape.tensor(mu).shape()[1] as f64;
        let diff = tape.sub(z, mu)?;
        let neg_ls = tape.neg(log_sigma)?;
        let inv_sigma = tape.exp(neg_ls)?;
        let standardized = tape.mul(diff, inv_sigma)?;
        let sq = tape.mul(standardized, standardized)?;
        let mhalf = tape.constant_scalar(-0.5)?;
        let quad = tape.mul(sq, mhalf)?;
        let centered = tape.sub(quad, log_sigma)?;
        let row = tape.sum_axis(centered, 1)?;
        let c = tape.constant_scalar(-0.5 * dz * LOG_2PI)?;
        tape.add(row, c)
    }
}

// ---------------------------------------------------------------------------
// Implicit dense encoder

/// Noise-driven MLP whose samples have no evaluable density. Noise is
/// concatenated to the input of the first `inject_layers` layers.
#[derive(Debug, Clone)]
pub struct ImplicitMlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub noise_dim: usize,
    pub inject_layers: usize,
}

#[derive(Debug)]
pub struct BoundImplicit {
    layers: Vec<DenseIds>,
    flat: Vec<TensorId>,
}

impl ImplicitMlp {
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        noise_dim: usize,
        inject_layers: usize,
        activation: Activation,
        rng: &mut crate::rng::RandomSource,
    ) -> Self {
        let widths: Vec<usize> =
            hidden.iter().copied().chain(std::iter::once(latent_dim)).collect();
        let inject_layers = inject_layers.min(widths.len());
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            let extra = if i < inject_layers { noise_dim } else { 0 };
            layers.push(Dense::init(&format!("enc.l{i}"), d + extra, w, rng));
            d = w;
        }
        ImplicitMlp { layers, activation, noise_dim, inject_layers }
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundImplicit, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers = (0..self.layers.len())
            .map(|i| DenseIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        Ok(BoundImplicit { layers, flat })
    }

    /// One implicit sample batch: `x [b, in]`, one noise tensor `[b, nd]`
    /// per injection site. With zero injection sites the output is a
    /// deterministic function of `x`.
    pub fn sample(
        &self,
        tape: &mut Tape,
        bound: &BoundImplicit,
        x: TensorId,
        noise: &[TensorId],
    ) -> Result<TensorId, TensorError> {
        if noise.len() != self.inject_layers {
            return Err(TensorError::LengthMismatch {
                op: "sample_posterior",
                expected: self.inject_layers,
                got: noise.len(),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, ids) in bound.layers.iter().enumerate() {
            if i < self.inject_layers {
                h = tape.concat(&[h, noise[i]], 1)?;
            }
            h = Dense::forward(tape, *ids, h)?;
            if i != last {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
// Convolutional spike encoders

/// Posterior family over binary spike trains.
#[derive(Debug, Clone)]
pub enum SpikePosterior {
    /// Adversarial implicit posterior: noise channels concatenated to the
    /// inputs of the first `inject_layers` conv layers; hard samples pass
    /// gradients straight through.
    Implicit { noise_channels: usize, inject_layers: usize },
    /// Independent Bernoulli per frame.
    Factorized,
    /// Bernoulli conditioned on the previous `window` sampled frames through
    /// a learned linear history term.
    Autoregressive { window: usize, weights: Param },
}

/// 1-D conv encoder mapping a fluorescence trace `[t]` to per-frame spike
/// logits `[t]`.
#[derive(Debug, Clone)]
pub struct SpikeConv {
    pub layers: Vec<Conv1dLayer>,
    pub head: Conv1dLayer,
    pub activation: Activation,
    pub posterior: SpikePosterior,
}

#[derive(Debug)]
pub struct BoundSpike {
    layers: Vec<Conv1dIds>,
    head: Conv1dIds,
    ar_weights: Option<TensorId>,
    flat: Vec<TensorId>,
}

impl SpikeConv {
    pub fn new(
        widths: &[usize],
        filters: &[usize],
        activation: Activation,
        posterior: SpikePosterior,
        rng: &mut crate::rng::RandomSource,
    ) -> Result<Self, NnError> {
        if widths.len() != filters.len() || widths.is_empty() {
            return Err(NnError::Config(
                "conv widths and filters must be non-empty and equal-length".into(),
            ));
        }
        let (noise_channels, inject_layers) = match &posterior {
            SpikePosterior::Implicit { noise_channels, inject_layers } => {
                (*noise_channels, (*inject_layers).min(widths.len()))
            }
            _ => (0, 0),
        };
        let mut layers = Vec::new();
        let mut c = 1; // fluorescence channel
        for (i, (&w, &f)) in widths.iter().zip(filters).enumerate() {
            let extra = if i < inject_layers { noise_channels } else { 0 };
            layers.push(Conv1dLayer::init(&format!("enc.conv{i}"), c + extra, f, w, rng));
            c = f;
        }
        let head = Conv1dLayer::init("enc.head", c, 1, 1, rng);
        Ok(SpikeConv { layers, head, activation, posterior })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect();
        out.extend([&self.head.w, &self.head.b]);
        if let SpikePosterior::Autoregressive { weights, .. } = &self.posterior {
            out.push(weights);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> =
            self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect();
        out.extend([&mut self.head.w, &mut self.head.b]);
        if let SpikePosterior::Autoregressive { weights, .. } = &mut self.posterior {
            out.push(weights);
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundSpike, TensorError> {
        let flat = bind_list(tape, &self.params(), trainable)?;
        let layers: Vec<Conv1dIds> = (0..self.layers.len())
            .map(|i| Conv1dIds { w: flat[2 * i], b: flat[2 * i + 1] })
            .collect();
        let base = 2 * self.layers.len();
        let head = Conv1dIds { w: flat[base], b: flat[base + 1] };
        let ar_weights = match self.posterior {
            SpikePosterior::Autoregressive { .. } => Some(flat[base + 2]),
            _ => None,
        };
        Ok(BoundSpike { layers, head, ar_weights, flat })
    }

    pub fn noise_sites(&self) -> usize {
        match self.posterior {
            SpikePosterior::Implicit { inject_layers, .. } => {
                inject_layers.min(self.layers.len())
            }
            _ => 0,
        }
    }

    pub fn noise_channels(&self) -> usize {
        match self.posterior {
            SpikePosterior::Implicit { noise_channels, .. } => noise_channels,
            _ => 0,
        }
    }

    /// Per-frame logits from the conv stack. `f` is `[1, t]`; `noise` holds
    /// one `[channels, t]` tensor per injection site.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundSpike,
        f: TensorId,
        noise: &[TensorId],
    ) -> Result<TensorId, TensorError> {
        if noise.len() != self.noise_sites() {
            return Err(TensorError::LengthMismatch {
                op: "sample_posterior",
                expected: self.noise_sites(),
                got: noise.len(),
            });
        }
        let mut h = f;
        for (i, ids) in bound.layers.iter().enumerate() {
            if i < noise.len() {
                h = tape.concat(&[h, noise[i]], 0)?;
            }
            h = Conv1dLayer::forward(tape, *ids, h)?;
            h = self.activation.apply(tape, h)?;
        }
        let out = Conv1dLayer::forward(tape, bound.head, h)?;
        let t = tape.tensor(out).shape()[1];
        tape.reshape(out, &[t])
    }

    /// Add the autoregressive history term: `logit[t] += sum_j w_j s[t-j]`
    /// with teacher-forced spikes `s` (constants in the graph).
    pub fn ar_adjusted_logits(
        &self,
        tape: &mut Tape,
        bound: &BoundSpike,
        base_logits: TensorId,
        spikes: &[f64],
    ) -> Result<TensorId, TensorError> {
        let SpikePosterior::Autoregressive { window, .. } = &self.posterior else {
            return Ok(base_logits);
        };
        let w_id = bound.ar_weights.expect("bound AR weights");
        let t = spikes.len();
        let mut hist = vec![0.0; window * t];
        for j in 1..=*window {
            for i in j..t {
                hist[(j - 1) * t + i] = spikes[i - j];
            }
        }
        let hist_id = tape.constant(&hist, &[*window, t])?;
        let w_row = tape.reshape(w_id, &[1, *window])?;
        let corr = tape.matmul(w_row, hist_id)?;
        let corr_flat = tape.reshape(corr, &[t])?;
        tape.add(base_logits, corr_flat)
    }

    /// Per-frame history correction values (plain, for sequential sampling).
    pub fn ar_correction_at(&self, history: &[f64], t: usize) -> f64 {
        let SpikePosterior::Autoregressive { window, weights } = &self.posterior else {
            return 0.0;
        };
        let mut acc = 0.0;
        for j in 1..=*window {
            if t >= j {
                acc += weights.values[j - 1] * history[t - j];
            }
        }
        acc
    }

    /// Tape-free vectorized forward over a whole trace: per-frame logits
    /// before any autoregressive correction. Noise holds one flat
    /// `[channels * t]` buffer per injection site.
    pub fn logits_plain(&self, f: &[f64], noise: &[Vec<f64>]) -> Vec<f64> {
        use crate::tensor::kernels;
        assert_eq!(noise.len(), self.noise_sites(), "noise sites mismatch");
        let t = f.len();
        let act = |h: &mut [f64]| match self.activation {
            Activation::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => h.iter_mut().for_each(|v| *v = v.tanh()),
        };
        let mut channels: Vec<f64> = f.to_vec();
        let mut c_in = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i < noise.len() {
                channels.extend_from_slice(&noise[i]);
                c_in += self.noise_channels();
            }
            let mut h = kernels::conv1d_same(
                &channels,
                &layer.w.values,
                c_in,
                t,
                layer.c_out(),
                layer.width(),
            );
            for (ch, chunk) in h.chunks_mut(t).enumerate() {
                let b = layer.b.values[ch];
                chunk.iter_mut().for_each(|v| *v += b);
            }
            act(&mut h);
            channels = h;
            c_in = layer.c_out();
        }
        let mut out = kernels::conv1d_same(&channels, &self.head.w.values, c_in, t, 1, 1);
        let b = self.head.b.values[0];
        out.iter_mut().for_each(|v| *v += b);
        out
    }

    /// Half-width of the stack's receptive field (frames to each side of an
    /// output position that can influence it).
    pub fn receptive_half_width(&self) -> usize {
        self.layers.iter().map(|l| (l.width() - 1) / 2).sum()
    }

    /// One evaluation of the network at a single output position: runs the
    /// conv stack on the window around `t` and returns the center logit
    /// (before any autoregressive correction). This is the unit of work
    /// sequential samplers perform once per frame.
    ///
    /// Window positions that fall outside the trace are zeroed after every
    /// layer, replicating the full pass's per-layer "same" padding, so the
    /// center logit matches the vectorized forward exactly.
    pub fn logit_at_plain(&self, f: &[f64], noise: &[Vec<f64>], t: usize) -> f64 {
        use crate::tensor::kernels;
        let r = self.receptive_half_width();
        let w = 2 * r + 1;
        let total = f.len();
        let in_domain: Vec<bool> = (0..w)
            .map(|i| {
                let pos = t as isize + i as isize - r as isize;
                pos >= 0 && (pos as usize) < total
            })
            .collect();
        let gather = |src: &[f64]| -> Vec<f64> {
            (0..w)
                .map(|i| {
                    if in_domain[i] {
                        src[(t + i - r) as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let act = |h: &mut [f64]| match self.activation {
            Activation::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => h.iter_mut().for_each(|v| *v = v.tanh()),
        };

        let mut channels = gather(f);
        let mut c_in = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i < noise.len() {
                let ch = self.noise_channels();
                for c in 0..ch {
                    channels.extend(gather(&noise[i][c * total..(c + 1) * total]));
                }
                c_in += ch;
            }
            let mut h = kernels::conv1d_same(
                &channels,
                &layer.w.values,
                c_in,
                w,
                layer.c_out(),
                layer.width(),
            );
            for (ch, chunk) in h.chunks_mut(w).enumerate() {
                let b = layer.b.values[ch];
                for (pos, v) in chunk.iter_mut().enumerate() {
                    // out-of-domain positions are padding at every layer
                    *v = if in_domain[pos] { *v + b } else { 0.0 };
                }
            }
            act(&mut h);
            channels = h;
            c_in = layer.c_out();
        }
        let out = kernels::conv1d_same(&channels, &self.head.w.values, c_in, w, 1, 1);
        out[r] + self.head.b.values[0]
    }

    /// Marginal spike probabilities per frame: exact for the factorized
    /// head, Monte-Carlo averaged over noise draws (or sampled histories)
    /// otherwise.
    pub fn marginal_probs(
        &self,
        f: &[f64],
        n_draws: usize,
        rng: &mut crate::rng::RandomSource,
    ) -> Vec<f64> {
        use crate::tensor::kernels::sigmoid;
        let t = f.len();
        match &self.posterior {
            SpikePosterior::Factorized => {
                self.logits_plain(f, &[]).into_iter().map(sigmoid).collect()
            }
            SpikePosterior::Implicit { .. } => {
                let mut acc = vec![0.0; t];
                for _ in 0..n_draws.max(1) {
                    let noise: Vec<Vec<f64>> = (0..self.noise_sites())
                        .map(|_| rng.gaussian_vec(self.noise_channels() * t))
                        .collect();
                    for (a, l) in acc.iter_mut().zip(self.logits_plain(f, &noise)) {
                        *a += sigmoid(l);
                    }
                }
                acc.iter_mut().for_each(|v| *v /= n_draws.max(1) as f64);
                acc
            }
            SpikePosterior::Autoregressive { window, weights } => {
                // marginalize over sampled histories
                let base = self.logits_plain(f, &[]);
                let mut acc = vec![0.0; t];
                for _ in 0..n_draws.max(1) {
                    let mut hard = vec![0.0; t];
                    for i in 0..t {
                        let mut logit = base[i];
                        for j in 1..=*window {
                            if i >= j {
                                logit += weights.values[j - 1] * hard[i - j];
                            }
                        }
                        let p = sigmoid(logit);
                        acc[i] += p;
                        hard[i] = if rng.uniform() < p { 1.0 } else { 0.0 };
                    }
                }
                acc.iter_mut().for_each(|v| *v /= n_draws.max(1) as f64);
                acc
            }
        }
    }
}
