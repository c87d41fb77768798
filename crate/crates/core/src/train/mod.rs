//! Alternating three-network optimization: one generator/inference update
//! followed by `n_disc` discriminator updates per round, with degenerate
//! single-graph configurations for the non-adversarial families.

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use crate::nn::{ModelTriple, NnError, Param};
use crate::objectives::{
    adversarial_discriminator_loss, avb_inference_loss, aae_inference_loss, elbo,
    iwae_bound, iwavb_generator_loss, iwaae_generator_loss, spike_elbo_factorized,
    vimco_gradient, ObjectiveError, ObjectiveFamily, ObjectiveSpec, Trainability,
};
use crate::rng::RandomSource;
use crate::tensor::{Tape, TensorError, TensorId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite {loss} loss {value} at step {step}")]
    NonFiniteLoss { loss: &'static str, value: f64, step: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-network learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerNetLr {
    pub generator: f64,
    pub inference: f64,
    pub discriminator: f64,
}

impl PerNetLr {
    pub fn uniform(lr: f64) -> Self {
        PerNetLr { generator: lr, inference: lr, discriminator: lr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    /// Moving-average window, in rounds.
    pub window: usize,
    /// Stop when the relative change of the windowed average falls below
    /// this.
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub objective: ObjectiveSpec,
    pub batch_size: usize,
    pub lr: PerNetLr,
    pub optimizer: OptimizerKind,
    pub max_steps: u64,
    pub seed: u64,
    /// Discriminator updates per generator/inference update.
    pub n_disc: usize,
    pub checkpoint_every: Option<u64>,
    pub early_stop: Option<EarlyStop>,
    /// Diagnostic: let the importance-weighted generator loss also reach the
    /// inference network through the sample path.
    pub phi_through_iw: bool,
    /// Use only the first posterior sample for the inference update (the
    /// single-sample slice) instead of averaging all k.
    pub phi_single_sample: bool,
    /// Use one posterior/prior sample per datum in the discriminator update
    /// instead of all k.
    pub psi_single_sample: bool,
    /// Update generator parameters (off to freeze a known generative model).
    pub train_generator: bool,
}

impl TrainingConfig {
    pub fn new(objective: ObjectiveSpec, seed: u64) -> Self {
        TrainingConfig {
            objective,
            batch_size: 16,
            lr: PerNetLr::uniform(1e-3),
            optimizer: OptimizerKind::adam_default(),
            max_steps: 1000,
            seed,
            n_disc: 1,
            checkpoint_every: None,
            early_stop: None,
            phi_through_iw: false,
            phi_single_sample: false,
            psi_single_sample: false,
            train_generator: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.objective.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.lr.generator < 0.0 || self.lr.inference < 0.0 || self.lr.discriminator < 0.0 {
            return Err(TrainError::Config("learning rates must be non-negative".into()));
        }
        if self.objective.family.is_adversarial() && self.n_disc == 0 {
            return Err(TrainError::Config(
                "adversarial families require n_disc >= 1 discriminator updates".into(),
            ));
        }
        Ok(())
    }
}

/// One phase of a training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    GeneratorInference,
    Discriminator,
}

/// The alternation plan for one round: a generator/inference update, then
/// `n_disc` discriminator updates (adversarial families only).
pub fn update_plan(family: ObjectiveFamily, n_disc: usize) -> Result<Vec<Phase>, TrainError> {
    if !family.is_adversarial() {
        return Ok(vec![Phase::GeneratorInference]);
    }
    if n_disc == 0 {
        return Err(TrainError::Config(
            "adversarial families require n_disc >= 1 discriminator updates".into(),
        ));
    }
    let mut plan = vec![Phase::GeneratorInference];
    plan.extend(std::iter::repeat(Phase::Discriminator).take(n_disc));
    Ok(plan)
}

/// Training data: vectors (images, toy models) or trace windows.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Vectors(Vec<Vec<f64>>),
    TraceWindows { windows: Vec<Vec<f64>>, frame_rate: f64 },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Vectors(v) => v.len(),
            Dataset::TraceWindows { windows, .. } => windows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, i: usize) -> &[f64] {
        match self {
            Dataset::Vectors(v) => &v[i],
            Dataset::TraceWindows { windows, .. } => &windows[i],
        }
    }
}

/// Per-round losses with wall-clock timing.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub gen_loss: f64,
    pub inf_loss: f64,
    pub disc_loss: Option<f64>,
    pub wall_ms: f64,
}

/// Adam/SGD moments for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub kind: OptimizerKind,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptState {
    pub fn new(kind: OptimizerKind, params: &[&Param]) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        OptState { kind, m, v, t: 0 }
    }

    /// Gradient-ascent step (all objectives here are maximized).
    pub fn ascend(&mut self, params: Vec<&mut Param>, grads: &[Vec<f64>], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &gi) in p.values.iter_mut().zip(g) {
                        *w += lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..g.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        p.values[j] += lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub model: ModelTriple,
    pub config: TrainingConfig,
    pub opt_gen: OptState,
    pub opt_inf: OptState,
    pub opt_disc: Option<OptState>,
    pub rng: RandomSource,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(model: ModelTriple, config: TrainingConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let opt_gen = OptState::new(config.optimizer, &model.generator.params());
        let opt_inf = OptState::new(config.optimizer, &model.encoder.params());
        let opt_disc =
            model.discriminator.as_ref().map(|d| OptState::new(config.optimizer, &d.params()));
        if config.objective.family.is_adversarial() && opt_disc.is_none() {
            return Err(TrainError::Config(format!(
                "objective {} requires a discriminator",
                config.objective.family.name()
            )));
        }
        if !config.objective.family.is_adversarial() && model.discriminator.is_some() {
            return Err(TrainError::Config(format!(
                "objective {} must not construct a discriminator",
                config.objective.family.name()
            )));
        }
        let rng = RandomSource::new(config.seed);
        Ok(TrainState { step: 0, model, config, opt_gen, opt_inf, opt_disc, rng, history: Vec::new() })
    }
}

/// Train to `config.max_steps` (or the early-stop plateau).
pub fn train(
    model: ModelTriple,
    data: &Dataset,
    config: TrainingConfig,
) -> Result<TrainState, TrainError> {
    let mut state = TrainState::new(model, config)?;
    let steps = state.config.max_steps;
    train_steps(&mut state, data, steps)?;
    Ok(state)
}

/// Advance an existing state by up to `steps` rounds (resumable).
pub fn train_steps(
    state: &mut TrainState,
    data: &Dataset,
    steps: u64,
) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let target = state.step + steps;
    while state.step < target {
        let record = train_round(state, data)?;
        for (label, value) in [
            ("generator", Some(record.gen_loss)),
            ("inference", Some(record.inf_loss)),
            ("discriminator", record.disc_loss),
        ] {
            if let Some(v) = value {
                if !v.is_finite() {
                    state.history.push(record.clone());
                    return Err(TrainError::NonFiniteLoss {
                        loss: label,
                        value: v,
                        step: state.step,
                    });
                }
            }
        }
        state.history.push(record);
        state.step += 1;
        if let Some(stop) = state.config.early_stop {
            if plateaued(&state.history, stop) {
                break;
            }
        }
    }
    Ok(())
}

fn plateaued(history: &[StepRecord], stop: EarlyStop) -> bool {
    let w = stop.window;
    if history.len() < 2 * w {
        return false;
    }
    let avg = |recs: &[StepRecord]| {
        recs.iter().map(|r| r.inf_loss).sum::<f64>() / recs.len() as f64
    };
    let recent = avg(&history[history.len() - w..]);
    let previous = avg(&history[history.len() - 2 * w..history.len() - w]);
    let denom = previous.abs().max(1e-12);
    (recent - previous).abs() / denom < stop.rel_tol
}

/// Seeded epoch shuffling: the order for epoch `e` depends only on the run
/// seed and `e`, so resumed runs see identical data order.
fn minibatch_indices(state: &TrainState, data: &Dataset) -> Vec<usize> {
    let n = data.len();
    let b = state.config.batch_size.min(n);
    let batches_per_epoch = n.div_ceil(b);
    let epoch = state.step / batches_per_epoch as u64;
    let slot = (state.step % batches_per_epoch as u64) as usize;
    let mut order_rng = RandomSource::new(state.config.seed ^ 0x5b9d_3f27).substream(epoch);
    let order = order_rng.permutation(n);
    (0..b).map(|i| order[(slot * b + i) % n]).collect()
}

fn train_round(state: &mut TrainState, data: &Dataset) -> Result<StepRecord, TrainError> {
    let start = std::time::Instant::now();
    let idx = minibatch_indices(state, data);
    let batch: Vec<&[f64]> = idx.iter().map(|&i| data.item(i)).collect();
    let family = state.config.objective.family;
    let k = state.config.objective.k;

    let (gen_loss, inf_loss, disc_loss) = match family {
        ObjectiveFamily::Vae | ObjectiveFamily::Iwae => {
            let v = nonadversarial_update(state, &batch, family == ObjectiveFamily::Iwae)?;
            (v, v, None)
        }
        ObjectiveFamily::VimcoFact | ObjectiveFamily::VimcoCorr => {
            let v = vimco_update(state, &batch, k)?;
            (v, v, None)
        }
        _ => {
            // generator and inference graphs replay the same draw stream, so
            // with the default all-k inference average both updates see the
            // identical posterior samples; discriminator steps then continue
            // the round's stream with fresh draws
            let round_start = state.rng.clone();
            let mut gen_rng = round_start.clone();
            let gen = generator_update(state, &batch, &mut gen_rng)?;
            let inf = if state.config.phi_through_iw {
                // inference network already updated through the IW graph
                gen
            } else {
                let mut inf_rng = round_start.clone();
                inference_update(state, &batch, &mut inf_rng)?
            };
            state.rng = gen_rng;
            let mut last_disc = 0.0;
            for _ in 0..state.config.n_disc {
                last_disc = discriminator_update(state, &batch)?;
            }
            (gen, inf, Some(last_disc))
        }
    };

    Ok(StepRecord {
        step: state.step,
        gen_loss,
        inf_loss,
        disc_loss,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn batch_mean(
    tape: &mut Tape,
    per_datum: Vec<TensorId>,
) -> Result<TensorId, TensorError> {
    let rows: Result<Vec<TensorId>, TensorError> =
        per_datum.iter().map(|&s| tape.reshape(s, &[1])).collect();
    let stacked = tape.concat(&rows?, 0)?;
    tape.mean(stacked)
}

fn extract(tape: &Tape, ids: &[TensorId], params: &[&Param]) -> Vec<Vec<f64>> {
    ids.iter()
        .zip(params)
        .map(|(id, p)| tape.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect()
}

fn nonadversarial_update(
    state: &mut TrainState,
    batch: &[&[f64]],
    importance_weighted: bool,
) -> Result<f64, TrainError> {
    let k = state.config.objective.k;
    let mut tape = Tape::new();
    let train_gen = state.config.train_generator;
    let bm = state.model.bind(
        &mut tape,
        Trainability { encoder: true, generator: train_gen, discriminator: false },
    )?;
    let mut rng = state.rng.clone();
    let mut per_datum = Vec::with_capacity(batch.len());
    for &x in batch {
        // the factorized spike ELBO takes the analytic-KL form
        let node = if importance_weighted {
            iwae_bound(&mut tape, &bm, x, k, &mut rng)?
        } else if matches!(state.model.encoder, crate::nn::InferenceNetwork::Spike(_)) {
            spike_elbo_factorized(&mut tape, &bm, x, k, &mut rng)?
        } else {
            elbo(&mut tape, &bm, x, k, &mut rng)?
        };
        per_datum.push(node);
    }
    let loss = batch_mean(&mut tape, per_datum)?;
    let value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let gen_ids = bm.generator.flat_ids().to_vec();
    let enc_ids = bm.encoder.flat_ids().to_vec();
    drop(bm);
    if train_gen {
        let g = extract(&tape, &gen_ids, &state.model.generator.params());
        state.opt_gen.ascend(state.model.generator.params_mut(), &g, state.config.lr.generator);
    }
    let g = extract(&tape, &enc_ids, &state.model.encoder.params());
    state.opt_inf.ascend(state.model.encoder.params_mut(), &g, state.config.lr.inference);
    state.rng = rng;
    Ok(value)
}

fn vimco_update(state: &mut TrainState, batch: &[&[f64]], k: usize) -> Result<f64, TrainError> {
    let mut theta_acc: Option<Vec<Vec<f64>>> = None;
    let mut phi_acc: Option<Vec<Vec<f64>>> = None;
    let mut bound_sum = 0.0;
    for &x in batch {
        let g = vimco_gradient(&state.model, x, k, &mut state.rng)?;
        bound_sum += g.bound;
        accumulate(&mut theta_acc, g.theta);
        accumulate(&mut phi_acc, g.phi);
    }
    let scale = 1.0 / batch.len() as f64;
    if state.config.train_generator {
        if let Some(mut th) = theta_acc {
            th.iter_mut().for_each(|v| v.iter_mut().for_each(|g| *g *= scale));
            state.opt_gen.ascend(
                state.model.generator.params_mut(),
                &th,
                state.config.lr.generator,
            );
        }
    }
    if let Some(mut ph) = phi_acc {
        ph.iter_mut().for_each(|v| v.iter_mut().for_each(|g| *g *= scale));
        state.opt_inf.ascend(state.model.encoder.params_mut(), &ph, state.config.lr.inference);
    }
    Ok(bound_sum * scale)
}

fn accumulate(acc: &mut Option<Vec<Vec<f64>>>, grads: Vec<Vec<f64>>) {
    match acc {
        None => *acc = Some(grads),
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grads) {
                for (ev, gv) in e.iter_mut().zip(g) {
                    *ev += gv;
                }
            }
        }
    }
}

fn generator_update(
    state: &mut TrainState,
    batch: &[&[f64]],
    rng: &mut RandomSource,
) -> Result<f64, TrainError> {
    let family = state.config.objective.family;
    let k = state.config.objective.k;
    let mut tape = Tape::new();
    let train_gen = state.config.train_generator;
    let bm = state.model.bind(
        &mut tape,
        Trainability {
            encoder: state.config.phi_through_iw,
            generator: train_gen,
            discriminator: false,
        },
    )?;
    let mut per_datum = Vec::with_capacity(batch.len());
    for &x in batch {
        let node = match family {
            ObjectiveFamily::IwAvb => iwavb_generator_loss(&mut tape, &bm, x, k, rng)?,
            ObjectiveFamily::IwAae => iwaae_generator_loss(&mut tape, &bm, x, k, rng)?,
            ObjectiveFamily::Avb => avb_inference_loss(&mut tape, &bm, x, k, rng)?,
            ObjectiveFamily::Aae => aae_inference_loss(&mut tape, &bm, x, k, rng)?,
            _ => unreachable!("adversarial update on non-adversarial family"),
        };
        per_datum.push(node);
    }
    let loss = batch_mean(&mut tape, per_datum)?;
    let value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let gen_ids = bm.generator.flat_ids().to_vec();
    let enc_ids = bm.encoder.flat_ids().to_vec();
    drop(bm);
    if train_gen {
        let g = extract(&tape, &gen_ids, &state.model.generator.params());
        state.opt_gen.ascend(state.model.generator.params_mut(), &g, state.config.lr.generator);
    }
    if state.config.phi_through_iw {
        let g = extract(&tape, &enc_ids, &state.model.encoder.params());
        state.opt_inf.ascend(state.model.encoder.params_mut(), &g, state.config.lr.inference);
    }
    Ok(value)
}

fn inference_update(
    state: &mut TrainState,
    batch: &[&[f64]],
    rng: &mut RandomSource,
) -> Result<f64, TrainError> {
    let family = state.config.objective.family;
    let k = if state.config.phi_single_sample { 1 } else { state.config.objective.k };
    let mut tape = Tape::new();
    let bm = state.model.bind(&mut tape, Trainability::encoder_only())?;
    let mut per_datum = Vec::with_capacity(batch.len());
    for &x in batch {
        let node = match family {
            ObjectiveFamily::IwAvb | ObjectiveFamily::Avb => {
                avb_inference_loss(&mut tape, &bm, x, k, rng)?
            }
            ObjectiveFamily::IwAae | ObjectiveFamily::Aae => {
                aae_inference_loss(&mut tape, &bm, x, k, rng)?
            }
            _ => unreachable!(),
        };
        per_datum.push(node);
    }
    let loss = batch_mean(&mut tape, per_datum)?;
    let value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let enc_ids = bm.encoder.flat_ids().to_vec();
    drop(bm);
    let g = extract(&tape, &enc_ids, &state.model.encoder.params());
    state.opt_inf.ascend(state.model.encoder.params_mut(), &g, state.config.lr.inference);
    Ok(value)
}

fn discriminator_update(state: &mut TrainState, batch: &[&[f64]]) -> Result<f64, TrainError> {
    let k = if state.config.psi_single_sample { 1 } else { state.config.objective.k };
    let mut tape = Tape::new();
    let bm = state.model.bind(&mut tape, Trainability::discriminator_only())?;
    let mut rng = state.rng.clone();
    let loss = adversarial_discriminator_loss(&mut tape, &bm, batch, k, &mut rng)?;
    let value = tape.scalar(loss)?;
    tape.backward(loss)?;
    let disc_ids = bm.discriminator.as_ref().expect("bound discriminator").flat_ids().to_vec();
    drop(bm);
    let disc = state.model.discriminator.as_mut().expect("validated adversarial model");
    let g = extract(&tape, &disc_ids, &disc.params());
    state
        .opt_disc
        .as_mut()
        .expect("validated optimizer")
        .ascend(disc.params_mut(), &g, state.config.lr.discriminator);
    state.rng = rng;
    Ok(value)
}
