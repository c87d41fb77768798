//! VIMCO: multi-sample score-function gradients with leave-one-out control
//! variates, for the tractable discrete (spike) posteriors.

use super::{ImportanceWeights, ObjectiveError};
use crate::nn::{BoundEncoder, InferenceNetwork, ModelTriple, SpikePosterior};
use crate::rng::RandomSource;
use crate::tensor::{kernels, Tape, TensorId};

use super::Trainability;

/// Gradient estimates aligned with `generator.params()` / `encoder.params()`.
#[derive(Debug, Clone)]
pub struct VimcoGradients {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// The multi-sample bound estimate `log (1/k) sum w_i` for this draw.
    pub bound: f64,
}

/// One VIMCO gradient estimate from `k` posterior draws.
///
/// The inference-network gradient uses leave-one-out geometric-mean
/// baselines; the generator gradient is the importance-weighted mixture.
pub fn vimco_gradient(
    model: &ModelTriple,
    x: &[f64],
    k: usize,
    rng: &mut RandomSource,
) -> Result<VimcoGradients, ObjectiveError> {
    if k < 2 {
        return Err(ObjectiveError::KTooSmall { family: "vimco", min: 2, k });
    }
    let InferenceNetwork::Spike(enc) = &model.encoder else {
        return Err(ObjectiveError::NotApplicable(
            "vimco_gradient requires a tractable spike posterior".into(),
        ));
    };
    if matches!(enc.posterior, SpikePosterior::Implicit { .. }) {
        return Err(ObjectiveError::TractableRequired { family: "vimco" });
    }

    // Draw samples and collect per-sample log weights (values only).
    let mut draw_tape = Tape::new();
    let bm = model.bind(&mut draw_tape, Trainability::none())?;
    let samples = super::draw_posterior(&mut draw_tape, &bm, x, k, rng, false)?;
    let super::PosteriorSamples::Spike(draws) = &samples else { unreachable!() };
    let joint = super::joint_log_lik(&mut draw_tape, &bm, x, &samples)?;
    let log_q = super::posterior_log_density(&mut draw_tape, &samples, "vimco")?;
    let joint_vals = draw_tape.values(joint).to_vec();
    let log_q_vals = draw_tape.values(log_q).to_vec();
    let hard: Vec<Vec<f64>> =
        draws.iter().map(|d| draw_tape.values(d.hard).to_vec()).collect();

    let log_w: Vec<f64> = joint_vals.iter().zip(&log_q_vals).map(|(j, q)| j - q).collect();
    let weights = ImportanceWeights::from_log(log_w.clone());
    let bound = weights.log_mean();

    // Leave-one-out learning signals: replace log w_i by the geometric mean
    // of the others and recompute the bound.
    let kf = k as f64;
    let sum_log_w: f64 = log_w.iter().sum();
    let mut signal = vec![0.0; k];
    for i in 0..k {
        let geo = (sum_log_w - log_w[i]) / (kf - 1.0);
        let mut replaced = log_w.clone();
        replaced[i] = geo;
        let loo = kernels::logsumexp_slice(&replaced) - kf.ln();
        signal[i] = bound - loo;
    }

    // Generator gradient: sum_i w_tilde_i * d/d theta log p(x, s_i).
    let theta = {
        let mut tape = Tape::new();
        let bm = model.bind(&mut tape, Trainability::generator_only())?;
        let mut total: Option<TensorId> = None;
        for (i, s_vals) in hard.iter().enumerate() {
            let s = tape.constant(s_vals, &[s_vals.len()])?;
            let f = tape.constant(x, &[x.len()])?;
            let ll = bm.model.generator.log_lik(&mut tape, &bm.generator, s, f)?;
            let w = tape.constant_scalar(weights.normalized[i])?;
            let term = tape.mul(ll, w)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let root = total.expect("k >= 2");
        tape.backward(root)?;
        extract_grads(&tape, bm.generator.flat_ids(), &model.generator.params())
    };

    // Inference gradient: sum_i [(bound - loo_i) - w_tilde_i] d log q(s_i|x).
    let phi = {
        let mut tape = Tape::new();
        let bm = model.bind(&mut tape, Trainability::encoder_only())?;
        let BoundEncoder::Spike(b) = &bm.encoder else { unreachable!() };
        let t = x.len();
        let f = tape.constant(x, &[1, t])?;
        let base = enc.logits(&mut tape, b, f, &[])?;
        let mut total: Option<TensorId> = None;
        for (i, s_vals) in hard.iter().enumerate() {
            let logits = enc.ar_adjusted_logits(&mut tape, b, base, s_vals)?;
            let s = tape.constant(s_vals, &[t])?;
            let lq = super::bernoulli_log_mass_graph(&mut tape, logits, s)?;
            let coef = tape.constant_scalar(signal[i] - weights.normalized[i])?;
            let term = tape.mul(lq, coef)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let root = total.expect("k >= 2");
        tape.backward(root)?;
        extract_grads(&tape, bm.encoder.flat_ids(), &model.encoder.params())
    };

    Ok(VimcoGradients { theta, phi, bound })
}

fn extract_grads(
    tape: &Tape,
    ids: &[TensorId],
    params: &[&crate::nn::Param],
) -> Vec<Vec<f64>> {
    ids.iter()
        .zip(params)
        .map(|(id, p)| tape.grad(*id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect()
}
