//! Wall-clock comparison of posterior sampling strategies: one vectorized
//! pass over all frames versus frame-by-frame autoregressive sampling,
//! which must evaluate the network once per frame.

use super::EvalError;
use crate::nn::{InferenceNetwork, ModelTriple, SpikePosterior};
use crate::rng::RandomSource;
use crate::tensor::kernels::sigmoid;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Evaluate every frame in one vectorized pass (factorized / implicit
    /// posteriors).
    Parallel,
    /// Sample frame by frame, conditioning on the sampled history through
    /// the autoregressive window; one network evaluation per frame.
    SequentialAutoregressive,
}

impl SamplingMode {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingMode::Parallel => "parallel",
            SamplingMode::SequentialAutoregressive => "sequential-autoregressive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TimingReport {
    pub mode: SamplingMode,
    pub frames: usize,
    pub wall_ms: f64,
    pub network_evals: usize,
    /// Free-text hardware note for the report file.
    pub hardware_note: String,
    pub sample: Vec<f64>,
}

/// Measure end-to-end posterior sampling time for one trace.
pub fn inference_timing(
    model: &ModelTriple,
    trace: &[f64],
    mode: SamplingMode,
    rng: &mut RandomSource,
) -> Result<TimingReport, EvalError> {
    let InferenceNetwork::Spike(enc) = &model.encoder else {
        return Err(EvalError::Unsupported {
            op: "inference_timing",
            detail: "timing requires a spike encoder".into(),
        });
    };
    let t = trace.len();
    let start = Instant::now();
    let (sample, network_evals) = match mode {
        SamplingMode::Parallel => {
            if matches!(enc.posterior, SpikePosterior::Autoregressive { .. }) {
                return Err(EvalError::Unsupported {
                    op: "inference_timing",
                    detail: "autoregressive posteriors cannot sample in parallel".into(),
                });
            }
            let noise: Vec<Vec<f64>> = (0..enc.noise_sites())
                .map(|_| rng.gaussian_vec(enc.noise_channels() * t))
                .collect();
            let logits = enc.logits_plain(trace, &noise);
            let sample: Vec<f64> = logits
                .iter()
                .map(|&l| if rng.uniform() < sigmoid(l) { 1.0 } else { 0.0 })
                .collect();
            (sample, 1)
        }
        SamplingMode::SequentialAutoregressive => {
            let SpikePosterior::Autoregressive { .. } = enc.posterior else {
                return Err(EvalError::Unsupported {
                    op: "inference_timing",
                    detail: "sequential mode requires the autoregressive posterior".into(),
                });
            };
            let mut hard = vec![0.0; t];
            for i in 0..t {
                // one network evaluation at frame i, then the history term
                let logit = enc.logit_at_plain(trace, &[], i) + enc.ar_correction_at(&hard, i);
                hard[i] = if rng.uniform() < sigmoid(logit) { 1.0 } else { 0.0 };
            }
            (hard, t)
        }
    };
    Ok(TimingReport {
        mode,
        frames: t,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        network_evals,
        hardware_note: hardware_note(),
        sample,
    })
}

fn hardware_note() -> String {
    format!(
        "single-threaded CPU, {} logical cores visible",
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    )
}
