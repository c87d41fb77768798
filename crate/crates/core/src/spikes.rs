//! Biophysical calcium-fluorescence model, synthetic data generation, and
//! trace-file ingestion.
//!
//! Spikes drive an exponentially decaying calcium process, discretized with
//! the Euler update `c[t] = (1 - dt/tau) c[t-1] + s[t]`; fluorescence reads
//! out as `f = alpha c + beta + sigma eta`.

use crate::rng::RandomSource;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpikesError {
    #[error("invalid biophysical parameters: {0}")]
    InvalidParams(String),

    #[error("{op}: spike train has {spikes} frames but trace has {trace}")]
    LengthMismatch { op: &'static str, spikes: usize, trace: usize },

    #[error("zero observation noise with nonzero residual {residual} at frame {frame}")]
    ZeroNoiseResidual { frame: usize, residual: f64 },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("downsampling target rate {target_rate} exceeds source rate {source_rate}")]
    RateAboveSource { source_rate: f64, target_rate: f64 },

    #[error("trace file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("trace file {path}, line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Generative parameters of the calcium-fluorescence model.
#[derive(Debug, Clone, PartialEq)]
pub struct BiophysParams {
    /// Calcium decay constant, seconds.
    pub tau: f64,
    /// Fluorescence amplitude per spike.
    pub alpha: f64,
    /// Baseline fluorescence.
    pub beta: f64,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Discretization step, seconds.
    pub dt: f64,
    /// Spike prior probability per frame.
    pub rate: f64,
}

impl BiophysParams {
    /// GCaMP6f-like defaults at 60 Hz.
    pub fn default_60hz() -> Self {
        BiophysParams { tau: 0.7, alpha: 1.0, beta: 0.0, sigma: 0.2, dt: 1.0 / 60.0, rate: 0.01 }
    }

    pub fn validate(&self) -> Result<(), SpikesError> {
        if self.tau <= 0.0 {
            return Err(SpikesError::InvalidParams(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.sigma < 0.0 {
            return Err(SpikesError::InvalidParams(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.dt <= 0.0 || self.dt >= self.tau {
            return Err(SpikesError::InvalidParams(format!(
                "Euler stability requires 0 < dt < tau, got dt={}, tau={}",
                self.dt, self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(SpikesError::InvalidParams(format!(
                "rate must be in [0,1], got {}",
                self.rate
            )));
        }
        Ok(())
    }

    pub fn frame_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn decay_coeff(&self) -> f64 {
        1.0 - self.dt / self.tau
    }
}

/// Binary spike train at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    pub values: Vec<u8>,
    pub frame_rate: f64,
}

impl SpikeTrain {
    pub fn new(values: Vec<u8>, frame_rate: f64) -> Self {
        debug_assert!(values.iter().all(|&v| v <= 1));
        SpikeTrain { values, frame_rate }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Real-valued fluorescence observations at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FluorescenceTrace {
    pub values: Vec<f64>,
    pub frame_rate: f64,
    pub neuron: Option<String>,
}

impl FluorescenceTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A loaded record: fluorescence, optionally paired with ground-truth spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub trace: FluorescenceTrace,
    pub spikes: Option<SpikeTrain>,
}

/// Euler-discretized calcium response to a spike train; a spike contributes
/// at its own frame and decays by `1 - dt/tau` per step thereafter.
pub fn simulate_calcium(
    params: &BiophysParams,
    spikes: &SpikeTrain,
) -> Result<Vec<f64>, SpikesError> {
    params.validate()?;
    let coeff = params.decay_coeff();
    let mut c = 0.0;
    let mut out = Vec::with_capacity(spikes.len());
    for &s in &spikes.values {
        c = coeff * c + s as f64;
        out.push(c);
    }
    Ok(out)
}

/// Noisy fluorescence readout `f = alpha c + beta + sigma eta`.
pub fn simulate_trace(
    params: &BiophysParams,
    spikes: &SpikeTrain,
    rng: &mut RandomSource,
) -> Result<FluorescenceTrace, SpikesError> {
    let calcium = simulate_calcium(params, spikes)?;
    let values = calcium
        .iter()
        .map(|&c| {
            let noise = if params.sigma > 0.0 { params.sigma * rng.gaussian() } else { 0.0 };
            params.alpha * c + params.beta + noise
        })
        .collect();
    Ok(FluorescenceTrace { values, frame_rate: spikes.frame_rate, neuron: None })
}

/// Exact Gaussian log-likelihood of a trace under the biophysical model.
pub fn trace_log_likelihood(
    params: &BiophysParams,
    spikes: &SpikeTrain,
    trace: &FluorescenceTrace,
) -> Result<f64, SpikesError> {
    if spikes.len() != trace.len() {
        return Err(SpikesError::LengthMismatch {
            op: "trace_log_likelihood",
            spikes: spikes.len(),
            trace: trace.len(),
        });
    }
    let calcium = simulate_calcium(params, spikes)?;
    let mut ll = 0.0;
    for (frame, (&c, &f)) in calcium.iter().zip(&trace.values).enumerate() {
        let residual = f - (params.alpha * c + params.beta);
        if params.sigma == 0.0 {
            if residual != 0.0 {
                return Err(SpikesError::ZeroNoiseResidual { frame, residual });
            }
            continue;
        }
        ll += -0.5 * (residual / params.sigma).powi(2)
            - params.sigma.ln()
            - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(ll)
}

/// I.i.d. Bernoulli spike prior.
pub fn sample_spike_prior(
    rate: f64,
    frames: usize,
    frame_rate: f64,
    rng: &mut RandomSource,
) -> Result<SpikeTrain, SpikesError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(SpikesError::InvalidParams(format!("rate must be in [0,1], got {rate}")));
    }
    let values = (0..frames).map(|_| u8::from(rng.bernoulli(rate))).collect();
    Ok(SpikeTrain::new(values, frame_rate))
}

/// Re-bin per-frame values into non-overlapping bins at `target_rate`; each
/// frame is assigned to the bin containing its left edge and bins sum their
/// frames, so total mass is conserved. Works for expected spike counts
/// (probabilities) and for ground-truth spike counts alike.
pub fn downsample_marginals(
    per_frame: &[f64],
    source_rate: f64,
    target_rate: f64,
) -> Result<Vec<f64>, SpikesError> {
    if per_frame.is_empty() {
        return Err(SpikesError::EmptyInput { op: "downsample_marginals" });
    }
    if target_rate > source_rate {
        return Err(SpikesError::RateAboveSource { source_rate, target_rate });
    }
    let integral = source_rate.fract() == 0.0 && target_rate.fract() == 0.0;
    let bin_of = |i: usize| -> usize {
        if integral {
            i * target_rate as usize / source_rate as usize
        } else {
            (i as f64 * target_rate / source_rate + 1e-9).floor() as usize
        }
    };
    let n_bins = bin_of(per_frame.len() - 1) + 1;
    let mut bins = vec![0.0; n_bins];
    for (i, &v) in per_frame.iter().enumerate() {
        bins[bin_of(i)] += v;
    }
    Ok(bins)
}

// ---------------------------------------------------------------------------
// Trace files: delimited text, one column per field, header rows carrying
// rate metadata.

const TRACE_MAGIC: &str = "# iwavi-trace v1";

/// Write a fluorescence trace (optionally paired with spikes) to a text file.
pub fn save_traces(
    path: &Path,
    trace: &FluorescenceTrace,
    spikes: Option<&SpikeTrain>,
) -> Result<(), SpikesError> {
    let pstr = path.display().to_string();
    if let Some(s) = spikes {
        if s.len() != trace.len() {
            return Err(SpikesError::LengthMismatch {
                op: "save_traces",
                spikes: s.len(),
                trace: trace.len(),
            });
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_MAGIC}");
    let _ = writeln!(out, "# frame_rate_hz = {}", trace.frame_rate);
    if let Some(neuron) = &trace.neuron {
        let _ = writeln!(out, "# neuron = {neuron}");
    }
    let _ = writeln!(
        out,
        "# columns = {}",
        if spikes.is_some() { "fluorescence spikes" } else { "fluorescence" }
    );
    for (i, &f) in trace.values.iter().enumerate() {
        match spikes {
            // {:?} prints f64 with full round-trip precision
            Some(s) => {
                let _ = writeln!(out, "{:?} {}", f, s.values[i]);
            }
            None => {
                let _ = writeln!(out, "{f:?}");
            }
        }
    }
    std::fs::write(path, out).map_err(|source| SpikesError::Io { path: pstr, source })
}

/// Read a trace file written by [`save_traces`] (or hand-authored in the
/// same format). Fluorescence-only files load with absent spikes.
pub fn load_traces(path: &Path) -> Result<TraceRecord, SpikesError> {
    let pstr = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SpikesError::Io { path: pstr.clone(), source })?;
    let mut lines = text.lines().enumerate();

    let Some((_, first)) = lines.next() else {
        return Err(SpikesError::Format { path: pstr, detail: "empty file".into() });
    };
    if first.trim() != TRACE_MAGIC {
        return Err(SpikesError::Format {
            path: pstr,
            detail: format!("missing `{TRACE_MAGIC}` header"),
        });
    }

    let mut frame_rate: Option<f64> = None;
    let mut neuron: Option<String> = None;
    let mut paired: Option<bool> = None;
    let mut fluor = Vec::new();
    let mut spikes = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((key, value)) = rest.split_once('=') {
                match key.trim() {
                    "frame_rate_hz" => {
                        frame_rate =
                            Some(value.trim().parse::<f64>().map_err(|e| SpikesError::Parse {
                                path: pstr.clone(),
                                line: line_no,
                                detail: format!("bad frame_rate_hz: {e}"),
                            })?);
                    }
                    "neuron" => neuron = Some(value.trim().to_string()),
                    "columns" => {
                        paired = Some(match value.trim() {
                            "fluorescence spikes" => true,
                            "fluorescence" => false,
                            other => {
                                return Err(SpikesError::Parse {
                                    path: pstr,
                                    line: line_no,
                                    detail: format!("unknown columns spec `{other}`"),
                                })
                            }
                        });
                    }
                    _ => {} // unknown comment keys tolerated
                }
            }
            continue;
        }

        let Some(paired) = paired else {
            return Err(SpikesError::Parse {
                path: pstr,
                line: line_no,
                detail: "data row before `# columns = ...` header".into(),
            });
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expected = if paired { 2 } else { 1 };
        if fields.len() != expected {
            return Err(SpikesError::Parse {
                path: pstr,
                line: line_no,
                detail: format!("expected {expected} columns, found {}", fields.len()),
            });
        }
        let f: f64 = fields[0].parse().map_err(|e| SpikesError::Parse {
            path: pstr.clone(),
            line: line_no,
            detail: format!("bad fluorescence value `{}`: {e}", fields[0]),
        })?;
        if !f.is_finite() {
            return Err(SpikesError::Parse {
                path: pstr,
                line: line_no,
                detail: format!("non-finite fluorescence value {f}"),
            });
        }
        fluor.push(f);
        if paired {
            match fields[1] {
                "0" => spikes.push(0u8),
                "1" => spikes.push(1u8),
                other => {
                    return Err(SpikesError::Parse {
                        path: pstr,
                        line: line_no,
                        detail: format!("spike entry must be 0 or 1, found `{other}`"),
                    })
                }
            }
        }
    }

    let Some(frame_rate) = frame_rate else {
        return Err(SpikesError::Format {
            path: pstr,
            detail: "missing `# frame_rate_hz = ...` header".into(),
        });
    };
    if fluor.is_empty() {
        return Err(SpikesError::Format { path: pstr, detail: "no data rows".into() });
    }
    let spikes =
        if spikes.is_empty() { None } else { Some(SpikeTrain::new(spikes, frame_rate)) };
    Ok(TraceRecord { trace: FluorescenceTrace { values: fluor, frame_rate, neuron }, spikes })
}
