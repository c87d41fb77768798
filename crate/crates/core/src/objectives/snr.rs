//! Signal-to-noise ratio of importance-weighted gradient estimates:
//! per-coordinate |mean / std| over repeated independent sample sets,
//! summarized as the median over coordinates.

use super::{iwae_bound, ObjectiveError, Trainability};
use crate::nn::ModelTriple;
use crate::rng::RandomSource;
use crate::tensor::{Tape, TensorId};

/// Which parameter set the SNR probe differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSel {
    Generator,
    Encoder,
}

impl ParamSel {
    pub fn label(&self) -> &'static str {
        match self {
            ParamSel::Generator => "generator",
            ParamSel::Encoder => "encoder",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnrEstimate {
    pub label: String,
    /// |mean/std| per coordinate; infinite entries mark zero-variance
    /// coordinates.
    pub per_coord: Vec<f64>,
    /// Median over the finite coordinates; infinite when none are finite.
    pub median: f64,
    pub excluded_infinite: usize,
    pub n_repeats: usize,
    pub k: usize,
}

/// Estimate the gradient SNR of the k-sample importance-weighted bound for
/// one parameter set, over `n_repeats` independent draws (at least 30).
pub fn estimate_snr(
    model: &ModelTriple,
    xs: &[Vec<f64>],
    k: usize,
    n_repeats: usize,
    sel: ParamSel,
    rng: &mut RandomSource,
) -> Result<SnrEstimate, ObjectiveError> {
    if n_repeats < 30 {
        return Err(ObjectiveError::NotApplicable(format!(
            "estimate_snr needs n_repeats >= 30, got {n_repeats}"
        )));
    }
    if xs.is_empty() {
        return Err(ObjectiveError::EmptyBatch { op: "estimate_snr" });
    }

    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let mut tape = Tape::new();
        let bm = model.bind(&mut tape, Trainability::generator_and_encoder())?;
        let mut per_x = Vec::with_capacity(xs.len());
        for x in xs {
            per_x.push(iwae_bound(&mut tape, &bm, x, k, rng)?);
        }
        let stacked = stack(&mut tape, &per_x)?;
        let loss = tape.mean(stacked)?;
        tape.backward(loss)?;
        let (ids, params) = match sel {
            ParamSel::Generator => (bm.generator.flat_ids(), model.generator.params()),
            ParamSel::Encoder => (bm.encoder.flat_ids(), model.encoder.params()),
        };
        let mut flat = Vec::new();
        for (id, p) in ids.iter().zip(&params) {
            match tape.grad(*id) {
                Some(g) => flat.extend_from_slice(g),
                None => flat.extend(std::iter::repeat(0.0).take(p.numel())),
            }
        }
        estimates.push(flat);
    }

    let dim = estimates[0].len();
    let n = n_repeats as f64;
    let mut per_coord = Vec::with_capacity(dim);
    for j in 0..dim {
        let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / n;
        let var =
            estimates.iter().map(|e| (e[j] - mean) * (e[j] - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        per_coord.push(if std == 0.0 { f64::INFINITY } else { (mean / std).abs() });
    }

    let mut finite: Vec<f64> = per_coord.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded_infinite = per_coord.len() - finite.len();
    let median = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = finite.len();
        if m % 2 == 1 {
            finite[m / 2]
        } else {
            0.5 * (finite[m / 2 - 1] + finite[m / 2])
        }
    };

    Ok(SnrEstimate {
        label: sel.label().to_string(),
        per_coord,
        median,
        excluded_infinite,
        n_repeats,
        k,
    })
}

fn stack(tape: &mut Tape, scalars: &[TensorId]) -> Result<TensorId, crate::TensorError> {
    let rows: Result<Vec<TensorId>, crate::TensorError> =
        scalars.iter().map(|&s| tape.reshape(s, &[1])).collect();
    tape.concat(&rows?, 0)
}
