//! Spike correlation at a reduced evaluation rate and the paired t-test.

use super::EvalError;
use crate::spikes::downsample_marginals;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// How ground-truth spikes enter the evaluation bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMode {
    /// Bin value = spike count (default).
    Counts,
    /// Bin value = 1 if any spike fell in the bin.
    Presence,
}

/// Pearson correlation between predicted per-frame marginals and true
/// spikes, both re-binned to `eval_rate` (expected counts vs counts).
pub fn spike_correlation(
    pred_marginals: &[f64],
    true_spikes: &[u8],
    source_rate: f64,
    eval_rate: f64,
    mode: BinMode,
) -> Result<f64, EvalError> {
    if pred_marginals.len() != true_spikes.len() {
        return Err(EvalError::LengthMismatch {
            op: "spike_correlation",
            a: pred_marginals.len(),
            b: true_spikes.len(),
        });
    }
    let spikes_f: Vec<f64> = true_spikes.iter().map(|&s| s as f64).collect();
    let pred_bins = downsample_marginals(pred_marginals, source_rate, eval_rate)?;
    let mut true_bins = downsample_marginals(&spikes_f, source_rate, eval_rate)?;
    if mode == BinMode::Presence {
        true_bins.iter_mut().for_each(|v| *v = v.min(1.0));
    }
    pearson(&pred_bins, &true_bins)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 {
        return Err(EvalError::UndefinedCorrelation { side: "prediction" });
    }
    if var_b == 0.0 {
        return Err(EvalError::UndefinedCorrelation { side: "ground-truth" });
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Two-sided paired t-test on score vectors: `t = mean(d) / (sd(d)/sqrt(n))`
/// with `df = n - 1`. Zero-variance differences report an infinite statistic
/// (p = 0) unless every difference is zero (t = 0, p = 1).
pub fn paired_ttest(scores_a: &[f64], scores_b: &[f64]) -> Result<(f64, f64), EvalError> {
    if scores_a.len() != scores_b.len() {
        return Err(EvalError::LengthMismatch {
            op: "paired_ttest",
            a: scores_a.len(),
            b: scores_b.len(),
        });
    }
    if scores_a.len() < 2 {
        return Err(EvalError::TooFewSamples {
            op: "paired_ttest",
            min: 2,
            got: scores_a.len(),
        });
    }
    let n = scores_a.len() as f64;
    let d: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::spikes;

    #[test]
    fn perfect_predictions_correlate_fully() {
        let mut rng = RandomSource::new(1);
        let spikes = spikes::sample_spike_prior(0.05, 600, 60.0, &mut rng).unwrap();
        let pred: Vec<f64> = spikes.values.iter().map(|&s| s as f64).collect();
        let r = spike_correlation(&pred, &spikes.values, 60.0, 25.0, BinMode::Counts).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_predictions_on_binary_binning() {
        // 1 - s against s at the source rate (no re-binning)
        let mut rng = RandomSource::new(2);
        let spikes = spikes::sample_spike_prior(0.3, 400, 25.0, &mut rng).unwrap();
        let pred: Vec<f64> = spikes.values.iter().map(|&s| 1.0 - s as f64).collect();
        let r = spike_correlation(&pred, &spikes.values, 25.0, 25.0, BinMode::Counts).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        // integer rate ratio: equal-size bins, so the null has no bin-width
        // covariation and 10^4 bins give |corr| well below 0.05
        let mut rng = RandomSource::new(3);
        let n = 10_000 * 2;
        let spikes = spikes::sample_spike_prior(0.1, n, 50.0, &mut rng).unwrap();
        let pred: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let r = spike_correlation(&pred, &spikes.values, 50.0, 25.0, BinMode::Counts).unwrap();
        assert!(r.abs() < 0.05, "correlation {r}");
    }

    #[test]
    fn correlation_invariant_to_positive_affine_rescale() {
        // full affine invariance holds when bins have equal frame counts
        // (integer rate ratio); at fractional ratios the sum-binning rule
        // still leaves pure rescaling invariant
        let mut rng = RandomSource::new(4);
        let spikes = spikes::sample_spike_prior(0.05, 1200, 60.0, &mut rng).unwrap();
        let pred: Vec<f64> = spikes
            .values
            .iter()
            .map(|&s| 0.2 * s as f64 + 0.05 + 0.01 * rng.gaussian())
            .collect();
        let affine: Vec<f64> = pred.iter().map(|v| 3.7 * v + 0.4).collect();
        let r1 = spike_correlation(&pred, &spikes.values, 60.0, 30.0, BinMode::Counts).unwrap();
        let r2 = spike_correlation(&affine, &spikes.values, 60.0, 30.0, BinMode::Counts).unwrap();
        assert!((r1 - r2).abs() < 1e-10, "affine at integer ratio: {r1} vs {r2}");

        let scaled: Vec<f64> = pred.iter().map(|v| 3.7 * v).collect();
        let r3 = spike_correlation(&pred, &spikes.values, 60.0, 25.0, BinMode::Counts).unwrap();
        let r4 = spike_correlation(&scaled, &spikes.values, 60.0, 25.0, BinMode::Counts).unwrap();
        assert!((r3 - r4).abs() < 1e-10, "rescale at fractional ratio: {r3} vs {r4}");
    }

    #[test]
    fn zero_variance_rejected() {
        let spikes = vec![0u8; 100];
        let pred = vec![0.5; 100];
        assert!(matches!(
            spike_correlation(&pred, &spikes, 60.0, 25.0, BinMode::Counts),
            Err(EvalError::UndefinedCorrelation { .. })
        ));
    }

    #[test]
    fn ttest_identical_scores() {
        let a = [0.5, 0.6, 0.7, 0.4];
        let (t, p) = paired_ttest(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn ttest_hand_computed_case() {
        // d = [1,1,1,1,-1]: mean 0.6, sd = sqrt(3.2/4) ~ 0.894, so
        // t = 0.6 / (0.894/sqrt(5)) = 1.5 exactly, df = 4
        let a = [1.0, 1.0, 1.0, 1.0, -1.0];
        let b = [0.0; 5];
        let (t, p) = paired_ttest(&a, &b).unwrap();
        assert!((t - 1.5).abs() < 1e-12, "t {t}");
        assert!(p > 0.05 && p < 0.5, "p {p}");
    }

    #[test]
    fn constant_shift_with_jitter_is_significant() {
        let mut rng = RandomSource::new(5);
        let b: Vec<f64> = (0..12).map(|_| rng.gaussian()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 1.0 + 1e-3 * rng.gaussian()).collect();
        let (_, p) = paired_ttest(&a, &b).unwrap();
        assert!(p < 0.01, "p {p}");
    }

    #[test]
    fn degenerate_difference_cases() {
        let a = [1.0, 1.0, 1.0];
        let b = [0.0, 0.0, 0.0];
        let (t, p) = paired_ttest(&a, &b).unwrap();
        assert!(t.is_infinite() && t > 0.0);
        assert_eq!(p, 0.0);
    }
}
