//! Criterion implementations plus the shared model/data builders.

mod adversarial;
mod determinism;
mod gradients;
mod likelihood;
mod spikes_e2e;
mod theory_suites;

pub use adversarial::{c04_discriminator_recovery, c05_snr_scaling};
pub use determinism::c10_determinism;
pub use gradients::c06_gradient_soundness;
pub use likelihood::c09_likelihood_estimators;
pub use spikes_e2e::{c07_spike_inference, c08_inference_time};
pub use theory_suites::{c01_theory_identities, c02_substitution, c03_bound_chains};

use iwavi::nn::{
    Activation, GaussianDenseGen, GaussianMlp, InferenceNetwork, ModelTriple, Param, Prior,
};
use iwavi::rng::RandomSource;

/// p(z) = N(0,1), p(x|z) = N(w z + b, s^2), tractable Gaussian recognition
/// model q(z|x) = N(a x + c, t^2) with explicit coefficients.
pub fn linear_gaussian_model(
    gen: (f64, f64, f64),
    enc: (f64, f64, f64),
) -> ModelTriple {
    let mut rng = RandomSource::new(0);
    let mut encoder = GaussianMlp::new(1, &[], 1, Activation::Relu, &mut rng);
    encoder.mu.w = Param::from_values("enc.mu.w", &[1, 1], vec![enc.0]);
    encoder.mu.b = Param::from_values("enc.mu.b", &[1, 1], vec![enc.1]);
    encoder.log_sigma.w = Param::from_values("enc.log_sigma.w", &[1, 1], vec![0.0]);
    encoder.log_sigma.b = Param::from_values("enc.log_sigma.b", &[1, 1], vec![enc.2.ln()]);
    ModelTriple {
        prior: Prior::StdNormal { dim: 1 },
        encoder: InferenceNetwork::Gaussian(encoder),
        generator: iwavi::nn::Generator::Gaussian(GaussianDenseGen::linear_1d(
            gen.0, gen.1, gen.2,
        )),
        discriminator: None,
    }
}

pub fn log_marginal_1d(x: f64, lik_sigma: f64) -> f64 {
    let var = 1.0 + lik_sigma * lik_sigma;
    -0.5 * x * x / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

pub fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn fail(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}
