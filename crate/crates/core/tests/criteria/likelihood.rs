//! Criterion 9: the annealed and importance-sampled likelihood estimators
//! against analytic marginals, and the IW-AVB vs AVB test-bound ordering on
//! synthetic binary patterns.

use super::{fail, linear_gaussian_model, log_marginal_1d, median};
use iwavi::eval::{ais_loglik, iwae_loglik};
use iwavi::nn::{
    Activation, BernoulliMlpGen, DenseDisc, Discriminator, Generator, ImplicitMlp,
    InferenceNetwork, ModelTriple, Prior,
};
use iwavi::objectives::{ObjectiveFamily, ObjectiveSpec};
use iwavi::rng::RandomSource;
use iwavi::train::{train, Dataset, PerNetLr, TrainingConfig};

/// AIS at the paper's (1000 temperatures, 5 chains) and the IWAE estimator
/// must both land within 0.05 nats of the analytic marginal on
/// linear-Gaussian models (dataset means over six points); then on 8x8
/// binary patterns the IW-AVB test bound must not trail AVB's by more than
/// 0.05 nats (median over 3 seeds).
pub fn c09_likelihood_estimators() -> Result<String, String> {
    // --- estimator agreement on tractable models
    let cases = [
        // (likelihood sigma, recognition (a, c, t)): one exact posterior,
        // one deliberately mismatched proposal
        (1.0, (0.5, 0.0, 0.5_f64.sqrt())),
        (0.6, (0.6, 0.05, 0.7)),
    ];
    let xs = [0.8, -0.3, 1.4, 0.0, -1.1, 0.5];
    let mut agreement = Vec::new();
    for (idx, &(sigma, enc)) in cases.iter().enumerate() {
        let model = linear_gaussian_model((1.0, 0.0, sigma), enc);
        let analytic_mean =
            xs.iter().map(|&x| log_marginal_1d(x, sigma)).sum::<f64>() / xs.len() as f64;

        let mut rng = RandomSource::new(900 + idx as u64);
        let mut ais_mean = 0.0;
        for &x in &xs {
            ais_mean += ais_loglik(&model, &[x], 1000, 5, &mut rng).map_err(fail)?.mean;
        }
        ais_mean /= xs.len() as f64;

        let data: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let iwae = iwae_loglik(&model, &data, 500, &mut rng).map_err(fail)?;

        let ais_err = (ais_mean - analytic_mean).abs();
        let iwae_err = (iwae.mean - analytic_mean).abs();
        if ais_err >= 0.05 {
            return Err(format!(
                "AIS off analytic by {ais_err:.3} nats (sigma {sigma}): {ais_mean:.4} vs \
                 {analytic_mean:.4}"
            ));
        }
        if iwae_err >= 0.05 {
            return Err(format!(
                "IWAE-500 off analytic by {iwae_err:.3} nats (sigma {sigma})"
            ));
        }
        agreement.push(format!("sigma {sigma}: AIS {ais_err:.3}, IWAE {iwae_err:.3}"));
    }

    // --- IW-AVB vs AVB ordering on synthetic 8x8 binary patterns
    let mut iw_bounds = Vec::new();
    let mut avb_bounds = Vec::new();
    for seed in 0..3u64 {
        let (train_set, test_set) = pattern_dataset(seed);
        let iw = train_pattern_model(ObjectiveFamily::IwAvb, 8, &train_set, seed)?;
        let avb = train_pattern_model(ObjectiveFamily::Avb, 1, &train_set, seed)?;
        let mut rng = RandomSource::new(950 + seed);
        let iw_est = iwae_loglik(&iw, &test_set, 64, &mut rng).map_err(fail)?;
        let avb_est = iwae_loglik(&avb, &test_set, 64, &mut rng).map_err(fail)?;
        iw_bounds.push(iw_est.mean);
        avb_bounds.push(avb_est.mean);
    }
    let med_iw = median(&mut iw_bounds.clone());
    let med_avb = median(&mut avb_bounds.clone());
    let detail = format!(
        "{}; patterns: IW-AVB test IWAE-64 median {med_iw:.2}, AVB {med_avb:.2} (margin \
         {:+.3})",
        agreement.join("; "),
        med_iw - med_avb
    );
    if med_iw < med_avb - 0.05 {
        return Err(format!("IW-AVB bound trails AVB by more than 0.05 nats: {detail}"));
    }
    Ok(detail)
}

/// Three prototype 8x8 patterns with 5% pixel flips.
fn pattern_dataset(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = RandomSource::new(9100 + seed);
    let prototypes: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..64).map(|_| f64::from(u8::from(rng.uniform() < 0.4))).collect())
        .collect();
    let draw = |rng: &mut RandomSource| -> Vec<f64> {
        let proto = &prototypes[rng.below(3)];
        proto
            .iter()
            .map(|&v| if rng.uniform() < 0.05 { 1.0 - v } else { v })
            .collect()
    };
    let train: Vec<Vec<f64>> = (0..256).map(|_| draw(&mut rng)).collect();
    let test: Vec<Vec<f64>> = (0..64).map(|_| draw(&mut rng)).collect();
    (train, test)
}

fn train_pattern_model(
    family: ObjectiveFamily,
    k: usize,
    data: &[Vec<f64>],
    seed: u64,
) -> Result<ModelTriple, String> {
    let latent = 4;
    let mut rng = RandomSource::new(9300 + seed);
    let model = ModelTriple {
        prior: Prior::StdNormal { dim: latent },
        encoder: InferenceNetwork::Implicit(ImplicitMlp::new(
            64,
            &[48],
            latent,
            4,
            1,
            Activation::Relu,
            &mut rng,
        )),
        generator: Generator::Bernoulli(BernoulliMlpGen::new(
            latent,
            &[48],
            64,
            Activation::Relu,
            &mut rng,
        )),
        discriminator: Some(Discriminator::JointDense(DenseDisc::new(
            64 + latent,
            &[48, 48],
            Activation::Relu,
            &mut rng,
        ))),
    };
    let mut config = TrainingConfig::new(ObjectiveSpec { family, k }, seed);
    config.batch_size = 16;
    config.max_steps = 1200;
    config.lr = PerNetLr { generator: 1e-3, inference: 1e-3, discriminator: 2e-3 };
    config.n_disc = 1;
    let state = train(model, &Dataset::Vectors(data.to_vec()), config).map_err(fail)?;
    Ok(state.model)
}
