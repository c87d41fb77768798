//! Criterion 4 (discriminator recovers the analytic log density ratio) and
//! criterion 5 (gradient SNR scaling of the importance-weighted bound).

use super::{fail, linear_gaussian_model, median};
use iwavi::nn::{Activation, DenseDisc, Discriminator};
use iwavi::objectives::{discriminator_loss, estimate_snr, DiscPair, ParamSel};
use iwavi::rng::RandomSource;
use iwavi::tensor::Tape;
use iwavi::train::{OptState, OptimizerKind};
use std::time::Instant;

/// Train a latent discriminator on q = N(1,1) vs p = N(0,1); after at most
/// 5000 steps it must match T*(z) = z - 1/2 within 0.1 everywhere on
/// [-3, 3], inside a 2-minute budget.
pub fn c04_discriminator_recovery() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = RandomSource::new(404);
    let mut disc = DenseDisc::new(1, &[64, 64], Activation::Relu, &mut rng);
    let wrapped = Discriminator::LatentDense(disc.clone());
    let mut opt = OptState::new(
        OptimizerKind::adam_default(),
        &wrapped.params().into_iter().collect::<Vec<_>>(),
    );

    let batch = 512;
    let max_steps = 5000;
    let mut steps_used = 0;
    for step in 0..max_steps {
        steps_used = step + 1;
        let q_samples: Vec<Vec<f64>> = (0..batch).map(|_| vec![1.0 + rng.gaussian()]).collect();
        let p_samples: Vec<Vec<f64>> = (0..batch).map(|_| vec![rng.gaussian()]).collect();
        let wrapped = Discriminator::LatentDense(disc.clone());
        let mut tape = Tape::new();
        let bound = wrapped.bind(&mut tape, true).map_err(|e| e.to_string())?;
        let qp: Vec<DiscPair> = q_samples.iter().map(|z| DiscPair { x: None, z }).collect();
        let pp: Vec<DiscPair> = p_samples.iter().map(|z| DiscPair { x: None, z }).collect();
        let loss =
            discriminator_loss(&mut tape, &wrapped, &bound, &qp, &pp).map_err(fail)?;
        tape.backward(loss).map_err(fail)?;
        let ids = bound.flat_ids().to_vec();
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .zip(disc.params())
            .map(|(id, p)| {
                tape.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()])
            })
            .collect();
        // settle the tail fit: drop the rate for the final quarter
        let lr = if step < 3000 { 1e-3 } else { 1e-4 };
        opt.ascend(disc.params_mut(), &grads, lr);
    }

    // evaluate |T(z) - (z - 1/2)| on the central interval
    let wrapped = Discriminator::LatentDense(disc);
    let mut worst = 0.0_f64;
    let mut tape = Tape::new();
    let bound = wrapped.bind(&mut tape, false).map_err(fail)?;
    let mut z = -3.0;
    while z <= 3.0 + 1e-9 {
        let zi = tape.constant(&[z], &[1, 1]).map_err(fail)?;
        let logit = wrapped.logit_rows(&mut tape, &bound, None, zi).map_err(fail)?;
        let t_val = tape.values(logit)[0];
        worst = worst.max((t_val - (z - 0.5)).abs());
        z += 0.05;
    }
    let elapsed = start.elapsed().as_secs_f64();
    if worst >= 0.1 {
        return Err(format!(
            "max |T(z) - (z - 1/2)| = {worst:.4} >= 0.1 after {steps_used} steps"
        ));
    }
    if elapsed >= 120.0 {
        return Err(format!("runtime {elapsed:.0}s exceeds the 2-minute budget"));
    }
    Ok(format!(
        "max |T(z) - (z - 1/2)| = {worst:.4} on [-3,3] after {steps_used} steps ({elapsed:.1}s)"
    ))
}

/// Median generator SNR rises monotonically over k in {1,4,16,64} while the
/// inference-network SNR does not increase (at least 2 of 3 steps), medians
/// over 5 seed-replicates, inside a 5-minute budget.
pub fn c05_snr_scaling() -> Result<String, String> {
    let start = Instant::now();
    // mismatched recognition model, generator off its optimum
    let model = linear_gaussian_model((1.0, 0.5, 1.0), (0.3, 0.1, 1.0));
    let mut data_rng = RandomSource::new(505);
    let xs: Vec<Vec<f64>> =
        (0..8).map(|_| vec![1.5 + 2.0_f64.sqrt() * data_rng.gaussian()]).collect();

    let k_list = [1usize, 4, 16, 64];
    let n_seeds = 5;
    let repeats = 48;
    let mut gen_by_k = Vec::new();
    let mut inf_by_k = Vec::new();
    for &k in &k_list {
        let mut gen_meds = Vec::new();
        let mut inf_meds = Vec::new();
        for s in 0..n_seeds {
            let mut rng = RandomSource::new(600 + s as u64 * 101 + k as u64);
            let g = estimate_snr(&model, &xs, k, repeats, ParamSel::Generator, &mut rng)
                .map_err(fail)?;
            let i = estimate_snr(&model, &xs, k, repeats, ParamSel::Encoder, &mut rng)
                .map_err(fail)?;
            gen_meds.push(g.median);
            inf_meds.push(i.median);
        }
        gen_by_k.push(median(&mut gen_meds));
        inf_by_k.push(median(&mut inf_meds));
    }

    let gen_increases =
        gen_by_k.windows(2).filter(|w| w[1] > w[0]).count();
    let inf_non_increases =
        inf_by_k.windows(2).filter(|w| w[1] <= w[0]).count();
    let elapsed = start.elapsed().as_secs_f64();

    let detail = format!(
        "generator SNR {:?} ({}3/3 rising); inference SNR {:?} ({inf_non_increases}/3 \
         non-increasing) ({elapsed:.0}s)",
        gen_by_k.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
        if gen_increases == 3 { "" } else { "NOT " },
        inf_by_k.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
    );
    if gen_increases != 3 {
        return Err(format!("generator SNR not monotone: {detail}"));
    }
    if inf_non_increases < 2 {
        return Err(format!("inference SNR rose in more than one step: {detail}"));
    }
    if elapsed >= 300.0 {
        return Err(format!("runtime {elapsed:.0}s exceeds the 5-minute budget"));
    }
    Ok(detail)
}
