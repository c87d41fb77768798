//! Subcommand implementations.

use crate::context::{write_text, CliError, RunContext};
use iwavi::eval::{self as evaluation, BinMode, MetricRecord};
use iwavi::nn::{
    Activation, ConvDisc, Discriminator, BiophysGen, Generator, InferenceNetwork, ModelTriple,
    Param, Prior, SpikeConv, SpikePosterior,
};
use iwavi::objectives::{estimate_snr, ObjectiveFamily, ParamSel};
use iwavi::rng::RandomSource;
use iwavi::spikes::{self, BiophysParams};
use iwavi::theory;
use iwavi::train::{
    load_checkpoint, save_checkpoint, Dataset, TrainingConfig,
};
use std::fmt::Write as _;

// ---------------------------------------------------------------------------

const SIMULATE_KEYS: &[(&str, &str)] = &[
    ("simulate", "frames"),
    ("simulate", "sigma"),
    ("simulate", "rate"),
    ("simulate", "tau"),
    ("simulate", "alpha"),
    ("simulate", "beta"),
    ("simulate", "frame_rate"),
    ("simulate", "seed"),
];

pub fn simulate(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(SIMULATE_KEYS)?;
    let cfg = &ctx.cfg;
    let frames = cfg.get_usize("simulate", "frames", 6000).map_err(CliError::usage)?;
    let frame_rate = cfg.get_f64("simulate", "frame_rate", 60.0).map_err(CliError::usage)?;
    let params = BiophysParams {
        tau: cfg.get_f64("simulate", "tau", 0.7).map_err(CliError::usage)?,
        alpha: cfg.get_f64("simulate", "alpha", 1.0).map_err(CliError::usage)?,
        beta: cfg.get_f64("simulate", "beta", 0.0).map_err(CliError::usage)?,
        sigma: cfg.get_f64("simulate", "sigma", 0.2).map_err(CliError::usage)?,
        dt: 1.0 / frame_rate,
        rate: cfg.get_f64("simulate", "rate", 0.01).map_err(CliError::usage)?,
    };
    params.validate().map_err(CliError::usage)?;
    let seed = cfg.get_u64("simulate", "seed", 0).map_err(CliError::usage)?;

    let mut rng = RandomSource::new(seed);
    let spikes_train = spikes::sample_spike_prior(params.rate, frames, frame_rate, &mut rng)
        .map_err(CliError::domain)?;
    let mut trace = spikes::simulate_trace(&params, &spikes_train, &mut rng)
        .map_err(CliError::domain)?;
    trace.neuron = Some(format!("synthetic-{seed}"));

    spikes::save_traces(&ctx.artifact("paired.tsv"), &trace, Some(&spikes_train))
        .map_err(CliError::domain)?;
    spikes::save_traces(&ctx.artifact("fluorescence.tsv"), &trace, None)
        .map_err(CliError::domain)?;
    println!(
        "simulated {frames} frames at {frame_rate} Hz ({} spikes) -> {}",
        spikes_train.values.iter().map(|&v| v as usize).sum::<usize>(),
        ctx.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("train", "objective"),
    ("train", "k"),
    ("train", "data"),
    ("train", "batch_size"),
    ("train", "window_frames"),
    ("train", "max_steps"),
    ("train", "seed"),
    ("train", "n_disc"),
    ("train", "lr_generator"),
    ("train", "lr_inference"),
    ("train", "lr_discriminator"),
    ("train", "optimizer"),
    ("train", "adam_beta1"),
    ("train", "adam_beta2"),
    ("train", "adam_eps"),
    ("train", "checkpoint_every"),
    ("train", "early_stop_window"),
    ("train", "early_stop_rel_tol"),
    ("train", "phi_through_iw"),
    ("train", "phi_single_sample"),
    ("train", "psi_single_sample"),
    ("train", "train_generator"),
    ("model", "conv_widths"),
    ("model", "conv_filters"),
    ("model", "noise_channels"),
    ("model", "inject_layers"),
    ("model", "ar_window"),
    ("model", "activation"),
    ("model", "disc_widths"),
    ("model", "disc_filters"),
    ("biophys", "tau"),
    ("biophys", "alpha"),
    ("biophys", "beta"),
    ("biophys", "sigma"),
    ("biophys", "rate"),
];

/// Build the model triple for a spike-inference objective.
pub fn build_spike_model(
    cfg: &iwavi::config::KvConfig,
    family: ObjectiveFamily,
    frame_rate: f64,
    seed: u64,
) -> Result<ModelTriple, CliError> {
    let widths = cfg
        .get_usize_list("model", "conv_widths", &[31, 21, 21, 11])
        .map_err(CliError::usage)?;
    let filters = cfg
        .get_usize_list("model", "conv_filters", &[20, 20, 20, 20])
        .map_err(CliError::usage)?;
    let noise_channels =
        cfg.get_usize("model", "noise_channels", 2).map_err(CliError::usage)?;
    let inject_layers = cfg.get_usize("model", "inject_layers", 2).map_err(CliError::usage)?;
    let ar_window = cfg.get_usize("model", "ar_window", 10).map_err(CliError::usage)?;
    let activation = Activation::parse(cfg.get_or("model", "activation", "relu"))
        .map_err(CliError::usage)?;
    let disc_widths =
        cfg.get_usize_list("model", "disc_widths", &[21, 11]).map_err(CliError::usage)?;
    let disc_filters =
        cfg.get_usize_list("model", "disc_filters", &[8, 8]).map_err(CliError::usage)?;

    let rate = cfg.get_f64("biophys", "rate", 0.01).map_err(CliError::usage)?;
    let tau = cfg.get_f64("biophys", "tau", 0.7).map_err(CliError::usage)?;
    let alpha = cfg.get_f64("biophys", "alpha", 1.0).map_err(CliError::usage)?;
    let beta = cfg.get_f64("biophys", "beta", 0.0).map_err(CliError::usage)?;
    let sigma = cfg.get_f64("biophys", "sigma", 0.3).map_err(CliError::usage)?;

    let mut rng = RandomSource::new(seed ^ 0xa5a5_5a5a);
    let posterior = match family {
        ObjectiveFamily::Avb | ObjectiveFamily::IwAvb | ObjectiveFamily::Aae
        | ObjectiveFamily::IwAae => {
            SpikePosterior::Implicit { noise_channels, inject_layers }
        }
        ObjectiveFamily::VimcoCorr => SpikePosterior::Autoregressive {
            window: ar_window,
            weights: Param::zeros("enc.ar", &[ar_window]),
        },
        ObjectiveFamily::Vae | ObjectiveFamily::Iwae | ObjectiveFamily::VimcoFact => {
            SpikePosterior::Factorized
        }
    };
    let encoder = SpikeConv::new(&widths, &filters, activation, posterior, &mut rng)
        .map_err(CliError::usage)?;
    let generator = BiophysGen::new(alpha, beta, sigma, tau, 1.0 / frame_rate)
        .map_err(CliError::usage)?;
    let discriminator = match family {
        ObjectiveFamily::Avb | ObjectiveFamily::IwAvb => Some(Discriminator::JointConv(
            ConvDisc::new(2, &disc_widths, &disc_filters, activation, &mut rng)
                .map_err(CliError::usage)?,
        )),
        ObjectiveFamily::Aae | ObjectiveFamily::IwAae => Some(Discriminator::LatentConv(
            ConvDisc::new(1, &disc_widths, &disc_filters, activation, &mut rng)
                .map_err(CliError::usage)?,
        )),
        _ => None,
    };
    Ok(ModelTriple {
        prior: Prior::SpikeBernoulli { rate },
        encoder: InferenceNetwork::Spike(encoder),
        generator: Generator::Biophys(generator),
        discriminator,
    })
}

/// Cut a trace into fixed-length non-overlapping windows.
pub fn cut_windows(values: &[f64], window: usize) -> Vec<Vec<f64>> {
    values.chunks_exact(window).map(<[f64]>::to_vec).collect()
}

pub fn train(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(TRAIN_KEYS)?;
    let data_path = ctx.require_path("train", "data")?;
    let record = spikes::load_traces(&data_path).map_err(CliError::domain)?;
    let frame_rate = record.trace.frame_rate;

    let mut config = TrainingConfig::from_kv(&ctx.cfg).map_err(CliError::usage)?;
    if ctx.cfg.get("train", "max_steps").is_none() {
        config.max_steps = 1000;
    }
    let window = ctx.cfg.get_usize("train", "window_frames", 256).map_err(CliError::usage)?;
    let windows = cut_windows(&record.trace.values, window);
    if windows.is_empty() {
        return Err(CliError::domain(format!(
            "trace has {} frames, shorter than one {window}-frame window",
            record.trace.len()
        )));
    }
    let dataset = Dataset::TraceWindows { windows, frame_rate };

    let model = build_spike_model(&ctx.cfg, config.objective.family, frame_rate, config.seed)?;
    let state = iwavi::train::train(model, &dataset, config).map_err(CliError::domain)?;

    save_checkpoint(&state, &ctx.artifact("model.ckpt")).map_err(CliError::domain)?;
    let mut log = String::new();
    for rec in &state.history {
        let disc = rec.disc_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            log,
            "step={} gen={:.6} inf={:.6} disc={} ms={:.3}",
            rec.step, rec.gen_loss, rec.inf_loss, disc, rec.wall_ms
        );
    }
    write_text(&ctx.artifact("train_log.txt"), &log)?;
    let last = state.history.last();
    println!(
        "trained {} for {} steps (final gen loss {:.4}) -> {}",
        state.config.objective.family.name(),
        state.step,
        last.map(|r| r.gen_loss).unwrap_or(f64::NAN),
        ctx.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

const INFER_KEYS: &[(&str, &str)] =
    &[("infer", "checkpoint"), ("infer", "trace"), ("infer", "draws"), ("infer", "seed")];

pub fn infer(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(INFER_KEYS)?;
    let ckpt_path = ctx.require_path("infer", "checkpoint")?;
    let trace_path = ctx.require_path("infer", "trace")?;
    let draws = ctx.cfg.get_usize("infer", "draws", 64).map_err(CliError::usage)?;
    let seed = ctx.cfg.get_u64("infer", "seed", 0).map_err(CliError::usage)?;

    let state = load_checkpoint(&ckpt_path).map_err(CliError::domain)?;
    let record = spikes::load_traces(&trace_path).map_err(CliError::domain)?;
    let mut rng = RandomSource::new(seed);
    let marginals =
        evaluation::spike_marginals(&state.model, &record.trace.values, draws, &mut rng)
            .map_err(CliError::domain)?;

    let mut out = String::new();
    let _ = writeln!(out, "# iwavi-marginals v1");
    let _ = writeln!(out, "# frame_rate_hz = {}", record.trace.frame_rate);
    let _ = writeln!(out, "# columns = probability");
    for p in &marginals {
        let _ = writeln!(out, "{p:?}");
    }
    write_text(&ctx.artifact("marginals.tsv"), &out)?;
    println!("wrote {} per-frame marginals -> {}", marginals.len(), ctx.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------

const EVAL_KEYS: &[(&str, &str)] = &[
    ("eval", "checkpoint"),
    ("eval", "data"),
    ("eval", "eval_rate"),
    ("eval", "draws"),
    ("eval", "loglik_k"),
    ("eval", "loglik_windows"),
    ("eval", "window_frames"),
    ("eval", "seed"),
];

pub fn eval(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(EVAL_KEYS)?;
    let ckpt_path = ctx.require_path("eval", "checkpoint")?;
    let data_path = ctx.require_path("eval", "data")?;
    let eval_rate = ctx.cfg.get_f64("eval", "eval_rate", 25.0).map_err(CliError::usage)?;
    let draws = ctx.cfg.get_usize("eval", "draws", 64).map_err(CliError::usage)?;
    let loglik_k = ctx.cfg.get_usize("eval", "loglik_k", 0).map_err(CliError::usage)?;
    let seed = ctx.cfg.get_u64("eval", "seed", 0).map_err(CliError::usage)?;
    let hash = ctx.cfg.hash();

    let state = load_checkpoint(&ckpt_path).map_err(CliError::domain)?;
    let record = spikes::load_traces(&data_path).map_err(CliError::domain)?;
    let mut rng = RandomSource::new(seed);
    let mut records = Vec::new();

    let marginals =
        evaluation::spike_marginals(&state.model, &record.trace.values, draws, &mut rng)
            .map_err(CliError::domain)?;
    if let Some(true_spikes) = &record.spikes {
        let corr = evaluation::spike_correlation(
            &marginals,
            &true_spikes.values,
            record.trace.frame_rate,
            eval_rate,
            BinMode::Counts,
        )
        .map_err(CliError::domain)?;
        records.push(MetricRecord::new(format!("corr@{eval_rate}hz"), corr, None, &hash));
    }

    if loglik_k > 0 {
        let window =
            ctx.cfg.get_usize("eval", "window_frames", 256).map_err(CliError::usage)?;
        let n_windows =
            ctx.cfg.get_usize("eval", "loglik_windows", 8).map_err(CliError::usage)?;
        let windows: Vec<Vec<f64>> =
            cut_windows(&record.trace.values, window).into_iter().take(n_windows).collect();
        if !windows.is_empty() {
            let est = evaluation::iwae_loglik(&state.model, &windows, loglik_k, &mut rng)
                .map_err(CliError::domain)?;
            records.push(MetricRecord::new(
                est.method.name(),
                est.mean,
                Some(est.std_error),
                &hash,
            ));
        }
    }

    if records.is_empty() {
        return Err(CliError::domain(
            "nothing to evaluate: data has no spike labels and loglik_k = 0",
        ));
    }
    evaluation::emit_report(&records, &ctx.artifact("metrics.txt"))
        .map_err(CliError::domain)?;
    for r in &records {
        println!("{} = {:.4}", r.name, r.value);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

const THEORY_KEYS: &[(&str, &str)] = &[
    ("theory", "models"),
    ("theory", "grid"),
    ("theory", "seed"),
    ("theory", "k"),
];

struct SuiteRow {
    name: &'static str,
    checks: usize,
    worst: f64,
    pass: bool,
}

pub fn verify_theory(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(THEORY_KEYS)?;
    let n_models = ctx.cfg.get_usize("theory", "models", 100).map_err(CliError::usage)?;
    let grid_size = ctx.cfg.get_usize("theory", "grid", 200).map_err(CliError::usage)?;
    let seed = ctx.cfg.get_u64("theory", "seed", 7).map_err(CliError::usage)?;
    let k_order = ctx.cfg.get_usize("theory", "k", 3).map_err(CliError::usage)?;
    const TOL: f64 = 1e-10;

    let mut rng = RandomSource::new(seed);
    let mut rows = Vec::new();

    // identity suites
    let mut worst_t1 = 0.0_f64;
    let mut worst_t2 = 0.0_f64;
    for _ in 0..n_models {
        let nx = 2 + rng.below(3);
        let nz = 2 + rng.below(3);
        let model = theory::EnumerableModel::random(nx, nz, &mut rng);
        let q = theory::PosteriorTable::random(nx, nz, &mut rng);
        worst_t1 = worst_t1.max(theory::check_theorem1(&model, &q).map_err(CliError::domain)?);
        worst_t2 = worst_t2.max(theory::check_theorem2(&model, &q).map_err(CliError::domain)?);
    }
    rows.push(SuiteRow { name: "theorem-1 identity", checks: n_models, worst: worst_t1, pass: worst_t1 < TOL });
    rows.push(SuiteRow { name: "theorem-2 gap identity", checks: n_models, worst: worst_t2, pass: worst_t2 < TOL });

    // optimal-discriminator substitution
    let mut worst_sub = 0.0_f64;
    let mut checks = 0;
    for _ in 0..n_models {
        let model = theory::EnumerableModel::random(3, 3, &mut rng);
        let q = theory::PosteriorTable::random(3, 3, &mut rng);
        for k in [1, 2, 4] {
            let rep = theory::check_optimal_discriminator_substitution(&model, &q, k)
                .map_err(CliError::domain)?;
            worst_sub = worst_sub.max(rep.iwavb_residual).max(rep.iwaae_residual);
            checks += 1;
        }
    }
    rows.push(SuiteRow { name: "optimal-T substitution", checks, worst: worst_sub, pass: worst_sub < TOL });

    // perturbation sensitivity of the substitution oracle
    let mut worst_pert = 0.0_f64;
    for _ in 0..10 {
        let model = theory::EnumerableModel::random(3, 3, &mut rng);
        let q = theory::PosteriorTable::random(3, 3, &mut rng);
        let r = theory::perturbed_substitution_residual(&model, &q, 2, 0.1)
            .map_err(CliError::domain)?;
        worst_pert = worst_pert.max((r - 0.1).abs());
    }
    rows.push(SuiteRow { name: "perturbation sensitivity", checks: 10, worst: worst_pert, pass: worst_pert < TOL });

    // k-monotonicity
    let mut worst_mono = f64::INFINITY;
    for _ in 0..(n_models / 2) {
        let model = theory::EnumerableModel::random(3, 3, &mut rng);
        let q = theory::PosteriorTable::random(3, 3, &mut rng);
        let rep = theory::check_k_monotonicity(&model, &q, &[1, 2, 3]).map_err(CliError::domain)?;
        worst_mono = worst_mono
            .min(rep.min_l_step)
            .min(rep.min_upper_margin)
            .min(rep.min_d_step)
            .min(rep.min_d_lower_margin);
    }
    rows.push(SuiteRow {
        name: "k-monotonicity chain",
        checks: n_models / 2,
        worst: worst_mono,
        pass: worst_mono >= -TOL,
    });

    // divergence orderings on the posterior grid, plus the Jensen relation
    let mut worst_ord = f64::INFINITY;
    let mut worst_jensen = f64::INFINITY;
    let ordering_models = 20.min(n_models);
    for _ in 0..ordering_models {
        let model = theory::EnumerableModel::random(3, 3, &mut rng);
        let grid: Vec<theory::PosteriorTable> = (0..grid_size)
            .map(|_| theory::PosteriorTable::random(3, 3, &mut rng))
            .chain([model.exact_posterior(), theory::PosteriorTable::prior_copy(&model)])
            .collect();
        let rep = theory::check_divergence_ordering(&model, k_order, &grid)
            .map_err(CliError::domain)?;
        worst_ord = worst_ord.min(rep.pointwise.min()).min(rep.at_inf.min());
        worst_jensen = worst_jensen.min(rep.jensen_margin);
    }
    // Jensen also on aggregated-posterior-constrained instances
    for _ in 0..ordering_models {
        let (model, q) = theory::random_constrained_instance(3, &mut rng);
        let ex = theory::exact_quantities(&model, &q, k_order).map_err(CliError::domain)?;
        worst_jensen = worst_jensen.min(ex.w_ddag_inner - ex.w_dag_inner);
    }
    rows.push(SuiteRow {
        name: "divergence orderings",
        checks: ordering_models * (grid_size + 2),
        worst: worst_ord,
        pass: worst_ord >= -TOL,
    });
    rows.push(SuiteRow {
        name: "jensen W-inner relation",
        checks: 2 * ordering_models,
        worst: worst_jensen,
        pass: worst_jensen >= -TOL,
    });

    let mut table = String::new();
    let _ = writeln!(table, "{:<28} {:>8} {:>14} {:>7}", "suite", "checks", "worst", "status");
    let mut all_pass = true;
    for row in &rows {
        all_pass &= row.pass;
        let _ = writeln!(
            table,
            "{:<28} {:>8} {:>14.3e} {:>7}",
            row.name,
            row.checks,
            row.worst,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    print!("{table}");
    write_text(&ctx.artifact("theory_report.txt"), &table)?;
    if all_pass {
        println!("all suites pass (seed {seed})");
        Ok(())
    } else {
        Err(CliError::domain("theory verification failed; see table above"))
    }
}

// ---------------------------------------------------------------------------

const SNR_KEYS: &[(&str, &str)] = &[
    ("snr", "k_list"),
    ("snr", "repeats"),
    ("snr", "seeds"),
    ("snr", "n_data"),
    ("snr", "seed"),
];

/// The linear-Gaussian SNR probe model: p(z) = N(0,1),
/// p(x|z) = N(w z + b, s^2) with trainable (w, b, log s), and a mismatched
/// Gaussian recognition model.
pub fn snr_probe_model(seed: u64) -> ModelTriple {
    use iwavi::nn::{GaussianDenseGen, GaussianMlp};
    let mut rng = RandomSource::new(seed);
    let mut enc = GaussianMlp::new(1, &[], 1, Activation::Relu, &mut rng);
    enc.mu.w = Param::from_values("enc.mu.w", &[1, 1], vec![0.3]);
    enc.mu.b = Param::from_values("enc.mu.b", &[1, 1], vec![0.1]);
    enc.log_sigma.w = Param::from_values("enc.log_sigma.w", &[1, 1], vec![0.0]);
    enc.log_sigma.b = Param::from_values("enc.log_sigma.b", &[1, 1], vec![0.0]);
    ModelTriple {
        prior: Prior::StdNormal { dim: 1 },
        encoder: InferenceNetwork::Gaussian(enc),
        generator: Generator::Gaussian(GaussianDenseGen::linear_1d(1.0, 0.5, 1.0)),
        discriminator: None,
    }
}

pub fn snr(ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.finalize(SNR_KEYS)?;
    let k_list: Vec<usize> = ctx
        .cfg
        .get_usize_list("snr", "k_list", &[1, 4, 16, 64])
        .map_err(CliError::usage)?;
    let repeats = ctx.cfg.get_usize("snr", "repeats", 48).map_err(CliError::usage)?;
    let n_seeds = ctx.cfg.get_usize("snr", "seeds", 5).map_err(CliError::usage)?;
    let n_data = ctx.cfg.get_usize("snr", "n_data", 8).map_err(CliError::usage)?;
    let seed = ctx.cfg.get_u64("snr", "seed", 1).map_err(CliError::usage)?;

    let mut data_rng = RandomSource::new(seed ^ 0x77);
    let xs: Vec<Vec<f64>> =
        (0..n_data).map(|_| vec![1.5 + 2.0_f64.sqrt() * data_rng.gaussian()]).collect();
    let model = snr_probe_model(seed);

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:>6} {:>18} {:>18}  (median over {n_seeds} seed-replicates, {repeats} repeats each)",
        "k", "generator SNR", "inference SNR"
    );
    for &k in &k_list {
        let mut gen_medians = Vec::new();
        let mut inf_medians = Vec::new();
        for s in 0..n_seeds {
            let mut rng = RandomSource::new(seed).substream(1000 + s as u64 * 17 + k as u64);
            let g = estimate_snr(&model, &xs, k, repeats, ParamSel::Generator, &mut rng)
                .map_err(CliError::domain)?;
            let i = estimate_snr(&model, &xs, k, repeats, ParamSel::Encoder, &mut rng)
                .map_err(CliError::domain)?;
            gen_medians.push(g.median);
            inf_medians.push(i.median);
        }
        let med = |v: &mut Vec<f64>| -> f64 {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let _ = writeln!(
            table,
            "{:>6} {:>18.4} {:>18.4}",
            k,
            med(&mut gen_medians),
            med(&mut inf_medians)
        );
    }
    print!("{table}");
    write_text(&ctx.artifact("snr_report.txt"), &table)?;
    Ok(())
}
