//! Self-describing binary checkpoints: architecture descriptor, flat weight
//! arrays, objective name, seed, step count, optimizer moments, RNG stream
//! position, and the loss history. Round-trips are bit-exact (f64 payloads
//! are stored as raw bits).

use super::{EarlyStop, OptState, OptimizerKind, PerNetLr, StepRecord, TrainState, TrainingConfig};
use crate::config::KvConfig;
use crate::nn::{
    Activation, BernoulliMlpGen, BiophysGen, ConvDisc, DenseDisc, Discriminator, GaussianDenseGen,
    GaussianMlp, Generator, ImplicitMlp, InferenceNetwork, ModelTriple, Param, Prior, SpikeConv,
    SpikePosterior,
};
use crate::objectives::{ObjectiveFamily, ObjectiveSpec};
use crate::rng::RandomSource;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"IWAVICP1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: bad magic header")]
    BadMagic { path: String },

    #[error("checkpoint {path}: version {found}, expected {expected}")]
    Version { path: String, found: u32, expected: u32 },

    #[error("checkpoint truncated while reading field `{field}`")]
    Truncated { field: String },

    #[error("checkpoint field `{field}`: {detail}")]
    Field { field: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// binary primitives

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn f64_array(&mut self, vals: &[f64]) {
        self.u64(vals.len() as u64);
        for &v in vals {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated { field: field.to_string() });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, field: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn u128(&mut self, field: &str) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64(field)?))
    }

    fn string(&mut self, field: &str) -> Result<String, CheckpointError> {
        let len = self.u64(field)? as usize;
        if len > self.buf.len() {
            return Err(CheckpointError::Field {
                field: field.to_string(),
                detail: format!("declared length {len} exceeds file size"),
            });
        }
        let bytes = self.take(len, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| CheckpointError::Field {
            field: field.to_string(),
            detail: format!("invalid utf-8: {e}"),
        })
    }

    fn f64_array(&mut self, field: &str) -> Result<Vec<f64>, CheckpointError> {
        let len = self.u64(field)? as usize;
        if len.saturating_mul(8) > self.buf.len() {
            return Err(CheckpointError::Field {
                field: field.to_string(),
                detail: format!("declared length {len} exceeds file size"),
            });
        }
        (0..len).map(|_| self.f64(field)).collect()
    }
}

// ---------------------------------------------------------------------------
// architecture descriptors

fn list(vals: &[usize]) -> String {
    vals.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// A self-describing architecture summary, rebuildable without the original
/// construction code path.
pub fn describe_model(model: &ModelTriple) -> KvConfig {
    let mut kv = KvConfig::new();
    match &model.prior {
        Prior::StdNormal { dim } => {
            kv.set("prior", "kind", "std-normal");
            kv.set("prior", "dim", dim.to_string());
        }
        Prior::SpikeBernoulli { rate } => {
            kv.set("prior", "kind", "spike-bernoulli");
            kv.set("prior", "rate", format!("{rate:?}"));
        }
    }
    match &model.encoder {
        InferenceNetwork::Gaussian(e) => {
            kv.set("encoder", "kind", "gaussian-mlp");
            kv.set("encoder", "in_dim", e.trunk.first().map(|l| l.in_dim()).unwrap_or(e.mu.in_dim()).to_string());
            kv.set("encoder", "hidden", list(&e.trunk.iter().map(|l| l.out_dim()).collect::<Vec<_>>()));
            kv.set("encoder", "latent_dim", e.latent_dim().to_string());
            kv.set("encoder", "activation", e.activation.name());
        }
        InferenceNetwork::Implicit(e) => {
            kv.set("encoder", "kind", "implicit-mlp");
            let in_dim = e.layers[0].in_dim()
                - if e.inject_layers > 0 { e.noise_dim } else { 0 };
            kv.set("encoder", "in_dim", in_dim.to_string());
            let hidden: Vec<usize> =
                e.layers[..e.layers.len() - 1].iter().map(|l| l.out_dim()).collect();
            kv.set("encoder", "hidden", list(&hidden));
            kv.set("encoder", "latent_dim", e.latent_dim().to_string());
            kv.set("encoder", "noise_dim", e.noise_dim.to_string());
            kv.set("encoder", "inject_layers", e.inject_layers.to_string());
            kv.set("encoder", "activation", e.activation.name());
        }
        InferenceNetwork::Spike(e) => {
            kv.set("encoder", "kind", "spike-conv");
            kv.set("encoder", "widths", list(&e.layers.iter().map(|l| l.width()).collect::<Vec<_>>()));
            kv.set("encoder", "filters", list(&e.layers.iter().map(|l| l.c_out()).collect::<Vec<_>>()));
            kv.set("encoder", "activation", e.activation.name());
            match &e.posterior {
                SpikePosterior::Implicit { noise_channels, inject_layers } => {
                    kv.set("encoder", "posterior", "implicit");
                    kv.set("encoder", "noise_channels", noise_channels.to_string());
                    kv.set("encoder", "inject_layers", inject_layers.to_string());
                }
                SpikePosterior::Factorized => {
                    kv.set("encoder", "posterior", "factorized");
                }
                SpikePosterior::Autoregressive { window, .. } => {
                    kv.set("encoder", "posterior", "autoregressive");
                    kv.set("encoder", "ar_window", window.to_string());
                }
            }
        }
    }
    match &model.generator {
        Generator::Bernoulli(g) => {
            kv.set("generator", "kind", "bernoulli-mlp");
            kv.set("generator", "latent_dim", g.layers.first().map(|l| l.in_dim()).unwrap_or(g.out.in_dim()).to_string());
            kv.set("generator", "hidden", list(&g.layers.iter().map(|l| l.out_dim()).collect::<Vec<_>>()));
            kv.set("generator", "data_dim", g.out.out_dim().to_string());
            kv.set("generator", "activation", g.activation.name());
        }
        Generator::Gaussian(g) => {
            kv.set("generator", "kind", "gaussian-mlp");
            kv.set("generator", "latent_dim", g.layers.first().map(|l| l.in_dim()).unwrap_or(g.out.in_dim()).to_string());
            kv.set("generator", "hidden", list(&g.layers.iter().map(|l| l.out_dim()).collect::<Vec<_>>()));
            kv.set("generator", "data_dim", g.out.out_dim().to_string());
            kv.set("generator", "activation", g.activation.name());
        }
        Generator::Biophys(g) => {
            kv.set("generator", "kind", "biophys");
            kv.set("generator", "tau", format!("{:?}", g.tau));
            kv.set("generator", "dt", format!("{:?}", g.dt));
        }
    }
    match &model.discriminator {
        None => kv.set("discriminator", "kind", "none"),
        Some(Discriminator::JointDense(d)) => describe_dense_disc(&mut kv, "joint-dense", d),
        Some(Discriminator::LatentDense(d)) => describe_dense_disc(&mut kv, "latent-dense", d),
        Some(Discriminator::JointConv(d)) => describe_conv_disc(&mut kv, "joint-conv", d),
        Some(Discriminator::LatentConv(d)) => describe_conv_disc(&mut kv, "latent-conv", d),
    }
    kv
}

fn describe_dense_disc(kv: &mut KvConfig, kind: &str, d: &DenseDisc) {
    kv.set("discriminator", "kind", kind);
    kv.set(
        "discriminator",
        "in_dim",
        d.layers.first().map(|l| l.in_dim()).unwrap_or(d.out.in_dim()).to_string(),
    );
    kv.set(
        "discriminator",
        "hidden",
        list(&d.layers.iter().map(|l| l.out_dim()).collect::<Vec<_>>()),
    );
    kv.set("discriminator", "activation", d.activation.name());
}

fn describe_conv_disc(kv: &mut KvConfig, kind: &str, d: &ConvDisc) {
    kv.set("discriminator", "kind", kind);
    kv.set("discriminator", "in_channels", d.layers[0].c_in().to_string());
    kv.set(
        "discriminator",
        "widths",
        list(&d.layers.iter().map(|l| l.width()).collect::<Vec<_>>()),
    );
    kv.set(
        "discriminator",
        "filters",
        list(&d.layers.iter().map(|l| l.c_out()).collect::<Vec<_>>()),
    );
    kv.set("discriminator", "activation", d.activation.name());
}

fn field_err(field: &str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Field { field: field.to_string(), detail: detail.into() }
}

/// Rebuild a model skeleton (weights uninitialized) from its descriptor.
pub fn build_model(kv: &KvConfig) -> Result<ModelTriple, CheckpointError> {
    let mut rng = RandomSource::new(0);
    let get = |section: &str, key: &str| -> Result<&str, CheckpointError> {
        kv.get(section, key).ok_or_else(|| field_err(&format!("{section}.{key}"), "missing"))
    };
    let get_usize = |section: &str, key: &str| -> Result<usize, CheckpointError> {
        get(section, key)?
            .parse()
            .map_err(|e| field_err(&format!("{section}.{key}"), format!("{e}")))
    };
    let get_f64 = |section: &str, key: &str| -> Result<f64, CheckpointError> {
        get(section, key)?
            .parse()
            .map_err(|e| field_err(&format!("{section}.{key}"), format!("{e}")))
    };
    let get_list = |section: &str, key: &str| -> Result<Vec<usize>, CheckpointError> {
        let raw = get(section, key)?;
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| field_err(&format!("{section}.{key}"), format!("{e}")))
            })
            .collect()
    };
    let get_act = |section: &str| -> Result<Activation, CheckpointError> {
        Activation::parse(get(section, "activation")?)
            .map_err(|e| field_err(&format!("{section}.activation"), e.to_string()))
    };

    let prior = match get("prior", "kind")? {
        "std-normal" => Prior::StdNormal { dim: get_usize("prior", "dim")? },
        "spike-bernoulli" => Prior::SpikeBernoulli { rate: get_f64("prior", "rate")? },
        other => return Err(field_err("prior.kind", format!("unknown `{other}`"))),
    };

    let encoder = match get("encoder", "kind")? {
        "gaussian-mlp" => InferenceNetwork::Gaussian(GaussianMlp::new(
            get_usize("encoder", "in_dim")?,
            &get_list("encoder", "hidden")?,
            get_usize("encoder", "latent_dim")?,
            get_act("encoder")?,
            &mut rng,
        )),
        "implicit-mlp" => InferenceNetwork::Implicit(ImplicitMlp::new(
            get_usize("encoder", "in_dim")?,
            &get_list("encoder", "hidden")?,
            get_usize("encoder", "latent_dim")?,
            get_usize("encoder", "noise_dim")?,
            get_usize("encoder", "inject_layers")?,
            get_act("encoder")?,
            &mut rng,
        )),
        "spike-conv" => {
            let posterior = match get("encoder", "posterior")? {
                "implicit" => SpikePosterior::Implicit {
                    noise_channels: get_usize("encoder", "noise_channels")?,
                    inject_layers: get_usize("encoder", "inject_layers")?,
                },
                "factorized" => SpikePosterior::Factorized,
                "autoregressive" => {
                    let window = get_usize("encoder", "ar_window")?;
                    SpikePosterior::Autoregressive {
                        window,
                        weights: Param::zeros("enc.ar", &[window]),
                    }
                }
                other => {
                    return Err(field_err("encoder.posterior", format!("unknown `{other}`")))
                }
            };
            InferenceNetwork::Spike(
                SpikeConv::new(
                    &get_list("encoder", "widths")?,
                    &get_list("encoder", "filters")?,
                    get_act("encoder")?,
                    posterior,
                    &mut rng,
                )
                .map_err(|e| field_err("encoder", e.to_string()))?,
            )
        }
        other => return Err(field_err("encoder.kind", format!("unknown `{other}`"))),
    };

    let generator = match get("generator", "kind")? {
        "bernoulli-mlp" => Generator::Bernoulli(BernoulliMlpGen::new(
            get_usize("generator", "latent_dim")?,
            &get_list("generator", "hidden")?,
            get_usize("generator", "data_dim")?,
            get_act("generator")?,
            &mut rng,
        )),
        "gaussian-mlp" => Generator::Gaussian(GaussianDenseGen::new(
            get_usize("generator", "latent_dim")?,
            &get_list("generator", "hidden")?,
            get_usize("generator", "data_dim")?,
            get_act("generator")?,
            &mut rng,
        )),
        "biophys" => Generator::Biophys(
            BiophysGen::new(1.0, 0.0, 0.1, get_f64("generator", "tau")?, get_f64("generator", "dt")?)
                .map_err(|e| field_err("generator", e.to_string()))?,
        ),
        other => return Err(field_err("generator.kind", format!("unknown `{other}`"))),
    };

    let discriminator = match get("discriminator", "kind")? {
        "none" => None,
        kind @ ("joint-dense" | "latent-dense") => {
            let d = DenseDisc::new(
                get_usize("discriminator", "in_dim")?,
                &get_list("discriminator", "hidden")?,
                get_act("discriminator")?,
                &mut rng,
            );
            Some(if kind == "joint-dense" {
                Discriminator::JointDense(d)
            } else {
                Discriminator::LatentDense(d)
            })
        }
        kind @ ("joint-conv" | "latent-conv") => {
            let d = ConvDisc::new(
                get_usize("discriminator", "in_channels")?,
                &get_list("discriminator", "widths")?,
                &get_list("discriminator", "filters")?,
                get_act("discriminator")?,
                &mut rng,
            )
            .map_err(|e| field_err("discriminator", e.to_string()))?;
            Some(if kind == "joint-conv" {
                Discriminator::JointConv(d)
            } else {
                Discriminator::LatentConv(d)
            })
        }
        other => return Err(field_err("discriminator.kind", format!("unknown `{other}`"))),
    };

    Ok(ModelTriple { prior, encoder, generator, discriminator })
}

// ---------------------------------------------------------------------------
// TrainingConfig <-> text

impl TrainingConfig {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("train", "objective", self.objective.family.name());
        kv.set("train", "k", self.objective.k.to_string());
        kv.set("train", "batch_size", self.batch_size.to_string());
        kv.set("train", "lr_generator", format!("{:?}", self.lr.generator));
        kv.set("train", "lr_inference", format!("{:?}", self.lr.inference));
        kv.set("train", "lr_discriminator", format!("{:?}", self.lr.discriminator));
        match self.optimizer {
            OptimizerKind::Sgd => kv.set("train", "optimizer", "sgd"),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                kv.set("train", "optimizer", "adam");
                kv.set("train", "adam_beta1", format!("{beta1:?}"));
                kv.set("train", "adam_beta2", format!("{beta2:?}"));
                kv.set("train", "adam_eps", format!("{eps:?}"));
            }
        }
        kv.set("train", "max_steps", self.max_steps.to_string());
        kv.set("train", "seed", self.seed.to_string());
        kv.set("train", "n_disc", self.n_disc.to_string());
        if let Some(every) = self.checkpoint_every {
            kv.set("train", "checkpoint_every", every.to_string());
        }
        if let Some(stop) = self.early_stop {
            kv.set("train", "early_stop_window", stop.window.to_string());
            kv.set("train", "early_stop_rel_tol", format!("{:?}", stop.rel_tol));
        }
        kv.set("train", "phi_through_iw", self.phi_through_iw.to_string());
        kv.set("train", "phi_single_sample", self.phi_single_sample.to_string());
        kv.set("train", "psi_single_sample", self.psi_single_sample.to_string());
        kv.set("train", "train_generator", self.train_generator.to_string());
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self, CheckpointError> {
        let family_name = kv
            .get("train", "objective")
            .ok_or_else(|| field_err("train.objective", "missing"))?;
        let family = ObjectiveFamily::parse(family_name)
            .ok_or_else(|| field_err("train.objective", format!("unknown `{family_name}`")))?;
        let err = |key: &str, e: crate::config::ConfigError| field_err(key, e.to_string());
        let optimizer = match kv.get_or("train", "optimizer", "adam") {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam {
                beta1: kv.get_f64("train", "adam_beta1", 0.9).map_err(|e| err("train.adam_beta1", e))?,
                beta2: kv.get_f64("train", "adam_beta2", 0.999).map_err(|e| err("train.adam_beta2", e))?,
                eps: kv.get_f64("train", "adam_eps", 1e-8).map_err(|e| err("train.adam_eps", e))?,
            },
            other => return Err(field_err("train.optimizer", format!("unknown `{other}`"))),
        };
        let early_stop = match kv.get("train", "early_stop_window") {
            None => None,
            Some(_) => Some(EarlyStop {
                window: kv
                    .get_usize("train", "early_stop_window", 200)
                    .map_err(|e| err("train.early_stop_window", e))?,
                rel_tol: kv
                    .get_f64("train", "early_stop_rel_tol", 1e-4)
                    .map_err(|e| err("train.early_stop_rel_tol", e))?,
            }),
        };
        Ok(TrainingConfig {
            objective: ObjectiveSpec {
                family,
                k: kv.get_usize("train", "k", 1).map_err(|e| err("train.k", e))?,
            },
            batch_size: kv
                .get_usize("train", "batch_size", 16)
                .map_err(|e| err("train.batch_size", e))?,
            lr: PerNetLr {
                generator: kv
                    .get_f64("train", "lr_generator", 1e-3)
                    .map_err(|e| err("train.lr_generator", e))?,
                inference: kv
                    .get_f64("train", "lr_inference", 1e-3)
                    .map_err(|e| err("train.lr_inference", e))?,
                discriminator: kv
                    .get_f64("train", "lr_discriminator", 1e-3)
                    .map_err(|e| err("train.lr_discriminator", e))?,
            },
            optimizer,
            max_steps: kv.get_u64("train", "max_steps", 1000).map_err(|e| err("train.max_steps", e))?,
            seed: kv.get_u64("train", "seed", 0).map_err(|e| err("train.seed", e))?,
            n_disc: kv.get_usize("train", "n_disc", 1).map_err(|e| err("train.n_disc", e))?,
            checkpoint_every: match kv.get("train", "checkpoint_every") {
                None => None,
                Some(_) => Some(
                    kv.get_u64("train", "checkpoint_every", 0)
                        .map_err(|e| err("train.checkpoint_every", e))?,
                ),
            },
            early_stop,
            phi_through_iw: kv
                .get_bool("train", "phi_through_iw", false)
                .map_err(|e| err("train.phi_through_iw", e))?,
            phi_single_sample: kv
                .get_bool("train", "phi_single_sample", false)
                .map_err(|e| err("train.phi_single_sample", e))?,
            psi_single_sample: kv
                .get_bool("train", "psi_single_sample", false)
                .map_err(|e| err("train.psi_single_sample", e))?,
            train_generator: kv
                .get_bool("train", "train_generator", true)
                .map_err(|e| err("train.train_generator", e))?,
        })
    }
}

// ---------------------------------------------------------------------------
// save / load

fn write_params(w: &mut Writer, params: &[&Param]) {
    w.u32(params.len() as u32);
    for p in params {
        w.string(&p.name);
        w.u32(p.shape.len() as u32);
        for &d in &p.shape {
            w.u64(d as u64);
        }
        w.f64_array(&p.values);
    }
}

fn read_params(
    r: &mut Reader,
    label: &str,
    params: Vec<&mut Param>,
) -> Result<(), CheckpointError> {
    let count = r.u32(&format!("{label}.param_count"))? as usize;
    if count != params.len() {
        return Err(field_err(
            &format!("{label}.param_count"),
            format!("checkpoint has {count} params, model expects {}", params.len()),
        ));
    }
    for p in params {
        let field = format!("{label}.{}", p.name);
        let name = r.string(&field)?;
        if name != p.name {
            return Err(field_err(&field, format!("expected param `{}`, found `{name}`", p.name)));
        }
        let ndims = r.u32(&field)? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64(&field)? as usize);
        }
        if shape != p.shape {
            return Err(field_err(&field, format!("shape {shape:?} != expected {:?}", p.shape)));
        }
        let values = r.f64_array(&field)?;
        if values.len() != p.values.len() {
            return Err(field_err(&field, "value count mismatch"));
        }
        p.values = values;
    }
    Ok(())
}

fn write_opt(w: &mut Writer, opt: &OptState) {
    w.u64(opt.t);
    w.u32(opt.m.len() as u32);
    for arr in &opt.m {
        w.f64_array(arr);
    }
    for arr in &opt.v {
        w.f64_array(arr);
    }
}

fn read_opt(r: &mut Reader, label: &str, opt: &mut OptState) -> Result<(), CheckpointError> {
    opt.t = r.u64(&format!("{label}.t"))?;
    let count = r.u32(&format!("{label}.moment_count"))? as usize;
    if count != opt.m.len() {
        return Err(field_err(
            &format!("{label}.moment_count"),
            format!("checkpoint has {count} moment arrays, expected {}", opt.m.len()),
        ));
    }
    for i in 0..count {
        opt.m[i] = r.f64_array(&format!("{label}.m[{i}]"))?;
    }
    for i in 0..count {
        opt.v[i] = r.f64_array(&format!("{label}.v[{i}]"))?;
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), CheckpointError> {
    let mut w = Writer::new();
    w.string(&state.config.to_kv().to_text());
    w.string(&describe_model(&state.model).to_text());
    w.u64(state.step);

    write_params(&mut w, &state.model.encoder.params());
    write_params(&mut w, &state.model.generator.params());
    match &state.model.discriminator {
        Some(d) => {
            w.u8(1);
            write_params(&mut w, &d.params());
        }
        None => w.u8(0),
    }

    write_opt(&mut w, &state.opt_inf);
    write_opt(&mut w, &state.opt_gen);
    match &state.opt_disc {
        Some(o) => {
            w.u8(1);
            write_opt(&mut w, o);
        }
        None => w.u8(0),
    }

    w.u64(state.rng.seed());
    w.u128(state.rng.word_pos());

    w.u64(state.history.len() as u64);
    for rec in &state.history {
        w.u64(rec.step);
        w.f64(rec.gen_loss);
        w.f64(rec.inf_loss);
        match rec.disc_loss {
            Some(v) => {
                w.u8(1);
                w.f64(v);
            }
            None => w.u8(0),
        }
        // wall-clock is a log concern; zeroed so identical runs produce
        // byte-identical checkpoints
        w.f64(0.0);
    }

    std::fs::write(path, &w.buf)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, CheckpointError> {
    let pstr = path.display().to_string();
    let buf = std::fs::read(path)
        .map_err(|source| CheckpointError::Io { path: pstr.clone(), source })?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: pstr });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { path: pstr, found: version, expected: VERSION });
    }

    let config_text = r.string("config")?;
    let config_kv = KvConfig::parse(&config_text)
        .map_err(|e| field_err("config", e.to_string()))?;
    let config = TrainingConfig::from_kv(&config_kv)?;

    let descriptor_text = r.string("model_descriptor")?;
    let descriptor = KvConfig::parse(&descriptor_text)
        .map_err(|e| field_err("model_descriptor", e.to_string()))?;
    let mut model = build_model(&descriptor)?;

    let step = r.u64("step")?;

    read_params(&mut r, "encoder", model.encoder.params_mut())?;
    read_params(&mut r, "generator", model.generator.params_mut())?;
    let has_disc = r.u8("discriminator.present")? == 1;
    if has_disc != model.discriminator.is_some() {
        return Err(field_err("discriminator.present", "descriptor/params mismatch"));
    }
    if let Some(d) = model.discriminator.as_mut() {
        read_params(&mut r, "discriminator", d.params_mut())?;
    }

    let mut opt_inf = OptState::new(config.optimizer, &model.encoder.params());
    read_opt(&mut r, "opt_inf", &mut opt_inf)?;
    let mut opt_gen = OptState::new(config.optimizer, &model.generator.params());
    read_opt(&mut r, "opt_gen", &mut opt_gen)?;
    let opt_disc = if r.u8("opt_disc.present")? == 1 {
        let d = model
            .discriminator
            .as_ref()
            .ok_or_else(|| field_err("opt_disc", "optimizer for absent discriminator"))?;
        let mut o = OptState::new(config.optimizer, &d.params());
        read_opt(&mut r, "opt_disc", &mut o)?;
        Some(o)
    } else {
        None
    };

    let rng_seed = r.u64("rng.seed")?;
    let word_pos = r.u128("rng.word_pos")?;
    let rng = RandomSource::restore(rng_seed, word_pos);

    let n_records = r.u64("history.count")? as usize;
    if n_records.saturating_mul(8) > buf.len() {
        return Err(field_err("history.count", format!("{n_records} records exceed file size")));
    }
    let mut history = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let field = format!("history[{i}]");
        history.push(StepRecord {
            step: r.u64(&field)?,
            gen_loss: r.f64(&field)?,
            inf_loss: r.f64(&field)?,
            disc_loss: if r.u8(&field)? == 1 { Some(r.f64(&field)?) } else { None },
            wall_ms: r.f64(&field)?,
        });
    }

    Ok(TrainState { step, model, config, opt_gen, opt_inf, opt_disc, rng, history })
}
