//! Criterion 6: analytic gradients against central finite differences —
//! every differentiable op at rel err < 1e-4 (100 random instances each)
//! and every end-to-end loss at rel err < 1e-3 (100 random instances).
//!
//! Straight-through spike losses are excluded from the end-to-end sweep by
//! design: their backward pass is a surrogate for a non-differentiable
//! forward. The biophysical likelihood's differentiable parameters
//! (amplitude, baseline, noise scale) are checked with spikes held fixed.

use iwavi::nn::{
    Activation, BiophysGen, DenseDisc, Discriminator, GaussianDenseGen, GaussianMlp,
    ImplicitMlp, InferenceNetwork, ModelTriple, Prior,
};
use iwavi::objectives::{
    aae_inference_loss, avb_inference_loss, discriminator_loss, elbo, iwaae_generator_loss,
    iwae_bound, iwavb_generator_loss, DiscPair, Trainability,
};
use iwavi::rng::RandomSource;
use iwavi::tensor::{gradcheck, Tape, TensorId};

const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;

/// Check one scalar-valued graph builder against central differences.
fn check<F>(build: F, x0: &[f64], tol: f64) -> Result<f64, String>
where
    F: Fn(&mut Tape, TensorId) -> TensorId,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0, &[x0.len()]).unwrap();
    let y = build(&mut tape, x);
    tape.backward(y).map_err(|e| e.to_string())?;
    let analytic = tape.grad(x).ok_or("missing gradient")?.to_vec();
    let numeric = gradcheck::central_diff(
        &|vals: &[f64]| {
            let mut t = Tape::new();
            let x = t.leaf(vals, &[vals.len()]).unwrap();
            let y = build(&mut t, x);
            t.scalar(y).unwrap()
        },
        x0,
        STEP,
    );
    let err = gradcheck::max_rel_err(&analytic, &numeric);
    if err < tol {
        Ok(err)
    } else {
        Err(format!("rel err {err:.2e} >= {tol:.0e}"))
    }
}

fn op_instances(rng: &mut RandomSource) -> Vec<(&'static str, Vec<f64>, Box<OpBuilder>)> {
    type B = Box<OpBuilder>;
    let n = 6;
    let pos = |rng: &mut RandomSource| -> Vec<f64> {
        (0..n).map(|_| 0.2 + rng.uniform() * 2.0).collect()
    };
    let away_from_zero = |rng: &mut RandomSource| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = rng.gaussian();
                v.signum() * (0.05 + v.abs())
            })
            .collect()
    };
    let anywhere = |rng: &mut RandomSource| -> Vec<f64> { rng.gaussian_vec(n) };
    let other = rng.gaussian_vec(n);
    let denom = away_from_zero(rng);
    let kernel = rng.gaussian_vec(6);
    let mat = rng.gaussian_vec(6);

    vec![
        ("add", anywhere(rng), {
            let other = other.clone();
            Box::new(move |t: &mut Tape, x| {
                let o = t.constant(&other, &[n]).unwrap();
                let y = t.add(x, o).unwrap();
                t.sum(y).unwrap()
            }) as B
        }),
        ("sub", anywhere(rng), {
            let other = other.clone();
            Box::new(move |t: &mut Tape, x| {
                let o = t.constant(&other, &[n]).unwrap();
                let y = t.sub(o, x).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("mul-broadcast", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let m = t.reshape(x, &[2, 3]).unwrap();
                let row = t.constant(&[0.7, -1.3, 0.4], &[1, 3]).unwrap();
                let y = t.mul(m, row).unwrap();
                t.sum(y).unwrap()
            })
        }),
        ("div", away_from_zero(rng), {
            let denom = denom.clone();
            Box::new(move |t: &mut Tape, x| {
                let d = t.constant(&denom, &[n]).unwrap();
                let y = t.div(x, d).unwrap();
                let z = t.constant(&[2.0], &[1]).unwrap();
                let y2 = t.div(z, x).unwrap();
                let s1 = t.sum(y).unwrap();
                let s2 = t.sum(y2).unwrap();
                t.add(s1, s2).unwrap()
            })
        }),
        ("neg-exp", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let nx = t.neg(x).unwrap();
                let e = t.exp(nx).unwrap();
                t.sum(e).unwrap()
            })
        }),
        ("log", pos(rng), {
            Box::new(move |t: &mut Tape, x| {
                let l = t.log(x).unwrap();
                t.sum(l).unwrap()
            })
        }),
        ("sigmoid", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let s = t.sigmoid(x).unwrap();
                t.sum(s).unwrap()
            })
        }),
        ("relu", away_from_zero(rng), {
            Box::new(move |t: &mut Tape, x| {
                let r = t.relu(x).unwrap();
                let sq = t.mul(r, r).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("tanh", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let y = t.tanh(x).unwrap();
                t.sum(y).unwrap()
            })
        }),
        ("softplus", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let y = t.softplus(x).unwrap();
                t.sum(y).unwrap()
            })
        }),
        ("pow", pos(rng), {
            Box::new(move |t: &mut Tape, x| {
                let y = t.powf(x, 1.7).unwrap();
                t.sum(y).unwrap()
            })
        }),
        ("sum-axis", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let m = t.reshape(x, &[2, 3]).unwrap();
                let a = t.sum_axis(m, 0).unwrap();
                let sq = t.mul(a, a).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("mean", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let m = t.mean(x).unwrap();
                let sq = t.mul(m, m).unwrap();
                t.reshape(sq, &[]).unwrap()
            })
        }),
        ("matmul", anywhere(rng), {
            let mat = mat.clone();
            Box::new(move |t: &mut Tape, x| {
                let a = t.reshape(x, &[2, 3]).unwrap();
                let b = t.constant(&mat, &[3, 2]).unwrap();
                let y = t.matmul(a, b).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("conv1d-same", anywhere(rng), {
            let kernel = kernel.clone();
            Box::new(move |t: &mut Tape, x| {
                let sig = t.reshape(x, &[1, 6]).unwrap();
                let k = t.constant(&kernel, &[2, 1, 3]).unwrap();
                let y = t.conv1d_same(sig, k).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("conv1d-kernel-grad", rng.gaussian_vec(6), {
            Box::new(move |t: &mut Tape, x| {
                let k = t.reshape(x, &[2, 1, 3]).unwrap();
                let sig = t.constant(&[0.3, -0.8, 1.2, 0.1, -0.5, 0.9], &[1, 6]).unwrap();
                let y = t.conv1d_same(sig, k).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("concat", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let a = t.reshape(x, &[2, 3]).unwrap();
                let b = t.constant(&[1.0, -1.0, 0.5], &[1, 3]).unwrap();
                let y = t.concat(&[a, b], 0).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq).unwrap()
            })
        }),
        ("logsumexp", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let m = t.reshape(x, &[2, 3]).unwrap();
                let l = t.logsumexp(m, 1).unwrap();
                t.sum(l).unwrap()
            })
        }),
        ("decay-filter", anywhere(rng), {
            Box::new(move |t: &mut Tape, x| {
                let c = t.decay_filter(x, 0.93).unwrap();
                let sq = t.mul(c, c).unwrap();
                t.sum(sq).unwrap()
            })
        }),
    ]
}

type OpBuilder = dyn Fn(&mut Tape, TensorId) -> TensorId;

/// Perturb every parameter of a bound model through a loss value.
fn e2e_check<F>(model: &ModelTriple, loss_of: F) -> Result<f64, String>
where
    F: Fn(&ModelTriple) -> f64,
{
    // flatten all trainable parameter values
    let flat0: Vec<f64> = model
        .encoder
        .params()
        .iter()
        .chain(model.generator.params().iter())
        .chain(model.discriminator.iter().flat_map(|d| d.params()).collect::<Vec<_>>().iter())
        .flat_map(|p| p.values.iter().copied())
        .collect();
    let rebuild = |vals: &[f64]| -> ModelTriple {
        let mut m = model.clone();
        let mut it = vals.iter();
        for p in m.encoder.params_mut() {
            for v in p.values.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for p in m.generator.params_mut() {
            for v in p.values.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        if let Some(d) = m.discriminator.as_mut() {
            for p in d.params_mut() {
                for v in p.values.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
        }
        m
    };
    let f = |vals: &[f64]| loss_of(&rebuild(vals));
    let numeric = gradcheck::central_diff(&f, &flat0, STEP);
    // analytic gradient through one tape
    let analytic = analytic_grad(model, &loss_of);
    let err = gradcheck::max_rel_err(&analytic, &numeric);
    if err < E2E_TOL {
        Ok(err)
    } else {
        Err(format!("rel err {err:.2e} >= {E2E_TOL:.0e}"))
    }
}

/// The analytic gradient is read back through thread-local capture inside
/// `loss_of`; see `LossProbe`.
fn analytic_grad<F: Fn(&ModelTriple) -> f64>(model: &ModelTriple, loss_of: &F) -> Vec<f64> {
    CAPTURE.with(|c| *c.borrow_mut() = Some(Vec::new()));
    let _ = loss_of(model);
    CAPTURE.with(|c| c.borrow_mut().take()).unwrap_or_default()
}

thread_local! {
    static CAPTURE: std::cell::RefCell<Option<Vec<f64>>> = const { std::cell::RefCell::new(None) };
}

/// Build a loss graph, optionally run backward and capture all gradients in
/// params order when a capture buffer is armed.
fn probe<G>(model: &ModelTriple, build: G) -> f64
where
    G: Fn(&mut Tape, &iwavi::objectives::BoundModel) -> TensorId,
{
    let mut tape = Tape::new();
    let bm = model.bind(&mut tape, Trainability::all()).unwrap();
    let loss = build(&mut tape, &bm);
    let value = tape.scalar(loss).unwrap();
    let capturing = CAPTURE.with(|c| c.borrow().is_some());
    if capturing {
        tape.backward(loss).unwrap();
        let mut flat = Vec::new();
        let mut grab = |ids: &[TensorId], params: Vec<&iwavi::nn::Param>| {
            for (id, p) in ids.iter().zip(params) {
                match tape.grad(*id) {
                    Some(g) => flat.extend_from_slice(g),
                    None => flat.extend(std::iter::repeat(0.0).take(p.numel())),
                }
            }
        };
        grab(bm.encoder.flat_ids(), model.encoder.params());
        grab(bm.generator.flat_ids(), model.generator.params());
        if let (Some(db), Some(d)) = (&bm.discriminator, &model.discriminator) {
            grab(db.flat_ids(), d.params());
        }
        CAPTURE.with(|c| *c.borrow_mut() = Some(flat));
    }
    value
}

pub fn c06_gradient_soundness() -> Result<String, String> {
    let mut rng = RandomSource::new(61);
    // operator-level sweep: 100 random instances per op
    let mut n_ops = 0;
    let mut worst_op = 0.0_f64;
    for trial in 0..100 {
        for (name, x0, build) in op_instances(&mut rng) {
            let err = check(|t, x| build(t, x), &x0, OP_TOL)
                .map_err(|e| format!("op `{name}` trial {trial}: {e}"))?;
            worst_op = worst_op.max(err);
            n_ops += 1;
        }
    }

    // end-to-end sweep: tanh networks (smooth), continuous sample paths
    let mut worst_e2e = 0.0_f64;
    let mut n_e2e = 0;
    for trial in 0..100u64 {
        let mut mrng = RandomSource::new(1000 + trial);
        let dx = 2 + (trial % 2) as usize;
        let dz = 2;
        let enc_gaussian = InferenceNetwork::Gaussian(GaussianMlp::new(
            dx,
            &[5],
            dz,
            Activation::Tanh,
            &mut mrng,
        ));
        let enc_implicit = InferenceNetwork::Implicit(ImplicitMlp::new(
            dx,
            &[5],
            dz,
            2,
            1,
            Activation::Tanh,
            &mut mrng,
        ));
        let gen = iwavi::nn::Generator::Gaussian(GaussianDenseGen::new(
            dz,
            &[4],
            dx,
            Activation::Tanh,
            &mut mrng,
        ));
        let joint_disc = Discriminator::JointDense(DenseDisc::new(
            dx + dz,
            &[6],
            Activation::Tanh,
            &mut mrng,
        ));
        let latent_disc =
            Discriminator::LatentDense(DenseDisc::new(dz, &[6], Activation::Tanh, &mut mrng));
        let x: Vec<f64> = mrng.gaussian_vec(dx);
        let k = 3;
        let seed = 5000 + trial;

        let cases: Vec<(&str, ModelTriple, Box<LossFn>)> = vec![
            (
                "elbo",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_gaussian.clone(),
                    generator: gen.clone(),
                    discriminator: None,
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            elbo(t, bm, &x, k, &mut r).unwrap()
                        })
                    }) as Box<LossFn>
                },
            ),
            (
                "iwae",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_gaussian.clone(),
                    generator: gen.clone(),
                    discriminator: None,
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            iwae_bound(t, bm, &x, k, &mut r).unwrap()
                        })
                    })
                },
            ),
            (
                "iwavb-generator",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_implicit.clone(),
                    generator: gen.clone(),
                    discriminator: Some(joint_disc.clone()),
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            iwavb_generator_loss(t, bm, &x, k, &mut r).unwrap()
                        })
                    })
                },
            ),
            (
                "avb-inference",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_gaussian.clone(),
                    generator: gen.clone(),
                    discriminator: Some(joint_disc.clone()),
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            avb_inference_loss(t, bm, &x, k, &mut r).unwrap()
                        })
                    })
                },
            ),
            (
                "iwaae-generator",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_implicit.clone(),
                    generator: gen.clone(),
                    discriminator: Some(latent_disc.clone()),
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            iwaae_generator_loss(t, bm, &x, k, &mut r).unwrap()
                        })
                    })
                },
            ),
            (
                "aae-inference",
                ModelTriple {
                    prior: Prior::StdNormal { dim: dz },
                    encoder: enc_implicit.clone(),
                    generator: gen.clone(),
                    discriminator: Some(latent_disc.clone()),
                },
                {
                    let x = x.clone();
                    Box::new(move |m: &ModelTriple| {
                        probe(m, |t, bm| {
                            let mut r = RandomSource::new(seed);
                            aae_inference_loss(t, bm, &x, k, &mut r).unwrap()
                        })
                    })
                },
            ),
        ];
        for (name, model, loss_of) in cases {
            let err = e2e_check(&model, loss_of)
                .map_err(|e| format!("end-to-end `{name}` trial {trial}: {e}"))?;
            worst_e2e = worst_e2e.max(err);
            n_e2e += 1;
        }

        // discriminator objective w.r.t. psi on explicit sample sets
        let model = ModelTriple {
            prior: Prior::StdNormal { dim: dz },
            encoder: enc_gaussian.clone(),
            generator: gen.clone(),
            discriminator: Some(latent_disc.clone()),
        };
        let qs: Vec<Vec<f64>> = (0..4).map(|_| mrng.gaussian_vec(dz)).collect();
        let ps: Vec<Vec<f64>> = (0..4).map(|_| mrng.gaussian_vec(dz)).collect();
        let err = e2e_check(&model, move |m: &ModelTriple| {
            probe(m, |t, bm| {
                let disc = m.discriminator.as_ref().unwrap();
                let bound = bm.discriminator.as_ref().unwrap();
                let qp: Vec<DiscPair> = qs.iter().map(|z| DiscPair { x: None, z }).collect();
                let pp: Vec<DiscPair> = ps.iter().map(|z| DiscPair { x: None, z }).collect();
                discriminator_loss(t, disc, bound, &qp, &pp).unwrap()
            })
        })
        .map_err(|e| format!("end-to-end `discriminator` trial {trial}: {e}"))?;
        worst_e2e = worst_e2e.max(err);
        n_e2e += 1;

        // biophysical likelihood w.r.t. (alpha, beta, log sigma), spikes fixed
        let bio = ModelTriple {
            prior: Prior::SpikeBernoulli { rate: 0.1 },
            encoder: enc_gaussian.clone(), // unused by the loss below
            generator: iwavi::nn::Generator::Biophys(
                BiophysGen::new(
                    0.8 + 0.4 * mrng.uniform(),
                    0.1 * mrng.gaussian(),
                    0.2 + 0.2 * mrng.uniform(),
                    0.7,
                    1.0 / 60.0,
                )
                .unwrap(),
            ),
            discriminator: None,
        };
        let spikes: Vec<f64> = (0..16).map(|_| f64::from(u8::from(mrng.uniform() < 0.2))).collect();
        let trace: Vec<f64> = (0..16).map(|_| mrng.gaussian() * 0.4).collect();
        let err = e2e_check(&bio, move |m: &ModelTriple| {
            probe(m, |t, bm| {
                let s = t.constant(&spikes, &[16]).unwrap();
                let f = t.constant(&trace, &[16]).unwrap();
                m.generator.log_lik(t, &bm.generator, s, f).unwrap()
            })
        })
        .map_err(|e| format!("end-to-end `biophys-loglik` trial {trial}: {e}"))?;
        worst_e2e = worst_e2e.max(err);
        n_e2e += 1;
    }

    Ok(format!(
        "{n_ops} op checks (worst rel err {worst_op:.2e} < 1e-4); {n_e2e} end-to-end checks \
         (worst rel err {worst_e2e:.2e} < 1e-3)"
    ))
}

type LossFn = dyn Fn(&ModelTriple) -> f64;
