//! Finite-difference gradient suite over every differentiable operation
//! and a small two-layer model, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use smited_core::model::{linear_attention, AttentionFeatures, Bound, ModelConfig, ModelParams};
use smited_core::moe::{mixture, topk_softmax};
use smited_core::numerics::{grad_check_many, GradCheckOptions, Graph, NumericsError, Tensor, Var};
use smited_core::tokenizer::{NUM_SPECIAL, PAD};
use smited_core::training::{mlm_loss, reconstruction_loss};

pub const TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

type Loss = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>>;

/// Reduces any output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, Loss)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| random(&mut rng, s);
    let ids: Vec<usize> = (0..5).map(|i| (i * 7 + seed as usize) % 6).collect();
    let targets: Vec<usize> = (0..4).map(|i| (i + seed as usize) % 5).collect();
    let keep: Vec<bool> = (0..12)
        .map(|i| !(i + seed as usize).is_multiple_of(3))
        .collect();
    let mask: Vec<bool> = (0..6).map(|i| i != 5).collect();
    let features = AttentionFeatures::<f64>::random(2, 4, 4, &mut ChaCha8Rng::seed_from_u64(seed));
    let s = seed;
    vec![
        (
            "matmul",
            vec![r(&[3, 4]), r(&[4, 2])],
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, s)
            }),
        ),
        (
            "add",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, s)
            }),
        ),
        (
            "add_bias",
            vec![r(&[3, 4]), r(&[4])],
            Box::new(move |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                project(g, y, s)
            }),
        ),
        (
            "mul",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, s)
            }),
        ),
        (
            "scale",
            vec![r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.scale(v[0], -1.7);
                project(g, y, s)
            }),
        ),
        (
            "transpose",
            vec![r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.transpose(v[0])?;
                project(g, y, s)
            }),
        ),
        (
            "reshape",
            vec![r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.reshape(v[0], &[2, 6])?;
                project(g, y, s)
            }),
        ),
        (
            "concat",
            vec![r(&[2, 3]), r(&[2, 2])],
            Box::new(move |g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                project(g, y, s)
            }),
        ),
        (
            "slice",
            vec![r(&[4, 3])],
            Box::new(move |g, v| {
                let y = g.slice(v[0], 0, 1, 2)?;
                project(g, y, s)
            }),
        ),
        (
            "sum",
            vec![r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.sum(y))
            }),
        ),
        (
            "mean",
            vec![r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[0])?;
                Ok(g.mean(y))
            }),
        ),
        (
            "embedding",
            vec![r(&[6, 3])],
            Box::new(move |g, v| {
                let y = g.embedding(v[0], &ids)?;
                project(g, y, s)
            }),
        ),
        (
            "softmax",
            vec![r(&[3, 5])],
            Box::new(move |g, v| {
                let y = g.softmax(v[0]);
                project(g, y, s)
            }),
        ),
        (
            "gelu",
            vec![r(&[3, 5])],
            Box::new(move |g, v| {
                let y = g.gelu(v[0]);
                project(g, y, s)
            }),
        ),
        (
            "layernorm",
            vec![r(&[3, 5]), r(&[5]), r(&[5])],
            Box::new(move |g, v| {
                let y = g.layernorm(v[0], v[1], v[2])?;
                project(g, y, s)
            }),
        ),
        (
            "cross_entropy",
            vec![r(&[4, 5])],
            Box::new(move |g, v| g.cross_entropy(v[0], &targets, &[1.0, 0.5, 0.0, 2.0])),
        ),
        (
            "mse",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|g, v| g.mse(v[0], v[1])),
        ),
        (
            "dropout",
            vec![r(&[3, 4])],
            Box::new(move |g, v| {
                let y = g.dropout(v[0], &keep, 0.25)?;
                project(g, y, s)
            }),
        ),
        (
            "linear_attention",
            vec![r(&[6, 8]), r(&[6, 8]), r(&[6, 8])],
            Box::new(move |g, v| {
                let (out, op) = linear_attention(
                    g.value(v[0]),
                    g.value(v[1]),
                    g.value(v[2]),
                    &features,
                    2,
                    &mask,
                )
                .map_err(|e| match e {
                    smited_core::model::ModelError::Numerics(n) => n,
                    other => panic!("{other}"),
                })?;
                let y = g.custom(&[v[0], v[1], v[2]], out, Box::new(op));
                project(g, y, s)
            }),
        ),
        (
            "topk_softmax",
            vec![r(&[3, 5])],
            Box::new(move |g, v| {
                let y = topk_softmax(g, v[0], 2).expect("valid k");
                project(g, y, s)
            }),
        ),
        (
            "mixture",
            vec![r(&[2, 3]), r(&[2, 4]), r(&[2, 4]), r(&[2, 4])],
            Box::new(move |g, v| {
                let w = g.softmax(v[0]);
                let y = mixture(g, w, &v[1..]).expect("matching experts");
                project(g, y, s)
            }),
        ),
    ]
}

/// Checks every differentiable operation on inputs drawn from `seed`.
pub fn op_checks(seed: u64) -> Result<Vec<CheckResult>, NumericsError> {
    op_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = grad_check_many(|g, v| f(g, v), &inputs, GradCheckOptions::default())?;
            Ok(CheckResult {
                name: name.to_string(),
                seed,
                max_rel_err: err,
            })
        })
        .collect()
}

/// Desk architecture with a short sequence, a small vocabulary and no
/// dropout.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        max_len: 8,
        dropout: 0.0,
        ..ModelConfig::desk(12)
    }
}

struct ModelCase {
    ids: Vec<u32>,
    selected: Vec<bool>,
}

fn model_loss(p: &ModelParams<f64>, case: &ModelCase) -> (Graph<f64>, Vec<Var>, Var) {
    let mut g = Graph::new();
    let model = Bound::new(&mut g, p, true);
    let x = model
        .encode_tokens(&mut g, &case.ids, None)
        .expect("valid ids");
    let logits = model.lm_head(&mut g, x).expect("shapes");
    let a = mlm_loss(&mut g, logits, &case.ids, &case.selected).expect("shapes");
    let b = reconstruction_loss(&mut g, &model, &case.ids, false, None).expect("shapes");
    let loss = g.add(a, b).expect("scalars");
    let vars = model.vars().to_vec();
    (g, vars, loss)
}

/// Masked-LM plus reconstruction loss of a freshly initialised two-layer
/// model, checked against central differences on sampled coordinates of
/// every trainable tensor.
pub fn model_check(seed: u64, coords_per_tensor: usize) -> Result<CheckResult, NumericsError> {
    let cfg = small_model_config();
    let mut params = ModelParams::<f64>::init(&cfg, seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // larger than the init scale so layer norms and attention are exercised
    for (info, t) in params.info().to_vec().iter().zip(params.tensors_mut()) {
        if info.trainable {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let mut ids = Vec::new();
    for _ in 0..2 {
        let len = rng.random_range(3..=cfg.max_len);
        for n in 0..cfg.max_len {
            ids.push(if n < len {
                rng.random_range(NUM_SPECIAL..cfg.vocab_size as u32)
            } else {
                PAD
            });
        }
    }
    let selected = ids
        .iter()
        .map(|&id| id != PAD && rng.random_bool(0.5))
        .collect();
    let case = ModelCase { ids, selected };

    let (g, vars, loss) = model_loss(&params, &case);
    let grads = g.backward(loss)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        if !params.info()[i].trainable {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[i], &params.tensors()[i]);
        let n = analytic.numel();
        for _ in 0..coords_per_tensor.min(n) {
            let c = rng.random_range(0..n);
            let x0 = params.tensors()[i].data()[c];
            let mut eval = |x: f64| {
                params.tensors_mut()[i].data_mut()[c] = x;
                let (g, _, l) = model_loss(&params, &case);
                g.value(l).item()
            };
            let numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
            params.tensors_mut()[i].data_mut()[c] = x0;
            let a = analytic.data()[c];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    Ok(CheckResult {
        name: "model_2layer".into(),
        seed,
        max_rel_err: worst,
    })
}

/// The whole suite over `seeds` seeds.
pub fn run_suite(seeds: u64) -> Result<Vec<CheckResult>, NumericsError> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        out.extend(op_checks(seed)?);
        out.push(model_check(seed, 4)?);
    }
    Ok(out)
}
