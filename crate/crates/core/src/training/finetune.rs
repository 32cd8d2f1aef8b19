//! Two-layer task heads over molecule embeddings.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pretrain::{apply_updates, check_corpus};
use super::{EmbedMode, TrainError};
use crate::model::{Bound, ModelParams};
use crate::numerics::{Adam, AdamConfig, Graph, Scalar, Tensor, Var};
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classify { classes: usize },
    Regress { outputs: usize },
}

impl Task {
    pub fn outputs(self) -> usize {
        match self {
            Task::Classify { classes } => classes,
            Task::Regress { outputs } => outputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Row-major, `width` values per sample.
    Values {
        width: usize,
        data: Vec<f64>,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values { width, data } => data.len() / (*width).max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check(&self, task: Task, samples: usize) -> Result<(), TrainError> {
        let mismatch = |expected, got| Err(TrainError::LabelShapeMismatch { expected, got });
        match (self, task) {
            (Targets::Classes(c), Task::Classify { classes }) => {
                if c.len() != samples {
                    return mismatch(samples, c.len());
                }
                if let Some(&bad) = c.iter().find(|&&x| x >= classes) {
                    return mismatch(classes, bad + 1);
                }
            }
            (Targets::Values { width, data }, Task::Regress { outputs }) => {
                if *width != outputs {
                    return mismatch(outputs, *width);
                }
                if data.len() != samples * width {
                    return mismatch(samples * width, data.len());
                }
            }
            _ => {
                return Err(TrainError::InvalidConfig(String::from(
                    "target kind does not match the task",
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            hidden: 64,
            epochs: 500,
            batch_size: 32,
            adam: AdamConfig {
                lr: 3e-5,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// `affine → GELU → affine`.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneHead<T> {
    pub task: Task,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

pub const HEAD_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl<T: Scalar> FinetuneHead<T> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, task: Task, rng: &mut R) -> Self {
        let mut uniform = |fan_in: usize, shape: &[usize]| {
            let a = 1.0 / Float::sqrt(fan_in as f64);
            Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
        };
        let out = task.outputs();
        FinetuneHead {
            task,
            w1: uniform(input, &[input, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: uniform(hidden, &[hidden, out]),
            b2: Tensor::zeros(&[out]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Rebuilds a head from tensors in [`HEAD_NAMES`] order.
    pub fn from_tensors(task: Task, t: [Tensor<T>; 4]) -> Result<Self, TrainError> {
        let [w1, b1, w2, b2] = t;
        let ok = w1.shape().len() == 2
            && w2.shape().len() == 2
            && b1.shape() == [w1.shape()[1]]
            && w2.shape()[0] == w1.shape()[1]
            && b2.shape() == [w2.shape()[1]]
            && w2.shape()[1] == task.outputs();
        if !ok {
            return Err(TrainError::InvalidConfig(format!(
                "inconsistent head shapes {:?} {:?} {:?} {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        Ok(FinetuneHead {
            task,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn cast<U: Scalar>(&self) -> FinetuneHead<U> {
        FinetuneHead {
            task: self.task,
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, train: bool) -> [Var; 4] {
        self.tensors().map(|t| {
            if train {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }

    /// Raw outputs (logits or values), one row per input row.
    pub fn forward(g: &mut Graph<T>, vars: &[Var; 4], x: Var) -> Result<Var, TrainError> {
        let h = g.matmul(x, vars[0])?;
        let h = g.add_bias(h, vars[1])?;
        let h = g.gelu(h);
        let o = g.matmul(h, vars[2])?;
        Ok(g.add_bias(o, vars[3])?)
    }

    /// Task loss of `out` against the targets of samples `rows`.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        out: Var,
        targets: &Targets,
        rows: &[usize],
    ) -> Result<Var, TrainError> {
        match targets {
            Targets::Classes(c) => {
                let t: Vec<usize> = rows.iter().map(|&r| c[r]).collect();
                Ok(g.cross_entropy(out, &t, &vec![T::one(); rows.len()])?)
            }
            Targets::Values { width, data } => {
                let v: Vec<T> = rows
                    .iter()
                    .flat_map(|&r| data[r * width..(r + 1) * width].iter().map(|&x| T::of(x)))
                    .collect();
                let t = g.constant(Tensor::new(vec![rows.len(), *width], v)?);
                Ok(g.mse(out, t)?)
            }
        }
    }

    /// Class probabilities or regression values for each feature row.
    pub fn predict(&self, features: &[Vec<T>]) -> Result<Vec<Vec<f64>>, TrainError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(features, self.input_dim())?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(x);
        let mut out = Self::forward(&mut g, &vars, x)?;
        if let Task::Classify { .. } = self.task {
            out = g.softmax(out);
        }
        let t = g.value(out);
        Ok((0..features.len())
            .map(|r| t.row(r).iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

pub(crate) fn stack<T: Scalar>(rows: &[Vec<T>], width: usize) -> Result<Tensor<T>, TrainError> {
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(TrainError::LabelShapeMismatch {
            expected: width,
            got: r.len(),
        });
    }
    let data = rows.iter().flatten().copied().collect();
    Ok(Tensor::new(vec![rows.len(), width], data)?)
}

fn check_config(cfg: &FinetuneConfig) -> Result<(), TrainError> {
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(TrainError::InvalidConfig(String::from(
            "batch size and head width must be positive",
        )));
    }
    Ok(())
}

/// Trains a head on fixed embeddings. Returns the head and the mean loss of
/// each epoch.
pub fn finetune_frozen<T: Scalar>(
    features: &[Vec<T>],
    targets: &Targets,
    task: Task,
    cfg: &FinetuneConfig,
) -> Result<(FinetuneHead<T>, Vec<f64>), TrainError> {
    check_config(cfg)?;
    if features.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    targets.check(task, features.len())?;
    let width = features[0].len();
    let x_all = stack(features, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = FinetuneHead::init(width, cfg.hidden, task, &mut rng);
    let mut adam = Adam::new(cfg.adam, head.tensors().map(|t| t.numel()));
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = head.bind(&mut g, true);
            let data: Vec<T> = rows
                .iter()
                .flat_map(|&r| x_all.row(r).iter().copied())
                .collect();
            let x = g.constant(Tensor::new(vec![rows.len(), width], data)?);
            let out = FinetuneHead::forward(&mut g, &vars, x)?;
            let loss = head.loss(&mut g, out, targets, rows)?;
            sum += g.value(loss).item().as_f64() * rows.len() as f64;
            let grads = g.backward(loss)?;
            for (i, t) in head.tensors_mut().into_iter().enumerate() {
                adam.step(i, t, grads.get(vars[i]));
            }
        }
        losses.push(sum / features.len() as f64);
    }
    Ok((head, losses))
}

/// Trains a head and the encoder together on framed id sequences.
pub fn finetune_end_to_end<T: Scalar>(
    mut params: ModelParams<T>,
    corpus: &[Vec<u32>],
    targets: &Targets,
    task: Task,
    mode: EmbedMode,
    cfg: &FinetuneConfig,
) -> Result<(FinetuneHead<T>, ModelParams<T>, Vec<f64>), TrainError> {
    check_config(cfg)?;
    check_corpus(&params, corpus)?;
    targets.check(task, corpus.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = FinetuneHead::init(params.config().hidden, cfg.hidden, task, &mut rng);
    let mut head_adam = Adam::new(cfg.adam, head.tensors().map(|t| t.numel()));
    let mut model_adam = Adam::new(cfg.adam, params.tensors().iter().map(|t| t.numel()));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let ids: Vec<u32> = rows
                .iter()
                .flat_map(|&r| corpus[r].iter().copied())
                .collect();
            let mut g = Graph::new();
            let model = Bound::new(&mut g, &params, true);
            let x = model.encode_tokens(&mut g, &ids, Some(&mut rng))?;
            let e = match mode {
                EmbedMode::Latent => model.latent_encode(&mut g, x)?,
                EmbedMode::MeanPool => model.mean_pool(&mut g, x, &ids)?,
            };
            let model_vars = model.vars().to_vec();
            let head_vars = head.bind(&mut g, true);
            let out = FinetuneHead::forward(&mut g, &head_vars, e)?;
            let loss = head.loss(&mut g, out, targets, rows)?;
            sum += g.value(loss).item().as_f64() * rows.len() as f64;
            let grads = g.backward(loss)?;
            for (i, t) in head.tensors_mut().into_iter().enumerate() {
                head_adam.step(i, t, grads.get(head_vars[i]));
            }
            drop(grads);
            apply_updates(&mut params, &mut model_adam, &g, &model_vars, loss)?;
        }
        losses.push(sum / corpus.len() as f64);
    }
    Ok((head, params, losses))
}
