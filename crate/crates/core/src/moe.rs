//! Top-k sparse gating over several expert encoders.
//!
//! A router encoder supplies the mean-pooled gating input; only the experts
//! a sample is routed to are ever evaluated for it.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Adam, CustomOp, Graph, Scalar, Tensor, Var};
use crate::training::{
    embed, stack, EmbedMode, FinetuneConfig, FinetuneHead, Targets, Task, TrainError,
};
use num_traits::Float;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MoeError {
    #[error("k = {k} must lie in 1..={n}")]
    KTooLarge { k: usize, n: usize },
    #[error("experts disagree on model config")]
    ConfigMismatch,
    #[error("gate input has width {got}, gating matrix expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision {
    /// Chosen experts, highest logit first.
    pub indices: Vec<usize>,
    /// Softmax weights over the chosen logits, aligned with `indices`.
    pub weights: Vec<f64>,
}

impl GateDecision {
    /// Dense weights with zeros for inactive experts.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for (&i, &x) in self.indices.iter().zip(&self.weights) {
            w[i] = x;
        }
        w
    }
}

/// Indices of the `k` largest values, highest first; lower index wins ties.
fn top_indices<T: Scalar>(logits: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub fn top_k(logits: &[f64], k: usize) -> Result<GateDecision, MoeError> {
    let n = logits.len();
    if k == 0 || k > n {
        return Err(MoeError::KTooLarge { k, n });
    }
    let indices = top_indices(logits, k);
    let max = logits[indices[0]];
    let exps: Vec<f64> = indices
        .iter()
        .map(|&i| Float::exp(logits[i] - max))
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(GateDecision {
        indices,
        weights: exps.iter().map(|e| e / sum).collect(),
    })
}

/// Gate for one input vector `x` against `wg` (L × n).
pub fn gate(x: &[f64], wg: &Tensor<f64>, k: usize) -> Result<GateDecision, MoeError> {
    let (l, n) = gate_shape(wg)?;
    if x.len() != l {
        return Err(MoeError::ShapeMismatch {
            expected: l,
            got: x.len(),
        });
    }
    let logits: Vec<f64> = (0..n)
        .map(|j| (0..l).map(|i| x[i] * wg.data()[i * n + j]).sum())
        .collect();
    top_k(&logits, k)
}

fn gate_shape<T: Scalar>(wg: &Tensor<T>) -> Result<(usize, usize), MoeError> {
    match *wg.shape() {
        [l, n] if n > 0 => Ok((l, n)),
        _ => Err(MoeError::ShapeMismatch {
            expected: 2,
            got: wg.shape().len(),
        }),
    }
}

/// Row-wise softmax restricted to the top `k` entries; the rest get 0.
struct TopKSoftmax;

impl<T: Scalar> CustomOp<T> for TopKSoftmax {
    fn name(&self) -> &'static str {
        "topk_softmax"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let n = output.last_dim();
        let mut gx = Tensor::zeros(output.shape());
        for r in 0..output.rows() {
            let w = output.row(r);
            let g = &grad.data()[r * n..(r + 1) * n];
            let dot = w.iter().zip(g).fold(T::zero(), |a, (&x, &y)| a + x * y);
            for j in 0..n {
                if w[j] != T::zero() {
                    gx.data_mut()[r * n + j] = w[j] * (g[j] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

pub fn topk_softmax<T: Scalar>(g: &mut Graph<T>, logits: Var, k: usize) -> Result<Var, MoeError> {
    let t = g.value(logits);
    let n = t.last_dim();
    if k == 0 || k > n {
        return Err(MoeError::KTooLarge { k, n });
    }
    let mut out = Tensor::zeros(t.shape());
    for r in 0..t.rows() {
        let row = t.row(r);
        let idx = top_indices(row, k);
        let max = row[idx[0]];
        let mut sum = T::zero();
        for &i in &idx {
            let e = (row[i] - max).exp();
            out.data_mut()[r * n + i] = e;
            sum = sum + e;
        }
        for &i in &idx {
            out.data_mut()[r * n + i] = out.data()[r * n + i] / sum;
        }
    }
    Ok(g.custom(&[logits], out, Box::new(TopKSoftmax)))
}

/// y_b = Σ_i w_bi · E_i[b], skipping zero weights entirely.
struct Mixture;

impl<T: Scalar> CustomOp<T> for Mixture {
    fn name(&self) -> &'static str {
        "mixture"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let w = inputs[0];
        let n = w.last_dim();
        let l = grad.last_dim();
        let mut gw = Tensor::zeros(w.shape());
        let mut out = Vec::with_capacity(n + 1);
        let mut ge: Vec<Tensor<T>> = (0..n)
            .map(|i| Tensor::zeros(inputs[i + 1].shape()))
            .collect();
        for b in 0..w.rows() {
            let g = &grad.data()[b * l..(b + 1) * l];
            for i in 0..n {
                let wi = w.data()[b * n + i];
                if wi == T::zero() {
                    continue;
                }
                let e = inputs[i + 1].row(b);
                gw.data_mut()[b * n + i] = g.iter().zip(e).fold(T::zero(), |a, (&x, &y)| a + x * y);
                for (o, &x) in ge[i].data_mut()[b * l..(b + 1) * l].iter_mut().zip(g) {
                    *o = wi * x;
                }
            }
        }
        out.push(Some(gw));
        out.extend(ge.into_iter().map(Some));
        out
    }
}

/// Mixes expert embeddings (each batch × L) with dense gate weights
/// (batch × n).
pub fn mixture<T: Scalar>(
    g: &mut Graph<T>,
    weights: Var,
    experts: &[Var],
) -> Result<Var, MoeError> {
    let w = g.value(weights);
    let (batch, n) = (w.rows(), w.last_dim());
    if experts.len() != n {
        return Err(MoeError::ShapeMismatch {
            expected: n,
            got: experts.len(),
        });
    }
    let l = g.value(experts[0]).last_dim();
    for &e in experts {
        if g.shape(e) != [batch, l] {
            return Err(MoeError::ShapeMismatch {
                expected: l,
                got: g.value(e).last_dim(),
            });
        }
    }
    let mut y = Tensor::zeros(&[batch, l]);
    for b in 0..batch {
        for (i, &e) in experts.iter().enumerate() {
            let wi = g.value(weights).data()[b * n + i];
            if wi == T::zero() {
                continue;
            }
            let row = g.value(e).row(b);
            for (o, &x) in y.data_mut()[b * l..(b + 1) * l].iter_mut().zip(row) {
                *o = *o + wi * x;
            }
        }
    }
    let mut inputs = vec![weights];
    inputs.extend_from_slice(experts);
    Ok(g.custom(&inputs, y, Box::new(Mixture)))
}

/// A trained mixture: router, experts, gate and task head.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeModel<T> {
    pub router: ModelParams<T>,
    pub experts: Vec<ModelParams<T>>,
    pub wg: Tensor<T>,
    pub k: usize,
    pub head: FinetuneHead<T>,
    /// How each expert embeds a molecule.
    pub mode: EmbedMode,
}

pub fn check_experts<T: Scalar>(
    router: &ModelParams<T>,
    experts: &[ModelParams<T>],
) -> Result<ModelConfig, MoeError> {
    let cfg = router.config().clone();
    if experts.is_empty() || experts.iter().any(|e| *e.config() != cfg) {
        return Err(MoeError::ConfigMismatch);
    }
    Ok(cfg)
}

/// Gating inputs, gate decisions and per-expert embeddings of the active
/// experts only (inactive slots stay zero).
pub struct Routed<T> {
    pub gate_inputs: Vec<Vec<T>>,
    pub decisions: Vec<GateDecision>,
    pub expert_embeddings: Vec<Vec<Vec<T>>>,
}

pub fn route<T: Scalar>(
    router: &ModelParams<T>,
    experts: &[ModelParams<T>],
    wg: &Tensor<T>,
    k: usize,
    mode: EmbedMode,
    corpus: &[Vec<u32>],
) -> Result<Routed<T>, MoeError> {
    let cfg = check_experts(router, experts)?;
    let (l, n) = gate_shape(wg)?;
    if l != cfg.hidden || n != experts.len() {
        return Err(MoeError::ShapeMismatch {
            expected: cfg.hidden * experts.len(),
            got: l * n,
        });
    }
    let gate_inputs = embed(router, corpus, EmbedMode::MeanPool)?;
    let wg64: Tensor<f64> = wg.cast();
    let decisions = gate_inputs
        .iter()
        .map(|x| {
            let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
            gate(&x, &wg64, k)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut expert_embeddings = vec![vec![vec![T::zero(); l]; corpus.len()]; n];
    for (i, expert) in experts.iter().enumerate() {
        let rows: Vec<usize> = (0..corpus.len())
            .filter(|&r| decisions[r].indices.contains(&i))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let batch: Vec<Vec<u32>> = rows.iter().map(|&r| corpus[r].clone()).collect();
        for (r, e) in rows.iter().zip(embed(expert, &batch, mode)?) {
            expert_embeddings[i][*r] = e;
        }
    }
    Ok(Routed {
        gate_inputs,
        decisions,
        expert_embeddings,
    })
}

impl<T: Scalar> MoeModel<T> {
    /// Head outputs (class probabilities or values) per sequence.
    pub fn forward(&self, corpus: &[Vec<u32>]) -> Result<Vec<Vec<f64>>, MoeError> {
        let routed = route(
            &self.router,
            &self.experts,
            &self.wg,
            self.k,
            self.mode,
            corpus,
        )?;
        let l = self.router.config().hidden;
        let mixed: Vec<Vec<T>> = (0..corpus.len())
            .map(|r| {
                let mut y = vec![T::zero(); l];
                let d = &routed.decisions[r];
                for (&i, &w) in d.indices.iter().zip(&d.weights) {
                    for (o, &x) in y.iter_mut().zip(&routed.expert_embeddings[i][r]) {
                        *o = *o + T::of(w) * x;
                    }
                }
                y
            })
            .collect();
        Ok(self.head.predict(&mixed)?)
    }
}

/// Trains the gate and a task head on precomputed gating inputs and expert
/// embeddings (`expert_embeddings[i][sample]`). Gradients reach the gate
/// only through the soft weights of the active experts.
pub fn moe_finetune<T: Scalar>(
    gate_inputs: &[Vec<T>],
    expert_embeddings: &[Vec<Vec<T>>],
    targets: &Targets,
    task: Task,
    k: usize,
    cfg: &FinetuneConfig,
) -> Result<(Tensor<T>, FinetuneHead<T>, Vec<f64>), MoeError> {
    let samples = gate_inputs.len();
    let n = expert_embeddings.len();
    if samples == 0 || n == 0 {
        return Err(TrainError::EmptyInput.into());
    }
    if k == 0 || k > n {
        return Err(MoeError::KTooLarge { k, n });
    }
    targets.check(task, samples)?;
    let l = gate_inputs[0].len();
    let x_all = stack(gate_inputs, l)?;
    let width = expert_embeddings[0].first().map_or(0, Vec::len);
    let e_all = expert_embeddings
        .iter()
        .map(|e| {
            if e.len() != samples {
                return Err(TrainError::LabelShapeMismatch {
                    expected: samples,
                    got: e.len(),
                });
            }
            stack(e, width)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = 1.0 / Float::sqrt(l as f64);
    let mut wg = Tensor::from_fn(&[l, n], |_| T::of(rng.random_range(-a..a)));
    let mut head = FinetuneHead::init(width, cfg.hidden, task, &mut rng);
    let mut adam = Adam::new(
        cfg.adam,
        [wg.numel()]
            .into_iter()
            .chain(head.tensors().map(|t| t.numel())),
    );
    let mut order: Vec<usize> = (0..samples).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let pick = |t: &Tensor<T>, rows: &[usize], w: usize| -> Tensor<T> {
        let data = rows
            .iter()
            .flat_map(|&r| t.row(r).iter().copied())
            .collect();
        Tensor::new(vec![rows.len(), w], data).expect("row widths")
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for rows in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let wv = g.param(wg.clone());
            let head_vars = head.bind(&mut g, true);
            let x = g.constant(pick(&x_all, rows, l));
            let logits = g.matmul(x, wv).map_err(TrainError::from)?;
            let weights = topk_softmax(&mut g, logits, k)?;
            let experts: Vec<Var> = e_all
                .iter()
                .map(|e| g.constant(pick(e, rows, width)))
                .collect();
            let y = mixture(&mut g, weights, &experts)?;
            let out = FinetuneHead::forward(&mut g, &head_vars, y)?;
            let loss = head.loss(&mut g, out, targets, rows)?;
            sum += g.value(loss).item().as_f64() * rows.len() as f64;
            let grads = g.backward(loss).map_err(TrainError::from)?;
            adam.step(0, &mut wg, grads.get(wv));
            for (i, t) in head.tensors_mut().into_iter().enumerate() {
                adam.step(i + 1, t, grads.get(head_vars[i]));
            }
        }
        losses.push(sum / samples as f64);
    }
    Ok((wg, head, losses))
}
