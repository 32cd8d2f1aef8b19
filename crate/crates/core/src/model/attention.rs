//! Rotary linear attention with a positive random-feature kernel, fused into
//! one tape op with a hand-written backward pass.
//!
//! For each head: q' = s·R_n q, k' = s·R_n k with s = d^(-1/4), and
//! φ(u) = exp(Wu − ‖u‖²/2 − c)/√m. The stabilizer c (per query row, and one
//! per sequence for keys) cancels in the normalized ratio, so holding it
//! constant in the backward pass is exact.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::rotary::RotaryTable;
use super::ModelError;
use crate::numerics::{mismatch, CustomOp, Scalar, Tensor};
use num_traits::Float;

/// Denominators are clamped below at this value.
pub const MIN_DENOMINATOR: f64 = 1e-8;

/// Frozen projection matrices, one `features × head_dim` block per head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFeatures<T> {
    pub heads: usize,
    pub features: usize,
    pub head_dim: usize,
    pub w: Vec<T>,
}

impl<T: Scalar> AttentionFeatures<T> {
    pub fn random<R: Rng + ?Sized>(
        heads: usize,
        features: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> AttentionFeatures<T> {
        let w = (0..heads * features * head_dim)
            .map(|_| T::of(StandardNormal.sample(rng)))
            .collect();
        AttentionFeatures {
            heads,
            features,
            head_dim,
            w,
        }
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<AttentionFeatures<T>, ModelError> {
        match *t.shape() {
            [heads, features, head_dim] => Ok(AttentionFeatures {
                heads,
                features,
                head_dim,
                w: t.data().to_vec(),
            }),
            _ => Err(mismatch("attention features", t.shape(), &[0, 0, 0]).into()),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.heads, self.features, self.head_dim],
            self.w.clone(),
        )
        .expect("consistent sizes")
    }

    fn block(&self, h: usize) -> &[T] {
        let n = self.features * self.head_dim;
        &self.w[h * n..(h + 1) * n]
    }
}

/// Saved state of one fused attention evaluation over a batch.
pub struct LinearAttention<T> {
    batch: usize,
    seq: usize,
    features: AttentionFeatures<T>,
    table: RotaryTable<T>,
    scale: T,
    qp: Vec<T>,
    kp: Vec<T>,
    phq: Vec<T>,
    phk: Vec<T>,
    s: Vec<T>,
    z: Vec<T>,
    den: Vec<T>,
    clamped: Vec<bool>,
}

/// Runs attention over `batch` sequences stacked row-wise in `q`, `k`, `v`
/// (each `(batch·seq) × hidden`). `mask[r]` is false for padding rows, which
/// are excluded as keys.
pub fn linear_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    features: &AttentionFeatures<T>,
    batch: usize,
    mask: &[bool],
) -> Result<(Tensor<T>, LinearAttention<T>), ModelError> {
    let (heads, m, dh) = (features.heads, features.features, features.head_dim);
    let hidden = heads * dh;
    for t in [k, v] {
        if t.shape() != q.shape() {
            return Err(mismatch("linear_attention", q.shape(), t.shape()).into());
        }
    }
    if q.shape().len() != 2
        || q.shape()[1] != hidden
        || batch == 0
        || !q.rows().is_multiple_of(batch)
    {
        return Err(mismatch("linear_attention", q.shape(), &[batch, hidden]).into());
    }
    if dh % 2 != 0 {
        return Err(ModelError::OddHeadDim(dh));
    }
    let rows = q.rows();
    if mask.len() != rows {
        return Err(mismatch("linear_attention mask", q.shape(), &[mask.len()]).into());
    }
    let seq = rows / batch;
    let mut op = LinearAttention {
        batch,
        seq,
        features: features.clone(),
        table: RotaryTable::new(seq, dh),
        scale: T::of(Float::powf(dh as f64, -0.25)),
        qp: vec![T::zero(); rows * hidden],
        kp: vec![T::zero(); rows * hidden],
        phq: vec![T::zero(); batch * heads * seq * m],
        phk: vec![T::zero(); batch * heads * seq * m],
        s: vec![T::zero(); batch * heads * m * dh],
        z: vec![T::zero(); batch * heads * m],
        den: vec![T::zero(); batch * heads * seq],
        clamped: vec![false; batch * heads * seq],
    };
    let mut out = Tensor::zeros(q.shape());
    let inv_sqrt_m = T::one() / T::of(m as f64).sqrt();
    let mut ak = vec![T::zero(); seq * m];
    for b in 0..batch {
        for h in 0..heads {
            let w = features.block(h);
            let bh = b * heads + h;
            let col = h * dh;
            for n in 0..seq {
                let r = (b * seq + n) * hidden + col;
                op.table.apply(
                    &q.data()[r..r + dh],
                    n,
                    op.scale,
                    false,
                    &mut op.qp[r..r + dh],
                );
                op.table.apply(
                    &k.data()[r..r + dh],
                    n,
                    op.scale,
                    false,
                    &mut op.kp[r..r + dh],
                );
            }
            // query features, stabilized per row
            for n in 0..seq {
                let r = (b * seq + n) * hidden + col;
                let phq = &mut op.phq[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                project(w, &op.qp[r..r + dh], phq);
                let c = phq.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
                for x in phq.iter_mut() {
                    *x = (*x - c).exp() * inv_sqrt_m;
                }
            }
            // key features, one stabilizer over all real positions
            let mut c = T::neg_infinity();
            for n in 0..seq {
                let r = (b * seq + n) * hidden + col;
                project(w, &op.kp[r..r + dh], &mut ak[n * m..(n + 1) * m]);
                if mask[b * seq + n] {
                    c = ak[n * m..(n + 1) * m].iter().fold(c, |a, &x| a.max(x));
                }
            }
            for n in 0..seq {
                let phk = &mut op.phk[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                if mask[b * seq + n] {
                    for (p, &a) in phk.iter_mut().zip(&ak[n * m..(n + 1) * m]) {
                        *p = (a - c).exp() * inv_sqrt_m;
                    }
                }
            }
            let s = &mut op.s[bh * m * dh..(bh + 1) * m * dh];
            let z = &mut op.z[bh * m..(bh + 1) * m];
            for n in 0..seq {
                let phk = &op.phk[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                let r = (b * seq + n) * hidden + col;
                let vn = &v.data()[r..r + dh];
                for j in 0..m {
                    let p = phk[j];
                    if p == T::zero() {
                        continue;
                    }
                    z[j] = z[j] + p;
                    for (sv, &x) in s[j * dh..(j + 1) * dh].iter_mut().zip(vn) {
                        *sv = *sv + p * x;
                    }
                }
            }
            for n in 0..seq {
                let phq = &op.phq[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                let raw = phq
                    .iter()
                    .zip(z.iter())
                    .fold(T::zero(), |a, (&p, &y)| a + p * y);
                let min = T::of(MIN_DENOMINATOR);
                let den = raw.max(min);
                op.den[bh * seq + n] = den;
                op.clamped[bh * seq + n] = raw < min;
                let r = (b * seq + n) * hidden + col;
                let o = &mut out.data_mut()[r..r + dh];
                for j in 0..m {
                    let p = phq[j] / den;
                    for (ov, &sv) in o.iter_mut().zip(&s[j * dh..(j + 1) * dh]) {
                        *ov = *ov + p * sv;
                    }
                }
            }
        }
    }
    Ok((out, op))
}

/// a = W u − ‖u‖²/2
fn project<T: Scalar>(w: &[T], u: &[T], a: &mut [T]) {
    let d = u.len();
    let half_norm = u.iter().fold(T::zero(), |acc, &x| acc + x * x) * T::of(0.5);
    for (j, aj) in a.iter_mut().enumerate() {
        let row = &w[j * d..(j + 1) * d];
        *aj = row
            .iter()
            .zip(u)
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
            - half_norm;
    }
}

/// g_u = Wᵀ g_a − u Σ g_a
fn project_backward<T: Scalar>(w: &[T], u: &[T], ga: &[T], gu: &mut [T]) {
    let d = u.len();
    let total = ga.iter().fold(T::zero(), |a, &x| a + x);
    for (t, g) in gu.iter_mut().enumerate() {
        *g = -u[t] * total;
    }
    for (j, &g) in ga.iter().enumerate() {
        for (o, &x) in gu.iter_mut().zip(&w[j * d..(j + 1) * d]) {
            *o = *o + g * x;
        }
    }
}

impl<T: Scalar> CustomOp<T> for LinearAttention<T> {
    fn name(&self) -> &'static str {
        "linear_attention"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let v = inputs[2];
        let (heads, m, dh) = (
            self.features.heads,
            self.features.features,
            self.features.head_dim,
        );
        let hidden = heads * dh;
        let seq = self.seq;
        let mut gq = Tensor::zeros(output.shape());
        let mut gk = Tensor::zeros(output.shape());
        let mut gv = Tensor::zeros(output.shape());
        let mut g_num = vec![T::zero(); seq * dh];
        let mut g_den = vec![T::zero(); seq];
        let mut gs = vec![T::zero(); m * dh];
        let mut gz = vec![T::zero(); m];
        let mut gb = vec![T::zero(); m];
        let mut gu = vec![T::zero(); dh];
        for b in 0..self.batch {
            for h in 0..heads {
                let w = self.features.block(h);
                let bh = b * heads + h;
                let col = h * dh;
                let s = &self.s[bh * m * dh..(bh + 1) * m * dh];
                let z = &self.z[bh * m..(bh + 1) * m];
                gs.iter_mut().for_each(|x| *x = T::zero());
                gz.iter_mut().for_each(|x| *x = T::zero());
                for n in 0..seq {
                    let r = (b * seq + n) * hidden + col;
                    let den = self.den[bh * seq + n];
                    let g = &grad.data()[r..r + dh];
                    let o = &output.data()[r..r + dh];
                    let gn = &mut g_num[n * dh..(n + 1) * dh];
                    for t in 0..dh {
                        gn[t] = g[t] / den;
                    }
                    g_den[n] = if self.clamped[bh * seq + n] {
                        T::zero()
                    } else {
                        -g.iter().zip(o).fold(T::zero(), |a, (&x, &y)| a + x * y) / den
                    };
                    let phq = &self.phq[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                    for j in 0..m {
                        gz[j] = gz[j] + g_den[n] * phq[j];
                        for t in 0..dh {
                            gs[j * dh + t] = gs[j * dh + t] + phq[j] * gn[t];
                        }
                    }
                }
                for n in 0..seq {
                    let r = (b * seq + n) * hidden + col;
                    let phq = &self.phq[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                    let phk = &self.phk[(bh * seq + n) * m..(bh * seq + n + 1) * m];
                    let gn = &g_num[n * dh..(n + 1) * dh];
                    let vn = &v.data()[r..r + dh];

                    // query path
                    for j in 0..m {
                        let srow = &s[j * dh..(j + 1) * dh];
                        let gp = srow.iter().zip(gn).fold(T::zero(), |a, (&x, &y)| a + x * y)
                            + g_den[n] * z[j];
                        gb[j] = gp * phq[j];
                    }
                    project_backward(w, &self.qp[r..r + dh], &gb, &mut gu);
                    self.table
                        .apply(&gu, n, self.scale, true, &mut gq.data_mut()[r..r + dh]);

                    // value and key paths
                    let gvn = &mut gv.data_mut()[r..r + dh];
                    for j in 0..m {
                        let gsrow = &gs[j * dh..(j + 1) * dh];
                        for t in 0..dh {
                            gvn[t] = gvn[t] + gsrow[t] * phk[j];
                        }
                        let gp = gsrow
                            .iter()
                            .zip(vn)
                            .fold(T::zero(), |a, (&x, &y)| a + x * y)
                            + gz[j];
                        gb[j] = gp * phk[j];
                    }
                    project_backward(w, &self.kp[r..r + dh], &gb, &mut gu);
                    self.table
                        .apply(&gu, n, self.scale, true, &mut gk.data_mut()[r..r + dh]);
                }
            }
        }
        vec![Some(gq), Some(gk), Some(gv)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rotate;
    use crate::numerics::{grad_check_many, GradCheckOptions, Graph};
    use alloc::boxed::Box;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Explicit quadratic form: every weight computed pairwise.
    fn quadratic(
        q: &Tensor<f64>,
        k: &Tensor<f64>,
        v: &Tensor<f64>,
        f: &AttentionFeatures<f64>,
        batch: usize,
        mask: &[bool],
    ) -> Tensor<f64> {
        let (heads, m, dh) = (f.heads, f.features, f.head_dim);
        let hidden = heads * dh;
        let seq = q.rows() / batch;
        let s = Float::powf(dh as f64, -0.25);
        let phi = |w: &[f64], u: &[f64]| -> Vec<f64> {
            let norm: f64 = u.iter().map(|x| x * x).sum::<f64>() / 2.0;
            (0..m)
                .map(|j| {
                    let dot: f64 = (0..dh).map(|t| w[j * dh + t] * u[t]).sum();
                    (dot - norm).exp() / (m as f64).sqrt()
                })
                .collect()
        };
        let mut out = Tensor::zeros(q.shape());
        for b in 0..batch {
            for h in 0..heads {
                let w = f.block(h);
                let slice = |t: &Tensor<f64>, n: usize| -> Vec<f64> {
                    let r = (b * seq + n) * hidden + h * dh;
                    let rot = rotate(&t.data()[r..r + dh], n).unwrap();
                    rot.iter().map(|x| x * s).collect()
                };
                for mi in 0..seq {
                    let fq = phi(w, &slice(q, mi));
                    let mut num = vec![0.0; dh];
                    let mut den = 0.0;
                    for ni in 0..seq {
                        if !mask[b * seq + ni] {
                            continue;
                        }
                        let fk = phi(w, &slice(k, ni));
                        let wmn: f64 = fq.iter().zip(&fk).map(|(a, c)| a * c).sum();
                        let r = (b * seq + ni) * hidden + h * dh;
                        for (n, &x) in num.iter_mut().zip(&v.data()[r..r + dh]) {
                            *n += wmn * x;
                        }
                        den += wmn;
                    }
                    let r = (b * seq + mi) * hidden + h * dh;
                    for (o, n) in out.data_mut()[r..r + dh].iter_mut().zip(&num) {
                        *o = n / den;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_quadratic_form() {
        for (seed, seq) in [(1u64, 16usize), (2, 32), (3, 5)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = AttentionFeatures::random(2, 8, 4, &mut rng);
            let batch = 2;
            let shape = [batch * seq, 8];
            let (q, k, v) = (
                random(&mut rng, &shape),
                random(&mut rng, &shape),
                random(&mut rng, &shape),
            );
            let mask: Vec<bool> = (0..batch * seq).map(|r| r % seq < seq - 2).collect();
            let (fast, _) = linear_attention(&q, &k, &v, &f, batch, &mask).unwrap();
            let slow = quadratic(&q, &k, &v, &f, batch, &mask);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_position_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = AttentionFeatures::random(1, 8, 4, &mut rng);
        let (q, k, v) = (
            random(&mut rng, &[1, 4]),
            random(&mut rng, &[1, 4]),
            random(&mut rng, &[1, 4]),
        );
        let (out, _) = linear_attention(&q, &k, &v, &f, 1, &[true]).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn only_real_position_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = AttentionFeatures::random(2, 8, 2, &mut rng);
        let shape = [6, 4];
        let (q, k, v) = (
            random(&mut rng, &shape),
            random(&mut rng, &shape),
            random(&mut rng, &shape),
        );
        let mask = [false, false, true, false, false, false];
        let (out, _) = linear_attention(&q, &k, &v, &f, 1, &mask).unwrap();
        for t in 0..4 {
            assert!((out.data()[2 * 4 + t] - v.data()[2 * 4 + t]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = AttentionFeatures::random(2, 4, 2, &mut rng);
        let q = random(&mut rng, &[4, 4]);
        let k = random(&mut rng, &[4, 2]);
        assert!(linear_attention(&q, &k, &q, &f, 1, &[true; 4]).is_err());
        assert!(linear_attention(&q, &q, &q, &f, 3, &[true; 4]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..6u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
            let f = AttentionFeatures::random(2, 6, 4, &mut rng);
            let shape = [2 * 5, 8];
            let inputs = [
                random(&mut rng, &shape),
                random(&mut rng, &shape),
                random(&mut rng, &shape),
            ];
            let target = random(&mut rng, &shape);
            let mask: Vec<bool> = (0..10).map(|r| r != 4 && r != 9).collect();
            let err = grad_check_many(
                |g: &mut Graph<f64>, v| {
                    let (out, op) =
                        linear_attention(g.value(v[0]), g.value(v[1]), g.value(v[2]), &f, 2, &mask)
                            .unwrap();
                    let o = g.custom(v, out, Box::new(op));
                    let t = g.constant(target.clone());
                    g.mse(o, t)
                },
                &inputs,
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
