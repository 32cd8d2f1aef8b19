use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{linear_attention, ModelError, ModelParams};
use crate::numerics::{mismatch, Graph, Scalar, Tensor, Var};
use crate::tokenizer::PAD;

/// Model parameters registered on a tape.
pub struct Bound<'p, T> {
    params: &'p ModelParams<T>,
    vars: Vec<Var>,
}

impl<'p, T: Scalar> Bound<'p, T> {
    /// With `train`, trainable tensors become differentiable; otherwise
    /// everything is a constant.
    pub fn new(g: &mut Graph<T>, params: &'p ModelParams<T>, train: bool) -> Bound<'p, T> {
        let vars = params
            .tensors()
            .iter()
            .zip(params.info())
            .map(|(t, info)| {
                if train && info.trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { params, vars }
    }

    pub fn params(&self) -> &'p ModelParams<T> {
        self.params
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, w: usize, b: usize) -> Result<Var, ModelError> {
        let h = g.matmul(x, self.vars[w])?;
        Ok(g.add_bias(h, self.vars[b])?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, gamma: usize, beta: usize) -> Result<Var, ModelError> {
        Ok(g.layernorm(x, self.vars[gamma], self.vars[beta])?)
    }

    fn dropout(
        &self,
        g: &mut Graph<T>,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let p = self.params.config().dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep: Vec<bool> = (0..g.value(x).numel())
                    .map(|_| rng.random::<f64>() >= p)
                    .collect();
                Ok(g.dropout(x, &keep, T::of(p))?)
            }
            _ => Ok(x),
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<usize, ModelError> {
        let cfg = self.params.config();
        if ids.is_empty() || !ids.len().is_multiple_of(cfg.max_len) {
            return Err(ModelError::BadLength {
                expected: cfg.max_len,
                got: ids.len(),
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::UnknownId {
                id: id as usize,
                vocab: cfg.vocab_size,
            });
        }
        Ok(ids.len() / cfg.max_len)
    }

    /// Token states `(batch·D) × L` for `batch` stacked sequences of D ids.
    /// Passing an RNG enables dropout.
    pub fn encode_tokens(
        &self,
        g: &mut Graph<T>,
        ids: &[u32],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let batch = self.check_ids(ids)?;
        let lay = &self.params.layout;
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
        let rows: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
        let mut x = g.embedding(self.vars[lay.embed], &rows)?;
        for (i, l) in lay.layers.iter().enumerate() {
            let q = self.linear(g, x, l.wq, l.bq)?;
            let k = self.linear(g, x, l.wk, l.bk)?;
            let v = self.linear(g, x, l.wv, l.bv)?;
            let features = self.params.features(i);
            let (out, op) =
                linear_attention(g.value(q), g.value(k), g.value(v), &features, batch, &mask)?;
            let a = g.custom(&[q, k, v], out, Box::new(op));
            let a = self.linear(g, a, l.wo, l.bo)?;
            let a = self.dropout(g, a, rng.as_deref_mut())?;
            let h = g.add(x, a)?;
            let h = self.norm(g, h, l.ln1_g, l.ln1_b)?;
            let f = self.linear(g, h, l.ff1_w, l.ff1_b)?;
            let f = g.gelu(f);
            let f = self.linear(g, f, l.ff2_w, l.ff2_b)?;
            let f = self.dropout(g, f, rng.as_deref_mut())?;
            let x2 = g.add(h, f)?;
            x = self.norm(g, x2, l.ln2_g, l.ln2_b)?;
        }
        Ok(x)
    }

    fn block_rows(&self, g: &Graph<T>, x: Var, width: usize) -> Result<usize, ModelError> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != width || s[0] == 0 {
            return Err(mismatch("latent", s, &[0, width]).into());
        }
        Ok(s[0])
    }

    /// Token states `(batch·D) × L` to one latent `L`-vector per sequence,
    /// reading each D×L block flattened row-major.
    pub fn latent_encode(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let cfg = self.params.config();
        let (d, l) = (cfg.max_len, cfg.hidden);
        let rows = self.block_rows(g, x, l)?;
        if rows % d != 0 {
            return Err(mismatch("latent_encode", g.shape(x), &[d, l]).into());
        }
        let lay = &self.params.layout;
        let flat = g.reshape(x, &[rows / d, d * l])?;
        let h = self.linear(g, flat, lay.enc_w1, lay.enc_b1)?;
        let h = g.gelu(h);
        let h = self.norm(g, h, lay.enc_ln_g, lay.enc_ln_b)?;
        Ok(g.matmul(h, self.vars[lay.enc_w2])?)
    }

    /// Latents `batch × L` back to token states `(batch·D) × L`.
    pub fn latent_decode(&self, g: &mut Graph<T>, z: Var) -> Result<Var, ModelError> {
        let cfg = self.params.config();
        let (d, l) = (cfg.max_len, cfg.hidden);
        let batch = self.block_rows(g, z, l)?;
        let lay = &self.params.layout;
        let h = self.linear(g, z, lay.dec_w3, lay.dec_b3)?;
        let h = g.gelu(h);
        let h = self.norm(g, h, lay.dec_ln_g, lay.dec_ln_b)?;
        let h = g.matmul(h, self.vars[lay.dec_w4])?;
        Ok(g.reshape(h, &[batch * d, l])?)
    }

    /// Per-position vocabulary logits.
    pub fn lm_head(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        let l = self.params.config().hidden;
        self.block_rows(g, x, l)?;
        let lay = &self.params.layout;
        let h = self.linear(g, x, lay.head_w, lay.head_b)?;
        let h = g.gelu(h);
        let h = self.norm(g, h, lay.head_ln_g, lay.head_ln_b)?;
        self.linear(g, h, lay.out_w, lay.out_b)
    }

    /// Mean of token states over non-pad positions, one row per sequence.
    pub fn mean_pool(&self, g: &mut Graph<T>, x: Var, ids: &[u32]) -> Result<Var, ModelError> {
        let batch = self.check_ids(ids)?;
        let rows = ids.len();
        let d = self.params.config().max_len;
        let mut pool = Tensor::zeros(&[batch, rows]);
        for b in 0..batch {
            let seq = &ids[b * d..(b + 1) * d];
            let count = seq.iter().filter(|&&id| id != PAD).count().max(1);
            let w = T::one() / T::of(count as f64);
            for (n, &id) in seq.iter().enumerate() {
                if id != PAD {
                    pool.data_mut()[b * rows + b * d + n] = w;
                }
            }
        }
        let p = g.constant(pool);
        Ok(g.matmul(p, x)?)
    }
}
