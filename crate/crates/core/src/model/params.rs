use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{AttentionFeatures, ModelConfig, ModelError};
use crate::numerics::{mismatch, Scalar, Tensor};
use num_traits::Float;

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    /// Uniform in ±1/√fan_in.
    Weight(usize),
    Zero,
    One,
    Features,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerLayout {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub features: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub embed: usize,
    pub layers: Vec<LayerLayout>,
    pub enc_w1: usize,
    pub enc_b1: usize,
    pub enc_ln_g: usize,
    pub enc_ln_b: usize,
    pub enc_w2: usize,
    pub dec_w3: usize,
    pub dec_b3: usize,
    pub dec_ln_g: usize,
    pub dec_ln_b: usize,
    pub dec_w4: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub head_ln_g: usize,
    pub head_ln_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// All model tensors in a fixed order. Attention feature matrices are frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    info: Vec<ParamInfo>,
    tensors: Vec<Tensor<T>>,
    pub(crate) layout: Layout,
}

struct Builder<'a, T, F> {
    info: Vec<ParamInfo>,
    tensors: Vec<Tensor<T>>,
    make: &'a mut F,
}

impl<T: Scalar, F: FnMut(Init, &[usize]) -> Tensor<T>> Builder<'_, T, F> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.info.push(ParamInfo {
            name,
            shape: shape.to_vec(),
            trainable: !matches!(init, Init::Features),
        });
        self.tensors.push((self.make)(init, shape));
        self.tensors.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.add(
            format!("{prefix}.w"),
            &[fan_in, fan_out],
            Init::Weight(fan_in),
        );
        let b = self.add(format!("{prefix}.b"), &[fan_out], Init::Zero);
        (w, b)
    }

    fn norm(&mut self, prefix: &str, width: usize) -> (usize, usize) {
        let g = self.add(format!("{prefix}.gamma"), &[width], Init::One);
        let b = self.add(format!("{prefix}.beta"), &[width], Init::Zero);
        (g, b)
    }
}

impl<T: Scalar> ModelParams<T> {
    fn build(
        config: &ModelConfig,
        mut make: impl FnMut(Init, &[usize]) -> Tensor<T>,
    ) -> Result<ModelParams<T>, ModelError> {
        config.validate()?;
        let (v, l, d) = (config.vocab_size, config.hidden, config.max_len);
        let mut b = Builder {
            info: Vec::new(),
            tensors: Vec::new(),
            make: &mut make,
        };
        let embed = b.add("embed".into(), &[v, l], Init::Embedding);
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("layer{i}");
            let (wq, bq) = b.linear(&format!("{p}.q"), l, l);
            let (wk, bk) = b.linear(&format!("{p}.k"), l, l);
            let (wv, bv) = b.linear(&format!("{p}.v"), l, l);
            let (wo, bo) = b.linear(&format!("{p}.o"), l, l);
            let (ln1_g, ln1_b) = b.norm(&format!("{p}.ln1"), l);
            let (ff1_w, ff1_b) = b.linear(&format!("{p}.ff1"), l, config.ffn_dim());
            let (ff2_w, ff2_b) = b.linear(&format!("{p}.ff2"), config.ffn_dim(), l);
            let (ln2_g, ln2_b) = b.norm(&format!("{p}.ln2"), l);
            let features = b.add(
                format!("{p}.features"),
                &[config.heads, config.features, config.head_dim()],
                Init::Features,
            );
            layers.push(LayerLayout {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
                ln2_g,
                ln2_b,
                features,
            });
        }
        let (enc_w1, enc_b1) = b.linear("latent.enc1", d * l, l);
        let (enc_ln_g, enc_ln_b) = b.norm("latent.enc_ln", l);
        let enc_w2 = b.add("latent.enc2.w".into(), &[l, l], Init::Weight(l));
        let (dec_w3, dec_b3) = b.linear("latent.dec1", l, l);
        let (dec_ln_g, dec_ln_b) = b.norm("latent.dec_ln", l);
        let dec_w4 = b.add("latent.dec2.w".into(), &[l, d * l], Init::Weight(l));
        let (head_w, head_b) = b.linear("head.dense", l, l);
        let (head_ln_g, head_ln_b) = b.norm("head.ln", l);
        let (out_w, out_b) = b.linear("head.out", l, v);
        let layout = Layout {
            embed,
            layers,
            enc_w1,
            enc_b1,
            enc_ln_g,
            enc_ln_b,
            enc_w2,
            dec_w3,
            dec_b3,
            dec_ln_g,
            dec_ln_b,
            dec_w4,
            head_w,
            head_b,
            head_ln_g,
            head_ln_b,
            out_w,
            out_b,
        };
        Ok(ModelParams {
            config: config.clone(),
            info: b.info,
            tensors: b.tensors,
            layout,
        })
    }

    /// Fresh parameters from a seeded ChaCha8 stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0, 0.02).expect("valid normal");
        ModelParams::build(config, |init, shape| match init {
            Init::Embedding => Tensor::from_fn(shape, |_| T::of(embed.sample(&mut rng))),
            Init::Weight(fan_in) => {
                let a = 1.0 / Float::sqrt(fan_in as f64);
                Tensor::from_fn(shape, |_| T::of(rng.random_range(-a..a)))
            }
            Init::Zero => Tensor::zeros(shape),
            Init::One => Tensor::filled(shape, T::one()),
            Init::Features => Tensor::from_fn(shape, |_| T::of(StandardNormal.sample(&mut rng))),
        })
    }

    /// All-zero parameters with the layout of `config`, to be filled by
    /// [`ModelParams::set`].
    pub fn zeros(config: &ModelConfig) -> Result<ModelParams<T>, ModelError> {
        ModelParams::build(config, |_, shape| Tensor::zeros(shape))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.info.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces a named tensor; the shape must match the layout.
    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<(), ModelError> {
        let i = self
            .index_of(name)
            .ok_or_else(|| ModelError::InvalidConfig(format!("no parameter named {name}")))?;
        if t.shape() != self.info[i].shape.as_slice() {
            return Err(mismatch("set parameter", &self.info[i].shape, t.shape()).into());
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn features(&self, layer: usize) -> AttentionFeatures<T> {
        AttentionFeatures::from_tensor(&self.tensors[self.layout.layers[layer].features])
            .expect("layout shape")
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            info: self.info.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            max_len: 8,
            hidden: 16,
            heads: 2,
            layers: 2,
            dropout: 0.0,
            features: 4,
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::<f32>::init(&tiny(), 3).unwrap();
        let b = ModelParams::<f32>::init(&tiny(), 3).unwrap();
        let c = ModelParams::<f32>::init(&tiny(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn names_are_unique_and_features_frozen() {
        let p = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        for (i, a) in p.info().iter().enumerate() {
            assert!(p.info()[i + 1..].iter().all(|b| b.name != a.name));
            assert_eq!(a.trainable, !a.name.ends_with(".features"));
        }
        assert_eq!(p.get("latent.enc1.w").unwrap().shape(), &[8 * 16, 16]);
        assert_eq!(p.get("layer1.features").unwrap().shape(), &[2, 4, 8]);
    }

    #[test]
    fn layernorm_and_bias_init() {
        let p = ModelParams::<f64>::init(&tiny(), 1).unwrap();
        assert!(p
            .get("head.ln.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));
        assert!(p
            .get("layer0.q.b")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        let bound = 1.0 / 4.0;
        assert!(p
            .get("layer0.q.w")
            .unwrap()
            .data()
            .iter()
            .all(|x| x.abs() <= bound));
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny();
        c.heads = 3;
        assert!(matches!(
            ModelParams::<f64>::init(&c, 0),
            Err(ModelError::InvalidConfig(_))
        ));
        c.hidden = 6;
        c.heads = 2;
        assert_eq!(
            ModelParams::<f64>::init(&c, 0).unwrap_err(),
            ModelError::OddHeadDim(3)
        );
    }

    #[test]
    fn set_checks_shape() {
        let mut p = ModelParams::<f64>::zeros(&tiny()).unwrap();
        assert!(p.set("embed", Tensor::zeros(&[10, 16])).is_ok());
        assert!(p.set("embed", Tensor::zeros(&[10, 15])).is_err());
        assert!(p.set("nope", Tensor::zeros(&[1])).is_err());
    }
}
