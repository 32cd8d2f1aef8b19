//! Masked-LM and reconstruction objectives and the two-phase schedule.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_masking, MaskingPolicy, TrainError};
use crate::model::{Bound, ModelParams};
use crate::numerics::{Adam, AdamConfig, Graph, Scalar, Var};
use crate::tokenizer::{self, Vocabulary, BOS, EOS, PAD};

/// Mean cross-entropy over the selected positions; 0 with zero gradient
/// when nothing is selected.
pub fn mlm_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u32],
    selected: &[bool],
) -> Result<Var, TrainError> {
    let weights: Vec<T> = selected
        .iter()
        .map(|&s| if s { T::one() } else { T::zero() })
        .collect();
    let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    Ok(g.cross_entropy(logits, &t, &weights)?)
}

/// Logits of the latent round trip over given token states.
pub fn reconstruction_logits<T: Scalar>(
    g: &mut Graph<T>,
    model: &Bound<'_, T>,
    states: Var,
) -> Result<Var, TrainError> {
    let z = model.latent_encode(g, states)?;
    let x = model.latent_decode(g, z)?;
    Ok(model.lm_head(g, x)?)
}

/// Cross-entropy of the latent round trip against the uncorrupted ids,
/// averaged over non-pad positions. With `freeze_encoder` the token states
/// enter as constants.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &Bound<'_, T>,
    ids: &[u32],
    freeze_encoder: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, TrainError> {
    let mut states = model.encode_tokens(g, ids, rng)?;
    if freeze_encoder {
        states = g.detach(states);
    }
    let logits = reconstruction_logits(g, model, states)?;
    let nonpad: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    mlm_loss(g, logits, ids, &nonpad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainSchedule {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Phase-1 probability that a batch goes to the masked-LM objective.
    pub encoder_frac: f64,
    pub batch_size: usize,
    pub mlm_weight: f64,
    pub recon_weight: f64,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        PretrainSchedule {
            phase1_epochs: 20,
            phase2_epochs: 20,
            encoder_frac: 0.95,
            batch_size: 288,
            mlm_weight: 1.0,
            recon_weight: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub schedule: PretrainSchedule,
    pub adam: AdamConfig,
    pub masking: MaskingPolicy,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Mlm,
    Reconstruction,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::Reconstruction => "reconstruction",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: u8,
    pub objective: Objective,
    pub loss: f64,
}

pub(crate) fn check_corpus<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[Vec<u32>],
) -> Result<(), TrainError> {
    let cfg = params.config();
    if corpus.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    for (i, seq) in corpus.iter().enumerate() {
        if seq.len() != cfg.max_len {
            return Err(TrainError::CorpusMismatch(alloc::format!(
                "sequence {i} has {} ids, model expects {}",
                seq.len(),
                cfg.max_len
            )));
        }
        if let Some(&id) = seq.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(TrainError::CorpusMismatch(alloc::format!(
                "sequence {i} holds id {id} outside the vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(())
}

/// Applies one optimizer update from a finished tape. Parameters that
/// received no gradient keep their values and moment estimates.
pub(crate) fn apply_updates<T: Scalar>(
    params: &mut ModelParams<T>,
    adam: &mut Adam<T>,
    g: &Graph<T>,
    vars: &[Var],
    loss: Var,
) -> Result<(), TrainError> {
    let grads = g.backward(loss)?;
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        if let Some(grad) = grads.get(vars[i]) {
            adam.step(i, t, Some(grad));
        }
    }
    Ok(())
}

fn finite(loss: f64, step: usize) -> Result<f64, TrainError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TrainError::NonFinite { step })
    }
}

/// Runs both pre-training phases over framed id sequences. Every loss term
/// is reported through `on_record` as it is produced and also returned.
pub fn pretrain<T: Scalar>(
    mut params: ModelParams<T>,
    corpus: &[Vec<u32>],
    cfg: &PretrainConfig,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<(ModelParams<T>, Vec<LossRecord>), TrainError> {
    check_corpus(&params, corpus)?;
    let sched = &cfg.schedule;
    if sched.batch_size == 0 || !cfg.masking.is_valid() {
        return Err(TrainError::InvalidConfig(String::from(
            "batch size must be positive and masking fractions must sum to 1",
        )));
    }
    let vocab = params.config().vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, params.tensors().iter().map(|t| t.numel()));
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    let phases = [(1u8, sched.phase1_epochs), (2u8, sched.phase2_epochs)];
    for (phase, epochs) in phases {
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(sched.batch_size) {
                step += 1;
                let ids: Vec<u32> = chunk
                    .iter()
                    .flat_map(|&i| corpus[i].iter().copied())
                    .collect();
                let use_mlm = phase == 2 || rng.random::<f64>() < sched.encoder_frac;
                let use_recon = phase == 2 || !use_mlm;

                let mut g = Graph::new();
                let model = Bound::new(&mut g, &params, true);
                let mut terms: Vec<(Objective, Var, f64)> = Vec::with_capacity(2);
                if use_mlm {
                    let (corrupt, selected) = apply_masking(&ids, &cfg.masking, vocab, &mut rng);
                    let x = model.encode_tokens(&mut g, &corrupt, Some(&mut rng))?;
                    let logits = model.lm_head(&mut g, x)?;
                    let l = mlm_loss(&mut g, logits, &ids, &selected)?;
                    terms.push((Objective::Mlm, l, sched.mlm_weight));
                }
                if use_recon {
                    let l = reconstruction_loss(&mut g, &model, &ids, phase == 1, Some(&mut rng))?;
                    terms.push((Objective::Reconstruction, l, sched.recon_weight));
                }
                let vars = model.vars().to_vec();
                let mut total: Option<Var> = None;
                for &(objective, l, w) in &terms {
                    let loss = finite(g.value(l).item().as_f64(), step)?;
                    let rec = LossRecord {
                        step,
                        phase,
                        objective,
                        loss,
                    };
                    on_record(&rec);
                    log.push(rec);
                    let weighted = if terms.len() > 1 {
                        g.scale(l, T::of(w))
                    } else {
                        l
                    };
                    total = Some(match total {
                        Some(t) => g.add(t, weighted)?,
                        None => weighted,
                    });
                }
                let total = total.expect("at least one objective");
                apply_updates(&mut params, &mut adam, &g, &vars, total)?;
            }
        }
    }
    Ok((params, log))
}

/// Which vector represents a molecule downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedMode {
    Latent,
    MeanPool,
}

impl EmbedMode {
    pub fn name(self) -> &'static str {
        match self {
            EmbedMode::Latent => "latent",
            EmbedMode::MeanPool => "mean_pool",
        }
    }
}

/// Eval-mode embeddings of framed id sequences, one per sequence.
pub fn embed<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[Vec<u32>],
    mode: EmbedMode,
) -> Result<Vec<Vec<T>>, TrainError> {
    if corpus.is_empty() {
        return Ok(Vec::new());
    }
    check_corpus(params, corpus)?;
    let ids: Vec<u32> = corpus.iter().flatten().copied().collect();
    let mut g = Graph::new();
    let model = Bound::new(&mut g, params, false);
    let x = model.encode_tokens(&mut g, &ids, None)?;
    let e = match mode {
        EmbedMode::Latent => model.latent_encode(&mut g, x)?,
        EmbedMode::MeanPool => model.mean_pool(&mut g, x, &ids)?,
    };
    let t = g.value(e);
    Ok((0..corpus.len()).map(|r| t.row(r).to_vec()).collect())
}

/// Tokenizes and embeds SMILES strings.
pub fn embed_smiles<T: Scalar, S: AsRef<str>>(
    params: &ModelParams<T>,
    vocab: &Vocabulary,
    smiles: &[S],
    mode: EmbedMode,
) -> Result<Vec<Vec<T>>, TrainError> {
    let corpus = encode_corpus(vocab, smiles, params.config().max_len)?;
    embed(params, &corpus, mode)
}

pub fn encode_corpus<S: AsRef<str>>(
    vocab: &Vocabulary,
    smiles: &[S],
    max_len: usize,
) -> Result<Vec<Vec<u32>>, TrainError> {
    smiles
        .iter()
        .map(|s| {
            let ts = tokenizer::tokenize(s.as_ref())?;
            Ok(tokenizer::encode(&ts, vocab, max_len)?)
        })
        .collect()
}

/// Ids chosen by per-position argmax, trimmed to the span between a leading
/// [BOS] and the first [EOS] or [PAD], with any other specials removed.
pub fn trim_decoded(ids: &[u32]) -> Vec<u32> {
    let body = match ids.first() {
        Some(&BOS) => &ids[1..],
        _ => ids,
    };
    body.iter()
        .copied()
        .take_while(|&id| id != EOS && id != PAD)
        .filter(|&id| !Vocabulary::is_special(id))
        .collect()
}

/// Greedy reconstruction of a batch of latents.
pub fn greedy_decode<T: Scalar>(
    params: &ModelParams<T>,
    latents: &[Vec<T>],
) -> Result<Vec<Vec<u32>>, TrainError> {
    let l = params.config().hidden;
    if latents.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(z) = latents.iter().find(|z| z.len() != l) {
        return Err(TrainError::LabelShapeMismatch {
            expected: l,
            got: z.len(),
        });
    }
    let mut g = Graph::new();
    let model = Bound::new(&mut g, params, false);
    let data: Vec<T> = latents.iter().flatten().copied().collect();
    let z = g.constant(crate::numerics::Tensor::new(vec![latents.len(), l], data)?);
    let x = model.latent_decode(&mut g, z)?;
    let logits = model.lm_head(&mut g, x)?;
    let t = g.value(logits);
    let d = params.config().max_len;
    Ok((0..latents.len())
        .map(|b| {
            let ids: Vec<u32> = (0..d).map(|n| argmax(t.row(b * d + n)) as u32).collect();
            trim_decoded(&ids)
        })
        .collect())
}

pub fn greedy_decode_smiles<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocabulary,
    latents: &[Vec<T>],
) -> Result<Vec<String>, TrainError> {
    greedy_decode(params, latents)?
        .iter()
        .map(|ids| Ok(tokenizer::decode(ids, vocab)?))
        .collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of masked positions whose eval-mode argmax equals the original
/// token, over `rounds` seeded masking draws of the corpus.
pub fn masked_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[Vec<u32>],
    policy: &MaskingPolicy,
    rounds: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    check_corpus(params, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u32> = corpus.iter().flatten().copied().collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for _ in 0..rounds {
        let (corrupt, selected) = apply_masking(&ids, policy, params.config().vocab_size, &mut rng);
        let mut g = Graph::new();
        let model = Bound::new(&mut g, params, false);
        let x = model.encode_tokens(&mut g, &corrupt, None)?;
        let logits = model.lm_head(&mut g, x)?;
        let t = g.value(logits);
        for (r, &s) in selected.iter().enumerate() {
            if s {
                total += 1;
                hit += usize::from(argmax(t.row(r)) as u32 == ids[r]);
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    })
}

/// Fraction of sequences whose greedy latent round trip reproduces them.
pub fn reconstruction_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    corpus: &[Vec<u32>],
) -> Result<f64, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let z = embed(params, corpus, EmbedMode::Latent)?;
    let decoded = greedy_decode(params, &z)?;
    let hits = corpus
        .iter()
        .zip(&decoded)
        .filter(|(ids, dec)| trim_decoded(ids) == **dec)
        .count();
    Ok(hits as f64 / corpus.len() as f64)
}
