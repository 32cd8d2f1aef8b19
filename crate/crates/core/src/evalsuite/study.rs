use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::probe::{fit_probe, split_triples, LinearProbe, TripleEmbedding};
use super::{generate_families, EvalError};
use crate::model::ModelParams;
use crate::numerics::Scalar;
use crate::smiles::{fingerprint, parse, tanimoto, DEFAULT_FP_WIDTH};
use crate::tokenizer::Vocabulary;
use crate::training::{embed_smiles, greedy_decode_smiles, EmbedMode};

/// Published full-scale figures, reported alongside desk results for context.
pub const REFERENCE_R2: f64 = 0.99;
pub const REFERENCE_MSE: f64 = 0.002;
pub const REFERENCE_MEAN_TANIMOTO: f64 = 0.52;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotResult {
    pub a: String,
    pub b: String,
    pub expected: String,
    pub decoded: String,
    pub tanimoto: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentReport {
    pub mode: &'static str,
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
    pub mse: f64,
    pub mean_tanimoto: f64,
    pub train_triples: usize,
    pub eval_triples: usize,
    pub reference_r2: f64,
    pub reference_mse: f64,
    pub reference_mean_tanimoto: f64,
    pub fewshot: Vec<FewShotResult>,
}

/// Tanimoto between a decoded string and the expected molecule; anything
/// that does not parse scores 0.
pub fn fewshot_tanimoto(decoded: &str, expected: &str) -> f64 {
    let (Ok(d), Ok(e)) = (parse(decoded), parse(expected)) else {
        return 0.0;
    };
    if d.is_empty() {
        return 0.0;
    }
    tanimoto(
        &fingerprint(&d, DEFAULT_FP_WIDTH),
        &fingerprint(&e, DEFAULT_FP_WIDTH),
    )
    .unwrap_or(0.0)
}

/// Fits the probe on one seeded triple per family, validates on the rest,
/// and decodes α·e(a) + β·e(b) + B0 for every held-out pair.
pub fn latent_study<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocabulary,
    mode: EmbedMode,
    seed: u64,
) -> Result<LatentReport, EvalError> {
    let (molecules, triples) = generate_families();
    let emb: Vec<Vec<f64>> = embed_smiles(params, vocab, &molecules, mode)?
        .into_iter()
        .map(|v| v.into_iter().map(Scalar::as_f64).collect())
        .collect();
    let lookup = |s: &str| -> Vec<f64> {
        let i = molecules
            .iter()
            .position(|m| m == s)
            .expect("triple members are family members");
        emb[i].clone()
    };
    let rows: Vec<TripleEmbedding> = triples
        .iter()
        .map(|t| TripleEmbedding {
            a: lookup(&t.a),
            b: lookup(&t.b),
            c: lookup(&t.c),
        })
        .collect();
    let (train, held) = split_triples(&triples, seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let probe: LinearProbe = fit_probe(&pick(&train), &pick(&held))?;

    let fewshot = match mode {
        EmbedMode::Latent => {
            let latents: Vec<Vec<T>> = held
                .iter()
                .map(|&i| {
                    probe
                        .predict(&rows[i].a, &rows[i].b)
                        .into_iter()
                        .map(T::of)
                        .collect()
                })
                .collect();
            let decoded = greedy_decode_smiles(params, vocab, &latents)?;
            held.iter()
                .zip(decoded)
                .map(|(&i, decoded)| {
                    let t = &triples[i];
                    FewShotResult {
                        tanimoto: fewshot_tanimoto(&decoded, &t.c),
                        a: t.a.clone(),
                        b: t.b.clone(),
                        expected: t.c.clone(),
                        decoded,
                    }
                })
                .collect()
        }
        // Pooled states have no decoder path back to tokens.
        EmbedMode::MeanPool => Vec::new(),
    };
    let mean_tanimoto = if fewshot.is_empty() {
        f64::NAN
    } else {
        fewshot.iter().map(|f| f.tanimoto).sum::<f64>() / fewshot.len() as f64
    };
    Ok(LatentReport {
        mode: mode.name(),
        alpha: probe.alpha,
        beta: probe.beta,
        r2: probe.r2,
        mse: probe.mse,
        mean_tanimoto,
        train_triples: train.len(),
        eval_triples: held.len(),
        reference_r2: REFERENCE_R2,
        reference_mse: REFERENCE_MSE,
        reference_mean_tanimoto: REFERENCE_MEAN_TANIMOTO,
        fewshot,
    })
}
