use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::EvalError;
use crate::smiles::{
    canonicalize, check_valence, fingerprint, parse, scaffold, tanimoto, Fingerprint,
    DEFAULT_FP_WIDTH,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationMetrics {
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub snn: f64,
    pub scaf: f64,
    pub int_div: f64,
}

struct Valid {
    canonical: String,
    fp: Fingerprint,
    scaffold: String,
}

fn analyse(smiles: &str) -> Option<Valid> {
    let g = parse(smiles).ok()?;
    if g.is_empty() {
        return None;
    }
    check_valence(&g).ok()?;
    let canonical = canonicalize(&g).ok()?;
    let s = scaffold(&g);
    let scaffold = if s.is_empty() {
        String::new()
    } else {
        canonicalize(&s).ok()?
    };
    Some(Valid {
        canonical,
        fp: fingerprint(&g, DEFAULT_FP_WIDTH),
        scaffold,
    })
}

fn sim(a: &Fingerprint, b: &Fingerprint) -> f64 {
    tanimoto(a, b).unwrap_or(0.0)
}

fn scaffold_counts(set: &[Valid]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for v in set.iter().filter(|v| !v.scaffold.is_empty()) {
        *m.entry(v.scaffold.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

/// Validity, uniqueness and novelty are fractions of the generated list;
/// SNN, IntDiv and Scaf only look at valid molecules. IntDiv averages over
/// distinct pairs and is 0 with fewer than two valid molecules; acyclic
/// molecules contribute no scaffold.
pub fn generation_metrics<S: AsRef<str>>(
    generated: &[S],
    reference: &[S],
) -> Result<GenerationMetrics, EvalError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let gen: Vec<Valid> = generated
        .iter()
        .filter_map(|s| analyse(s.as_ref()))
        .collect();
    let refs: Vec<Valid> = reference
        .iter()
        .filter_map(|s| analyse(s.as_ref()))
        .collect();
    let validity = gen.len() as f64 / generated.len() as f64;
    let unique: BTreeSet<&str> = gen.iter().map(|v| v.canonical.as_str()).collect();
    let known: BTreeSet<&str> = refs.iter().map(|v| v.canonical.as_str()).collect();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let uniqueness = ratio(unique.len(), gen.len());
    let novelty = ratio(
        unique.iter().filter(|c| !known.contains(*c)).count(),
        unique.len(),
    );

    let snn = if gen.is_empty() || refs.is_empty() {
        0.0
    } else {
        gen.iter()
            .map(|g| refs.iter().map(|r| sim(&g.fp, &r.fp)).fold(0.0, f64::max))
            .sum::<f64>()
            / gen.len() as f64
    };

    let int_div = if gen.len() < 2 {
        0.0
    } else {
        let (mut total, mut pairs) = (0.0, 0usize);
        for i in 0..gen.len() {
            for j in i + 1..gen.len() {
                total += sim(&gen[i].fp, &gen[j].fp);
                pairs += 1;
            }
        }
        1.0 - total / pairs as f64
    };

    let (cg, cr) = (scaffold_counts(&gen), scaffold_counts(&refs));
    let dot: f64 = cg
        .iter()
        .filter_map(|(k, a)| cr.get(k).map(|b| a * b))
        .sum();
    let norm =
        |m: &BTreeMap<&str, f64>| num_traits::Float::sqrt(m.values().map(|x| x * x).sum::<f64>());
    let (ng, nr) = (norm(&cg), norm(&cr));
    let scaf = if ng == 0.0 || nr == 0.0 {
        0.0
    } else {
        dot / (ng * nr)
    };

    Ok(GenerationMetrics {
        validity,
        uniqueness,
        novelty,
        snn,
        scaf,
        int_div,
    })
}
