use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, FamilyTriple, FAMILIES};

/// Embeddings of one triple's three molecules.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleEmbedding {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// α·a + β·b + B0 ≈ c, with held-out fit statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub alpha: f64,
    pub beta: f64,
    pub b0: Vec<f64>,
    /// Pooled over coordinates, each coordinate centred on its own mean.
    pub r2: f64,
    pub mse: f64,
}

impl LinearProbe {
    pub fn predict(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .zip(&self.b0)
            .map(|((x, y), z)| self.alpha * x + self.beta * y + z)
            .collect()
    }
}

/// One seeded triple per family for fitting; everything else for
/// validation. Returns index lists into `triples`.
pub fn split_triples(triples: &[FamilyTriple], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(FAMILIES.len());
    for f in FAMILIES {
        let members: Vec<usize> = (0..triples.len())
            .filter(|&i| triples[i].family == f)
            .collect();
        if !members.is_empty() {
            train.push(members[rng.random_range(0..members.len())]);
        }
    }
    let held = (0..triples.len()).filter(|i| !train.contains(i)).collect();
    (train, held)
}

fn width(rows: &[TripleEmbedding]) -> Result<usize, EvalError> {
    let l = rows.first().ok_or(EvalError::EmptyInput)?.a.len();
    for r in rows {
        for v in [&r.a, &r.b, &r.c] {
            if v.len() != l {
                return Err(EvalError::WidthMismatch {
                    expected: l,
                    got: v.len(),
                });
            }
        }
    }
    Ok(l)
}

/// Least squares over the stacked vector equations of `train`, scored on
/// `eval`. B0 is free per coordinate, which reduces α, β to 2×2 normal
/// equations on per-coordinate centred data.
pub fn fit_probe(
    train: &[TripleEmbedding],
    eval: &[TripleEmbedding],
) -> Result<LinearProbe, EvalError> {
    let l = width(train)?;
    if !eval.is_empty() && width(eval)? != l {
        return Err(EvalError::WidthMismatch {
            expected: l,
            got: eval[0].a.len(),
        });
    }
    let t = train.len() as f64;
    let mean = |f: fn(&TripleEmbedding) -> &Vec<f64>| -> Vec<f64> {
        (0..l)
            .map(|j| train.iter().map(|r| f(r)[j]).sum::<f64>() / t)
            .collect()
    };
    let (ma, mb, mc) = (mean(|r| &r.a), mean(|r| &r.b), mean(|r| &r.c));
    let (mut saa, mut sbb, mut sab, mut sac, mut sbc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in train {
        for j in 0..l {
            let (a, b, c) = (r.a[j] - ma[j], r.b[j] - mb[j], r.c[j] - mc[j]);
            saa += a * a;
            sbb += b * b;
            sab += a * b;
            sac += a * c;
            sbc += b * c;
        }
    }
    let det = saa * sbb - sab * sab;
    if det.is_nan() || det <= 1e-12 * (saa * sbb).max(f64::MIN_POSITIVE) {
        return Err(EvalError::DegenerateSystem);
    }
    let alpha = (sac * sbb - sbc * sab) / det;
    let beta = (sbc * saa - sac * sab) / det;
    let b0: Vec<f64> = (0..l)
        .map(|j| mc[j] - alpha * ma[j] - beta * mb[j])
        .collect();
    let mut probe = LinearProbe {
        alpha,
        beta,
        b0,
        r2: f64::NAN,
        mse: f64::NAN,
    };
    if !eval.is_empty() {
        let n = eval.len() as f64;
        let ec: Vec<f64> = (0..l)
            .map(|j| eval.iter().map(|r| r.c[j]).sum::<f64>() / n)
            .collect();
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for r in eval {
            let pred = probe.predict(&r.a, &r.b);
            for j in 0..l {
                ss_res += (pred[j] - r.c[j]) * (pred[j] - r.c[j]);
                ss_tot += (r.c[j] - ec[j]) * (r.c[j] - ec[j]);
            }
        }
        probe.mse = ss_res / (n * l as f64);
        probe.r2 = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            f64::NAN
        };
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsuite::generate_families;
    use alloc::vec;

    fn random_vec(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
        (0..l).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn recovers_planted_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = 12;
        let bias = random_vec(&mut rng, l);
        let make = |rng: &mut ChaCha8Rng| {
            let a = random_vec(rng, l);
            let b = random_vec(rng, l);
            let c = (0..l).map(|j| 0.5 * a[j] + 0.5 * b[j] + bias[j]).collect();
            TripleEmbedding { a, b, c }
        };
        let train: Vec<_> = (0..6).map(|_| make(&mut rng)).collect();
        let eval: Vec<_> = (0..114).map(|_| make(&mut rng)).collect();
        let p = fit_probe(&train, &eval).unwrap();
        assert!((p.alpha - 0.5).abs() < 1e-9 && (p.beta - 0.5).abs() < 1e-9);
        for (x, y) in p.b0.iter().zip(&bias) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(1.0 - p.r2 < 1e-9);
        assert!(p.mse < 1e-12);
    }

    #[test]
    fn noise_does_not_generalize() {
        let mut below = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut make = || TripleEmbedding {
                a: random_vec(&mut rng, 8),
                b: random_vec(&mut rng, 8),
                c: random_vec(&mut rng, 8),
            };
            let train: Vec<_> = (0..6).map(|_| make()).collect();
            let eval: Vec<_> = (0..114).map(|_| make()).collect();
            let p = fit_probe(&train, &eval).unwrap();
            assert!(p.r2 < 0.1, "{}", p.r2);
            below += usize::from(p.r2 < 0.0);
        }
        assert!(below >= 15);
    }

    #[test]
    fn collinear_design_rejected() {
        let row = |s: f64| TripleEmbedding {
            a: vec![s, 2.0 * s],
            b: vec![2.0 * s, 4.0 * s],
            c: vec![s, s],
        };
        let train = [row(1.0), row(2.0), row(3.0)];
        assert_eq!(fit_probe(&train, &[]), Err(EvalError::DegenerateSystem));
        assert_eq!(fit_probe(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn split_takes_one_per_family() {
        let (_, triples) = generate_families();
        let (train, held) = split_triples(&triples, 3);
        assert_eq!(train.len(), 6);
        assert_eq!(held.len(), 114);
        for (i, f) in FAMILIES.iter().enumerate() {
            assert_eq!(triples[train[i]].family, *f);
        }
        assert_eq!(split_triples(&triples, 3), (train, held));
    }
}
