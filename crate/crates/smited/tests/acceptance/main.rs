//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

#[allow(dead_code)]
#[path = "../../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smited::checkpoint::{self, decode, encode, model_container, params_from_container};
use smited::{diagnostics, Category, Error};
use smited_core::curation::{canonical_form, curate};
use smited_core::evalsuite::{
    family_member, fit_probe, generate_families, latent_study, Family, TripleEmbedding, FAMILIES,
    MAX_CHAIN,
};
use smited_core::model::{
    linear_attention, rotate_into, AttentionFeatures, ModelConfig, ModelParams,
};
use smited_core::moe::{gate, moe_finetune, top_k, MoeModel};
use smited_core::numerics::{AdamConfig, Graph, Tensor};
use smited_core::smiles::{canonicalize, parse, tanimoto, write_smiles, Fingerprint};
use smited_core::tokenizer::{build_vocab, Vocabulary, BOS, EOS, MASK, NUM_SPECIAL, PAD};
use smited_core::training::{
    apply_masking, encode_corpus, masked_accuracy, pretrain, reconstruction_accuracy, roc_auc,
    EmbedMode, FinetuneConfig, FinetuneHead, MaskingPolicy, Objective, PretrainConfig,
    PretrainSchedule, Targets, Task,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(n: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &result {
        Ok(d) => println!("criterion {n} {name}: PASS ({d}; {secs:.1}s)"),
        Err(d) => println!("criterion {n} {name}: FAIL ({d}; {secs:.1}s)"),
    }
    result.is_ok()
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = diagnostics::run_suite(20).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .ok_or("no checks ran")?;
    let ops: BTreeSet<&str> = results.iter().map(|r| r.name.as_str()).collect();
    ensure(results.iter().all(|r| r.passed()), || {
        format!(
            "{} seed {} has rel err {:e}",
            worst.name, worst.seed, worst.max_rel_err
        )
    })?;
    ensure(ops.contains("model_2layer"), || {
        "model check missing".into()
    })?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} checks over {} ops x 20 seeds, worst {:.2e} ({})",
        results.len(),
        ops.len(),
        worst.max_rel_err,
        worst.name
    ))
}

// ---------------------------------------------------------------- 2

fn oracle_rotate(x: &[f64], pos: f64) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let theta = 10000f64.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = (pos * theta).sin_cos();
        out[2 * i] = x[2 * i] * c - x[2 * i + 1] * s;
        out[2 * i + 1] = x[2 * i] * s + x[2 * i + 1] * c;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Explicit quadratic form: every query against every real key.
fn explicit_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    f: &AttentionFeatures<f64>,
    batch: usize,
    mask: &[bool],
) -> Vec<f64> {
    let (heads, m, dh) = (f.heads, f.features, f.head_dim);
    let hidden = heads * dh;
    let seq = mask.len() / batch;
    let scale = (dh as f64).powf(-0.25);
    let phi = |w: &[f64], u: &[f64]| -> Vec<f64> {
        let half = dot(u, u) / 2.0;
        (0..m)
            .map(|j| (dot(&w[j * dh..(j + 1) * dh], u) - half).exp() / (m as f64).sqrt())
            .collect()
    };
    let mut out = vec![0.0; q.len()];
    for b in 0..batch {
        for h in 0..heads {
            let w = &f.w[h * m * dh..(h + 1) * m * dh];
            let at = |t: &[f64], n: usize| -> Vec<f64> {
                let r = (b * seq + n) * hidden + h * dh;
                let rotated = oracle_rotate(&t[r..r + dh], n as f64);
                rotated.iter().map(|x| x * scale).collect()
            };
            for n in 0..seq {
                let pq = phi(w, &at(q, n));
                let mut num = vec![0.0; dh];
                let mut den = 0.0;
                for j in 0..seq {
                    if !mask[b * seq + j] {
                        continue;
                    }
                    let a = dot(&pq, &phi(w, &at(k, j)));
                    let r = (b * seq + j) * hidden + h * dh;
                    for (o, x) in num.iter_mut().zip(&v[r..r + dh]) {
                        *o += a * x;
                    }
                    den += a;
                }
                let r = (b * seq + n) * hidden + h * dh;
                for (o, x) in out[r..r + dh].iter_mut().zip(&num) {
                    *o = x / den;
                }
            }
        }
    }
    out
}

fn attention() -> Outcome {
    let mut worst_attn = 0.0f64;
    let mut cases = 0;
    for seed in 0..4u64 {
        for seq in [1usize, 5, 16, 32] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 100 + seq as u64);
            let (heads, m, dh, batch) = (2, 16, 8, 2);
            let hidden = heads * dh;
            let f = AttentionFeatures::<f64>::random(heads, m, dh, &mut rng);
            let mut rand =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let (q, k, v) = (
                rand(batch * seq * hidden),
                rand(batch * seq * hidden),
                rand(batch * seq * hidden),
            );
            let lens = [seq, seq.div_ceil(2)];
            let mask: Vec<bool> = (0..batch)
                .flat_map(|b| (0..seq).map(move |n| n < lens[b]))
                .collect();
            let t = |d: &[f64]| Tensor::matrix(batch * seq, hidden, d.to_vec()).unwrap();
            let (fast, _) = linear_attention(&t(&q), &t(&k), &t(&v), &f, batch, &mask)
                .map_err(|e| e.to_string())?;
            let slow = explicit_attention(&q, &k, &v, &f, batch, &mask);
            for (a, b) in fast.data().iter().zip(&slow) {
                worst_attn = worst_attn.max((a - b).abs());
            }
            cases += 1;
        }
    }
    ensure(worst_attn < 1e-6, || {
        format!("attention differs by {worst_attn:e}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_rot = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let d = 2 * rng.random_range(1..=32usize);
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (m, n) = (rng.random_range(0..512usize), rng.random_range(0..512usize));
        let rot = |x: &[f64], p: f64| {
            let mut out = vec![0.0; x.len()];
            rotate_into(x, p, &mut out);
            out
        };
        let lhs = dot(&rot(&q, m as f64), &rot(&k, n as f64));
        let rhs = dot(&q, &rot(&k, n as f64 - m as f64));
        worst_rot = worst_rot.max((lhs - rhs).abs());
        for (a, b) in rot(&k, n as f64).iter().zip(oracle_rotate(&k, n as f64)) {
            worst_oracle = worst_oracle.max((a - b).abs());
        }
    }
    ensure(worst_rot < 1e-7, || {
        format!("rotary identity off by {worst_rot:e}")
    })?;
    ensure(worst_oracle < 1e-12, || {
        format!("rotation differs from the reference by {worst_oracle:e}")
    })?;
    Ok(format!(
        "{cases} attention cases max diff {worst_attn:.1e}; 100 rotary pairs max diff {worst_rot:.1e}"
    ))
}

// ---------------------------------------------------------------- 3

fn masking() -> Outcome {
    let vocab = 1005usize;
    let policy = MaskingPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut maskable, mut selected, mut masked, mut random, mut kept) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut special_hits = 0u64;
    while maskable < 1_000_000 {
        let len = rng.random_range(1..=60usize);
        let mut ids = vec![BOS];
        ids.extend((0..len).map(|_| rng.random_range(NUM_SPECIAL..vocab as u32)));
        ids.push(EOS);
        ids.resize(64, PAD);
        // a few stray specials inside the sequence as well
        ids[rng.random_range(1..=len)] = rng.random_range(0..NUM_SPECIAL);
        let (out, sel) = apply_masking(&ids, &policy, vocab, &mut rng);
        for ((&orig, &new), &s) in ids.iter().zip(&out).zip(&sel) {
            if orig < NUM_SPECIAL {
                special_hits += u64::from(s || new != orig);
                continue;
            }
            maskable += 1;
            if !s {
                special_hits += u64::from(new != orig);
                continue;
            }
            selected += 1;
            if new == MASK {
                masked += 1;
            } else if new == orig {
                kept += 1;
            } else {
                ensure(new >= NUM_SPECIAL && (new as usize) < vocab, || {
                    format!("random replacement {new} is not a regular id")
                })?;
                random += 1;
            }
        }
    }
    ensure(special_hits == 0, || {
        format!("{special_hits} special or unselected ids changed")
    })?;
    let sel = selected as f64 / maskable as f64;
    let fr = |x: u64| x as f64 / selected as f64;
    let (fm, fr_, fk) = (fr(masked), fr(random), fr(kept));
    ensure((sel - 0.15).abs() <= 0.01, || format!("selection {sel:.4}"))?;
    ensure((fm - 0.8).abs() <= 0.01, || format!("mask share {fm:.4}"))?;
    ensure((fr_ - 0.1).abs() <= 0.01, || {
        format!("random share {fr_:.4}")
    })?;
    ensure((fk - 0.1).abs() <= 0.01, || format!("keep share {fk:.4}"))?;

    // phase-one objective routing
    let cfg = ModelConfig {
        vocab_size: 8,
        max_len: 4,
        hidden: 4,
        heads: 1,
        layers: 1,
        dropout: 0.0,
        features: 2,
    };
    let params = ModelParams::<f32>::init(&cfg, 1).map_err(|e| e.to_string())?;
    let pc = PretrainConfig {
        schedule: PretrainSchedule {
            phase1_epochs: 5000,
            phase2_epochs: 0,
            batch_size: 1,
            ..PretrainSchedule::default()
        },
        adam: AdamConfig::default(),
        masking: policy,
        seed: 9,
    };
    let (_, log) =
        pretrain(params, &[vec![BOS, 5, 6, EOS]], &pc, |_| {}).map_err(|e| e.to_string())?;
    let mlm = log.iter().filter(|r| r.objective == Objective::Mlm).count();
    ensure(log.len() == 5000, || {
        format!("{} phase-one records", log.len())
    })?;
    let route = mlm as f64 / 5000.0;
    ensure((route - 0.95).abs() <= 0.01, || {
        format!("masked-LM routing {route:.4}")
    })?;
    Ok(format!(
        "{maskable} maskable tokens: selected {sel:.4}, mask {fm:.4} random {fr_:.4} keep {fk:.4}; \
         specials untouched; phase-one masked-LM share {route:.4}"
    ))
}

// ---------------------------------------------------------------- 4

const CORPUS: [&str; 32] = [
    "CCO",
    "c1ccccc1O",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "O=C(O)CCC(=O)O",
    "NCCc1ccc(O)c(O)c1",
    "CC(N)C(=O)O",
    "C1CCCCC1",
    "c1ccncc1",
    "Clc1ccccc1",
    "CC(C)O",
    "OCC(O)CO",
    "CCN(CC)CC",
    "c1ccc2ccccc2c1",
    "C=CC#N",
    "CCOC(=O)C",
    "O=C1CCCCC1",
    "CS(=O)C",
    "c1ccoc1",
    "c1ccsc1",
    "NC(=O)N",
    "CC#CC",
    "FC(F)(F)c1ccccc1",
    "OC(=O)c1ccccc1",
    "CCCCCCCCO",
    "Brc1ccc(Br)cc1",
    "CC(=O)Nc1ccc(O)cc1",
    "C1COCCN1",
    "CN(C)C=O",
    "CCS",
    "O=[N+]([O-])c1ccccc1",
];

fn overfit_config(phase1: usize, phase2: usize) -> PretrainConfig {
    PretrainConfig {
        schedule: PretrainSchedule {
            phase1_epochs: phase1,
            phase2_epochs: phase2,
            encoder_frac: 0.95,
            batch_size: 32,
            mlm_weight: 1.0,
            recon_weight: 1.0,
        },
        adam: AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        },
        masking: MaskingPolicy::default(),
        seed: 7,
    }
}

struct Overfit {
    vocab: Vocabulary,
    params: ModelParams<f32>,
}

fn overfit(slot: &mut Option<Overfit>) -> Outcome {
    let vocab = build_vocab(CORPUS.iter()).map_err(|e| e.to_string())?;
    let mc = ModelConfig::desk(vocab.len());
    let corpus = encode_corpus(&vocab, &CORPUS, mc.max_len).map_err(|e| e.to_string())?;
    let init = ModelParams::<f32>::init(&mc, 7).map_err(|e| e.to_string())?;

    let t = Instant::now();
    let (params, log) = pretrain(init.clone(), &corpus, &overfit_config(400, 1600), |_| {})
        .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let steps = log.last().map_or(0, |r| r.step);
    let acc = masked_accuracy(&params, &corpus, &MaskingPolicy::default(), 20, 99)
        .map_err(|e| e.to_string())?;
    let rec = reconstruction_accuracy(&params, &corpus).map_err(|e| e.to_string())?;
    *slot = Some(Overfit {
        vocab,
        params: params.clone(),
    });

    let (_, short) =
        pretrain(init, &corpus, &overfit_config(100, 0), |_| {}).map_err(|e| e.to_string())?;
    let prefix: Vec<_> = log.iter().take_while(|r| r.step <= 100).collect();
    let same = prefix.len() == short.len()
        && prefix.iter().zip(&short).all(|(a, b)| {
            a.step == b.step && a.objective == b.objective && a.loss.to_bits() == b.loss.to_bits()
        });

    ensure(steps <= 2000, || format!("{steps} steps"))?;
    ensure(acc >= 0.95, || format!("masked accuracy {acc:.4}"))?;
    ensure(rec >= 0.90, || format!("reconstruction {rec:.4}"))?;
    ensure(secs < 600.0, || format!("training took {secs:.0}s"))?;
    ensure(same, || "rerun loss log differs".into())?;
    Ok(format!(
        "{steps} steps in {secs:.0}s: masked accuracy {acc:.4}, reconstruction {rec:.4}; \
         {} log records reproduced bitwise",
        short.len()
    ))
}

// ---------------------------------------------------------------- 5

fn random_corpus(rng: &mut ChaCha8Rng, pool: &[String]) -> Vec<String> {
    const BROKEN: [&str; 9] = [
        "C(",
        "C1CC",
        "[Zz]",
        "c1cc",
        "CC)",
        "=C",
        "C(C)(C)(C)(C)C",
        "O=O=O",
        "FF(F)F",
    ];
    let n = rng.random_range(0..80);
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => BROKEN[rng.random_range(0..BROKEN.len())].to_string(),
            1 => ["", "  "][rng.random_range(0..2)].to_string(),
            2 => {
                // the same molecule spelled differently
                let s = &pool[rng.random_range(0..pool.len())];
                let g = parse(s).unwrap();
                write_smiles(&g, &common::perm(g.atoms.len(), rng)).unwrap()
            }
            _ => pool[rng.random_range(0..pool.len())].clone(),
        })
        .collect()
}

fn parser() -> Outcome {
    let corpus = common::corpus();
    ensure(corpus.len() == 200, || {
        format!("corpus has {}", corpus.len())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut iso_checked = 0;
    for s in &corpus {
        let g = parse(s).map_err(|e| format!("{s}: {e}"))?;
        let c = canonicalize(&g).map_err(|e| format!("{s}: {e}"))?;
        let again =
            canonicalize(&parse(&c).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(c == again, || {
            format!("not idempotent: {s} -> {c} -> {again}")
        })?;
        for _ in 0..50 {
            let p = common::perm(g.atoms.len(), &mut rng);
            let r = canonicalize(&g.renumbered(&p)).map_err(|e| e.to_string())?;
            ensure(r == c, || format!("renumbering {s} gives {r}, not {c}"))?;
        }
        if g.atoms.len() <= 16 {
            ensure(common::isomorphic(&g, &parse(&c).unwrap()), || {
                format!("{s} -> {c} is not isomorphic")
            })?;
            iso_checked += 1;
        }
    }
    let pool: Vec<String> = corpus.iter().take(60).cloned().collect();
    let corpora = 500;
    for _ in 0..corpora {
        let lines = random_corpus(&mut rng, &pool);
        let mut out = Vec::new();
        let report = curate(&lines, |s| {
            out.push(s.to_string());
            Ok::<(), ()>(())
        })
        .map_err(|_| "sink failed")?;
        let counted = lines.iter().filter(|l| !l.trim().is_empty()).count() as u64;
        let distinct: BTreeSet<&String> = out.iter().collect();
        ensure(
            report.is_conserved()
                && report.input_count == counted
                && report.output_count as usize == out.len()
                && distinct.len() == out.len()
                && out
                    .iter()
                    .all(|s| canonical_form(s).as_deref() == Ok(s.as_str())),
            || format!("conservation broken: {report:?}"),
        )?;
    }
    Ok(format!(
        "200 molecules idempotent and stable under 50 renumberings; {iso_checked} round trips isomorphic; \
         {corpora} random corpora conserved"
    ))
}

// ---------------------------------------------------------------- 6

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        max_len: 6,
        hidden: 8,
        heads: 2,
        layers: 1,
        dropout: 0.0,
        features: 4,
    }
}

struct Clusters {
    inputs: Vec<Vec<f64>>,
    experts: Vec<Vec<Vec<f64>>>,
    values: Vec<f64>,
    cluster: Vec<usize>,
}

/// Expert `c` carries the target in its first coordinate for cluster `c`
/// and noise otherwise.
fn two_clusters(rng: &mut ChaCha8Rng, samples: usize) -> Clusters {
    let (l, w) = (6, 4);
    let mut inputs = Vec::new();
    let mut experts = vec![Vec::new(), Vec::new()];
    let mut values = Vec::new();
    let mut cluster = Vec::new();
    for s in 0..samples {
        let c = s % 2;
        let centre = if c == 0 { 1.5 } else { -1.5 };
        inputs.push(
            (0..l)
                .map(|_| centre + rng.random_range(-0.5..0.5))
                .collect(),
        );
        let t: f64 = rng.random_range(-1.0..1.0);
        for (i, e) in experts.iter_mut().enumerate() {
            e.push(
                (0..w)
                    .map(|j| {
                        if i == c && j == 0 {
                            t
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect(),
            );
        }
        values.push(t);
        cluster.push(c);
    }
    Clusters {
        inputs,
        experts,
        values,
        cluster,
    }
}

fn moe() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut gates = 0;
    for _ in 0..500 {
        let (l, n) = (8, rng.random_range(2..=8usize));
        let k = rng.random_range(1..=n);
        let x: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wg = Tensor::from_fn(&[l, n], |_| rng.random_range(-1.0..1.0));
        let d = gate(&x, &wg, k).map_err(|e| e.to_string())?;
        let dense = d.dense(n);
        let nonzero = dense.iter().filter(|&&w| w != 0.0).count();
        let sum: f64 = dense.iter().sum();
        ensure(nonzero == k && (sum - 1.0).abs() <= 1e-9, || {
            format!("k={k}: {nonzero} nonzero weights summing to {sum}")
        })?;
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = top_k(&logits, k).unwrap().indices;
        let shift = rng.random_range(-10.0..10.0);
        let scale = rng.random_range(0.1..10.0);
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let scaled: Vec<f64> = logits.iter().map(|z| z * scale).collect();
        ensure(top_k(&shifted, k).unwrap().indices == base, || {
            "shift moved top-k".into()
        })?;
        ensure(top_k(&scaled, k).unwrap().indices == base, || {
            "scale moved top-k".into()
        })?;
        gates += 1;
    }

    // inactive experts never touch the output
    let cfg = tiny_config();
    let router = ModelParams::<f64>::init(&cfg, 100).unwrap();
    let experts: Vec<_> = (0..4)
        .map(|i| ModelParams::<f64>::init(&cfg, i).unwrap())
        .collect();
    let model = MoeModel {
        router,
        experts,
        wg: Tensor::from_fn(&[cfg.hidden, 4], |_| rng.random_range(-2.0..2.0)),
        k: 2,
        head: FinetuneHead::init(cfg.hidden, 8, Task::Regress { outputs: 1 }, &mut rng),
        mode: EmbedMode::Latent,
    };
    let mut perturbed_runs = 0;
    for s in 0..12 {
        let len = rng.random_range(1..=4usize);
        let mut ids = vec![BOS];
        ids.extend((0..len).map(|_| rng.random_range(NUM_SPECIAL..10)));
        ids.push(EOS);
        ids.resize(cfg.max_len, PAD);
        let sample = vec![ids];
        let before = model.forward(&sample).map_err(|e| e.to_string())?;
        let active = smited_core::moe::route(
            &model.router,
            &model.experts,
            &model.wg,
            model.k,
            model.mode,
            &sample,
        )
        .map_err(|e| e.to_string())?
        .decisions[0]
            .indices
            .clone();
        let mut other = model.clone();
        for (i, e) in other.experts.iter_mut().enumerate() {
            if !active.contains(&i) {
                for t in e.tensors_mut() {
                    for v in t.data_mut() {
                        *v += rng.random_range(-1.0..1.0) * (1.0 + s as f64);
                    }
                }
            }
        }
        let after = other.forward(&sample).map_err(|e| e.to_string())?;
        ensure(before == after, || format!("sample {s}: output moved"))?;
        perturbed_runs += 1;
    }

    // synthetic two-cluster routing
    let Clusters {
        inputs,
        experts,
        values,
        cluster,
    } = two_clusters(&mut rng, 120);
    let targets = Targets::Values {
        width: 1,
        data: values,
    };
    let fc = FinetuneConfig {
        hidden: 16,
        epochs: 150,
        batch_size: 20,
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        seed: 5,
    };
    let (wg, _, _) = moe_finetune(
        &inputs,
        &experts,
        &targets,
        Task::Regress { outputs: 1 },
        2,
        &fc,
    )
    .map_err(|e| e.to_string())?;
    let score = |inputs: &[Vec<f64>], cluster: &[usize]| {
        let hits = inputs
            .iter()
            .zip(cluster)
            .filter(|(x, &c)| gate(x, &wg, 2).unwrap().indices[0] == c)
            .count();
        hits as f64 / inputs.len() as f64
    };
    let train_acc = score(&inputs, &cluster);
    let held = two_clusters(&mut rng, 200);
    let held_acc = score(&held.inputs, &held.cluster);
    ensure(train_acc >= 0.9 && held_acc >= 0.9, || {
        format!("routing accuracy train {train_acc:.3} held-out {held_acc:.3}")
    })?;
    Ok(format!(
        "{gates} gates exact-k and normalised, top-k invariant; {perturbed_runs} inactive-expert \
         perturbations left outputs identical; two-cluster routing train {train_acc:.3} held-out {held_acc:.3}"
    ))
}

// ---------------------------------------------------------------- 7

fn metrics() -> Outcome {
    let fixed =
        roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    ensure(fixed == 0.75, || format!("reference case gives {fixed}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    let mut worst = 0.0f64;
    while instances < 2000 {
        let n = rng.random_range(2..=100usize);
        let levels = rng.random_range(2..=20u32);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / 7.0)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let pos: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|p| *p.1)
            .map(|p| *p.0)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|p| !*p.1)
            .map(|p| *p.0)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            ensure(roc_auc(&scores, &labels).is_err(), || {
                "single class accepted".into()
            })?;
            continue;
        }
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let brute = wins / (pos.len() * neg.len()) as f64;
        let fast = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((fast - brute).abs());
        instances += 1;
    }
    ensure(worst <= 1e-12, || {
        format!("AUC differs from pair counting by {worst:e}")
    })?;

    let fp = |bits: &[usize]| Fingerprint::from_bits(64, bits.iter().copied());
    let cases: [(&[usize], &[usize], f64); 5] = [
        (&[1, 2, 3], &[2, 3, 4], 0.5),
        (&[1, 2, 3], &[1, 2, 3], 1.0),
        (&[1, 2], &[3, 4], 0.0),
        (&[], &[], 1.0),
        (&[0, 5, 9, 63], &[5, 63], 0.5),
    ];
    for (a, b, want) in cases {
        let got = tanimoto(&fp(a), &fp(b)).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{a:?} vs {b:?}: {got}"))?;
    }
    for _ in 0..1000 {
        let a: BTreeSet<usize> = (0..rng.random_range(1..40))
            .map(|_| rng.random_range(0..256))
            .collect();
        let b: BTreeSet<usize> = (0..rng.random_range(1..40))
            .map(|_| rng.random_range(0..256))
            .collect();
        let want = a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
        let got = tanimoto(
            &Fingerprint::from_bits(256, a.iter().copied()),
            &Fingerprint::from_bits(256, b.iter().copied()),
        )
        .unwrap();
        ensure(got == want, || {
            format!("tanimoto {got} vs set arithmetic {want}")
        })?;
    }

    let mut worst_ce = 0.0f64;
    for v in [2usize, 10, 202, 1005] {
        for c in [-3.0, 0.0, 12.5] {
            let mut g = Graph::<f64>::new();
            let logits = g.constant(Tensor::filled(&[3, v], c));
            let targets = [0, v / 2, v - 1];
            let l = g
                .cross_entropy(logits, &targets, &[1.0; 3])
                .map_err(|e| e.to_string())?;
            worst_ce = worst_ce.max((g.value(l).item() - (v as f64).ln()).abs());
        }
    }
    ensure(worst_ce <= 1e-6, || {
        format!("uniform cross-entropy off by {worst_ce:e}")
    })?;
    Ok(format!(
        "reference AUC 0.75; {instances} random AUC instances match pair counting (max diff {worst:.1e}); \
         1005 Tanimoto cases exact; uniform cross-entropy within {worst_ce:.1e} of ln V"
    ))
}

// ---------------------------------------------------------------- 8

fn compositionality(trained: Option<&Overfit>) -> Outcome {
    let (molecules, triples) = generate_families();
    ensure(molecules.len() == 60 && triples.len() == 120, || {
        format!("{} molecules, {} triples", molecules.len(), triples.len())
    })?;
    let suffix = |f: Family| family_member(f, 1).chars().last().unwrap();
    let chain = |n: usize, s: char| format!("{}{s}", "C".repeat(n));
    let mut want_mol = BTreeSet::new();
    let mut want_tri = BTreeSet::new();
    for f in FAMILIES {
        let s = suffix(f);
        for n in 1..=MAX_CHAIN {
            want_mol.insert(chain(n, s));
        }
        for n in 1..=4 {
            for k in 1..=5 {
                want_tri.insert((chain(n, 'C'), chain(k, s), chain(n + k + 1, s)));
            }
        }
    }
    let got_mol: BTreeSet<String> = molecules.iter().cloned().collect();
    let got_tri: BTreeSet<_> = triples
        .iter()
        .map(|t| (t.a.clone(), t.b.clone(), t.c.clone()))
        .collect();
    ensure(got_mol == want_mol && got_mol.len() == 60, || {
        "molecule set differs".into()
    })?;
    ensure(got_tri == want_tri && got_tri.len() == 120, || {
        "triple set differs".into()
    })?;
    ensure(triples.iter().all(|t| got_mol.contains(&t.c)), || {
        "triple outside family set".into()
    })?;

    // planted linear structure
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (alpha, beta, l) = (0.7, -1.3, 16);
    let b0: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut planted = |n: usize| -> Vec<TripleEmbedding> {
        (0..n)
            .map(|_| {
                let a: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c = (0..l).map(|i| alpha * a[i] + beta * b[i] + b0[i]).collect();
                TripleEmbedding { a, b, c }
            })
            .collect()
    };
    let (train, eval) = (planted(6), planted(114));
    let probe = fit_probe(&train, &eval).map_err(|e| e.to_string())?;
    let b0_err = probe
        .b0
        .iter()
        .zip(&b0)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure(
        (probe.alpha - alpha).abs() < 1e-9 && (probe.beta - beta).abs() < 1e-9 && b0_err < 1e-9,
        || {
            format!(
                "recovered alpha {} beta {} b0 err {b0_err:e}",
                probe.alpha, probe.beta
            )
        },
    )?;
    ensure(1.0 - probe.r2 < 1e-9 && probe.mse < 1e-12, || {
        format!("planted fit r2 {} mse {:e}", probe.r2, probe.mse)
    })?;

    let trained = trained.ok_or("no overfit model (criterion 4 did not finish)")?;
    let mut summary = Vec::new();
    for mode in [EmbedMode::Latent, EmbedMode::MeanPool] {
        let report =
            latent_study(&trained.params, &trained.vocab, mode, 0).map_err(|e| e.to_string())?;
        let json = serde_json::to_value(&report).map_err(|e| e.to_string())?;
        for key in [
            "mode",
            "alpha",
            "beta",
            "r2",
            "mse",
            "mean_tanimoto",
            "train_triples",
            "eval_triples",
            "reference_r2",
            "reference_mse",
            "reference_mean_tanimoto",
            "fewshot",
        ] {
            ensure(json.get(key).is_some(), || {
                format!("{} report lacks {key}", mode.name())
            })?;
        }
        ensure(report.train_triples + report.eval_triples == 120, || {
            "split does not cover 120".into()
        })?;
        if mode == EmbedMode::Latent {
            ensure(report.fewshot.len() == report.eval_triples, || {
                "few-shot list incomplete".into()
            })?;
            ensure(report.mean_tanimoto.is_finite(), || {
                "mean tanimoto missing".into()
            })?;
        }
        summary.push(format!(
            "{}: alpha {:.3} beta {:.3} r2 {:.3} mse {:.4} mean TS {:.3}",
            report.mode, report.alpha, report.beta, report.r2, report.mse, report.mean_tanimoto
        ));
        if mode == EmbedMode::Latent {
            summary.push(format!(
                "references r2 {} mse {} mean TS {}",
                report.reference_r2, report.reference_mse, report.reference_mean_tanimoto
            ));
        }
    }
    Ok(format!(
        "60 molecules / 120 triples exact; planted fit r2 1-{:.1e}, mse {:.1e}; {}",
        1.0 - probe.r2,
        probe.mse,
        summary.join("; ")
    ))
}

// ---------------------------------------------------------------- 9

fn checkpoints(trained: Option<&Overfit>) -> Outcome {
    let params = match trained {
        Some(t) => t.params.clone(),
        None => ModelParams::<f32>::init(&ModelConfig::desk(40), 3).map_err(|e| e.to_string())?,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    checkpoint::save_checkpoint(&path, &params).map_err(|e| e.to_string())?;
    let back = checkpoint::load_checkpoint(&path).map_err(|e| e.to_string())?;
    ensure(
        back.config() == params.config() && back.len() == params.len(),
        || "config changed".into(),
    )?;
    for (a, b) in params.tensors().iter().zip(back.tensors()) {
        let same = a.shape() == b.shape()
            && a.data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || "tensor changed on round trip".into())?;
    }

    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut damaged: Vec<Vec<u8>> = Vec::new();
    for cut in [0, 4, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        damaged.push(bytes[..cut].to_vec());
    }
    let mut extended = bytes.clone();
    extended.push(0);
    damaged.push(extended);
    let mut magic = bytes.clone();
    magic[..8].copy_from_slice(b"NOTSMITE");
    damaged.push(magic);
    for _ in 0..200 {
        let mut b = bytes.clone();
        let i = rng.random_range(0..b.len());
        b[i] ^= 1 << rng.random_range(0..8);
        damaged.push(b);
    }
    for (i, d) in damaged.iter().enumerate() {
        let p = dir.path().join(format!("bad{i}.ckpt"));
        std::fs::write(&p, d).map_err(|e| e.to_string())?;
        match checkpoint::load_checkpoint(&p) {
            Err(e @ Error::CorruptCheckpoint(_)) => ensure(e.category() == Category::Data, || {
                "corruption not a data error".into()
            })?,
            Err(e) => return Err(format!("damaged file {i} gave {e}")),
            Ok(_) => return Err(format!("damaged file {i} was accepted")),
        }
    }

    let mut c = model_container(&params);
    c.config.as_mut().ok_or("no config")?.hidden *= 2;
    let err = params_from_container(decode(&encode(&c)).map_err(|e| e.to_string())?);
    match err {
        Err(e @ Error::ConfigMismatch(_)) => ensure(e.category() == Category::Data, || {
            "mismatch not a data error".into()
        })?,
        other => return Err(format!("inconsistent config gave {other:?}")),
    }
    Ok(format!(
        "{} tensors round-trip bitwise; {} damaged files rejected as corrupt; inconsistent config rejected",
        params.len(),
        damaged.len()
    ))
}

fn main() {
    let mut ok = true;
    ok &= run(1, "gradient correctness", gradients);
    ok &= run(2, "attention equivalence", attention);
    ok &= run(3, "masking statistics", masking);
    let mut trained = None;
    ok &= run(4, "overfit oracle", || overfit(&mut trained));
    ok &= run(5, "parser and canonicalizer", parser);
    ok &= run(6, "mixture of experts", moe);
    ok &= run(7, "metric oracles", metrics);
    ok &= run(8, "compositionality harness", || {
        compositionality(trained.as_ref())
    });
    ok &= run(9, "checkpoint integrity", || checkpoints(trained.as_ref()));
    if !ok {
        std::process::exit(1);
    }
}
