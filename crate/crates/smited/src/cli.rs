//! Command-line driver. Machine-readable results go to the paths given by
//! flags; stdout carries short summaries.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use smited_core::evalsuite::{generation_metrics, latent_study};
use smited_core::model::ModelParams;
use smited_core::moe::{check_experts, moe_finetune, route, MoeModel};
use smited_core::tokenizer::{self, build_vocab, Vocabulary};
use smited_core::training::{
    embed, encode_corpus, finetune_end_to_end, finetune_frozen, greedy_decode_smiles, mae,
    pretrain, rmse, roc_auc, EmbedMode, Targets, Task,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint, save_gate, save_head};
use crate::config::{Effective, RunConfig};
use crate::curate::{curate_file, read_smiles, report_text};
use crate::diagnostics::{run_suite, TOLERANCE};
use crate::error::{Category, Error, Result};
use crate::formats::{
    class_labels, embeddings_csv, loss_log_csv, read_json, read_labeled, table, write_json,
    write_text,
};
use crate::vocab_io::{read_vocab, write_vocab};

#[derive(Parser, Debug)]
#[command(name = "smited", version, about = "Chemical language model pipeline")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Canonicalize, validate and deduplicate a SMILES corpus.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON report path.
        #[arg(long)]
        report: PathBuf,
    },
    /// Build a token vocabulary (TSV) from a corpus.
    BuildVocab {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write framed token ids, one molecule per line.
    Tokenize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = tokenizer::DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Two-phase pre-training; writes model.ckpt, loss_log.csv and the
    /// effective config into --out-dir.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Vocabulary to use; built from the corpus when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Embed molecules into CSV rows "smiles,e0..".
    Embed {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Latent)]
        mode: Mode,
    },
    /// Greedy-decode latent vectors from an embedding CSV.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a task head on a labelled CSV.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        task: TaskArgs,
        /// Also update the encoder.
        #[arg(long)]
        end_to_end: bool,
    },
    /// Train the gate and head of an expert ensemble.
    MoeFinetune {
        #[command(flatten)]
        run: RunArgs,
        /// Expert manifest (JSON).
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Linear compositionality probe and few-shot decoding on carbon-chain
    /// families.
    EvalLatent {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = StudyMode::Both)]
        mode: StudyMode,
        /// Seed for choosing the fitting triples.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validity, uniqueness, novelty, SNN, Scaf and IntDiv.
    GenMetrics {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation and a
    /// small model.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML run config; the desk profile is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Args, Debug)]
pub struct TaskArgs {
    /// Labelled CSV with a smiles column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskKind,
    /// Target column (repeatable); every non-smiles column when absent.
    #[arg(long)]
    pub target: Vec<String>,
    #[arg(long, value_enum, default_value_t = Mode::Latent)]
    pub mode: Mode,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Latent,
    MeanPool,
}

impl From<Mode> for EmbedMode {
    fn from(m: Mode) -> EmbedMode {
        match m {
            Mode::Latent => EmbedMode::Latent,
            Mode::MeanPool => EmbedMode::MeanPool,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StudyMode {
    Latent,
    MeanPool,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskKind {
    Classify,
    Regress,
}

/// Expert ensemble description. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertManifest {
    pub experts: Vec<PathBuf>,
    pub k: usize,
    /// Encoder whose mean-pooled states feed the gate; the first expert
    /// when absent.
    #[serde(default)]
    pub router: Option<PathBuf>,
    /// Trained gate, filled in by moe-finetune.
    #[serde(default)]
    pub gate: Option<PathBuf>,
    #[serde(default)]
    pub head: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn out_dir(run: &RunArgs, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| {
            Error::Usage("an output directory is required (--out-dir or paths.out)".into())
        })?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn load_config(run: &RunArgs) -> Result<RunConfig> {
    match &run.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_model(m: &ModelArgs) -> Result<(ModelParams<f32>, Vocabulary)> {
    let params = load_checkpoint(&m.checkpoint)?;
    let vocab = read_vocab(&m.vocab)?;
    if vocab.len() != params.config().vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            vocab.len(),
            params.config().vocab_size
        )));
    }
    Ok((params, vocab))
}

fn targets_for(task: &TaskArgs) -> Result<(Vec<String>, Targets, Task, Vec<String>)> {
    let data = read_labeled(&task.data, &task.target)?;
    let (targets, kind) = match task.task {
        TaskKind::Classify => {
            let labels = class_labels(&data, &task.data)?;
            let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
            (Targets::Classes(labels), Task::Classify { classes })
        }
        TaskKind::Regress => (
            Targets::Values {
                width: data.width(),
                data: data.values.clone(),
            },
            Task::Regress {
                outputs: data.width(),
            },
        ),
    };
    Ok((data.smiles, targets, kind, data.columns))
}

/// Training-set scores of head outputs: ROC-AUC for binary tasks, RMSE and
/// MAE for regression.
fn score(pred: &[Vec<f64>], targets: &Targets) -> Result<serde_json::Value> {
    Ok(match targets {
        Targets::Classes(c) => {
            let correct = pred
                .iter()
                .zip(c)
                .filter(|(p, &c)| smited_core::training::argmax(p) == c)
                .count();
            let mut v = serde_json::json!({ "accuracy": correct as f64 / c.len() as f64 });
            if pred[0].len() == 2 {
                let scores: Vec<f64> = pred.iter().map(|p| p[1]).collect();
                let labels: Vec<bool> = c.iter().map(|&c| c == 1).collect();
                v["roc_auc"] = roc_auc(&scores, &labels).ok().into();
            }
            v
        }
        Targets::Values { data, .. } => {
            let flat: Vec<f64> = pred.iter().flatten().copied().collect();
            serde_json::json!({ "rmse": rmse(&flat, data)?, "mae": mae(&flat, data)? })
        }
    })
}

fn epoch_log(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}

fn check_losses(losses: &[f64]) -> Result<()> {
    match losses.iter().position(|l| !l.is_finite()) {
        Some(e) => Err(Error::Numerical(format!(
            "loss became non-finite in epoch {}",
            e + 1
        ))),
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Curate { input, out, report } => {
            let r = curate_file(&input, &out)?;
            write_json(&report, &r)?;
            print!("{}", report_text(&r));
        }
        Command::BuildVocab { input, out } => {
            let corpus = read_smiles(&input)?;
            let v = build_vocab(&corpus)?;
            write_vocab(&out, &v)?;
            println!("vocab_size={}", v.len());
        }
        Command::Tokenize {
            input,
            vocab,
            out,
            max_len,
        } => {
            let vocab = read_vocab(&vocab)?;
            let corpus = read_smiles(&input)?;
            let ids = encode_corpus(&vocab, &corpus, max_len)?;
            let text: String = ids
                .iter()
                .map(|row| {
                    let r: Vec<String> = row.iter().map(u32::to_string).collect();
                    r.join(" ") + "\n"
                })
                .collect();
            write_text(&out, &text)?;
            println!("sequences={}", ids.len());
        }
        Command::Pretrain { run, corpus, vocab } => {
            let cfg = load_config(&run)?;
            let corpus_path = corpus.or_else(|| cfg.paths.corpus.clone()).ok_or_else(|| {
                Error::Usage("a corpus is required (--corpus or paths.corpus)".into())
            })?;
            let dir = out_dir(&run, &cfg)?;
            let smiles = read_smiles(&corpus_path)?;
            let vocab = match vocab.or_else(|| cfg.paths.vocab.clone()) {
                Some(p) => read_vocab(&p)?,
                None => build_vocab(&smiles)?,
            };
            let eff: Effective = cfg.resolve(vocab.len(), run.seed)?;
            eff.echo_into(&dir)?;
            write_vocab(&dir.join("vocab.tsv"), &vocab)?;
            let ids = encode_corpus(&vocab, &smiles, eff.model.max_len)?;
            let params = ModelParams::<f32>::init(&eff.model, eff.seed)?;
            let (params, log) = pretrain(params, &ids, &eff.pretrain_config(), |r| {
                if r.step % 100 == 0 {
                    println!(
                        "step={} phase={} {}={:.5}",
                        r.step,
                        r.phase,
                        r.objective.name(),
                        r.loss
                    );
                }
            })?;
            save_checkpoint(&dir.join("model.ckpt"), &params)?;
            write_text(&dir.join("loss_log.csv"), &loss_log_csv(&log))?;
            println!(
                "steps={} checkpoint={}",
                log.last().map_or(0, |r| r.step),
                dir.join("model.ckpt").display()
            );
        }
        Command::Embed {
            model,
            input,
            out,
            mode,
        } => {
            let (params, vocab) = load_model(&model)?;
            let smiles = read_smiles(&input)?;
            let ids = encode_corpus(&vocab, &smiles, params.config().max_len)?;
            let rows = embed(&params, &ids, mode.into())?;
            write_text(&out, &embeddings_csv(&smiles, &rows))?;
            println!("embedded={}", rows.len());
        }
        Command::Decode { model, input, out } => {
            let (params, vocab) = load_model(&model)?;
            let mut rdr = csv::Reader::from_path(&input).map_err(|e| Error::format(&input, e))?;
            let mut latents: Vec<Vec<f32>> = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::format(&input, e))?;
                let row = rec
                    .iter()
                    .skip(1)
                    .map(|c| {
                        c.trim()
                            .parse::<f32>()
                            .map_err(|_| Error::format(&input, format!("bad value {c:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                latents.push(row);
            }
            let decoded = greedy_decode_smiles(&params, &vocab, &latents)?;
            write_text(
                &out,
                &decoded.iter().map(|s| format!("{s}\n")).collect::<String>(),
            )?;
            println!("decoded={}", decoded.len());
        }
        Command::Finetune {
            run,
            model,
            task,
            end_to_end,
        } => {
            let cfg = load_config(&run)?;
            let dir = out_dir(&run, &cfg)?;
            let (params, vocab) = load_model(&model)?;
            let eff = cfg.resolve(vocab.len(), run.seed)?;
            eff.echo_into(&dir)?;
            let (smiles, targets, kind, columns) = targets_for(&task)?;
            let ids = encode_corpus(&vocab, &smiles, params.config().max_len)?;
            let mode: EmbedMode = task.mode.into();
            let fcfg = eff.finetune_config();
            let (head, params, losses) = if end_to_end {
                let (h, p, l) = finetune_end_to_end(params, &ids, &targets, kind, mode, &fcfg)?;
                save_checkpoint(&dir.join("model.ckpt"), &p)?;
                (h, p, l)
            } else {
                let feats = embed(&params, &ids, mode)?;
                let (h, l) = finetune_frozen(&feats, &targets, kind, &fcfg)?;
                (h, params, l)
            };
            check_losses(&losses)?;
            let mut meta = serde_json::Map::new();
            meta.insert("mode".into(), mode.name().into());
            meta.insert("columns".into(), columns.into());
            save_head(&dir.join("head.ckpt"), &head, meta)?;
            write_text(&dir.join("finetune_log.csv"), &epoch_log(&losses))?;
            let pred = head.predict(&embed(&params, &ids, mode)?)?;
            let metrics = score(&pred, &targets)?;
            write_json(&dir.join("metrics.json"), &metrics)?;
            println!(
                "final_loss={} metrics={metrics}",
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::MoeFinetune {
            run,
            manifest,
            vocab,
            task,
        } => {
            let cfg = load_config(&run)?;
            let dir = out_dir(&run, &cfg)?;
            let vocab = read_vocab(&vocab)?;
            let eff = cfg.resolve(vocab.len(), run.seed)?;
            eff.echo_into(&dir)?;
            let m: ExpertManifest = read_json(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let experts = m
                .experts
                .iter()
                .map(|p| load_checkpoint(&resolve(base, p)))
                .collect::<Result<Vec<_>>>()?;
            let router = match &m.router {
                Some(p) => load_checkpoint(&resolve(base, p))?,
                None => experts
                    .first()
                    .cloned()
                    .ok_or_else(|| Error::Usage("manifest lists no experts".into()))?,
            };
            let mcfg = check_experts(&router, &experts)?;
            if mcfg.vocab_size != vocab.len() {
                return Err(Error::ConfigMismatch(
                    "vocabulary size differs from the experts".into(),
                ));
            }
            let (smiles, targets, kind, columns) = targets_for(&task)?;
            let ids = encode_corpus(&vocab, &smiles, mcfg.max_len)?;
            let mode: EmbedMode = task.mode.into();
            let gate_inputs = embed(&router, &ids, EmbedMode::MeanPool)?;
            let all = experts
                .iter()
                .map(|e| embed(e, &ids, mode))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let (wg, head, losses) = moe_finetune(
                &gate_inputs,
                &all,
                &targets,
                kind,
                m.k,
                &eff.finetune_config(),
            )?;
            check_losses(&losses)?;
            let gate_path = dir.join("gate.ckpt");
            let head_path = dir.join("head.ckpt");
            save_gate(&gate_path, &wg, m.k)?;
            let mut meta = serde_json::Map::new();
            meta.insert("mode".into(), mode.name().into());
            meta.insert("columns".into(), columns.into());
            save_head(&head_path, &head, meta)?;
            let trained = ExpertManifest {
                experts: m.experts.iter().map(|p| resolve(base, p)).collect(),
                k: m.k,
                router: m.router.as_ref().map(|p| resolve(base, p)),
                gate: Some(gate_path),
                head: Some(head_path),
            };
            write_json(&dir.join("experts.json"), &trained)?;
            write_text(&dir.join("finetune_log.csv"), &epoch_log(&losses))?;
            let model = MoeModel {
                router,
                experts,
                wg,
                k: m.k,
                head,
                mode,
            };
            let pred = model.forward(&ids)?;
            let routed = route(
                &model.router,
                &model.experts,
                &model.wg,
                model.k,
                mode,
                &ids,
            )?;
            let mut usage = vec![0usize; model.experts.len()];
            for d in &routed.decisions {
                for &i in &d.indices {
                    usage[i] += 1;
                }
            }
            let mut metrics = score(&pred, &targets)?;
            metrics["expert_usage"] = usage.into();
            write_json(&dir.join("metrics.json"), &metrics)?;
            println!(
                "final_loss={} metrics={metrics}",
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::EvalLatent {
            model,
            mode,
            seed,
            out,
        } => {
            let (params, vocab) = load_model(&model)?;
            let modes: &[EmbedMode] = match mode {
                StudyMode::Latent => &[EmbedMode::Latent],
                StudyMode::MeanPool => &[EmbedMode::MeanPool],
                StudyMode::Both => &[EmbedMode::Latent, EmbedMode::MeanPool],
            };
            let params64: ModelParams<f64> = params.cast();
            let mut reports = serde_json::Map::new();
            let mut rows = Vec::new();
            for &m in modes {
                let r = latent_study(&params64, &vocab, m, seed)?;
                rows.push((
                    m.name(),
                    format!(
                        "r2={:.4} mse={:.6} mean_tanimoto={:.4}",
                        r.r2, r.mse, r.mean_tanimoto
                    ),
                ));
                reports.insert(
                    m.name().into(),
                    serde_json::to_value(&r).expect("report serializes"),
                );
            }
            write_json(&out, &reports)?;
            print!("{}", table(&rows));
        }
        Command::GenMetrics {
            generated,
            reference,
            out,
        } => {
            let g = read_smiles(&generated)?;
            let r = read_smiles(&reference)?;
            let m = generation_metrics(&g, &r)?;
            write_json(&out, &m)?;
            print!(
                "{}",
                table(&[
                    ("validity", format!("{:.4}", m.validity)),
                    ("uniqueness", format!("{:.4}", m.uniqueness)),
                    ("novelty", format!("{:.4}", m.novelty)),
                    ("snn", format!("{:.4}", m.snn)),
                    ("scaf", format!("{:.4}", m.scaf)),
                    ("int_div", format!("{:.4}", m.int_div)),
                ])
            );
        }
        Command::GradCheck { seeds, out } => {
            let results = run_suite(seeds)?;
            let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            if let Some(p) = out {
                write_json(&p, &results)?;
            }
            println!("checks={} max_rel_err={worst:.3e}", results.len());
            if let Some(bad) = results.iter().find(|r| !r.passed()) {
                return Err(Error::Numerical(format!(
                    "{} (seed {}) relative error {:.3e} exceeds {TOLERANCE}",
                    bad.name, bad.seed, bad.max_rel_err
                )));
            }
        }
    }
    Ok(())
}

/// One-line error report for stderr.
pub fn error_line(category: Category, msg: &str) -> String {
    let msg = msg.lines().next().unwrap_or("").trim();
    format!("error={}: {msg}", category.name())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", error_line(Category::Usage, first));
            return Category::Usage.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let c = e.category();
            eprintln!("{}", error_line(c, &e.to_string()));
            c.exit_code()
        }
    }
}
