//! TOML run configuration: a named profile plus optional overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smited_core::model::ModelConfig;
use smited_core::numerics::AdamConfig;
use smited_core::training::{FinetuneConfig, MaskingPolicy, PretrainConfig, PretrainSchedule};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    PaperFidelity,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub max_len: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub dropout: Option<f64>,
    pub features: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainOverrides {
    pub phase1_epochs: Option<usize>,
    pub phase2_epochs: Option<usize>,
    pub encoder_frac: Option<f64>,
    pub batch_size: Option<usize>,
    pub mlm_weight: Option<f64>,
    pub recon_weight: Option<f64>,
    pub lr: Option<f64>,
    pub select_frac: Option<f64>,
    pub mask_frac: Option<f64>,
    pub random_frac: Option<f64>,
    pub keep_frac: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneOverrides {
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub profile: Profile,
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub pretrain: PretrainOverrides,
    #[serde(default)]
    pub finetune: FinetuneOverrides,
    #[serde(default)]
    pub paths: Paths,
}

/// Everything a training command runs with, after profile defaults,
/// file overrides and flags are applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Effective {
    pub profile: Profile,
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain: EffectivePretrain,
    pub finetune: EffectiveFinetune,
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectivePretrain {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub encoder_frac: f64,
    pub batch_size: usize,
    pub mlm_weight: f64,
    pub recon_weight: f64,
    pub lr: f64,
    pub select_frac: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectiveFinetune {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<RunConfig> {
        toml::from_str(text)
            .map_err(|e| Error::Usage(format!("{}: {}", path.display(), e.message())))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, path)
    }

    /// Resolves against a vocabulary size. `seed` from the command line wins
    /// over the file; one of the two must be present.
    pub fn resolve(&self, vocab_size: usize, seed: Option<u64>) -> Result<Effective> {
        let seed = seed.or(self.seed).ok_or_else(|| {
            Error::Usage("training needs a seed (--seed or seed = ... in the config)".into())
        })?;
        let (mut model, pre, fine) = match self.profile {
            Profile::Desk => (
                ModelConfig::desk(vocab_size),
                EffectivePretrain {
                    phase1_epochs: 400,
                    phase2_epochs: 1600,
                    encoder_frac: 0.95,
                    batch_size: 32,
                    mlm_weight: 1.0,
                    recon_weight: 1.0,
                    lr: 2e-3,
                    ..masking_defaults()
                },
                EffectiveFinetune {
                    hidden: 64,
                    epochs: 200,
                    batch_size: 32,
                    lr: 1e-3,
                },
            ),
            Profile::PaperFidelity => {
                let s = PretrainSchedule::default();
                let f = FinetuneConfig::default();
                (
                    ModelConfig::paper_fidelity(vocab_size),
                    EffectivePretrain {
                        phase1_epochs: s.phase1_epochs,
                        phase2_epochs: s.phase2_epochs,
                        encoder_frac: s.encoder_frac,
                        batch_size: s.batch_size,
                        mlm_weight: s.mlm_weight,
                        recon_weight: s.recon_weight,
                        lr: 1.6e-4,
                        ..masking_defaults()
                    },
                    EffectiveFinetune {
                        hidden: 768,
                        epochs: f.epochs,
                        batch_size: f.batch_size,
                        lr: f.adam.lr,
                    },
                )
            }
        };
        let m = &self.model;
        macro_rules! over {
            ($dst:expr, $src:expr, [$($f:ident),*]) => { $( if let Some(v) = $src.$f { $dst.$f = v; } )* };
        }
        over!(
            model,
            m,
            [max_len, hidden, heads, layers, dropout, features]
        );
        let mut pre = pre;
        over!(
            pre,
            self.pretrain,
            [
                phase1_epochs,
                phase2_epochs,
                encoder_frac,
                batch_size,
                mlm_weight,
                recon_weight,
                lr,
                select_frac,
                mask_frac,
                random_frac,
                keep_frac
            ]
        );
        let mut fine = fine;
        over!(fine, self.finetune, [hidden, epochs, batch_size, lr]);
        model.validate().map_err(|e| Error::Usage(e.to_string()))?;
        let eff = Effective {
            profile: self.profile,
            seed,
            model,
            pretrain: pre,
            finetune: fine,
            paths: self.paths.clone(),
        };
        if !eff.pretrain_config().masking.is_valid() {
            return Err(Error::Usage(
                "masking fractions must lie in [0, 1] and the split must sum to 1".into(),
            ));
        }
        Ok(eff)
    }
}

fn masking_defaults() -> EffectivePretrain {
    let m = MaskingPolicy::default();
    EffectivePretrain {
        phase1_epochs: 0,
        phase2_epochs: 0,
        encoder_frac: 0.0,
        batch_size: 0,
        mlm_weight: 0.0,
        recon_weight: 0.0,
        lr: 0.0,
        select_frac: m.select_frac,
        mask_frac: m.mask_frac,
        random_frac: m.random_frac,
        keep_frac: m.keep_frac,
    }
}

impl Effective {
    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            schedule: PretrainSchedule {
                phase1_epochs: p.phase1_epochs,
                phase2_epochs: p.phase2_epochs,
                encoder_frac: p.encoder_frac,
                batch_size: p.batch_size,
                mlm_weight: p.mlm_weight,
                recon_weight: p.recon_weight,
            },
            adam: AdamConfig {
                lr: p.lr,
                ..AdamConfig::default()
            },
            masking: MaskingPolicy {
                select_frac: p.select_frac,
                mask_frac: p.mask_frac,
                random_frac: p.random_frac,
                keep_frac: p.keep_frac,
            },
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            hidden: f.hidden,
            epochs: f.epochs,
            batch_size: f.batch_size,
            adam: AdamConfig {
                lr: f.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("effective config serializes")
    }

    /// Writes `effective_config.toml` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let p = dir.join("effective_config.toml");
        fs::write(&p, self.to_toml()).map_err(|e| Error::io(&p, e))
    }
}
