//! Experiment configuration: one TOML file describing data, model,
//! hyperparameters and ablation flags for a reproducible run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{CoudaError, Result};
use crate::losses::{AblationFlags, Hyperparams};
use crate::model::ModelConfig;

/// Synthetic benchmark description plus the label-noise rate injected into
/// the source labels and the held-out fraction of the target set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticDataConfig {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    /// Uniform off-diagonal corruption rate for source labels.
    #[serde(default = "default_noise_rate")]
    pub noise_rate: f64,
    /// Fraction of the target set held out for evaluation.
    #[serde(default = "default_held_out_frac")]
    pub held_out_frac: f64,
}

fn default_noise_rate() -> f64 {
    0.3
}

fn default_held_out_frac() -> f64 {
    0.2
}

impl Default for SyntheticDataConfig {
    fn default() -> Self {
        SyntheticDataConfig {
            spec: SyntheticSpec::default(),
            noise_rate: default_noise_rate(),
            held_out_frac: default_held_out_frac(),
        }
    }
}

/// Pre-generated CSV inputs, schemas as written by the generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvDataConfig {
    pub source: PathBuf,
    pub target_train: PathBuf,
    pub target_test: PathBuf,
    /// Class count for the CSV files.
    pub k: usize,
}

/// Exactly one of the two sources must be present.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDataConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvDataConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hp: Hyperparams,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// Ramp alpha over the first 10% of steps.
    #[serde(default = "default_warmup")]
    pub warmup_alpha: bool,
    /// Seeds for ablation sweeps; run seed + offsets 0..n_seeds.
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
}

fn default_n_seeds() -> usize {
    5
}

fn default_warmup() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataConfig {
                synthetic: Some(SyntheticDataConfig::default()),
                csv: None,
            },
            model: ModelConfig::default(),
            hp: Hyperparams::default(),
            ablation: AblationFlags::default(),
            warmup_alpha: default_warmup(),
            n_seeds: default_n_seeds(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CoudaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoudaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(_), Some(_)) => {
                return Err(CoudaError::Config(
                    "data section must name either a synthetic spec or csv paths, not both"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(CoudaError::Config(
                    "data section must name a synthetic spec or csv paths".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.data.synthetic {
            s.spec.validate()?;
            if !(0.0..=1.0).contains(&s.noise_rate) {
                return Err(CoudaError::Config(format!(
                    "noise_rate {} outside [0, 1]",
                    s.noise_rate
                )));
            }
            if !(0.0..1.0).contains(&s.held_out_frac) {
                return Err(CoudaError::Config(format!(
                    "held_out_frac {} outside [0, 1)",
                    s.held_out_frac
                )));
            }
            if s.spec.k != self.model.k {
                return Err(CoudaError::Config(format!(
                    "data has {} classes but model expects {}",
                    s.spec.k, self.model.k
                )));
            }
            if s.spec.d_x != self.model.d_x {
                return Err(CoudaError::Config(format!(
                    "data dimensionality {} does not match model d_x {}",
                    s.spec.d_x, self.model.d_x
                )));
            }
        }
        if let Some(c) = &self.data.csv {
            if c.k != self.model.k {
                return Err(CoudaError::Config(format!(
                    "csv data has {} classes but model expects {}",
                    c.k, self.model.k
                )));
            }
        }
        self.hp.validate()?;
        Ok(())
    }

    /// Seeds used by an ablation sweep.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed + i).collect()
    }
}

/// The five ablation rows, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Single peer with the classification loss only.
    SingleLc,
    /// Two peers, classification loss only.
    OursLc,
    /// Two peers plus weighted adversarial alignment.
    OursLcLadv,
    /// Everything except the noise co-adaptation layer.
    WoNcl,
    /// The complete objective.
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::SingleLc,
        AblationVariant::OursLc,
        AblationVariant::OursLcLadv,
        AblationVariant::WoNcl,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::SingleLc => "single_lc",
            AblationVariant::OursLc => "ours_lc",
            AblationVariant::OursLcLadv => "ours_lc_ladv",
            AblationVariant::WoNcl => "wo_ncl",
            AblationVariant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                CoudaError::Config(format!(
                    "unknown ablation variant '{}'; expected one of single_lc, ours_lc, \
                     ours_lc_ladv, wo_ncl, full",
                    s
                ))
            })
    }

    pub fn flags(self) -> AblationFlags {
        match self {
            AblationVariant::SingleLc => AblationFlags {
                enable_adv: false,
                enable_dis: false,
                enable_ncl: true,
                single_network: true,
            },
            AblationVariant::OursLc => AblationFlags {
                enable_adv: false,
                enable_dis: false,
                enable_ncl: true,
                single_network: false,
            },
            AblationVariant::OursLcLadv => AblationFlags {
                enable_adv: true,
                enable_dis: false,
                enable_ncl: true,
                single_network: false,
            },
            AblationVariant::WoNcl => AblationFlags {
                enable_adv: true,
                enable_dis: true,
                enable_ncl: false,
                single_network: false,
            },
            AblationVariant::Full => AblationFlags::default(),
        }
    }
}
