//! Run configuration: one TOML section per stage, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use cardiogen::anatomy::PhantomProfile;
use cardiogen::datasets::SynthOptions;
use cardiogen::segmentation::{EmptyRule, FinetuneConfig, SegTrainConfig};
use cardiogen::spadegan::GanTrainConfig;
use cardiogen::vae::VaeTrainConfig;
use cardiogen::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    pub data: DataSection,
    pub phantoms: PhantomSection,
    pub vae: VaeTrainConfig,
    pub gan: GanTrainConfig,
    pub seg: SegTrainConfig,
    pub finetune: FinetuneConfig,
    pub synth: SynthSection,
    pub eval: EvalSection,
    /// Inputs of the command that wrote this file.
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            phantoms: PhantomSection::default(),
            vae: VaeTrainConfig::default(),
            gan: GanTrainConfig::default(),
            seg: SegTrainConfig::default(),
            finetune: FinetuneConfig::default(),
            synth: SynthSection::default(),
            eval: EvalSection::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Split the trainers read.
    pub train_split: String,
    /// Share of the training split held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_split: "train".into(),
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub n: usize,
    /// Size of the extra `test` split; 0 writes none.
    pub test_n: usize,
    pub size: usize,
    pub profile: PhantomProfile,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            n: 1000,
            test_n: 200,
            size: 128,
            profile: PhantomProfile::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n: usize,
    pub chunk_size: usize,
    pub max_reject_ratio: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            n: 100_000,
            chunk_size: o.chunk_size,
            max_reject_ratio: o.max_reject_ratio,
        }
    }
}

impl SynthSection {
    pub fn options(&self) -> SynthOptions {
        SynthOptions {
            chunk_size: self.chunk_size,
            max_reject_ratio: self.max_reject_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Split of each test set that gets scored.
    pub test_split: String,
    /// `exclude` or `score_one` for slices where a class is in neither map.
    pub empty_rule: EmptyRule,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            test_split: "test".into(),
            empty_rule: EmptyRule::Exclude,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vae: Option<PathBuf>,
    pub gan: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, overlaid by the file when one is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, format!("cannot read config: {e}")))?;
        toml::from_str(&text).map_err(|e| Error::file(path, format!("bad config: {}", e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config cannot be written as TOML: {e}")))
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn echo(&self, out: &Path) -> Result<()> {
        let path = out.join(ECHO_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
