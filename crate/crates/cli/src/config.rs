//! TOML run configuration. Every field is optional; command-line flags win.

use std::path::{Path, PathBuf};

use ctxrescore::textprep::{SidSide, WindowMode};
use ctxrescore::{CellKind, Error, Result, SynthConfig, TagKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub paths: PathsConfig,
    pub textprep: TextprepConfig,
    pub train: TrainConfig,
    pub rescore: RescoreConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub vocab: Option<PathBuf>,
    pub conversations: Option<PathBuf>,
    pub lattice_dir: Option<PathBuf>,
    pub first_pass: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextprepConfig {
    pub k: Option<usize>,
    pub tag: Option<TagKind>,
    pub mode: Option<WindowMode>,
    pub sid_side: Option<SidSide>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embedding_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub layers: Option<usize>,
    pub cell: Option<CellKind>,
    pub bptt: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreConfig {
    pub n: Option<usize>,
    pub beam: Option<f64>,
    pub lm_scale: Option<f64>,
    pub mode: Option<String>,
    pub budget: Option<usize>,
    pub tag: Option<TagKind>,
    pub threshold: Option<f64>,
    pub depth: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = Some(3);
        c.paths.vocab = Some("v.txt".into());
        c.rescore.tag = Some(TagKind::Sid);
        c.rescore.threshold = Some(0.3);
        c.train.cell = Some(CellKind::Simple);
        c.textprep.mode = Some(WindowMode::Blocks);
        c.synth.test_dialogues = 5;
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[rescore]\nbeem = 3\n").is_err());
    }

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_toml("[rescore]\nbeam = 8.0\ntag = \"sp\"\n").unwrap();
        assert_eq!(c.rescore.beam, Some(8.0));
        assert_eq!(c.rescore.n, None);
        assert_eq!(c.synth, SynthConfig::default());
    }
}
