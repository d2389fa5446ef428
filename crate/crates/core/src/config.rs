//! Pipeline configuration file.
//!
//! Relative paths are resolved against the directory holding the config
//! file, so a config and its data can be moved together.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::TrainConfig;
use crate::dedup::DedupOptions;
use crate::error::{json_err, IoContext};
use crate::normalize::NormalizeOptions;
use crate::splits::{Protocol, DEFAULT_SEED, DEFAULT_TRAIN_FRAC};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolChoice {
    Toto,
    Loto,
    #[default]
    Both,
}

impl ProtocolChoice {
    pub fn protocols(self) -> Vec<Protocol> {
        match self {
            ProtocolChoice::Toto => vec![Protocol::TOTO],
            ProtocolChoice::Loto => vec![Protocol::LOTO],
            ProtocolChoice::Both => vec![Protocol::TOTO, Protocol::LOTO],
        }
    }
}

impl fmt::Display for ProtocolChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolChoice::Toto => "toto",
            ProtocolChoice::Loto => "loto",
            ProtocolChoice::Both => "both",
        })
    }
}

impl FromStr for ProtocolChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toto" => Ok(ProtocolChoice::Toto),
            "loto" => Ok(ProtocolChoice::Loto),
            "both" => Ok(ProtocolChoice::Both),
            other => Err(Error::Config(format!("unknown protocol {other:?} (expected toto, loto or both)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: DEFAULT_TRAIN_FRAC,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub workdir: PathBuf,
    /// Report directory; `<workdir>/report` when absent.
    pub outputs: Option<PathBuf>,
    /// Raw-to-canonical label map; the bundled six-class map when absent.
    pub label_map: Option<PathBuf>,
    /// Synthetic spec for `synth`; the bundled default when absent.
    pub synth_spec: Option<PathBuf>,
    /// Replaces the synthetic spec's own seed when set.
    pub synth_seed: Option<u64>,
    pub protocol: ProtocolChoice,
    pub dedup: DedupOptions,
    pub normalize: NormalizeOptions,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_root: PathBuf::from("dataset"),
            workdir: PathBuf::from("work"),
            outputs: None,
            label_map: None,
            synth_spec: None,
            synth_seed: None,
            protocol: ProtocolChoice::Both,
            dedup: DedupOptions::default(),
            normalize: NormalizeOptions::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses `path` and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let config: PipelineConfig = serde_json::from_str(&text).map_err(json_err(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(config.resolved_against(base))
    }

    pub fn resolved_against(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_root);
        fix(&mut self.workdir);
        for p in [&mut self.outputs, &mut self.label_map, &mut self.synth_spec].into_iter().flatten() {
            fix(p);
        }
        self
    }

    /// Applies a `--seed` override to splits, training and synthesis.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.train.seed = seed;
        self.synth_seed = Some(seed);
        self
    }

    pub fn report_dir(&self) -> PathBuf {
        self.outputs.clone().unwrap_or_else(|| self.workdir.join("report"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.normalize.target == 0 || !(1..=100).contains(&self.normalize.quality) {
            return Err(Error::Config("normalize target must be positive and quality in 1..=100".into()));
        }
        if !(self.split.train_frac > 0.0 && self.split.train_frac < 1.0) {
            return Err(Error::Config(format!("train_frac {} outside (0, 1)", self.split.train_frac)));
        }
        self.train.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_recipe() {
        let c = PipelineConfig::default();
        assert_eq!((c.normalize.target, c.normalize.quality), (336, 95));
        assert_eq!((c.split.train_frac, c.split.seed), (0.7, 42));
        assert_eq!((c.train.epochs, c.train.batch_size), (20, 32));
        assert_eq!(c.protocol, ProtocolChoice::Both);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"workdir": "out", "split": {"seed": 7}, "protocol": "loto"}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.workdir, dir.path().join("out"));
        assert_eq!(c.dataset_root, dir.path().join("dataset"));
        assert_eq!(c.split, SplitConfig { train_frac: 0.7, seed: 7 });
        assert_eq!(c.protocol.protocols(), vec![Protocol::LOTO]);
        assert_eq!(c.report_dir(), dir.path().join("out/report"));

        std::fs::write(&path, r#"{"wrokdir": "x"}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("TOTO".parse::<ProtocolChoice>().unwrap(), ProtocolChoice::Toto);
        assert!("both2".parse::<ProtocolChoice>().is_err());
    }
}
