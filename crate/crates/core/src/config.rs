//! Study configuration: one JSON file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossbar::VerifyConfig;
use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::mapping::ZeroEncoding;
use crate::solver::ArrayConfig;
use crate::study::GnormGrid;
use crate::trainer::TrainConfig;

/// One device-size entry: a name plus the device and interconnect
/// parameters simulated under that name. Blocks are kept in file order;
/// size-trend studies iterate them as listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeBlock {
    pub name: String,
    pub device: DeviceParams,
    pub array: ArrayConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Wine data file (CSV, class label first).
    pub dataset_path: PathBuf,
    /// Stratified train/test split seed.
    pub split_seed: u64,
    pub training: TrainConfig,
    /// Device-size blocks in study order.
    pub sizes: Vec<SizeBlock>,
    pub verify: VerifyConfig,
    pub zero_encoding: ZeroEncoding,
    pub g_norm_grid: GnormGrid,
    /// Weight-matrix solutions trained and swept.
    pub n_solutions: usize,
    /// Independent array realizations per size in the variation study.
    pub n_realizations: usize,
    pub output_dir: PathBuf,
    /// Root of every derived random stream.
    pub seed: u64,
    /// Keep per-sample output currents in sweep artifacts (large).
    pub emit_traces: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            dataset_path: PathBuf::from("data/wine.data"),
            split_seed: 4,
            training: TrainConfig::default(),
            sizes: vec![SizeBlock {
                name: "30nm".to_string(),
                device: DeviceParams::default(),
                array: ArrayConfig::default(),
            }],
            verify: VerifyConfig::default(),
            zero_encoding: ZeroEncoding::default(),
            g_norm_grid: GnormGrid::default(),
            n_solutions: 300,
            n_realizations: 30,
            output_dir: PathBuf::from("out"),
            seed: 7,
            emit_traces: false,
        }
    }
}

impl StudyConfig {
    /// Parse and validate a config file. Numeric constraints of every
    /// nested block are enforced here so commands can assume validity.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: StudyConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Parse {
                path: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.verify.validate()?;
        self.g_norm_grid.validate()?;
        if self.sizes.is_empty() {
            return Err(Error::Config("at least one size block required".into()));
        }
        for block in &self.sizes {
            if block.name.is_empty() {
                return Err(Error::Config("size block with empty name".into()));
            }
            block.device.validate()?;
            block.array.validate()?;
        }
        let mut names: Vec<&str> = self.sizes.iter().map(|b| b.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.sizes.len() {
            return Err(Error::Config("duplicate size block names".into()));
        }
        if self.n_solutions == 0 {
            return Err(Error::Config("n_solutions must be >= 1".into()));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn size(&self, name: &str) -> Result<&SizeBlock> {
        self.sizes.iter().find(|b| b.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.sizes.iter().map(|b| b.name.as_str()).collect();
            Error::Config(format!(
                "unknown size {name:?}; configured sizes: {}",
                known.join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        StudyConfig::default().validate().unwrap();
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = StudyConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: StudyConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_unknown_fields() {
        let err = serde_json::from_str::<StudyConfig>("{\"bogus\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn rejects_duplicate_size_names() {
        let mut cfg = StudyConfig::default();
        cfg.sizes.push(cfg.sizes[0].clone());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_empty_sizes_and_zero_counts() {
        let mut cfg = StudyConfig::default();
        cfg.sizes.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = StudyConfig::default();
        cfg.n_solutions = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = StudyConfig::default();
        cfg.n_realizations = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn size_lookup_names_known_blocks_in_error() {
        let cfg = StudyConfig::default();
        assert_eq!(cfg.size("30nm").unwrap().name, "30nm");
        let err = cfg.size("70nm").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("70nm") && msg.contains("30nm"), "{msg}");
    }

    #[test]
    fn load_reports_parse_location() {
        let dir = std::env::temp_dir().join("cfg-parse-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("broken.json");
        std::fs::write(&p, "{\n  \"seed\": \"not a number\"\n}").unwrap();
        match StudyConfig::load(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
