use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, EdgeSource};
use crate::error::{Error, Result};
use crate::refine::RefineConfig;
use crate::scoring::{MiningConfig, TrainConfig};

/// Everything a run can be configured with. Section keys follow the field
/// names of the underlying config structs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cascade: CascadeConfig,
    pub refine: RefineConfig,
    pub mining: MiningConfig,
    pub train: TrainConfig,
    pub edge_source: EdgeSource,
}

impl PipelineConfig {
    /// Reads TOML when the extension is `.toml`, JSON otherwise.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        };
        cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        self.refine.validate()?;
        self.mining.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "[cascade]\nbeta = 0.5\nstage1_keep = 500\nstage2_keep = 400\nn_desired = 100\n\n[refine]\ngamma = 1.0\n",
        )
        .unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(
            &j,
            r#"{"cascade": {"beta": 0.5, "stage1_keep": 500, "stage2_keep": 400, "n_desired": 100}, "refine": {"gamma": 1.0}}"#,
        )
        .unwrap();
        let a = PipelineConfig::read(&t).unwrap();
        assert_eq!(a, PipelineConfig::read(&j).unwrap());
        assert_eq!(a.cascade.n_desired, 100);
        assert_eq!(a.mining.pos_per_object, 10);

        std::fs::write(&j, r#"{"cascade": {"stage1_keep": 10, "stage2_keep": 400}}"#).unwrap();
        assert!(PipelineConfig::read(&j).is_err());
        std::fs::write(&j, r#"{"cascde": {}}"#).unwrap();
        assert!(PipelineConfig::read(&j).is_err());
    }
}
