//! Pipeline configuration: every parameter block plus input/output paths,
//! loaded from TOML. Every field has a default and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendConfig;
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::glass::GlassModeConfig;
use crate::grid::GridParams;
use crate::map::MapThresholds;
use crate::matcher::MatchParams;
use crate::sim::{LidarSpec, OdometryModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Scan log to map from. When absent, scans are simulated from
    /// `env` and `trajectory`.
    pub log: Option<PathBuf>,
    pub env: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    /// Ground-truth poses for evaluation; simulated runs supply their own.
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Stem of every output file.
    pub name: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            log: None,
            env: None,
            trajectory: None,
            truth: None,
            output_dir: PathBuf::from("out"),
            name: "map".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// A glass piece counts as mapped when an occupied cell center lies
    /// within this many meters.
    pub corridor: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { corridor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub detector: DetectorParams,
    pub grid: GridParams,
    pub matcher: MatchParams,
    pub glass: GlassModeConfig,
    pub backend: BackendConfig,
    pub lidar: LidarSpec,
    pub odometry: OdometryModel,
    pub map: MapThresholds,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            grid: self.grid,
            matcher: self.matcher,
            detector: self.detector,
            glass: self.glass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend().validate()?;
        self.backend.validate()?;
        self.lidar.validate()?;
        self.map.validate()?;
        if !(self.evaluation.corridor >= 0.0) {
            return Err(Error::InvalidParam("evaluation.corridor must be >= 0".into()));
        }
        if self.paths.name.is_empty() || self.paths.name.contains('/') {
            return Err(Error::InvalidParam(format!("bad output name '{}'", self.paths.name)));
        }
        Ok(())
    }

    /// Sets one dotted key, e.g. `("glass.mode", "full")` or
    /// `("backend.loop_closure.min_score", "0.7")`. The value is read as a
    /// TOML literal, falling back to a bare string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad key '{key}'")));
        }
        let mut table = root.as_table_mut().expect("config is a table");
        for part in &parts[..parts.len() - 1] {
            table = table
                .get_mut(*part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown section '{part}' in '{key}'")))?;
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(parts[parts.len() - 1].to_string(), parsed);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key} = {value}: {}", e.message())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glass::GlassMode;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = PipelineConfig::default();
        c.seed = 99;
        c.glass.mode = GlassMode::Full;
        c.paths.log = Some("run.scans".into());
        c.backend.loop_closure.sampling_ratio = 0.2;
        c.lidar.field_of_view = 4.71238898038469;
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let d = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn partial_file() {
        let c = PipelineConfig::from_toml("seed = 7\n[glass]\nmode = \"off\"\n[grid]\nresolution = 0.1\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.glass.mode, GlassMode::Off);
        assert_eq!(c.grid.resolution, 0.1);
        assert_eq!(c.grid.p_hit, GridParams::default().p_hit);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 7"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[grid]\nresolutoin = 0.1"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides() {
        let mut c = PipelineConfig::default();
        c.apply_override("glass.mode", "full").unwrap();
        c.apply_override("backend.loop_closure.min_score", "0.7").unwrap();
        c.apply_override("paths.log", "data/run.scans").unwrap();
        c.apply_override("seed", "12").unwrap();
        c.apply_override("detector.width", "5").unwrap();
        assert_eq!(c.glass.mode, GlassMode::Full);
        assert_eq!(c.backend.loop_closure.min_score, 0.7);
        assert_eq!(c.paths.log.as_deref(), Some(Path::new("data/run.scans")));
        assert_eq!(c.seed, 12);
        assert_eq!(c.detector.width, 5);
        assert!(c.apply_override("grid.nope", "1").is_err());
        assert!(c.apply_override("nope.x", "1").is_err());
        assert!(c.apply_override("grid.resolution", "fine").is_err());
        assert!(c.apply_override("glass.mode", "bright").is_err());
    }
}
