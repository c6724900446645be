//! One strict JSON document configures every pipeline stage. Missing keys
//! take their defaults, unknown keys are rejected, and the defaults are the
//! published constants of the method.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::{DEFAULT_BINS, DEFAULT_EPSILON};
use crate::body::BodyPart;
use crate::camera::FitConfig;
use crate::dataset::read_json;
use crate::error::{Error, Result};
use crate::filtering::{FilterProfile, FilterThresholds};
use crate::grid::GridSpec;
use crate::mesh::McConfig;
use crate::pap::PapConfig;
use crate::skinning::SkinningParams;
use crate::synth::SceneConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AggregationMode {
    #[default]
    Holistic,
    /// Selective aggregation of one semantic type.
    Semantic { prompt: String, part: BodyPart },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub bins: usize,
    /// Interaction-region radius around the contacted part, meters.
    pub epsilon: f64,
    pub mode: AggregationMode,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
            mode: AggregationMode::Holistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub profile: FilterProfile,
    /// Target object category of the detection records.
    pub category: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            profile: FilterProfile::Default,
            category: "object".into(),
        }
    }
}

impl FilterConfig {
    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds::profile(self.profile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub skinning: SkinningParams,
    pub filter: FilterConfig,
    pub calibration: FitConfig,
    pub aggregation: AggregationConfig,
    pub pap: PapConfig,
    pub mesh: McConfig,
    /// Scene for `synth-generate` and `run`. Its grid and seed are taken
    /// from the top level.
    pub synth: Option<SceneConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let s = &self.skinning;
        if s.k == 0 || !(s.tau > 0.0) || !(s.sharpness > 0.0) {
            return Err(Error::Config("skinning needs k >= 1, tau > 0, sharpness > 0".into()));
        }
        let c = &self.calibration;
        if !(c.learning_rate > 0.0) || !(c.fov_deg > 0.0 && c.fov_deg < 180.0) {
            return Err(Error::Config("calibration needs lr > 0 and 0 < fov < 180".into()));
        }
        if self.aggregation.bins == 0 || !(self.aggregation.epsilon > 0.0) {
            return Err(Error::Config("aggregation needs bins >= 1 and epsilon > 0".into()));
        }
        if self.pap.short_side == 0 {
            return Err(Error::Config("pap.short_side must be positive".into()));
        }
        if !(self.mesh.iso > 0.0 && self.mesh.iso < 1.0) {
            return Err(Error::Config("mesh.iso must lie in (0, 1)".into()));
        }
        if let Some(scene) = self.scene() {
            scene.validate()?;
        }
        Ok(())
    }

    /// The synthetic scene with the top-level grid and seed applied.
    pub fn scene(&self) -> Option<SceneConfig> {
        self.synth.clone().map(|s| SceneConfig {
            grid: self.grid,
            seed: self.seed,
            ..s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pap::{thresholds, ApMode, Interpolation};

    #[test]
    fn golden_defaults() {
        let c = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.skinning.k, 30);
        assert_eq!(c.skinning.tau, 0.8);
        assert_eq!(c.skinning.sharpness, 0.25);
        assert_eq!(c.skinning.smooth_iterations, 30);
        assert_eq!(c.aggregation.bins, 12);
        assert_eq!(c.aggregation.epsilon, 0.13);
        assert_eq!(c.calibration.fov_deg, 46.4);
        assert_eq!(c.calibration.learning_rate, 0.01);
        assert_eq!(c.calibration.max_iters, 2400);
        assert_eq!(c.calibration.early_stop_rms, 0.7);
        assert_eq!(c.pap.short_side, 32);
        assert_eq!(c.pap.mode, ApMode::Vanilla);
        assert_eq!(c.pap.interpolation, Interpolation::AllPoint);
        let ts = thresholds();
        assert_eq!(ts.len(), 100);
        for (i, t) in ts.iter().enumerate() {
            assert!((t - (i + 1) as f64 * 0.01).abs() < 1e-12);
        }
        let f = c.filter.thresholds();
        assert_eq!(
            (f.min_overlap, f.keypoint_confidence, f.dedup_iosb, f.dedup_keep_confidence),
            (0.1, 0.7, 0.8, 0.98)
        );
        assert_eq!(c.mesh.iso, 0.5);
        assert_eq!(c.grid, GridSpec::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"skinning": {"k": 30, "tua": 0.8}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"pap": {"mode": "lenient"}}"#).is_err());
    }

    #[test]
    fn partial_sections_and_validation() {
        let c = PipelineConfig::from_json(
            r#"{"seed": 4, "aggregation": {"mode": {"kind": "semantic", "prompt": "p1", "part": "rightHand"}}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.aggregation.bins, 12);
        assert_eq!(
            c.aggregation.mode,
            AggregationMode::Semantic {
                prompt: "p1".into(),
                part: BodyPart::RightHand
            }
        );
        assert!(PipelineConfig::from_json(r#"{"mesh": {"iso": 1.5}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"grid": {"resolution": 0}}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let c = PipelineConfig {
            synth: Some(SceneConfig::default()),
            ..PipelineConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
    }
}
