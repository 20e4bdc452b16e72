//! JSON experiment configuration consumed by `qtl train`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::ShotConfig;
use crate::circuit::CircuitShape;
use crate::error::{QtlError, Result};
use crate::gradient::GradientMethod;
use crate::model::{ModelVariant, VariantKind};
use crate::noise::DeviceCalibration;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: VariantKind,
    #[serde(default)]
    pub shape: CircuitShape,
    #[serde(default = "default_classes")]
    pub class_count: usize,
    /// Device constants; the built-in Heron r2 values when absent.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub shots: Option<ShotConfig>,
    #[serde(default)]
    pub gradient: Option<GradientMethod>,
    #[serde(default)]
    pub train: TrainConfig,
    pub train_data: PathBuf,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    /// Fraction of `train_data` used for fitting; the rest validates.
    #[serde(default)]
    pub val_split: Option<f64>,
}

fn default_classes() -> usize {
    2
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolves a relative path against the config file's directory.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn calibration(&self, base: &Path) -> Result<DeviceCalibration> {
        match &self.calibration {
            Some(p) => DeviceCalibration::load(&Self::resolve(base, p)),
            None => Ok(DeviceCalibration::heron_r2()),
        }
    }

    /// The model variant after applying overrides to the reference settings.
    pub fn model_variant(&self, cal: &DeviceCalibration) -> Result<ModelVariant> {
        let mut v = ModelVariant::standard(self.variant, self.class_count, cal)?;
        v.shape = self.shape;
        if self.shots.is_some() {
            if !self.variant.is_brickwall() {
                return Err(QtlError::Config(format!(
                    "variant {} takes no shot configuration",
                    self.variant
                )));
            }
            v.shots = self.shots;
        }
        if let Some(g) = self.gradient {
            v.gradient = g;
        }
        if let Some(f) = self.val_split {
            if !(f > 0.0 && f < 1.0) {
                return Err(QtlError::Config(format!("val_split {f} outside (0, 1)")));
            }
        }
        v.validate()?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::SpsaConfig;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            variant: VariantKind::BrickwallNoisy,
            shape: CircuitShape::new(3, 2).unwrap(),
            class_count: 2,
            calibration: Some("heron.json".into()),
            shots: Some(ShotConfig::new(512, 7).unwrap()),
            gradient: Some(GradientMethod::Spsa(SpsaConfig { c: 0.2, seed: 4 })),
            train: TrainConfig {
                epochs: 3,
                seed: 0x1234_5678_9abc_def0,
                ..TrainConfig::default()
            },
            train_data: "train.csv".into(),
            test_data: Some("test.csv".into()),
            val_split: Some(0.8),
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = sample();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"variant": "ring_exact", "train_data": "x.csv"}"#).unwrap();
        assert_eq!(cfg.shape, CircuitShape::default());
        assert_eq!(cfg.train, TrainConfig::default());
        let v = cfg.model_variant(&DeviceCalibration::heron_r2()).unwrap();
        assert_eq!(v.gradient, GradientMethod::ParamShift);
    }

    #[test]
    fn unknown_fields_and_bad_overrides_rejected() {
        assert!(
            serde_json::from_str::<ExperimentConfig>(r#"{"variant": "ring_exact", "train_data": "x", "lr": 1}"#)
                .is_err()
        );
        let mut cfg = sample();
        cfg.variant = VariantKind::RingExact;
        assert!(cfg.model_variant(&DeviceCalibration::heron_r2()).is_err());
        let mut cfg = sample();
        cfg.val_split = Some(1.5);
        assert!(cfg.model_variant(&DeviceCalibration::heron_r2()).is_err());
    }

    #[test]
    fn relative_paths_resolve_next_to_config() {
        let p = ExperimentConfig::resolve(Path::new("/a/b/cfg.json"), Path::new("d.csv"));
        assert_eq!(p, PathBuf::from("/a/b/d.csv"));
        let p = ExperimentConfig::resolve(Path::new("/a/b/cfg.json"), Path::new("/x.csv"));
        assert_eq!(p, PathBuf::from("/x.csv"));
    }
}
