use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vr3dense_core::depth_losses::{EdgeVariant, DEFAULT_FIT_LR, DEFAULT_FIT_STEPS};
use vr3dense_core::voxel_grid::DensityMode;
use vr3dense_core::{DepthLossWeights, DetLossWeights, RoiConfig};

use crate::error::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "VR3DENSE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Maximum step of the backtracking descent.
    pub lr: f64,
    pub steps: usize,
    /// Initial depth in meters when no initial map is given.
    pub init_depth: f64,
    pub weights: DepthLossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_FIT_LR,
            steps: DEFAULT_FIT_STEPS,
            init_depth: 10.0,
            weights: DepthLossWeights::toy_fit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub roi: RoiConfig,
    pub density_mode: DensityMode,
    /// Copied into every depth-weight block on resolve.
    pub edge_variant: EdgeVariant,
    pub class_names: Vec<String>,
    pub det_weights: DetLossWeights,
    pub depth_weights: DepthLossWeights,
    pub nms_iou: f64,
    pub conf_threshold: f64,
    /// 3D IoU needed for a true positive.
    pub iou_threshold: f64,
    /// Ground-truth depth range for depth metrics, meters.
    pub depth_range: (f64, f64),
    /// `(height, width)` of projected depth maps.
    pub image_size: (usize, usize),
    pub gradcheck_inputs: usize,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            roi: RoiConfig::default(),
            density_mode: DensityMode::Raw,
            edge_variant: EdgeVariant::DxDy,
            class_names: ["Car", "Pedestrian", "Cyclist"].map(String::from).to_vec(),
            det_weights: DetLossWeights::default(),
            depth_weights: DepthLossWeights::default(),
            nms_iou: 0.1,
            conf_threshold: 0.5,
            iou_threshold: 0.7,
            depth_range: (1e-3, 80.0),
            image_size: (375, 1242),
            gradcheck_inputs: 50,
            fit: FitConfig::default(),
        }
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub density_mode: Option<DensityMode>,
    pub edge_variant: Option<EdgeVariant>,
    pub nms_iou: Option<f64>,
    pub conf_threshold: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub inputs: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies overrides, propagates `edge_variant` and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        macro_rules! set {
            ($($field:ident).+ <- $v:expr) => {
                if let Some(v) = $v {
                    self.$($field).+ = v;
                }
            };
        }
        set!(seed <- o.seed);
        set!(density_mode <- o.density_mode);
        set!(edge_variant <- o.edge_variant);
        set!(nms_iou <- o.nms_iou);
        set!(conf_threshold <- o.conf_threshold);
        set!(iou_threshold <- o.iou_threshold);
        set!(fit.lr <- o.lr);
        set!(fit.steps <- o.steps);
        set!(gradcheck_inputs <- o.inputs);
        self.depth_weights.edge_variant = self.edge_variant;
        self.fit.weights.edge_variant = self.edge_variant;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.roi.validate()?;
        self.det_weights.validate()?;
        self.depth_weights.validate()?;
        self.fit.weights.validate()?;
        if self.class_names.is_empty() {
            return bad("class_names must not be empty");
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("nms_iou must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad("conf_threshold must lie in [0, 1]");
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return bad("iou_threshold must lie in (0, 1]");
        }
        let (lo, hi) = self.depth_range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return bad("depth_range must satisfy 0 <= min < max");
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad("image_size must be positive");
        }
        if self.gradcheck_inputs == 0 {
            return bad("gradcheck_inputs must be at least 1");
        }
        if !(self.fit.lr >= 0.0 && self.fit.lr.is_finite()) {
            return bad("fit.lr must be non-negative");
        }
        if self.fit.steps == 0 {
            return bad("fit.steps must be at least 1");
        }
        if !(self.fit.init_depth > 0.0) {
            return bad("fit.init_depth must be positive");
        }
        Ok(())
    }

    /// Compact JSON used for the echo and the hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// The three header lines printed by every run.
    pub fn header(&self) -> String {
        format!(
            "config-sha256 {}\nconfig {}\nseed {}\n",
            self.sha256(),
            self.canonical_json(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "nms_iuo": 0.2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"fit": {"lrr": 1.0}}"#).is_err());
        let c = RunConfig::from_json(r#"{"seed": 4}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.nms_iou, 0.1);
    }

    #[test]
    fn flags_win_and_hash_tracks_content() {
        let base = RunConfig::default().resolve(&Overrides::default()).unwrap();
        let o = Overrides {
            seed: Some(9),
            edge_variant: Some(EdgeVariant::DxDx),
            ..Overrides::default()
        };
        let c = RunConfig::from_json(r#"{"seed": 4}"#).unwrap().resolve(&o).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.depth_weights.edge_variant, EdgeVariant::DxDx);
        assert_eq!(c.fit.weights.edge_variant, EdgeVariant::DxDx);
        assert_ne!(c.sha256(), base.sha256());
        assert_eq!(base.sha256(), RunConfig::default().resolve(&Overrides::default()).unwrap().sha256());
        assert!(base.header().starts_with("config-sha256 "));
    }

    #[test]
    fn violations_are_reported() {
        let o = Overrides {
            nms_iou: Some(1.5),
            ..Overrides::default()
        };
        assert!(RunConfig::default().resolve(&o).is_err());
        assert!(RunConfig::from_json(r#"{"class_names": []}"#)
            .unwrap()
            .resolve(&Overrides::default())
            .is_err());
    }
}
