//! Experiment configuration: one JSON document fixes every knob of the
//! pipeline, and together with a seed determines every output byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mcl::SensorModelParams;
use crate::segment::Method;

/// Syllable confusion channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Temperature of the banded confusion kernel; 0 disables corruption.
    pub band_tau: f64,
    pub p_delete: f64,
    pub p_insert: f64,
    /// Candidates kept per lattice slot.
    pub beam_width: usize,
    /// Extra inventory symbols beyond those the scenario uses.
    #[serde(default)]
    pub extra_symbols: Vec<String>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            band_tau: 0.33,
            p_delete: 0.02,
            p_insert: 0.02,
            beam_width: 7,
            extra_symbols: Vec::new(),
        }
    }
}

/// Word segmentation stage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub iterations: usize,
    pub concentration: f64,
    pub p_cont: f64,
    pub acoustic_scale: f64,
    pub anneal_start_temp: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            iterations: 100,
            concentration: 1.0,
            p_cont: 0.7,
            acoustic_scale: 1.0,
            anneal_start_temp: 6.0,
        }
    }
}

/// Concept model stage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hyper: crate::concepts::Hyperparameters,
    pub iterations: usize,
    /// Enable the per-iteration trajectory resampling pass.
    #[serde(default)]
    pub sample_x: bool,
    /// Candidate poses for each trajectory resampling draw.
    #[serde(default = "default_pose_candidates")]
    pub pose_candidates: usize,
}

fn default_pose_candidates() -> usize {
    30
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hyper: crate::concepts::Hyperparameters::default(),
            iterations: 100,
            sample_x: false,
            pose_candidates: default_pose_candidates(),
        }
    }
}

/// Localization stage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub particles: usize,
    /// Fixed-lag smoothing window used for teaching positions.
    pub lag: usize,
    pub ess_ratio: f64,
    pub sensor: SensorModelParams,
    /// Use the whole snapped sentence for the speech weight; `false`
    /// restricts the bag to tokens matching a place name.
    #[serde(default = "default_true")]
    pub full_sentence_bow: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            particles: 1000,
            lag: 100,
            ess_ratio: 0.5,
            sensor: SensorModelParams::default(),
            full_sentence_bow: true,
        }
    }
}

/// The complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `builtin:room`, `builtin:floor`, or a scenario file path.
    pub scenario: String,
    pub channel: ChannelConfig,
    pub method: Method,
    pub segmentation: SegmentationConfig,
    pub model: ModelConfig,
    pub localization: LocalizationConfig,
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl ExperimentConfig {
    /// The desk-scale eight-place room experiment.
    pub fn room() -> ExperimentConfig {
        let mut model = ModelConfig::default();
        // The position prior mean sits at the map center.
        model.hyper.m0 = [250.0, 500.0];
        ExperimentConfig {
            scenario: "builtin:room".into(),
            channel: ChannelConfig::default(),
            method: Method::Lattice,
            segmentation: SegmentationConfig::default(),
            model,
            localization: LocalizationConfig::default(),
            seeds: vec![0],
            out_dir: "out/room".into(),
        }
    }

    /// The larger floor experiment: 19 places, 16 names, 100 teachings,
    /// wider truncation levels.
    pub fn floor() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::room();
        cfg.scenario = "builtin:floor".into();
        cfg.model.hyper.l = 100;
        cfg.model.hyper.k = 100;
        cfg.model.hyper.m0 = [1000.0, 600.0];
        cfg.out_dir = "out/floor".into();
        cfg
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.segmentation.iterations == 0 || self.model.iterations == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if self.localization.particles == 0 {
            return Err(Error::Config("particle count must be at least 1".into()));
        }
        if self.channel.beam_width == 0 {
            return Err(Error::Config("channel beam width must be at least 1".into()));
        }
        self.model.hyper.validate()?;
        Ok(())
    }

    /// Hash of the canonical JSON serialization; embedded in every output
    /// for provenance.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn segment_options(&self) -> crate::segment::SegmentOptions {
        crate::segment::SegmentOptions {
            iterations: self.segmentation.iterations,
            concentration: self.segmentation.concentration,
            p_cont: self.segmentation.p_cont,
            inventory_size: None, // set by the pipeline from the channel inventory
            acoustic_scale: self.segmentation.acoustic_scale,
            anneal_start_temp: self.segmentation.anneal_start_temp,
            greedy: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::room().validate().unwrap();
        ExperimentConfig::floor().validate().unwrap();
    }

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let cfg = ExperimentConfig::room();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let parsed: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.content_hash(), cfg.content_hash());
        assert_eq!(cfg.content_hash().len(), 64);
    }

    #[test]
    fn method_serializes_as_letter() {
        let cfg = ExperimentConfig::room();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"method\":\"A\""));
        let b: Method = serde_json::from_str("\"B\"").unwrap();
        assert_eq!(b, Method::OneBest);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::room();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::room();
        cfg.model.hyper.nu0 = 0.5;
        assert!(cfg.validate().is_err());
    }
}
