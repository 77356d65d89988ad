//! Run configuration: a JSON file whose defaults mirror the apparatus
//! (640 x 7.4 µm pixels, 150 µm pointer, gain 1.5, fourteen stage positions
//! over 1300 µm). Unknown keys are rejected; flags override file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use twinmz::analysis::{PipelineConfig, StageConfig};
use twinmz::camera::{CameraConfig, NoiseConfig};
use twinmz::pathspace::NetworkMatrices;
use twinmz::pointerlab::{FidelityMode, GaussianPointer};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub stage: StageConfig,
    pub camera: CameraConfig,
    pub pointer_sigma_um: f64,
    pub fidelity: FidelityMode,
    /// Master noise seed; folded into the camera noise configuration.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Optional override of the beam-splitter/mirror matrices.
    pub network: Option<NetworkMatrices>,
    /// Extraction window in µm; defaults to the raw weak-regime bound.
    pub extraction_window_um: Option<f64>,
    pub excited_threshold: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: StageConfig::default(),
            camera: CameraConfig::default(),
            pointer_sigma_um: GaussianPointer::DEFAULT_SIGMA_UM,
            fidelity: FidelityMode::Ideal,
            seed: None,
            output_dir: PathBuf::from("out"),
            network: None,
            extraction_window_um: None,
            excited_threshold: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                Ok(cfg)
            }
        }
    }

    /// Folds CLI flags in and resolves the master seed into the camera noise
    /// block, so the echoed config fully reproduces the run.
    pub fn resolved(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(seed) = seed {
            self.seed = Some(seed);
        }
        if let Some(out) = out {
            self.output_dir = out;
        }
        if let Some(seed) = self.seed {
            self.camera.noise = Some(match self.camera.noise {
                Some(noise) => NoiseConfig { seed, ..noise },
                None => NoiseConfig::seeded(seed),
            });
        }
        self
    }

    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let pointer = GaussianPointer::new(self.pointer_sigma_um)
            .context("invalid pointer_sigma_um")?;
        self.fidelity.validate().context("invalid fidelity")?;
        Ok(PipelineConfig {
            stage: self.stage.clone(),
            camera: self.camera.clone(),
            pointer,
            fidelity: self.fidelity,
            matrices: self.network.unwrap_or_default(),
            extraction_window_um: self.extraction_window_um,
            excited_threshold: self.excited_threshold,
        })
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialization is infallible")
    }
}
