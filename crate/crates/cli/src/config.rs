use std::path::{Path, PathBuf};

use gelsim::design::{ColorSpace, DesignScenario, DEFAULT_BUDGET};
use gelsim::membrane::{derive_seed, BendParams, DatasetConfig, Indenter, DEFAULT_GEL_THICKNESS_MM};
use gelsim::optics::{parse_pattern, LightRig, DEFAULT_INTENSITY, REFERENCE_PATTERN};
use gelsim::proprio::{desk_dataset_config, AutoencoderConfig, ProprioConfig};
use gelsim::tactile::{NormalModelConfig, ReconstructConfig, SweepConfig, TactileDataConfig};
use gelsim::neural::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Whole experiment description. Every section is optional until a command
/// needs it; unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub rig: RigConfig,
    pub render: Option<RenderSection>,
    pub design: Option<DesignSection>,
    pub dataset: Option<DatasetSection>,
    pub autoencoder: Option<AutoencoderConfig>,
    pub proprio: Option<ProprioConfig>,
    pub tactile: Option<TactileSection>,
    pub reconstruct: Option<ReconstructSection>,
    pub evaluate: Option<EvaluateSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: default_out(),
            rig: RigConfig::default(),
            render: None,
            design: None,
            dataset: None,
            autoencoder: None,
            proprio: None,
            tactile: None,
            reconstruct: None,
            evaluate: None,
        }
    }
}

/// Perimeter fiber rig; one light per pattern letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub pattern: String,
    pub width_mm: f64,
    pub height_mm: f64,
    pub gel_thickness_mm: f64,
    pub alpha: f64,
    pub intensity: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            pattern: REFERENCE_PATTERN.to_string(),
            width_mm: gelsim::membrane::DEFAULT_WIDTH_MM,
            height_mm: gelsim::membrane::DEFAULT_HEIGHT_MM,
            gel_thickness_mm: DEFAULT_GEL_THICKNESS_MM,
            alpha: 2.0,
            intensity: DEFAULT_INTENSITY,
        }
    }
}

impl RigConfig {
    pub fn build(&self) -> CliResult<LightRig> {
        let colors = parse_pattern(&self.pattern).map_err(config_err)?;
        LightRig::perimeter(
            colors.len(),
            self.width_mm,
            self.height_mm,
            self.gel_thickness_mm,
            self.alpha,
            self.intensity,
            &colors,
        )
        .map_err(config_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderScenario {
    pub name: String,
    #[serde(default)]
    pub bend: BendParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndentSpec {
    pub name: String,
    pub indenter: Indenter,
    pub center_mm: [f64; 2],
    pub depth_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    pub scenarios: Vec<RenderScenario>,
    pub indents: Vec<IndentSpec>,
    #[serde(default = "default_render_pitch")]
    pub pixel_mm: f64,
    /// Linear values are multiplied by this before sRGB encoding.
    #[serde(default = "default_exposure")]
    pub exposure: f64,
}

fn default_render_pitch() -> f64 {
    0.5
}
fn default_exposure() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default = "default_group")]
    pub group_size: usize,
    #[serde(default = "default_budget")]
    pub budget: u128,
    #[serde(default = "default_render_pitch")]
    pub pixel_mm: f64,
    #[serde(default)]
    pub color_space: ColorSpace,
    pub indenter: Option<Indenter>,
    pub depth_mm: Option<f64>,
    /// Defaults to 3 bends x 3 locations.
    pub scenarios: Option<Vec<DesignScenario>>,
}

fn default_group() -> usize {
    1
}
fn default_budget() -> u128 {
    DEFAULT_BUDGET
}

/// Bending data for the autoencoder and the proprio network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_mask_resolution")]
    pub mask_resolution: usize,
    /// Generate the dataset when it is not on disk.
    #[serde(default = "default_true")]
    pub generate: bool,
    /// Replaces the built-in free/plate scenarios.
    pub custom: Option<DatasetConfig>,
}

fn default_frames() -> usize {
    400
}
fn default_holdout() -> usize {
    100
}
fn default_points() -> usize {
    512
}
fn default_mask_resolution() -> usize {
    256
}
fn default_true() -> bool {
    true
}

impl DatasetSection {
    pub fn dataset_config(&self, seed: u64) -> DatasetConfig {
        let mut cfg = match &self.custom {
            Some(c) => c.clone(),
            None => desk_dataset_config(self.frames + self.holdout, self.n_points, 0),
        };
        cfg.seed = derive_seed(seed, 0xda7a, cfg.seed);
        if self.custom.is_none() {
            cfg.mask_resolution = self.mask_resolution;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TactileSection {
    #[serde(default)]
    pub data: TactileDataConfig,
    #[serde(default)]
    pub model: NormalModelConfig,
    #[serde(default = "default_tactile_train")]
    pub train: TrainConfig,
    /// Fraction of presses held out for evaluation.
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
}

pub fn default_tactile_train() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        batch_size: 256,
        ..TrainConfig::default()
    }
}

fn default_holdout_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructInput {
    /// Linear image dump.
    pub image: PathBuf,
    /// Contour mask used through the proprio network for conditioning.
    pub mask: Option<PathBuf>,
    /// Bend used for the background model and, without a mask, for conditioning.
    #[serde(default)]
    pub bend: BendParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSection {
    #[serde(default)]
    pub pipeline: ReconstructConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Reconstruct a given image instead of the synthetic sweep.
    pub input: Option<ReconstructInput>,
    /// Write normal/depth PNGs and meshes for every sweep cell.
    #[serde(default = "default_true")]
    pub write_artifacts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub latency_points: usize,
    pub latency_reps: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            latency_points: 8192,
            latency_reps: 5,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        s.as_ref()
            .ok_or_else(|| CliError::Config(format!("config has no [{name}] section")))
    }

    /// Component seed: the top-level seed mixed with a per-component tag and
    /// the component's own seed.
    pub fn seed_for(&self, tag: u64, own: u64) -> u64 {
        derive_seed(self.seed, tag, own)
    }

    /// Checks that need no computation.
    pub fn validate(&self) -> CliResult<()> {
        self.rig.build()?;
        if let Some(r) = &self.render {
            if r.scenarios.is_empty() || r.indents.is_empty() {
                return Err(config_err("render needs at least one scenario and one indent"));
            }
            if !(r.pixel_mm > 0.0) || !(r.exposure > 0.0) {
                return Err(config_err("render pixel_mm and exposure must be positive"));
            }
            for s in &r.scenarios {
                s.bend.validate(self.rig.width_mm, self.rig.height_mm).map_err(config_err)?;
            }
            for i in &r.indents {
                i.indenter.validate().map_err(config_err)?;
            }
            let mut names: Vec<&str> = r.scenarios.iter().map(|s| s.name.as_str()).collect();
            names.extend(r.indents.iter().map(|s| s.name.as_str()));
            if names.iter().any(|n| n.is_empty() || n.contains(['/', '\\', ','])) {
                return Err(config_err("scenario and indent names must be non-empty without '/', '\\' or ','"));
            }
        }
        if let Some(d) = &self.design {
            if d.group_size == 0 || !(d.pixel_mm > 0.0) {
                return Err(config_err("design group_size and pixel_mm must be positive"));
            }
        }
        if let Some(d) = &self.dataset {
            d.dataset_config(self.seed).validate().map_err(config_err)?;
            if d.holdout == 0 || d.frames == 0 {
                return Err(config_err("dataset frames and holdout must be positive"));
            }
        }
        for t in [self.autoencoder.as_ref().map(|a| &a.train), self.proprio.as_ref().map(|p| &p.train)]
            .into_iter()
            .flatten()
        {
            t.validate().map_err(config_err)?;
        }
        if let Some(t) = &self.tactile {
            t.train.validate().map_err(config_err)?;
            if !(0.0..1.0).contains(&t.holdout_fraction) {
                return Err(config_err("tactile holdout_fraction must lie in [0, 1)"));
            }
            if t.data.n_samples == 0 || t.data.indenters.is_empty() {
                return Err(config_err("tactile data needs samples and indenters"));
            }
        }
        Ok(())
    }
}
