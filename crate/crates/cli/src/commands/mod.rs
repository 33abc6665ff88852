//! One module per subcommand. Every output path is relative to `out_dir`
//! and no output records wall-clock time except `evaluate/latency.csv`.

pub mod dataset;
pub mod design;
pub mod evaluate;
pub mod reconstruct;
pub mod render;
pub mod train;

use std::path::{Path, PathBuf};

use gelsim::membrane::{derive_seed, BendDataset};
use gelsim::neural::{epoch_order, Checkpoint};
use gelsim::proprio::{AutoencoderConfig, AutoencoderPair, ProprioConfig, ProprioNet};
use gelsim::tactile::NormalModel;
use gelsim::PointCloud;

use crate::config::{DatasetSection, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const TAG_SPLIT: u64 = 0x5911;
pub const TAG_AUTOENCODER: u64 = 0xae;
pub const TAG_PROPRIO: u64 = 0x9e0;
pub const TAG_TACTILE_DATA: u64 = 0x7ac;
pub const TAG_NORMALS: u64 = 0x40;
pub const TAG_LATENCY: u64 = 0x1a7;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub oracle: bool,
}

impl Context {
    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    pub fn dataset_section(&self) -> CliResult<&DatasetSection> {
        self.cfg.section(&self.cfg.dataset, "dataset")
    }

    /// Autoencoder settings with the run seed mixed into the training seed.
    pub fn autoencoder_config(&self) -> AutoencoderConfig {
        let mut c = self.cfg.autoencoder.clone().unwrap_or_default();
        c.train.seed = self.cfg.seed_for(TAG_AUTOENCODER, c.train.seed);
        c
    }

    pub fn proprio_config(&self) -> ProprioConfig {
        let mut c = self.cfg.proprio.clone().unwrap_or_default();
        c.train.seed = self.cfg.seed_for(TAG_PROPRIO, c.train.seed);
        c
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.path("models").join(format!("{name}.ckpt"))
    }
}

/// Train and held-out sample indices of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// The first `holdout` entries of a seeded permutation are held out; both
/// halves are returned in ascending order.
pub fn split_indices(n: usize, holdout: usize, seed: u64) -> Split {
    let order = epoch_order(n, derive_seed(seed, TAG_SPLIT, 0), 0);
    let k = holdout.min(n);
    let mut held = order[..k].to_vec();
    let mut train = order[k..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    Split { train, holdout: held }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, what: &str) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::missing(path, what));
    }
    Ok(Checkpoint::load(path)?)
}

pub fn load_autoencoder(ctx: &Context) -> CliResult<(AutoencoderPair, PointCloud)> {
    let ck = load_checkpoint(&ctx.model_path("autoencoder"), "trained autoencoder (run `train autoencoder`)")?;
    Ok(AutoencoderPair::from_checkpoint(&ck)?)
}

pub fn load_proprio(ctx: &Context) -> CliResult<ProprioNet> {
    let ck = load_checkpoint(&ctx.model_path("proprio"), "trained proprio network (run `train proprio`)")?;
    Ok(ProprioNet::from_checkpoint(&ck)?)
}

pub fn load_normals(ctx: &Context) -> CliResult<NormalModel> {
    let ck = load_checkpoint(&ctx.model_path("normals"), "trained normal model (run `train normals`)")?;
    Ok(NormalModel::from_checkpoint(&ck)?)
}

/// Membrane sites of the reference cloud, which lies in the flat membrane plane.
pub fn reference_sites(shape_ref: &PointCloud) -> Vec<[f64; 2]> {
    shape_ref.points().iter().map(|p| [p[0], p[1]]).collect()
}

/// Dataset on disk, generated first when allowed.
pub fn ensure_dataset(ctx: &Context) -> CliResult<(BendDataset, Split)> {
    let section = ctx.dataset_section()?;
    let dir = ctx.path("dataset");
    let data = if dir.join("clouds.ckpt").exists() {
        gelsim::io::load_bend_dataset(&dir)?
    } else if section.generate {
        dataset::generate(ctx)?
    } else {
        return Err(CliError::missing(dir, "bend dataset (generation disabled)"));
    };
    let expected = section.dataset_config(ctx.cfg.seed).total_frames();
    if data.samples.len() != expected {
        return Err(CliError::Config(format!(
            "dataset on disk has {} samples, config describes {expected}",
            data.samples.len()
        )));
    }
    let split = split_indices(data.samples.len(), section.holdout, ctx.cfg.seed);
    Ok((data, split))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}
