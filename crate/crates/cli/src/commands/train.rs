use std::fmt::Write as _;

use gelsim::neural::{Checkpoint, LossCurve, TrainConfig};
use gelsim::optics::LightRig;
use gelsim::proprio::{
    bend_condition, frozen_encoder_bytes, AutoencoderPair, AutoencoderTraining, CloudNorm, ProprioNet, ProprioTraining,
};
use gelsim::tactile::{
    generate_tactile_dataset, mean_angular_error_deg, NormalModel, NormalTraining, TactileDataConfig, TactileSample,
};
use gelsim::PointCloud;

use super::{
    ensure_dataset, load_autoencoder, load_checkpoint, reference_sites, split_indices, write_bytes, Context,
    TAG_NORMALS, TAG_TACTILE_DATA,
};
use crate::error::{CliError, CliResult};
use crate::TrainTarget;

/// A resumable run that can be checkpointed between epochs.
trait Run {
    fn epoch(&self) -> usize;
    fn run_until(&mut self, end: usize) -> gelsim::Result<()>;
    fn checkpoint(&self) -> Checkpoint;
    fn curve(&self) -> &LossCurve;
}

struct AeRun<'a> {
    run: AutoencoderTraining,
    shape_ref: &'a PointCloud,
}

impl Run for AeRun<'_> {
    fn epoch(&self) -> usize {
        self.run.state.epoch
    }
    fn run_until(&mut self, end: usize) -> gelsim::Result<()> {
        self.run.run_until(end)
    }
    fn checkpoint(&self) -> Checkpoint {
        self.run.pair().to_checkpoint(self.shape_ref).with_train_state(&self.run.state)
    }
    fn curve(&self) -> &LossCurve {
        &self.run.state.curve
    }
}

impl Run for ProprioTraining {
    fn epoch(&self) -> usize {
        self.state.epoch
    }
    fn run_until(&mut self, end: usize) -> gelsim::Result<()> {
        ProprioTraining::run_until(self, end)
    }
    fn checkpoint(&self) -> Checkpoint {
        self.net().to_checkpoint().with_train_state(&self.state)
    }
    fn curve(&self) -> &LossCurve {
        &self.state.curve
    }
}

impl Run for NormalTraining<'_> {
    fn epoch(&self) -> usize {
        self.state.epoch
    }
    fn run_until(&mut self, end: usize) -> gelsim::Result<()> {
        NormalTraining::run_until(self, end)
    }
    fn checkpoint(&self) -> Checkpoint {
        self.model().to_checkpoint().with_train_state(&self.state)
    }
    fn curve(&self) -> &LossCurve {
        &self.state.curve
    }
}

/// Epoch-by-epoch training; the checkpoint on disk is always the last state
/// that trained without diverging.
fn drive(ctx: &Context, name: &str, run: &mut dyn Run, end: usize) -> CliResult<()> {
    let path = ctx.model_path(name);
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let save = |run: &dyn Run| -> CliResult<()> {
        run.checkpoint().save(&path)?;
        write_bytes(&ctx.path("models").join(format!("{name}_loss.csv")), run.curve().to_csv().as_bytes())
    };
    save(run)?;
    while run.epoch() < end {
        let next = run.epoch() + 1;
        if let Err(e) = run.run_until(next) {
            log::error!("{name} training failed in epoch {}; {} keeps epoch {}", next - 1, path.display(), run.epoch());
            return Err(match e {
                gelsim::Error::Diverged { .. } => CliError::Training(e.to_string()),
                other => other.into(),
            });
        }
        save(run)?;
        if let Some(l) = run.curve().last() {
            log::info!("{name} epoch {} loss {l:e}", run.epoch());
        }
    }
    Ok(())
}

fn end_epoch(train: &TrainConfig, until: Option<usize>) -> usize {
    until.map_or(train.epochs, |u| u.min(train.epochs))
}

fn resume_state(ctx: &Context, name: &str, train: &TrainConfig) -> CliResult<(Checkpoint, gelsim::neural::TrainState)> {
    let ck = load_checkpoint(&ctx.model_path(name), "checkpoint to resume from")?;
    let st = ck.train_state(train.optimizer)?;
    Ok((ck, st))
}

pub fn run(ctx: &Context, target: TrainTarget, resume: bool, until: Option<usize>) -> CliResult<()> {
    match target {
        TrainTarget::Autoencoder => train_autoencoder(ctx, resume, until),
        TrainTarget::Proprio => train_proprio(ctx, resume, until),
        TrainTarget::Normals => train_normals(ctx, resume, until),
    }
}

fn train_autoencoder(ctx: &Context, resume: bool, until: Option<usize>) -> CliResult<()> {
    let cfg = ctx.autoencoder_config();
    let (data, split) = ensure_dataset(ctx)?;
    let clouds: Vec<PointCloud> = split.train.iter().map(|&i| data.samples[i].deformed.clone()).collect();
    let run = if resume {
        let (ck, st) = resume_state(ctx, "autoencoder", &cfg.train)?;
        let (pair, _) = AutoencoderPair::from_checkpoint(&ck)?;
        AutoencoderTraining::resume(pair, &clouds, cfg.train, st)?
    } else {
        let pair = AutoencoderPair::new(&cfg, data.shape_ref.len(), CloudNorm::fit(&data.shape_ref)?, cfg.train.seed)?;
        AutoencoderTraining::new(pair, &clouds, cfg.train)?
    };
    let mut r = AeRun {
        run,
        shape_ref: &data.shape_ref,
    };
    drive(ctx, "autoencoder", &mut r, end_epoch(&cfg.train, until))
}

fn train_proprio(ctx: &Context, resume: bool, until: Option<usize>) -> CliResult<()> {
    let (pair, shape_ref) = load_autoencoder(ctx)?;
    let cfg = ctx.proprio_config();
    let (data, split) = ensure_dataset(ctx)?;
    let pairs: Vec<_> = split.train.iter().map(|&i| (&data.samples[i].mask, &data.samples[i].deformed)).collect();
    let frozen = frozen_encoder_bytes(&pair);
    let mut run = if resume {
        let (ck, st) = resume_state(ctx, "proprio", &cfg.train)?;
        ProprioTraining::resume(ProprioNet::from_checkpoint(&ck)?, &pairs, cfg.train, st)?
    } else {
        let net = ProprioNet::new(pair, shape_ref, data.reference_mask.width, &cfg, cfg.train.seed)?;
        ProprioTraining::new(net, &pairs, cfg.train)?
    };
    drive(ctx, "proprio", &mut run, end_epoch(&cfg.train, until))?;
    if frozen_encoder_bytes(&run.net().pair) != frozen {
        return Err(CliError::Training("proprio network does not carry the trained autoencoder's encoder".into()));
    }
    Ok(())
}

/// Press data and train/held-out split for the normal regressor.
pub fn tactile_data(
    ctx: &Context,
    rig: &LightRig,
    pair: &AutoencoderPair,
    shape_ref: &PointCloud,
) -> CliResult<(Vec<TactileSample>, Vec<TactileSample>)> {
    let t = ctx.cfg.section(&ctx.cfg.tactile, "tactile")?;
    let data_cfg = TactileDataConfig {
        seed: ctx.cfg.seed_for(TAG_TACTILE_DATA, t.data.seed),
        ..t.data.clone()
    };
    let sites = reference_sites(shape_ref);
    let cond = bend_condition(pair, &sites, rig.width_mm, rig.height_mm);
    log::info!("rendering {} training presses", data_cfg.n_samples);
    let samples = generate_tactile_dataset(rig, &data_cfg, &cond)?;
    let n_hold = (t.holdout_fraction * samples.len() as f64).round() as usize;
    let split = split_indices(samples.len(), n_hold, ctx.cfg.seed_for(TAG_TACTILE_DATA, 1));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&split.train), pick(&split.holdout)))
}

pub fn normals_train_config(ctx: &Context) -> CliResult<TrainConfig> {
    let t = ctx.cfg.section(&ctx.cfg.tactile, "tactile")?;
    Ok(TrainConfig {
        seed: ctx.cfg.seed_for(TAG_NORMALS, t.train.seed),
        ..t.train
    })
}

fn train_normals(ctx: &Context, resume: bool, until: Option<usize>) -> CliResult<()> {
    let t = ctx.cfg.section(&ctx.cfg.tactile, "tactile")?;
    let (pair, shape_ref) = load_autoencoder(ctx)?;
    if t.model.cond_dim != pair.global_dim() {
        return Err(CliError::Config(format!(
            "tactile model cond_dim {} differs from the autoencoder's global feature size {}",
            t.model.cond_dim,
            pair.global_dim()
        )));
    }
    let rig = ctx.cfg.rig.build()?;
    let train_cfg = normals_train_config(ctx)?;
    let (train_set, held) = tactile_data(ctx, &rig, &pair, &shape_ref)?;
    let mut run = if resume {
        let (ck, st) = resume_state(ctx, "normals", &train_cfg)?;
        NormalTraining::resume(NormalModel::from_checkpoint(&ck)?, &train_set, train_cfg, st)?
    } else {
        NormalTraining::new(NormalModel::new(&t.model, train_cfg.seed)?, &train_set, train_cfg)?
    };
    drive(ctx, "normals", &mut run, end_epoch(&train_cfg, until))?;
    let mut csv = String::from("split,presses,mean_angular_error_deg\n");
    let _ = writeln!(csv, "train,{},{:.6}", train_set.len(), mean_angular_error_deg(run.model(), &train_set)?);
    if !held.is_empty() {
        let _ = writeln!(csv, "holdout,{},{:.6}", held.len(), mean_angular_error_deg(run.model(), &held)?);
    }
    write_bytes(&ctx.path("models").join("normals_eval.csv"), csv.as_bytes())
}
