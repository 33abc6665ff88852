use std::fmt::Write as _;

use gelsim::membrane::{generate_bend_dataset, BendDataset};

use super::{split_indices, write_bytes, Context};
use crate::error::CliResult;

/// Generate and store the bend dataset plus its train/held-out split.
pub fn generate(ctx: &Context) -> CliResult<BendDataset> {
    let section = ctx.dataset_section()?;
    let cfg = section.dataset_config(ctx.cfg.seed);
    log::info!("generating {} bend frames at {} points", cfg.total_frames(), cfg.n_points);
    let data = generate_bend_dataset(&cfg)?;
    let dir = ctx.path("dataset");
    gelsim::io::save_bend_dataset(&dir, &data)?;
    let split = split_indices(data.samples.len(), section.holdout, ctx.cfg.seed);
    let mut csv = String::from("index,scenario,kappa_long_per_mm,kappa_lat_per_mm,plate,role\n");
    for (i, s) in data.samples.iter().enumerate() {
        let role = if split.holdout.binary_search(&i).is_ok() { "holdout" } else { "train" };
        let _ = writeln!(
            csv,
            "{i},{},{:e},{:e},{},{role}",
            cfg.scenarios[s.scenario].name,
            s.bend.kappa_long,
            s.bend.kappa_lat,
            s.bend.contact_plane.is_some()
        );
    }
    write_bytes(&dir.join("samples.csv"), csv.as_bytes())?;
    Ok(data)
}

pub fn run(ctx: &Context) -> CliResult<BendDataset> {
    generate(ctx)
}
