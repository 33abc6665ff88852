use std::fmt::Write as _;

use gelsim::membrane::{generate_bend_dataset, BendScenario, DatasetConfig};
use gelsim::proprio::{evaluate_proprio, measure_latency, reconstruction_chamfer, AutoencoderPair, CloudNorm, ProprioNet};
use gelsim::PointCloud;

use super::{ensure_dataset, load_proprio, write_bytes, Context, TAG_LATENCY};
use crate::error::CliResult;

/// Untrained network of the configured architecture at `n_points`; weights do
/// not affect timing.
pub fn latency_net(ctx: &Context, n_points: usize, mask_resolution: usize) -> CliResult<(ProprioNet, gelsim::membrane::Mask)> {
    let mut cfg = DatasetConfig::new(
        vec![BendScenario {
            name: "straight".into(),
            frames: 1,
            kappa_long_per_mm: [0.0, 0.0],
            kappa_lat_per_mm: [0.0, 0.0],
            plane: None,
        }],
        n_points,
        ctx.cfg.seed_for(TAG_LATENCY, 0),
    );
    cfg.width_mm = ctx.cfg.rig.width_mm;
    cfg.height_mm = ctx.cfg.rig.height_mm;
    cfg.mask_resolution = mask_resolution;
    let data = generate_bend_dataset(&cfg)?;
    let ae = ctx.autoencoder_config();
    let pair = AutoencoderPair::new(&ae, n_points, CloudNorm::fit(&data.shape_ref)?, ae.train.seed)?;
    let net = ProprioNet::new(pair, data.shape_ref, mask_resolution, &ctx.proprio_config(), 0)?;
    Ok((net, data.reference_mask))
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let section = ctx.cfg.evaluate.clone().unwrap_or_default();
    let net = load_proprio(ctx)?;
    let (data, split) = ensure_dataset(ctx)?;
    let held: Vec<_> = split.holdout.iter().map(|&i| (&data.samples[i].mask, &data.samples[i].deformed)).collect();
    let clouds: Vec<PointCloud> = split.holdout.iter().map(|&i| data.samples[i].deformed.clone()).collect();
    let m = evaluate_proprio(&net, &held)?;
    let ae = reconstruction_chamfer(&net.pair, &clouds)?;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "holdout_samples,{}", held.len());
    let _ = writeln!(csv, "proprio_chamfer_mm2,{:e}", m.predicted);
    let _ = writeln!(csv, "shape_ref_chamfer_mm2,{:e}", m.baseline);
    let _ = writeln!(csv, "proprio_over_baseline,{:e}", m.ratio());
    let _ = writeln!(csv, "autoencoder_chamfer_mm2,{:e}", ae);
    let dir = ctx.path("evaluate");
    write_bytes(&dir.join("metrics.csv"), csv.as_bytes())?;
    log::info!("held-out proprio Chamfer {:.4} mm^2, {:.3} of the shape-ref baseline", m.predicted, m.ratio());
    if section.latency_points > 0 && section.latency_reps > 0 {
        let (lnet, mask) = latency_net(ctx, section.latency_points, net.mask_resolution)?;
        let t = measure_latency(&lnet, &mask, section.latency_reps)?;
        let text = format!(
            "n_points,reps,median_ms\n{},{},{:.3}\n",
            section.latency_points,
            section.latency_reps,
            t.as_secs_f64() * 1e3
        );
        write_bytes(&dir.join("latency.csv"), text.as_bytes())?;
        log::info!("prediction latency at {} points: {:.1} ms", section.latency_points, t.as_secs_f64() * 1e3);
    }
    Ok(())
}
