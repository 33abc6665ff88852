use std::fmt::Write as _;
use std::path::Path;

use gelsim::contact::proposals_csv;
use gelsim::io::{contact_mesh, depth_png_bytes, normal_png_bytes, ply_bytes};
use gelsim::membrane::MembraneSurface;
use gelsim::proprio::bend_condition;
use gelsim::tactile::{grid_csv, pyramid_sweep, reconstruct, Reconstruction, SweepCase};

use super::{load_autoencoder, load_normals, load_proprio, reference_sites, write_bytes, Context};
use crate::config::{ReconstructInput, ReconstructSection};
use crate::error::{CliError, CliResult};

fn write_artifacts(dir: &Path, stem: &str, rec: &Reconstruction, full_scale_mm: f64) -> CliResult<()> {
    write_bytes(&dir.join(format!("{stem}normals.png")), &normal_png_bytes(&rec.normals)?)?;
    write_bytes(&dir.join(format!("{stem}depth.png")), &depth_png_bytes(&rec.field, full_scale_mm)?)?;
    write_bytes(&dir.join(format!("{stem}mesh.ply")), &ply_bytes(&contact_mesh(&rec.field)))
}

/// Synthetic pyramid sweep with conditioning from the frozen encoder.
pub fn sweep(ctx: &Context, r: &ReconstructSection) -> CliResult<Vec<SweepCase>> {
    let model = load_normals(ctx)?;
    let (pair, shape_ref) = load_autoencoder(ctx)?;
    let rig = ctx.cfg.rig.build()?;
    let sites = reference_sites(&shape_ref);
    let cond = bend_condition(&pair, &sites, rig.width_mm, rig.height_mm);
    Ok(pyramid_sweep(&rig, &model, &cond, &r.sweep, &r.pipeline)?)
}

fn run_sweep(ctx: &Context, r: &ReconstructSection) -> CliResult<()> {
    let cases = sweep(ctx, r)?;
    let dir = ctx.path("reconstruct");
    let rows: Vec<_> = cases.iter().map(|c| c.row).collect();
    write_bytes(&dir.join("grid.csv"), grid_csv(&rows).as_bytes())?;
    if r.write_artifacts {
        for c in &cases {
            let stem = format!("b{:02}_l{:02}_", c.row.bend_level, c.row.location);
            write_artifacts(&dir.join("cells"), &stem, &c.reconstruction, ctx.cfg.rig.gel_thickness_mm)?;
        }
    }
    log::info!("reconstructed {} sweep cells", cases.len());
    Ok(())
}

/// Reconstruction of one stored linear image.
pub fn single(ctx: &Context, r: &ReconstructSection, input: &ReconstructInput) -> CliResult<Reconstruction> {
    let model = load_normals(ctx)?;
    if !input.image.exists() {
        return Err(CliError::missing(&input.image, "input image"));
    }
    let img = gelsim::io::read_linear(&input.image)?;
    let rig = ctx.cfg.rig.build()?;
    let condition = match &input.mask {
        Some(m) => {
            if !m.exists() {
                return Err(CliError::missing(m, "contour mask"));
            }
            let net = load_proprio(ctx)?;
            net.predict_shape(&gelsim::io::read_mask(m)?)?.global
        }
        None => {
            let (pair, shape_ref) = load_autoencoder(ctx)?;
            let sites = reference_sites(&shape_ref);
            let cond = bend_condition(&pair, &sites, rig.width_mm, rig.height_mm);
            cond(&input.bend)?
        }
    };
    let surface = MembraneSurface::new(rig.width_mm, rig.height_mm, &input.bend)?;
    Ok(reconstruct(&img, &rig, &surface, &model, &condition, &r.pipeline)?)
}

fn run_single(ctx: &Context, r: &ReconstructSection, input: &ReconstructInput) -> CliResult<()> {
    let rec = single(ctx, r, input)?;
    let dir = ctx.path("reconstruct");
    write_artifacts(&dir, "", &rec, ctx.cfg.rig.gel_thickness_mm)?;
    write_bytes(&dir.join("proposals.csv"), proposals_csv(&rec.selection).as_bytes())?;
    let mut csv = String::from("contact,region,flagged_pixels,max_depth_mm\n");
    let region = rec
        .region
        .map_or("-".to_string(), |b| format!("{}:{}:{}:{}", b.x0, b.y0, b.x1, b.y1));
    let _ = writeln!(
        csv,
        "{},{region},{},{:.6}",
        if rec.has_contact() { "contact" } else { "no-contact" },
        rec.flagged,
        rec.field.max_depth()
    );
    write_bytes(&dir.join("metrics.csv"), csv.as_bytes())?;
    Ok(())
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let r = ctx.cfg.section(&ctx.cfg.reconstruct, "reconstruct")?;
    match &r.input {
        Some(input) => run_single(ctx, r, input),
        None => run_sweep(ctx, r),
    }
}
