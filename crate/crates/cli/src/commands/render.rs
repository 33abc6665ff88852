use std::fmt::Write as _;

use gelsim::membrane::{apply_indenter, HeightField};
use gelsim::optics::{render_field, LinearImage};
use gelsim::tactile::image_dims;

use super::{write_bytes, Context};
use crate::config::RenderSection;
use crate::error::CliResult;

/// One image per (scenario, indent), scenario-major.
pub fn render_all(ctx: &Context, r: &RenderSection) -> CliResult<Vec<((usize, usize), LinearImage)>> {
    let rig = ctx.cfg.rig.build()?;
    let (nx, ny) = image_dims(&rig, r.pixel_mm)?;
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm)?;
    let jobs: Vec<(usize, usize)> = (0..r.scenarios.len())
        .flat_map(|s| (0..r.indents.len()).map(move |i| (s, i)))
        .collect();
    gelsim::par::map_slice(&jobs, |&(s, i)| -> CliResult<((usize, usize), LinearImage)> {
        let ind = &r.indents[i];
        let field = apply_indenter(&flat, &ind.indenter, ind.center_mm, ind.depth_mm)?;
        Ok(((s, i), render_field(&field, &r.scenarios[s].bend, &rig)?))
    })
    .into_iter()
    .collect()
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let r = ctx.cfg.section(&ctx.cfg.render, "render")?;
    let images = render_all(ctx, r)?;
    let dir = ctx.path("render");
    let mut manifest =
        String::from("scenario,indent,png,linear,kappa_long_per_mm,kappa_lat_per_mm,center_x_mm,center_y_mm,depth_mm\n");
    for ((s, i), img) in &images {
        let (sc, ind) = (&r.scenarios[*s], &r.indents[*i]);
        let stem = format!("{}__{}", sc.name, ind.name);
        let png = format!("{stem}.png");
        let raw = format!("{stem}.linear");
        write_bytes(&dir.join(&png), &gelsim::io::srgb_png_bytes(img, r.exposure)?)?;
        write_bytes(&dir.join(&raw), &gelsim::io::linear_raw_bytes(img))?;
        let _ = writeln!(
            manifest,
            "{},{},{png},{raw},{:e},{:e},{},{},{}",
            sc.name, ind.name, sc.bend.kappa_long, sc.bend.kappa_lat, ind.center_mm[0], ind.center_mm[1], ind.depth_mm
        );
    }
    write_bytes(&dir.join("manifest.csv"), manifest.as_bytes())?;
    log::info!("rendered {} images into {}", images.len(), dir.display());
    Ok(())
}
