use std::fmt::Write as _;

use gelsim::design::{grid_search, BasisCache, DesignScenario, DesignSetup, SearchMode, SearchResult};
use gelsim::tactile::image_dims;
use serde::Serialize;

use super::{write_bytes, Context};
use crate::config::{DesignSection, RigConfig};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct RigFile<'a> {
    rig: &'a RigConfig,
}

pub fn build_cache(ctx: &Context, d: &DesignSection) -> CliResult<BasisCache> {
    let rig = ctx.cfg.rig.build()?;
    let (nx, ny) = image_dims(&rig, d.pixel_mm)?;
    let mut setup = DesignSetup::new(rig);
    setup.nx = nx;
    setup.ny = ny;
    setup.color_space = d.color_space;
    if let Some(i) = d.indenter {
        setup.indenter = i;
    }
    if let Some(depth) = d.depth_mm {
        setup.depth_mm = depth;
    }
    let scenarios = d
        .scenarios
        .clone()
        .unwrap_or_else(|| DesignScenario::default_set(ctx.cfg.rig.width_mm, ctx.cfg.rig.height_mm));
    Ok(BasisCache::build(&setup, &scenarios)?)
}

pub fn search(ctx: &Context, d: &DesignSection, mode: SearchMode) -> CliResult<(BasisCache, SearchResult)> {
    let cache = build_cache(ctx, d)?;
    let res = grid_search(&cache, d.group_size, d.budget, mode)?;
    Ok((cache, res))
}

pub fn run(ctx: &Context) -> CliResult<()> {
    let d = ctx.cfg.section(&ctx.cfg.design, "design")?;
    let (cache, res) = search(ctx, d, SearchMode::Fast)?;
    let dir = ctx.path("design");
    write_bytes(&dir.join("scores.csv"), res.table.to_csv().as_bytes())?;
    let best_rig = RigConfig {
        pattern: res.best.pattern(),
        ..ctx.cfg.rig.clone()
    };
    let toml = toml::to_string(&RigFile { rig: &best_rig }).map_err(|e| CliError::Config(e.to_string()))?;
    write_bytes(&dir.join("best_rig.toml"), toml.as_bytes())?;
    let mut summary = String::from("mode,candidates,best_index,best_pattern,aggregate\n");
    let _ = writeln!(
        summary,
        "superposition,{},{},{},{:e}",
        res.table.len(),
        res.best_index,
        res.best.pattern(),
        res.best_score.aggregate
    );
    if ctx.oracle {
        let direct = grid_search(&cache, d.group_size, d.budget, SearchMode::Direct)?;
        let _ = writeln!(
            summary,
            "direct,{},{},{},{:e}",
            direct.table.len(),
            direct.best_index,
            direct.best.pattern(),
            direct.best_score.aggregate
        );
        let agree = direct.best_index == res.best_index;
        write_bytes(&dir.join("oracle.csv"), format!("argmax_agrees\n{agree}\n").as_bytes())?;
        if !agree {
            log::warn!(
                "oracle disagrees: superposition picked {}, direct search {}",
                res.best.pattern(),
                direct.best.pattern()
            );
        }
    }
    write_bytes(&dir.join("summary.csv"), summary.as_bytes())?;
    log::info!("best of {} assignments: {}", res.table.len(), res.best.pattern());
    Ok(())
}
