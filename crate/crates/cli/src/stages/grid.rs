use std::path::{Path, PathBuf};

use anyhow::Result;
use skyflow::gridfile::{GridFile, Plane};
use skyflow::perspective::{flat_earth_grid, great_circle_grid, AtmoGrid, GridOptions};

use super::Ctx;
use crate::config::GridMode;

pub fn to_file(g: &AtmoGrid) -> GridFile {
    GridFile {
        planes: vec![
            Plane::new("x", "m", g.x.clone()),
            Plane::new("y", "m", g.y.clone()),
            Plane::new("dx", "m/px", g.dx.clone()),
            Plane::new("dy", "m/px", g.dy.clone()),
        ],
        mask: None,
    }
}

/// Cloud-layer coordinates of every pixel for the configured camera.
pub fn run(ctx: &Ctx, output: Option<&Path>, csv: bool) -> Result<PathBuf> {
    let g = &ctx.cfg.grid;
    let opts = GridOptions {
        flat_form: g.flat_form,
        ..Default::default()
    };
    let e = g.elevation_deg.to_radians();
    let grid = match g.mode {
        GridMode::Flat => flat_earth_grid(&ctx.cfg.camera, e, g.height_m, &opts)?,
        GridMode::Sphere => great_circle_grid(&ctx.cfg.camera, e, g.height_m, &opts)?,
    };
    let mode = match g.mode {
        GridMode::Flat => "flat",
        GridMode::Sphere => "sphere",
    };
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => ctx
            .layout
            .out
            .join("grid")
            .join(format!("{mode}-e{}-h{}.grid", g.elevation_deg, g.height_m)),
    };
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let file = to_file(&grid);
    file.save(&path)?;
    let mut m = ctx.manifest("grid");
    m.param("grid", g)?;
    m.param("camera", &ctx.cfg.camera)?;
    m.output(&path)?;
    if csv {
        let c = path.with_extension("csv");
        file.save_csv(&c)?;
        m.output(&c)?;
    }
    m.write(&path.with_extension("manifest"))?;
    Ok(path)
}
