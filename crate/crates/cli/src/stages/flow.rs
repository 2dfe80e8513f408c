use std::path::PathBuf;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use skyflow::motion::{regularize, VelocityField};

use super::atmo::detrended_frames;
use super::Ctx;
use crate::dataset::{fresh_dir, list_grids, read_intensity, require, Layout};

pub fn flow_dir(ctx: &Ctx, day: NaiveDate, method: &str) -> PathBuf {
    ctx.day_out(day).join("flow").join(method)
}

/// Velocity fields between consecutive detrended frames, keyed by the
/// earlier frame's timestamp.
pub fn run(ctx: &Ctx, day: NaiveDate, method: &str) -> Result<usize> {
    let params = ctx.cfg.flow.flow_params(&ctx.registry, method)?;
    let est = ctx.registry.build(&params)?;
    let frames = detrended_frames(ctx, day)?;
    let mut m = ctx.manifest("flow");
    m.param("day", &Layout::day_name(day))?;
    m.param("params", &params)?;
    m.param("regularize", &ctx.cfg.flow.regularize.then(|| ctx.cfg.flow.regularize_options()))?;
    m.param("max_gap_s", &ctx.cfg.flow.max_gap_s)?;
    let dir = flow_dir(ctx, day, method);
    fresh_dir(&dir)?;
    let mut count = 0;
    for pair in frames.windows(2) {
        let ((t0, p0), (t1, p1)) = (&pair[0], &pair[1]);
        if t1 - t0 > ctx.cfg.flow.max_gap_s {
            continue;
        }
        m.input(p0)?;
        m.input(p1)?;
        let (a, b) = (read_intensity(p0)?, read_intensity(p1)?);
        let mut field = est.estimate(&a, &b).with_context(|| format!("flow {t0} -> {t1}"))?;
        if ctx.cfg.flow.regularize {
            field = regularize(&field, &ctx.cfg.flow.regularize_options())?;
        }
        let q = dir.join(format!("{t0}.grid"));
        field.to_grid().save(&q)?;
        m.output(&q)?;
        count += 1;
    }
    m.write(&ctx.day_out(day).join(format!("flow-{method}.manifest")))?;
    log::info!("{}: {count} {method} fields", Layout::day_name(day));
    Ok(count)
}

/// Fields written by `flow` for the configured method.
pub fn load_fields(ctx: &Ctx, day: NaiveDate) -> Result<Vec<(i64, PathBuf)>> {
    let method = &ctx.cfg.flow.method;
    let dir = flow_dir(ctx, day, method);
    require(&dir, &format!("flow --method {method} --day {}", Layout::day_name(day)))?;
    list_grids(&dir)
}

/// Speeds of the valid vectors of a stored field.
pub fn speeds(path: &std::path::Path) -> Result<Vec<f64>> {
    let f = VelocityField::from_grid(&skyflow::gridfile::GridFile::load(path)?)?;
    let mag = f.magnitude();
    Ok(mag.iter().zip(f.valid.iter()).filter(|(_, &v)| v).map(|(s, _)| *s).collect())
}
