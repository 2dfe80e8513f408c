use anyhow::Result;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use skyflow::frame::io::write_gray8;
use skyflow::sky_state::{apply_window, normalize_8bit, WindowModel};

use super::atmo::detrended_frames;
use super::classify::load_classes;
use super::detrend::load_csi;
use super::Ctx;
use crate::dataset::{fresh_dir, read_intensity, require, window_values, write_intensity, Layout};

#[derive(Debug, Serialize, Deserialize)]
pub struct WindowState {
    pub min_frames: usize,
    pub frames_kept: usize,
    pub defined: bool,
}

/// Feeds the clear frames of each day, in order, to the median window
/// model.
pub fn fit(ctx: &Ctx, days: &[NaiveDate]) -> Result<WindowState> {
    let cfg = &ctx.cfg.window;
    let mut m = ctx.manifest("window-fit");
    m.param("days", &days.iter().map(|d| Layout::day_name(*d)).collect::<Vec<_>>())?;
    m.param("window", cfg)?;
    m.param("seed", &ctx.cfg.seed)?;
    let mut model = WindowModel::new(cfg.min_frames);
    for (di, &day) in days.iter().enumerate() {
        let (classes, cpath) = load_classes(ctx, day)?;
        let (cts, cvs, spath) = load_csi(ctx, day)?;
        m.input(&cpath)?;
        m.input(&spath)?;
        let mut kept = 0;
        for (t, p) in detrended_frames(ctx, day)? {
            let Some(&cls) = classes.get(&t) else { continue };
            m.input(&p)?;
            let w = window_values(&cts, &cvs, t as f64, cfg.csi_half_window_s);
            if model.update(&read_intensity(&p)?, cls, &w)? {
                kept += 1;
            }
        }
        model.end_of_day(ctx.cfg.seed.wrapping_add(di as u64));
        log::info!("{}: kept {kept} clear frames, {} in the set", Layout::day_name(day), model.len());
    }
    let dir = ctx.layout.out.join("window");
    fresh_dir(&dir)?;
    let state = WindowState {
        min_frames: model.min_frames,
        frames_kept: model.len(),
        defined: model.artifact().is_some(),
    };
    if let Some(a) = model.artifact() {
        let p = dir.join("artifact.grid");
        write_intensity(&p, a)?;
        m.output(&p)?;
    } else {
        log::warn!("only {} clear frames, the artifact needs {}", model.len(), model.min_frames);
    }
    let sp = dir.join("state.json");
    std::fs::write(&sp, serde_json::to_string_pretty(&state)?)?;
    m.output(&sp)?;
    m.write(&dir.join("fit.manifest"))?;
    Ok(state)
}

/// Removes the artifact from each detrended frame and writes the 8-bit
/// normalized frame.
pub fn apply(ctx: &Ctx, day: NaiveDate) -> Result<usize> {
    let dir = ctx.layout.out.join("window");
    require(&dir.join("state.json"), "window fit --day <days>")?;
    let art_path = dir.join("artifact.grid");
    let artifact = if art_path.exists() { Some(read_intensity(&art_path)?) } else { None };
    let mut m = ctx.manifest("window-apply");
    m.param("day", &Layout::day_name(day))?;
    m.input(&dir.join("state.json"))?;
    if artifact.is_some() {
        m.input(&art_path)?;
    }
    let frames = detrended_frames(ctx, day)?;
    let out = ctx.day_out(day).join("windowed");
    let norm = ctx.day_out(day).join("normalized");
    fresh_dir(&out)?;
    fresh_dir(&norm)?;
    for (t, p) in &frames {
        m.input(p)?;
        let clean = apply_window(&read_intensity(p)?, artifact.as_ref())?;
        let q = out.join(format!("{t}.grid"));
        write_intensity(&q, &clean)?;
        let n = norm.join(format!("{t}.png"));
        write_gray8(&n, &normalize_8bit(&clean))?;
        m.output(&q)?;
        m.output(&n)?;
    }
    m.write(&ctx.day_out(day).join("window-apply.manifest"))?;
    Ok(frames.len())
}
