use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use skyflow::atmosphere::{
    detrend_frame, fit_frame, fit_model_set, AtmoFeatures, AtmoFitOptions, AtmoModelSet, DetrendOptions, FittedFrame,
};
use skyflow::frame::io::{list_timestamped, read_gray16, write_numeric_csv};
use skyflow::frame::Frame;
use skyflow::sky_state::CSI_GATE;
use skyflow::solar::sun_position_unix;

use super::{detrend::load_csi, Ctx};
use crate::dataset::{fresh_dir, interpolate, read_series, require, window_values, write_intensity, Layout};
use crate::manifest::Manifest;

/// Weather and sun-position samples of one day.
pub struct DayConditions {
    weather: Vec<Vec<f64>>,
    positions: Vec<Vec<f64>>,
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

impl DayConditions {
    pub fn load(ctx: &Ctx, day: NaiveDate, m: &mut Manifest) -> Result<Self> {
        let din = ctx.layout.require_input(day)?;
        let (weather, wf) = read_series(&din.join("weather"), 4)?;
        if weather.is_empty() {
            bail!("{} has no weather samples", din.display());
        }
        let (positions, pf) = read_series(&din.join("position"), 3)?;
        for f in wf.iter().chain(&pf) {
            m.input(f)?;
        }
        Ok(DayConditions { weather, positions })
    }

    fn weather_at(&self, k: usize, t: f64) -> f64 {
        interpolate(&column(&self.weather, 0), &column(&self.weather, k), t).expect("non-empty")
    }

    pub fn pressure(&self, t: f64) -> f64 {
        self.weather_at(3, t)
    }

    /// Sun elevation and azimuth in degrees.
    pub fn sun(&self, ctx: &Ctx, t: f64) -> Result<(f64, f64)> {
        if self.positions.is_empty() {
            let p = sun_position_unix(&ctx.cfg.site, t)?;
            return Ok((p.elevation.to_degrees(), p.azimuth.to_degrees()));
        }
        let ts = column(&self.positions, 0);
        Ok((
            interpolate(&ts, &column(&self.positions, 1), t).expect("non-empty"),
            interpolate(&ts, &column(&self.positions, 2), t).expect("non-empty"),
        ))
    }

    pub fn features(&self, ctx: &Ctx, t: f64) -> Result<AtmoFeatures> {
        let (elevation, azimuth) = self.sun(ctx, t)?;
        Ok(AtmoFeatures {
            air_temp: self.weather_at(1, t),
            dew_point: self.weather_at(2, t),
            elevation,
            azimuth,
        })
    }
}

/// Averaged infrared frames written by `ingest`.
pub fn ingested_frames(ctx: &Ctx, day: NaiveDate) -> Result<Vec<(i64, PathBuf)>> {
    let dir = ctx.day_out(day).join("infrared");
    require(&dir, &format!("ingest --day {}", Layout::day_name(day)))?;
    Ok(list_timestamped(&dir, "png")?)
}

pub fn model_path(ctx: &Ctx) -> PathBuf {
    ctx.layout.out.join("atmo").join("model.json")
}

/// Fits the background parameters on clear frames of every day and the
/// regressors that predict them.
pub fn fit(ctx: &Ctx, days: &[NaiveDate]) -> Result<AtmoModelSet> {
    let cfg = &ctx.cfg.atmo;
    let mut m = ctx.manifest("atmo-fit");
    m.param("days", &days.iter().map(|d| Layout::day_name(*d)).collect::<Vec<_>>())?;
    m.param("atmo", cfg)?;
    let mut opts = AtmoFitOptions::default();
    opts.descent.max_iters = cfg.max_iters;
    let mut fitted = Vec::new();
    let mut rows = Vec::new();
    for (di, &day) in days.iter().enumerate() {
        let frames = ingested_frames(ctx, day)?;
        let (cts, cvs, cpath) = load_csi(ctx, day)?;
        m.input(&cpath)?;
        let cond = DayConditions::load(ctx, day, &mut m)?;
        let clear: Vec<&(i64, PathBuf)> = frames
            .iter()
            .filter(|(t, _)| {
                let w = window_values(&cts, &cvs, *t as f64, cfg.csi_half_window_s);
                !w.is_empty() && (1.0 - w.iter().sum::<f64>() / w.len() as f64).abs() <= CSI_GATE
            })
            .step_by(cfg.stride)
            .collect();
        log::info!("{}: fitting {} clear frames", Layout::day_name(day), clear.len());
        for (t, path) in clear {
            m.input(path)?;
            let px = read_gray16(path)?;
            let sun = Frame::new(px.clone(), *t).center();
            let fit = fit_frame(&px, sun, &cfg.init, &opts).with_context(|| format!("fitting {}", path.display()))?;
            let features = cond.features(ctx, *t as f64)?;
            let p = fit.params;
            rows.push(vec![
                *t as f64,
                features.air_temp,
                features.dew_point,
                features.elevation,
                features.azimuth,
                p.sigma1,
                p.lambda1,
                p.sigma2,
                p.lambda2,
                fit.loss,
            ]);
            fitted.push(FittedFrame {
                day: di as u32,
                features,
                params: p,
            });
        }
    }
    if fitted.is_empty() {
        bail!("no clear frames to fit on the given days");
    }
    let model = fit_model_set(&fitted, &cfg.orders, &cfg.lambdas).context("fitting the parameter regressors")?;
    let dir = ctx.layout.out.join("atmo");
    fresh_dir(&dir)?;
    let path = model_path(ctx);
    model.save(&path)?;
    let fits = dir.join("fits.csv");
    write_numeric_csv(
        &fits,
        &["unix", "air_temp", "dew_point", "elevation", "azimuth", "sigma1", "lambda1", "sigma2", "lambda2", "loss"],
        &rows,
    )?;
    m.output(&path)?;
    m.output(&fits)?;
    m.write(&dir.join("fit.manifest"))?;
    Ok(model)
}

/// Removes the predicted background from every frame of the day.
pub fn apply(ctx: &Ctx, day: NaiveDate) -> Result<usize> {
    let path = model_path(ctx);
    require(&path, "atmo fit --day <clear days>")?;
    let model = AtmoModelSet::load(&path)?;
    let frames = ingested_frames(ctx, day)?;
    let mut m = ctx.manifest("atmo-apply");
    m.param("day", &Layout::day_name(day))?;
    m.param("occlusion_threshold", &ctx.cfg.atmo.occlusion_threshold)?;
    m.param("sun_radius", &ctx.cfg.atmo.sun_radius)?;
    m.input(&path)?;
    let cond = DayConditions::load(ctx, day, &mut m)?;
    let opts = DetrendOptions {
        occlusion_threshold: ctx.cfg.atmo.occlusion_threshold,
        sun_radius: ctx.cfg.atmo.sun_radius,
    };
    let dir = ctx.day_out(day).join("detrended");
    fresh_dir(&dir)?;
    for (t, p) in &frames {
        m.input(p)?;
        let px = read_gray16(p)?;
        let sun = Frame::new(px.clone(), *t).center();
        let predicted = model.predict(&cond.features(ctx, *t as f64)?);
        let out = detrend_frame(&px, sun, &predicted, &opts);
        let q = dir.join(format!("{t}.grid"));
        write_intensity(&q, &out)?;
        m.output(&q)?;
    }
    m.write(&ctx.day_out(day).join("atmo-apply.manifest"))?;
    Ok(frames.len())
}

/// Frames written by `atmo apply`.
pub fn detrended_frames(ctx: &Ctx, day: NaiveDate) -> Result<Vec<(i64, PathBuf)>> {
    let dir = ctx.day_out(day).join("detrended");
    require(&dir, &format!("atmo apply --day {}", Layout::day_name(day)))?;
    crate::dataset::list_grids(&dir)
}
