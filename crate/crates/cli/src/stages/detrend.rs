use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::Serialize;
use skyflow::frame::io::write_numeric_csv;
use skyflow::irradiance::{
    clear_sky_index, clear_sky_series, correct_shift, fit_day_params, theoretical_params, GsiParams, GsiSample,
    IrradianceSeries,
};
use skyflow::solar::sun_position_unix;

use super::Ctx;
use crate::dataset::{day_of_year, fresh_dir, interpolate, read_series, Layout};

#[derive(Debug, Serialize)]
struct GsiReport {
    params: GsiParams,
    fitted: bool,
    /// Realignment shift in samples, positive when the sensor lags.
    lag: i64,
    loss: Option<f64>,
    samples: usize,
}

pub struct DetrendSummary {
    pub samples: usize,
    pub mean_csi: f64,
}

/// Solar elevation in radians at each timestamp, from the position series
/// when present, otherwise from the solar model.
pub fn elevations(ctx: &Ctx, positions: &[Vec<f64>], ts: &[f64]) -> Result<Vec<f64>> {
    if positions.is_empty() {
        log::info!("no position samples, using the solar model");
        return ts
            .iter()
            .map(|&t| Ok(sun_position_unix(&ctx.cfg.site, t)?.elevation))
            .collect();
    }
    let pt: Vec<f64> = positions.iter().map(|r| r[0]).collect();
    let pe: Vec<f64> = positions.iter().map(|r| r[1]).collect();
    Ok(ts
        .iter()
        .map(|&t| interpolate(&pt, &pe, t).expect("non-empty").to_radians())
        .collect())
}

/// Clear-sky index of the day's pyranometer series.
pub fn run(ctx: &Ctx, day: NaiveDate) -> Result<DetrendSummary> {
    let din = ctx.layout.require_input(day)?;
    let (pyr, pyr_files) = read_series(&din.join("pyranometer"), 2)?;
    if pyr.is_empty() {
        bail!("{} has no pyranometer samples", din.display());
    }
    let (pos, pos_files) = read_series(&din.join("position"), 3)?;
    let mut m = ctx.manifest("detrend-ghi");
    m.param("day", &Layout::day_name(day))?;
    m.param("detrend", &ctx.cfg.detrend)?;
    m.param("site", &ctx.cfg.site)?;
    for f in pyr_files.iter().chain(&pos_files) {
        m.input(f)?;
    }

    let ts: Vec<f64> = pyr.iter().map(|r| r[0]).collect();
    let measured = IrradianceSeries {
        timestamps: ts.clone(),
        ghi: pyr.iter().map(|r| r[1]).collect(),
        elevation: elevations(ctx, &pos, &ts)?,
    };
    let (doy, len) = day_of_year(day);
    let seasonal = theoretical_params(doy, len)?;
    let theory = clear_sky_series(&seasonal, &measured.timestamps, &measured.elevation);
    let (aligned, lag) = correct_shift(&measured, &theory).context("realigning the pyranometer series")?;
    let (params, loss) = if ctx.cfg.detrend.fit_day {
        let samples: Vec<GsiSample> = (0..aligned.len())
            .filter(|&i| aligned.elevation[i] > 0.0)
            .map(|i| GsiSample {
                elevation: aligned.elevation[i],
                ghi: aligned.ghi[i],
            })
            .collect();
        let fit = fit_day_params(&samples, doy, len).context("fitting the clear-sky model")?;
        (fit.params, Some(fit.loss))
    } else {
        (seasonal, None)
    };
    let clear = clear_sky_series(&params, &aligned.timestamps, &aligned.elevation);
    let csi = clear_sky_index(&aligned, &clear)?;
    if csi.is_empty() {
        bail!("no samples with the sun above 15 degrees on {}", Layout::day_name(day));
    }

    let dout = ctx.day_out(day).join("ghi");
    fresh_dir(&dout)?;
    let rows: Vec<Vec<f64>> = csi.iter().map(|&(t, v)| vec![t, v]).collect();
    let csi_path = dout.join("csi.csv");
    write_numeric_csv(&csi_path, &["unix", "csi"], &rows)?;
    let series: Vec<Vec<f64>> = (0..aligned.len())
        .map(|i| vec![aligned.timestamps[i], aligned.ghi[i], clear.ghi[i], aligned.elevation[i].to_degrees()])
        .collect();
    let series_path = dout.join("clear_sky.csv");
    write_numeric_csv(&series_path, &["unix", "ghi", "clear_sky", "elevation_deg"], &series)?;
    let report = GsiReport {
        params,
        fitted: ctx.cfg.detrend.fit_day,
        lag,
        loss,
        samples: aligned.len(),
    };
    let report_path = dout.join("gsi.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    for p in [&csi_path, &series_path, &report_path] {
        m.output(p)?;
    }
    m.write(&ctx.day_out(day).join("detrend-ghi.manifest"))?;
    let mean_csi = csi.iter().map(|c| c.1).sum::<f64>() / csi.len() as f64;
    log::info!("{}: {} csi samples, mean {mean_csi:.4}, lag {lag}", Layout::day_name(day), csi.len());
    Ok(DetrendSummary {
        samples: csi.len(),
        mean_csi,
    })
}

/// Clear-sky index samples of a day written by this stage.
pub fn load_csi(ctx: &Ctx, day: NaiveDate) -> Result<(Vec<f64>, Vec<f64>, std::path::PathBuf)> {
    let path = ctx.day_out(day).join("ghi").join("csi.csv");
    crate::dataset::require(&path, &format!("detrend-ghi --day {}", Layout::day_name(day)))?;
    let rows = skyflow::frame::io::read_numeric_csv(&path, 2)?;
    Ok((rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect(), path))
}
