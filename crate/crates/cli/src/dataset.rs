//! Dataset and artifact layout.
//!
//! Inputs, under `<dataset_root>/<YYYY-MM-DD>/`:
//!
//! ```text
//! infrared/<unix>.png            one 16-bit read per capture, or
//! infrared/<unix>/*.png          the raw reads of one capture
//! visible/<unix>/<exposure>/*.png  raw reads per exposure, shortest first
//! pyranometer/*.csv              unix, W/m^2
//! position/*.csv                 unix, elevation deg, azimuth deg
//! weather/*.csv                  unix, air_temp K, dew_point K, pressure Pa
//! ```
//!
//! Artifacts go under `<output_root>/<YYYY-MM-DD>/` for per-day stages and
//! under `<output_root>/<stage>/` for models fitted across days.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use skyflow::frame::io::{list_timestamped, read_numeric_csv};
use skyflow::gridfile::{GridFile, Plane};

pub struct Layout {
    pub root: PathBuf,
    pub out: PathBuf,
}

/// Parses `YYYY-MM-DD`, an inclusive range `A..B`, or a comma list.
pub fn parse_days(spec: &str) -> Result<Vec<NaiveDate>> {
    let parse = |s: &str| {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").with_context(|| format!("`{s}` is not a YYYY-MM-DD date"))
    };
    let mut days = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (parse(a)?, parse(b)?);
            if b < a {
                bail!("day range {part} is reversed");
            }
            days.extend(a.iter_days().take_while(|d| *d <= b));
        } else {
            days.push(parse(part)?);
        }
    }
    days.sort();
    days.dedup();
    if days.is_empty() {
        bail!("no days given");
    }
    Ok(days)
}

pub fn day_of_year(day: NaiveDate) -> (u32, u32) {
    let len = if day.leap_year() { 366 } else { 365 };
    (day.ordinal(), len)
}

impl Layout {
    pub fn day_name(day: NaiveDate) -> String {
        day.format("%Y-%m-%d").to_string()
    }

    pub fn input(&self, day: NaiveDate) -> PathBuf {
        self.root.join(Self::day_name(day))
    }

    pub fn output(&self, day: NaiveDate) -> PathBuf {
        self.out.join(Self::day_name(day))
    }

    /// Directory of a day's dataset, which must exist.
    pub fn require_input(&self, day: NaiveDate) -> Result<PathBuf> {
        let d = self.input(day);
        if !d.is_dir() {
            bail!("no dataset for {} at {}", Self::day_name(day), d.display());
        }
        Ok(d)
    }
}

/// Fails with the stage that produces `path` when it is absent.
pub fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}: run `skyflow {stage}` first", path.display());
    }
    Ok(())
}

/// CSV rows from every file of a series directory (or a sibling
/// `<dir>.csv` file), sorted by the first column with repeated
/// timestamps dropped. Returns the rows and the files read.
pub fn read_series(dir: &Path, columns: usize) -> Result<(Vec<Vec<f64>>, Vec<PathBuf>)> {
    let mut files = Vec::new();
    if dir.is_dir() {
        for e in std::fs::read_dir(dir)? {
            let p = e?.path();
            if p.extension().and_then(|x| x.to_str()) == Some("csv") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        let single = dir.with_extension("csv");
        if single.is_file() {
            files.push(single);
        }
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_numeric_csv(f, columns)?);
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    rows.dedup_by(|a, b| a[0] == b[0]);
    Ok((rows, files))
}

/// Linear interpolation of `(t, v)` samples sorted by `t`, held constant
/// past the ends.
pub fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> Option<f64> {
    if ts.is_empty() {
        return None;
    }
    let i = ts.partition_point(|&x| x <= t);
    if i == 0 {
        return Some(vs[0]);
    }
    if i == ts.len() {
        return Some(vs[ts.len() - 1]);
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    let w = (t - t0) / (t1 - t0);
    Some(vs[i - 1] * (1.0 - w) + vs[i] * w)
}

/// Values of samples within `half` seconds of `t`.
pub fn window_values(ts: &[f64], vs: &[f64], t: f64, half: f64) -> Vec<f64> {
    let lo = ts.partition_point(|&x| x < t - half);
    let hi = ts.partition_point(|&x| x <= t + half);
    vs[lo..hi].to_vec()
}

/// One capture of the infrared directory: its timestamp and raw reads.
pub fn list_captures(dir: &Path) -> Result<Vec<(i64, Vec<PathBuf>)>> {
    let mut out: Vec<(i64, Vec<PathBuf>)> = list_timestamped(dir, "png")?
        .into_iter()
        .map(|(t, p)| (t, vec![p]))
        .collect();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if !p.is_dir() {
            continue;
        }
        let Some(ts) = p.file_name().and_then(|s| s.to_str()).and_then(|s| s.parse::<i64>().ok()) else {
            continue;
        };
        let mut reads: Vec<PathBuf> = std::fs::read_dir(&p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("png"))
            .collect();
        reads.sort();
        if !reads.is_empty() {
            out.push((ts, reads));
        }
    }
    out.sort();
    if out.windows(2).any(|w| w[0].0 == w[1].0) {
        bail!("{}: a capture is given both as a file and as a directory", dir.display());
    }
    Ok(out)
}

/// Exposure subdirectories of one visible capture, shortest exposure
/// first (names compared numerically when they parse).
pub fn list_exposures(dir: &Path) -> Result<Vec<Vec<PathBuf>>> {
    let mut exps: Vec<(f64, String, PathBuf)> = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            exps.push((name.parse::<f64>().unwrap_or(f64::INFINITY), name, p));
        }
    }
    exps.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    exps.into_iter()
        .map(|(_, _, p)| {
            let mut reads: Vec<PathBuf> = std::fs::read_dir(&p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("png"))
                .collect();
            reads.sort();
            Ok(reads)
        })
        .collect()
}

pub fn list_grids(dir: &Path) -> Result<Vec<(i64, PathBuf)>> {
    Ok(list_timestamped(dir, "grid")?)
}

pub fn write_intensity(path: &Path, data: &Array2<f64>) -> Result<()> {
    GridFile {
        planes: vec![Plane::new("intensity", "counts", data.clone())],
        mask: None,
    }
    .save(path)?;
    Ok(())
}

pub fn read_intensity(path: &Path) -> Result<Array2<f64>> {
    let g = GridFile::load(path).with_context(|| format!("reading {}", path.display()))?;
    g.plane("intensity")
        .cloned()
        .with_context(|| format!("{} has no intensity plane", path.display()))
}

/// Empties (or creates) an artifact directory so reruns never keep stale
/// files.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_specs() {
        assert_eq!(parse_days("2017-06-01").unwrap().len(), 1);
        assert_eq!(parse_days("2017-06-29..2017-07-02").unwrap().len(), 4);
        assert_eq!(parse_days("2017-06-02,2017-06-01,2017-06-02").unwrap().len(), 2);
        assert!(parse_days("2017-06-02..2017-06-01").is_err());
        assert!(parse_days("June").is_err());
    }

    #[test]
    fn interpolation_holds_ends() {
        let (t, v) = ([0.0, 10.0], [1.0, 3.0]);
        assert_eq!(interpolate(&t, &v, -5.0), Some(1.0));
        assert_eq!(interpolate(&t, &v, 5.0), Some(2.0));
        assert_eq!(interpolate(&t, &v, 50.0), Some(3.0));
        assert_eq!(interpolate(&[], &[], 0.0), None);
    }

    #[test]
    fn window_is_inclusive() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(window_values(&t, &[5.0, 6.0, 7.0, 8.0], 1.5, 0.5), vec![6.0, 7.0]);
    }
}
