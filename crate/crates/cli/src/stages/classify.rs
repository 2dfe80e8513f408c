use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use skyflow::radiometry::temperature_frame;
use skyflow::sky_state::{persistent_classes, svc_predict, svc_train, SkyClass, SkyFeatures, SvcModel, SvcOptions};

use super::atmo::{detrended_frames, DayConditions};
use super::detrend::load_csi;
use super::flow::{load_fields, speeds};
use super::Ctx;
use crate::dataset::{fresh_dir, read_intensity, require, window_values, Layout};
use crate::manifest::Manifest;

pub fn model_path(ctx: &Ctx) -> PathBuf {
    ctx.layout.out.join("classify").join("model.json")
}

pub fn parse_class(s: &str) -> Result<SkyClass> {
    let s = s.trim().to_ascii_lowercase();
    if let Ok(i) = s.parse::<usize>() {
        return Ok(SkyClass::from_index(i)?);
    }
    SkyClass::ALL
        .into_iter()
        .find(|c| c.name() == s)
        .with_context(|| format!("unknown sky class `{s}`"))
}

/// Labels CSV with columns unix, class (name or index).
fn read_labels(path: &Path) -> Result<BTreeMap<i64, SkyClass>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (Some(t), Some(c)) = (rec.get(0), rec.get(1)) else {
            bail!("{}: line {} needs unix and class", path.display(), i + 1);
        };
        match t.parse::<i64>() {
            Ok(t) => {
                out.insert(t, parse_class(c)?);
            }
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Feature vectors of every detrended frame of a day.
fn day_features(ctx: &Ctx, day: NaiveDate, m: &mut Manifest) -> Result<Vec<(i64, SkyFeatures)>> {
    let frames = detrended_frames(ctx, day)?;
    let fields: BTreeMap<i64, PathBuf> = load_fields(ctx, day)?.into_iter().collect();
    let (cts, cvs, cpath) = load_csi(ctx, day)?;
    m.input(&cpath)?;
    let cond = DayConditions::load(ctx, day, m)?;
    let half = ctx.cfg.atmo.csi_half_window_s;
    let mut out = Vec::with_capacity(frames.len());
    for (t, p) in &frames {
        m.input(p)?;
        let temps: Vec<f64> = temperature_frame(&read_intensity(p)?).into_iter().collect();
        let speed = match fields.get(t) {
            Some(f) => {
                m.input(f)?;
                speeds(f)?
            }
            None => Vec::new(),
        };
        let w = window_values(&cts, &cvs, *t as f64, half);
        let csi = if w.is_empty() { 0.0 } else { w.iter().sum::<f64>() / w.len() as f64 };
        out.push((*t, SkyFeatures::new(cond.pressure(*t as f64), csi, &temps, &speed)));
    }
    Ok(out)
}

pub fn fit(ctx: &Ctx, days: &[NaiveDate], labels: Option<&Path>) -> Result<SvcModel> {
    let labels_path = labels
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.classify.labels.clone())
        .context("classify fit needs --labels or classify.labels")?;
    let labels = read_labels(&labels_path)?;
    let c = &ctx.cfg.classify;
    let opts = SvcOptions {
        c: c.c,
        order: c.order,
        loss: c.loss,
        seed: ctx.cfg.seed,
        ..Default::default()
    };
    let mut m = ctx.manifest("classify-fit");
    m.param("days", &days.iter().map(|d| Layout::day_name(*d)).collect::<Vec<_>>())?;
    m.param("svc", &opts)?;
    m.param("flow_method", &ctx.cfg.flow.method)?;
    m.input(&labels_path)?;
    let mut samples = Vec::new();
    for &day in days {
        for (t, f) in day_features(ctx, day, &mut m)? {
            if let Some(&cls) = labels.get(&t) {
                samples.push((f, cls));
            }
        }
    }
    if samples.is_empty() {
        bail!("no labeled frames among the given days");
    }
    let model = svc_train(&samples, &opts)?;
    let dir = ctx.layout.out.join("classify");
    fresh_dir(&dir)?;
    let path = model_path(ctx);
    model.save(&path)?;
    m.output(&path)?;
    m.write(&dir.join("fit.manifest"))?;
    log::info!("trained on {} labeled frames", samples.len());
    Ok(model)
}

/// Raw and mode-filtered classes of every detrended frame of the day.
pub fn apply(ctx: &Ctx, day: NaiveDate) -> Result<Vec<(i64, SkyClass, SkyClass)>> {
    let path = model_path(ctx);
    require(&path, "classify fit --day <labeled days> --labels <csv>")?;
    let model = SvcModel::load(&path)?;
    let mut m = ctx.manifest("classify-apply");
    m.param("day", &Layout::day_name(day))?;
    m.param("persistence", &ctx.cfg.classify.persistence)?;
    m.param("flow_method", &ctx.cfg.flow.method)?;
    m.input(&path)?;
    let feats = day_features(ctx, day, &mut m)?;
    let raw: Vec<SkyClass> = feats.iter().map(|(_, f)| svc_predict(&model, f)).collect();
    let filtered = persistent_classes(&raw, ctx.cfg.classify.persistence);
    let rows: Vec<(i64, SkyClass, SkyClass)> = feats.iter().zip(raw.iter().zip(&filtered)).map(|((t, _), (r, f))| (*t, *r, *f)).collect();
    let dir = ctx.day_out(day).join("classes");
    fresh_dir(&dir)?;
    let out = dir.join("classes.csv");
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["unix", "raw", "persistent"])?;
    for (t, r, f) in &rows {
        w.write_record([t.to_string().as_str(), r.name(), f.name()])?;
    }
    w.flush()?;
    drop(w);
    m.output(&out)?;
    m.write(&ctx.day_out(day).join("classify-apply.manifest"))?;
    Ok(rows)
}

/// Filtered classes written by `classify apply`.
pub fn load_classes(ctx: &Ctx, day: NaiveDate) -> Result<(BTreeMap<i64, SkyClass>, PathBuf)> {
    let path = ctx.day_out(day).join("classes").join("classes.csv");
    require(&path, &format!("classify apply --day {}", Layout::day_name(day)))?;
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: i64 = rec.get(0).unwrap_or_default().parse().with_context(|| format!("{}", path.display()))?;
        out.insert(t, parse_class(rec.get(2).unwrap_or_default())?);
    }
    Ok((out, path))
}
