use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bo::{bo_minimize, BoOptions, BoResult};
use super::sim::{advect_cloud, benchmark_flows, cloud_texture, AdvectOptions, CloudSequence, FlowKind, SimFlow};
use crate::error::{invalid, Result};
use crate::motion::{FlowEstimator, FlowMethod, FlowParams, PivParams, Registry};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    /// Frame pairs per simulated flow.
    pub pairs: usize,
    /// Objective evaluations per method and flow kind.
    pub budget: usize,
    pub seed: u64,
    pub texture_side: usize,
    pub background: f64,
    pub noise: f64,
    /// Frame pairs timed per method.
    pub timing_pairs: usize,
    /// Window used for the correlation runtime reference.
    pub reference_window: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rows: 60,
            cols: 80,
            pairs: 10,
            budget: 30,
            seed: 0,
            texture_side: 24,
            background: 100.0,
            noise: 0.5,
            timing_pairs: 3,
            reference_window: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowCase {
    pub name: String,
    pub flow: SimFlow,
    pub sequence: CloudSequence,
}

/// Advects one seeded cloud through each benchmark flow.
pub fn build_cases(cfg: &BenchConfig) -> Result<Vec<FlowCase>> {
    let mut counts = [0usize; 2];
    let center = ((cfg.cols as f64 - 1.0) / 2.0, (cfg.rows as f64 - 1.0) / 2.0);
    benchmark_flows(cfg.rows, cfg.cols)
        .into_iter()
        .enumerate()
        .map(|(i, flow)| {
            let k = flow.kind as usize;
            counts[k] += 1;
            let half = cfg.pairs as f64 / 2.0;
            let start = (center.0 - half * flow.uniform.0, center.1 - half * flow.uniform.1);
            let opts = AdvectOptions {
                rows: cfg.rows,
                cols: cfg.cols,
                background: cfg.background,
                start,
                noise: cfg.noise,
                seed: cfg.seed.wrapping_add(100 + i as u64),
            };
            let texture = cloud_texture(cfg.texture_side, cfg.seed.wrapping_add(i as u64));
            let sequence = advect_cloud(&texture, &flow, cfg.pairs, &opts)?;
            if sequence.truncated {
                return invalid(format!("cloud leaves the frame under flow {i}"));
            }
            Ok(FlowCase {
                name: format!("{}-{}", flow.kind.name(), counts[k]),
                flow,
                sequence,
            })
        })
        .collect()
}

/// Vector RMSE at the mass center over every pair of every case. Invalid
/// estimates count as zero motion.
pub fn mass_center_rmse(est: &dyn FlowEstimator, cases: &[&FlowCase]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for case in cases {
        let s = &case.sequence;
        for k in 0..s.displacements.len() {
            let got = est.estimate_at(&s.frames[k], &s.frames[k + 1], &[s.centers[k]])?[0].unwrap_or((0.0, 0.0));
            let (tu, tv) = s.displacements[k];
            acc += (got.0 - tu).powi(2) + (got.1 - tv).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return invalid("no frame pairs to score");
    }
    Ok((acc / n as f64).sqrt())
}

/// Median wall time of a dense estimate over the first pairs.
pub fn time_per_pair(est: &dyn FlowEstimator, case: &FlowCase, pairs: usize) -> Result<f64> {
    let s = &case.sequence;
    let n = pairs.clamp(1, s.displacements.len().max(1));
    let mut t = Vec::with_capacity(n);
    for k in 0..n {
        let start = Instant::now();
        est.estimate(&s.frames[k], &s.frames[k + 1])?;
        t.push(start.elapsed().as_secs_f64());
    }
    Ok(crate::imgproc::median(&mut t))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub params: FlowParams,
    pub rmse: f64,
    pub search: BoResult,
}

/// Minimizes the mass-center RMSE over the method's search space.
pub fn tune(method: &dyn FlowMethod, cases: &[&FlowCase], budget: usize, seed: u64) -> Result<TuneOutcome> {
    let space = method.search_space();
    let to_params = |u: &[f64]| -> Result<FlowParams> {
        let values: Vec<f64> = space.iter().zip(u).map(|(r, t)| r.from_unit(*t)).collect();
        method.params_from(&values)
    };
    let objective = |u: &[f64]| -> f64 {
        let run = || -> Result<f64> {
            let est = method.build(&to_params(u)?)?;
            mass_center_rmse(est.as_ref(), cases)
        };
        run().unwrap_or(f64::NAN)
    };
    let opts = BoOptions {
        budget,
        seed,
        ..Default::default()
    };
    let bounds = vec![(0.0, 1.0); space.len()];
    let search = bo_minimize(objective, &bounds, &opts)?;
    if !search.best_value.is_finite() {
        return invalid(format!("no valid parameter set found for {}", method.name()));
    }
    Ok(TuneOutcome {
        params: to_params(&search.best_x)?,
        rmse: search.best_value,
        search,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub flow: FlowKind,
    pub params: FlowParams,
    pub rmse: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTiming {
    pub method: String,
    pub window: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub results: Vec<BenchResult>,
    /// Correlation methods timed at the reference window.
    pub reference: Vec<ReferenceTiming>,
    pub total_s: f64,
}

fn with_window(p: &FlowParams, window: usize) -> Option<FlowParams> {
    let set = |q: &PivParams| PivParams {
        window: q.window.max(window),
        ..*q
    };
    match p {
        FlowParams::Cc(q) => Some(FlowParams::Cc(set(q))),
        FlowParams::Ncc(q) => Some(FlowParams::Ncc(set(q))),
        _ => None,
    }
}

/// Tunes and times each named method on the linear and nonlinear cases.
pub fn benchmark(registry: &Registry, methods: &[&str], kinds: &[FlowKind], cfg: &BenchConfig) -> Result<BenchReport> {
    let clock = Instant::now();
    let cases = build_cases(cfg)?;
    let mut results = Vec::new();
    let mut reference = Vec::new();
    for (mi, name) in methods.iter().enumerate() {
        let method = registry.get(name)?;
        for &kind in kinds {
            let subset: Vec<&FlowCase> = cases.iter().filter(|c| c.flow.kind == kind).collect();
            let seed = cfg.seed.wrapping_mul(31).wrapping_add(mi as u64 * 2 + kind as u64);
            log::info!("tuning {name} on {} flows", kind.name());
            let t = tune(method, &subset, cfg.budget, seed)?;
            let est = method.build(&t.params)?;
            let runtime_s = time_per_pair(est.as_ref(), subset[0], cfg.timing_pairs)?;
            if let Some(p) = with_window(&t.params, cfg.reference_window) {
                if kind == kinds[0] {
                    let window = match p {
                        FlowParams::Cc(q) | FlowParams::Ncc(q) => q.window,
                        _ => unreachable!(),
                    };
                    let est = method.build(&p)?;
                    reference.push(ReferenceTiming {
                        method: name.to_string(),
                        window,
                        runtime_s: time_per_pair(est.as_ref(), subset[0], cfg.timing_pairs)?,
                    });
                }
            }
            results.push(BenchResult {
                method: name.to_string(),
                flow: kind,
                params: t.params,
                rmse: t.rmse,
                runtime_s,
            });
        }
    }
    Ok(BenchReport {
        results,
        reference,
        total_s: clock.elapsed().as_secs_f64(),
    })
}

impl BenchReport {
    /// Tuned parameters and RMSE. Contains no timings, so it is
    /// reproducible for a fixed seed.
    pub fn accuracy_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["flow", "method", "params", "rmse_px"])?;
        for r in &self.results {
            w.write_record([
                r.flow.name(),
                &r.method,
                &serde_json::to_string(&r.params)?,
                &format!("{:.6}", r.rmse),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 csv"))
    }

    pub fn timing_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["flow", "method", "window", "t_s"])?;
        for r in &self.results {
            w.write_record([r.flow.name(), &r.method, "", &format!("{:.6e}", r.runtime_s)])?;
        }
        for r in &self.reference {
            w.write_record(["reference", &r.method, &r.window.to_string(), &format!("{:.6e}", r.runtime_s)])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 csv"))
    }

    /// RMSE against log runtime, one marker per method and flow kind.
    pub fn svg_plot(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 60.0);
        let lt: Vec<f64> = self.results.iter().map(|r| r.runtime_s.max(1e-9).log10()).collect();
        let (tmin, tmax) = lt.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let (tmin, tmax) = (tmin.floor(), tmax.ceil().max(tmin.floor() + 1.0));
        let emax = self.results.iter().map(|r| r.rmse).fold(0.0, f64::max).max(1e-3) * 1.1;
        let px = |t: f64| pad + (t - tmin) / (tmax - tmin) * (w - 2.0 * pad);
        let py = |e: f64| h - pad - e / emax * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
            y = h - pad,
            x = w - pad
        );
        let mut d = tmin;
        while d <= tmax + 1e-9 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">1e{}</text>"#, px(d), h - pad + 18.0, d as i32);
            d += 1.0;
        }
        for i in 0..=4 {
            let e = emax * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{e:.2}</text>"#, pad - 6.0, py(e) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time per frame pair [s]</text>"#, w / 2.0, h - 15.0);
        let _ = writeln!(s, r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">RMSE [px]</text>"#, h / 2.0, h / 2.0);
        for (r, t) in self.results.iter().zip(&lt) {
            let (x, y) = (px(*t), py(r.rmse));
            let fill = if r.flow == FlowKind::Linear { "steelblue" } else { "darkorange" };
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{fill}"/>"#);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{} {}</text>"#, x + 7.0, y - 5.0, r.method, r.flow.name());
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.csv"), self.accuracy_csv()?)?;
        std::fs::write(dir.join("timing.csv"), self.timing_csv()?)?;
        std::fs::write(dir.join("bench.svg"), self.svg_plot())?;
        Ok(())
    }
}
