use anyhow::{bail, Result};
use skyflow::tuner::{benchmark, BenchReport, FlowKind};

use super::Ctx;
use crate::dataset::fresh_dir;

/// Method names of the configuration, with `all` expanded.
pub fn method_names(ctx: &Ctx) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for m in &ctx.cfg.bench.methods {
        if m == "all" {
            out.extend(ctx.registry.names().into_iter().map(String::from));
        } else {
            ctx.registry.get(m)?;
            out.push(m.clone());
        }
    }
    out.dedup();
    if out.is_empty() {
        bail!("no benchmark methods selected");
    }
    Ok(out)
}

pub fn run(ctx: &Ctx) -> Result<BenchReport> {
    let methods = method_names(ctx)?;
    let kinds = ctx
        .cfg
        .bench
        .flows
        .iter()
        .map(|f| Ok(FlowKind::parse(f)?))
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        bail!("no benchmark flows selected");
    }
    let mut run = ctx.cfg.bench.run.clone();
    run.seed = ctx.cfg.seed;
    let names: Vec<&str> = methods.iter().map(String::as_str).collect();
    let report = benchmark(&ctx.registry, &names, &kinds, &run)?;
    let dir = ctx.layout.out.join("bench");
    fresh_dir(&dir)?;
    report.write_to(&dir)?;
    let mut m = ctx.manifest("bench");
    m.param("methods", &methods)?;
    m.param("flows", &ctx.cfg.bench.flows)?;
    m.param("config", &run)?;
    m.output(&dir.join("bench.csv"))?;
    m.volatile(&dir.join("timing.csv"));
    m.volatile(&dir.join("bench.svg"));
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    m.volatile(&dir.join("report.json"));
    m.write(&dir.join("bench.manifest"))?;
    Ok(report)
}
