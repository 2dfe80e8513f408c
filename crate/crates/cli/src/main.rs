//! `skyflow`: sky-imaging pipeline stages over a dataset root.

mod config;
mod dataset;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{GridMode, PipelineConfig};
use dataset::parse_days;
use stages::Ctx;

#[derive(Parser)]
#[command(name = "skyflow", version, about = "Sky imaging, clear-sky detrending and cloud motion")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set window.min_frames=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Dataset root.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Artifact root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Days {
    /// YYYY-MM-DD, an inclusive range A..B, or a comma list.
    #[arg(long)]
    day: String,
}

#[derive(Subcommand)]
enum FitApply {
    /// Fit the model across days.
    Fit {
        #[command(flatten)]
        days: Days,
    },
    /// Apply the fitted model to each day.
    Apply {
        #[command(flatten)]
        days: Days,
    },
}

#[derive(Subcommand)]
enum ClassifyCmd {
    Fit {
        #[command(flatten)]
        days: Days,
        /// CSV of unix, class (clear, cumulus, stratus, nimbus).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    Apply {
        #[command(flatten)]
        days: Days,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flat,
    Sphere,
}

#[derive(Subcommand)]
enum Command {
    /// Average infrared captures and fuse visible exposures.
    Ingest {
        #[command(flatten)]
        days: Days,
    },
    /// Clear-sky index of the pyranometer series.
    DetrendGhi {
        #[command(flatten)]
        days: Days,
    },
    /// Atmospheric background model.
    #[command(subcommand)]
    Atmo(FitApply),
    /// Sky-state classifier.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Persistent window-artifact model.
    #[command(subcommand)]
    Window(FitApply),
    /// Cloud-layer coordinate grid.
    Grid {
        /// Sun elevation in degrees.
        #[arg(long)]
        elevation: Option<f64>,
        /// Cloud height in meters.
        #[arg(long)]
        height: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write a long-format CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Velocity fields between consecutive detrended frames.
    Flow {
        #[arg(long)]
        method: Option<String>,
        #[command(flatten)]
        days: Days,
    },
    /// Tune and time the motion estimators on simulated flows.
    Bench {
        /// Comma list of methods, or `all`.
        #[arg(long)]
        methods: Option<String>,
        /// Comma list of `linear`, `nonlinear`.
        #[arg(long)]
        flows: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        /// Frame pairs per simulated flow.
        #[arg(long)]
        pairs: Option<usize>,
    },
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(r) = &cli.root {
        cfg.dataset_root = r.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output_root = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Grid {
            elevation,
            height,
            mode,
            ..
        } => {
            if let Some(e) = elevation {
                cfg.grid.elevation_deg = *e;
            }
            if let Some(h) = height {
                cfg.grid.height_m = *h;
            }
            if let Some(m) = mode {
                cfg.grid.mode = match m {
                    ModeArg::Flat => GridMode::Flat,
                    ModeArg::Sphere => GridMode::Sphere,
                };
            }
        }
        Command::Flow { method: Some(m), .. } => cfg.flow.method = m.clone(),
        Command::Bench {
            methods,
            flows,
            budget,
            pairs,
        } => {
            if let Some(m) = methods {
                cfg.bench.methods = split_list(m);
            }
            if let Some(f) = flows {
                cfg.bench.flows = split_list(f);
            }
            if let Some(b) = budget {
                cfg.bench.run.budget = *b;
            }
            if let Some(p) = pairs {
                cfg.bench.run.pairs = *p;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let needs_data = !matches!(cli.command, Command::Grid { .. } | Command::Bench { .. });
    if needs_data {
        cfg.require_dataset()?;
    }
    let ctx = Ctx::new(cfg);
    match &cli.command {
        Command::Ingest { days } => {
            for d in parse_days(&days.day)? {
                let s = stages::ingest::run(&ctx, d)?;
                println!("{d}: {} infrared frames, {} fused visible frames", s.infrared, s.visible);
            }
        }
        Command::DetrendGhi { days } => {
            for d in parse_days(&days.day)? {
                let s = stages::detrend::run(&ctx, d)?;
                println!("{d}: {} clear-sky index samples, mean {:.4}", s.samples, s.mean_csi);
            }
        }
        Command::Atmo(FitApply::Fit { days }) => {
            let m = stages::atmo::fit(&ctx, &parse_days(&days.day)?)?;
            println!("atmosphere model: sigma2 {:.4}, lambda2 {:.4}", m.sigma2, m.lambda2);
        }
        Command::Atmo(FitApply::Apply { days }) => {
            for d in parse_days(&days.day)? {
                println!("{d}: {} detrended frames", stages::atmo::apply(&ctx, d)?);
            }
        }
        Command::Classify(ClassifyCmd::Fit { days, labels }) => {
            stages::classify::fit(&ctx, &parse_days(&days.day)?, labels.as_deref())?;
            println!("classifier written to {}", stages::classify::model_path(&ctx).display());
        }
        Command::Classify(ClassifyCmd::Apply { days }) => {
            for d in parse_days(&days.day)? {
                println!("{d}: {} frames classified", stages::classify::apply(&ctx, d)?.len());
            }
        }
        Command::Window(FitApply::Fit { days }) => {
            let s = stages::window::fit(&ctx, &parse_days(&days.day)?)?;
            println!(
                "window model: {} frames, artifact {}",
                s.frames_kept,
                if s.defined { "defined" } else { "undefined" }
            );
        }
        Command::Window(FitApply::Apply { days }) => {
            for d in parse_days(&days.day)? {
                println!("{d}: {} frames corrected", stages::window::apply(&ctx, d)?);
            }
        }
        Command::Grid { output, csv, .. } => {
            let p = stages::grid::run(&ctx, output.as_deref(), *csv)?;
            println!("grid written to {}", p.display());
        }
        Command::Flow { days, .. } => {
            for d in parse_days(&days.day)? {
                let n = stages::flow::run(&ctx, d, &ctx.cfg.flow.method)?;
                println!("{d}: {n} velocity fields");
            }
        }
        Command::Bench { .. } => {
            let r = stages::bench::run(&ctx)?;
            println!("{:<8} {:<10} {:>10} {:>12}", "method", "flow", "rmse_px", "t_s");
            for b in &r.results {
                println!("{:<8} {:<10} {:>10.4} {:>12.3e}", b.method, b.flow.name(), b.rmse, b.runtime_s);
            }
            println!("total {:.1} s", r.total_s);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
