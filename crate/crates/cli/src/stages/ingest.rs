use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use skyflow::frame::io::{read_gray16, read_rgb8, write_gray16};
use skyflow::frame::{
    dedup_average, dedup_average_all, default_radii, fuse_exposures, rgb_to_gray, DedupAverage, ExposureStack, Frame,
    FusionOptions,
};

use super::Ctx;
use crate::dataset::{fresh_dir, list_captures, list_exposures, Layout};

pub struct IngestSummary {
    pub infrared: usize,
    pub visible: usize,
}

fn average(ctx: &Ctx, frames: Vec<Frame>) -> Result<DedupAverage> {
    Ok(match ctx.cfg.ingest.frames_per_capture {
        0 => dedup_average_all(frames)?,
        n => dedup_average(frames, n)?,
    })
}

/// Averages every infrared capture of the day and fuses every visible
/// capture. The sun sits at the image center (tracker-mounted camera).
pub fn run(ctx: &Ctx, day: NaiveDate) -> Result<IngestSummary> {
    let din = ctx.layout.require_input(day)?;
    let ir = din.join("infrared");
    if !ir.is_dir() {
        bail!("{} has no infrared directory", din.display());
    }
    let dout = ctx.day_out(day);
    let mut m = ctx.manifest("ingest");
    m.param("day", &Layout::day_name(day))?;
    m.param("ingest", &ctx.cfg.ingest)?;

    let ir_out = dout.join("infrared");
    fresh_dir(&ir_out)?;
    let captures = list_captures(&ir)?;
    for (ts, reads) in &captures {
        let mut frames = Vec::with_capacity(reads.len());
        for r in reads {
            m.input(r)?;
            frames.push(Frame::new(read_gray16(r)?, *ts));
        }
        let avg = average(ctx, frames).with_context(|| format!("infrared capture {ts}"))?;
        let p = ir_out.join(format!("{ts}.png"));
        write_gray16(&p, &avg.frame.pixels)?;
        m.output(&p)?;
    }

    let vi = din.join("visible");
    let vi_out = dout.join("visible");
    let mut visible = 0;
    if vi.is_dir() {
        fresh_dir(&vi_out)?;
        let mut dirs: Vec<(i64, std::path::PathBuf)> = std::fs::read_dir(&vi)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .filter_map(|p| Some((p.file_name()?.to_str()?.parse::<i64>().ok()?, p)))
            .collect();
        dirs.sort();
        let opts = FusionOptions {
            blur_sigma: ctx.cfg.ingest.blur_sigma,
            ring_eps: ctx.cfg.ingest.ring_eps,
            ..Default::default()
        };
        for (ts, dir) in dirs {
            let mut layers = Vec::new();
            for reads in list_exposures(&dir)? {
                let mut frames = Vec::with_capacity(reads.len());
                for r in &reads {
                    m.input(r)?;
                    let [cr, cg, cb] = read_rgb8(r)?;
                    frames.push(Frame::new(rgb_to_gray(&cr, &cg, &cb, ctx.cfg.ingest.rgb_offset), ts));
                }
                layers.push(average(ctx, frames).with_context(|| format!("visible capture {ts}"))?.frame);
            }
            if layers.len() < 2 {
                bail!("visible capture {ts} has {} exposure(s), fusion needs at least 2", layers.len());
            }
            let (rows, cols) = layers[0].dim();
            let center = layers[0].center();
            let radii = if ctx.cfg.ingest.fusion_radii.is_empty() {
                default_radii(layers.len(), rows, cols)
            } else {
                ctx.cfg.ingest.fusion_radii.clone()
            };
            let stack = ExposureStack::new(layers.into_iter().map(|f| f.pixels).collect(), radii, center)?;
            let fused = fuse_exposures(&stack, &opts).with_context(|| format!("fusing visible capture {ts}"))?;
            let p = vi_out.join(format!("{ts}.png"));
            write_gray16(&p, &fused.frame)?;
            m.output(&p)?;
            visible += 1;
        }
    }
    m.write(&dout.join("ingest.manifest"))?;
    log::info!("{}: {} infrared and {visible} visible captures", Layout::day_name(day), captures.len());
    Ok(IngestSummary {
        infrared: captures.len(),
        visible,
    })
}
