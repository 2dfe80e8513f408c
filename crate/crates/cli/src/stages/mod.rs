//! Pipeline stages. Each reads its inputs, writes its artifacts into a
//! fresh directory and finishes with a manifest.

pub mod atmo;
pub mod bench;
pub mod classify;
pub mod detrend;
pub mod flow;
pub mod grid;
pub mod ingest;
pub mod window;

use std::path::PathBuf;

use chrono::NaiveDate;
use skyflow::motion::Registry;

use crate::config::PipelineConfig;
use crate::dataset::Layout;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    pub registry: Registry,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Self {
        let layout = Layout {
            root: cfg.dataset_root.clone(),
            out: cfg.output_root.clone(),
        };
        Ctx {
            cfg,
            layout,
            registry: Registry::default(),
        }
    }

    pub fn day_out(&self, day: NaiveDate) -> PathBuf {
        self.layout.output(day)
    }

    pub fn manifest(&self, stage: &str) -> crate::manifest::Manifest {
        crate::manifest::Manifest::new(stage, &self.layout.root, &self.layout.out)
    }
}
