//! Pipeline configuration: one TOML file, every field defaulted, with
//! `section.key=value` overrides applied before deserialization.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use skyflow::atmosphere::AtmoParams;
use skyflow::motion::{FlowParams, RegularizeOptions, Registry};
use skyflow::perspective::{CameraIntrinsics, FlatForm};
use skyflow::sky_state::SvcLoss;
use skyflow::solar::Site;
use skyflow::tuner::BenchConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub output_root: PathBuf,
    pub seed: u64,
    pub site: Site,
    pub camera: CameraIntrinsics,
    pub ingest: IngestConfig,
    pub detrend: DetrendConfig,
    pub atmo: AtmoConfig,
    pub flow: FlowConfig,
    pub classify: ClassifyConfig,
    pub window: WindowConfig,
    pub grid: GridConfig,
    pub bench: BenchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_root: PathBuf::from("data"),
            output_root: PathBuf::from("skyflow-out"),
            seed: 0,
            site: Site::unm(),
            camera: CameraIntrinsics::default(),
            ingest: IngestConfig::default(),
            detrend: DetrendConfig::default(),
            atmo: AtmoConfig::default(),
            flow: FlowConfig::default(),
            classify: ClassifyConfig::default(),
            window: WindowConfig::default(),
            grid: GridConfig::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Distinct reads averaged per capture; 0 averages every distinct read.
    pub frames_per_capture: usize,
    /// Visible fusion radii in pixels; empty uses the default spacing.
    pub fusion_radii: Vec<f64>,
    pub blur_sigma: f64,
    pub ring_eps: f64,
    /// Offset added to each RGB channel before the gray conversion.
    pub rgb_offset: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            frames_per_capture: 0,
            fusion_radii: Vec::new(),
            blur_sigma: 2.0,
            ring_eps: 2.0,
            rgb_offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetrendConfig {
    /// Fit the clear-sky model to the day; otherwise use the seasonal
    /// parameters.
    pub fit_day: bool,
}

impl Default for DetrendConfig {
    fn default() -> Self {
        DetrendConfig { fit_day: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtmoConfig {
    pub orders: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Fit every n-th clear frame.
    pub stride: usize,
    pub init: AtmoParams,
    pub max_iters: usize,
    /// Clear-sky index is averaged over +-this many seconds.
    pub csi_half_window_s: f64,
    /// Sun-occlusion threshold on the frame maximum.
    pub occlusion_threshold: f64,
    /// Sun disc radius in pixels.
    pub sun_radius: f64,
}

impl Default for AtmoConfig {
    fn default() -> Self {
        AtmoConfig {
            orders: vec![1, 2, 3],
            lambdas: vec![0.0, 1e-3, 1e-1, 10.0],
            stride: 10,
            init: AtmoParams {
                sigma1: 1000.0,
                lambda1: 30.0,
                sigma2: 2000.0,
                lambda2: 5.0,
            },
            max_iters: 40_000,
            csi_half_window_s: 300.0,
            occlusion_threshold: 0.0,
            sun_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub method: String,
    /// Overrides of the method's default parameters.
    pub params: toml::Table,
    pub regularize: bool,
    pub tau_lower: f64,
    pub tau_upper: f64,
    pub half_window: usize,
    /// Consecutive frames further apart than this are not paired.
    pub max_gap_s: i64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let r = RegularizeOptions::default();
        FlowConfig {
            method: "lk".into(),
            params: toml::Table::new(),
            regularize: true,
            tau_lower: r.tau_lower,
            tau_upper: r.tau_upper,
            half_window: r.half_window,
            max_gap_s: 120,
        }
    }
}

impl FlowConfig {
    pub fn regularize_options(&self) -> RegularizeOptions {
        RegularizeOptions {
            tau_lower: self.tau_lower,
            tau_upper: self.tau_upper,
            half_window: self.half_window,
            until_stable: true,
        }
    }

    /// Default parameters of the method with the configured fields laid
    /// over them.
    pub fn flow_params(&self, registry: &Registry, method: &str) -> Result<FlowParams> {
        let defaults = registry.get(method)?.default_params();
        let mut v = toml::Value::try_from(&defaults)?;
        let table = v.as_table_mut().expect("parameters serialize to a table");
        for (k, val) in &self.params {
            if k == "method" {
                continue;
            }
            if !table.contains_key(k) {
                bail!("flow.params.{k} is not a parameter of `{method}`");
            }
            table.insert(k.clone(), val.clone());
        }
        Ok(v.try_into().with_context(|| format!("flow.params for `{method}`"))?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub c: f64,
    pub order: usize,
    pub loss: SvcLoss,
    /// Mode-filter length in frames.
    pub persistence: usize,
    /// Labels CSV (unix, class) used by `classify fit`.
    pub labels: Option<PathBuf>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            c: 1.0,
            order: 1,
            loss: SvcLoss::SquaredHinge,
            persistence: 5,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Clear frames needed before the artifact is defined.
    pub min_frames: usize,
    pub csi_half_window_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            min_frames: 250,
            csi_half_window_s: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Flat,
    Sphere,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub elevation_deg: f64,
    pub height_m: f64,
    pub mode: GridMode,
    pub flat_form: FlatForm,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            elevation_deg: 45.0,
            height_m: 5000.0,
            mode: GridMode::Sphere,
            flat_form: FlatForm::Limit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    /// Method names, or `all`.
    pub methods: Vec<String>,
    pub flows: Vec<String>,
    #[serde(flatten)]
    pub run: BenchConfig,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            methods: vec!["all".into()],
            flows: vec!["linear".into(), "nonlinear".into()],
            run: BenchConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Lays `over` onto `base`, table by table.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed override key `{key}`");
    }
    let mut t = root;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (if any) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(PipelineConfig::default())?;
        if let Some(p) = path {
            let file = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?
                .parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", p.display()))?;
            merge(&mut table, file);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not of the form key=value"))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.site.validate()?;
        self.camera.validate()?;
        if self.ingest.blur_sigma <= 0.0 || self.ingest.ring_eps <= 0.0 {
            bail!("ingest.blur_sigma and ingest.ring_eps must be positive");
        }
        if self.atmo.orders.is_empty() || self.atmo.lambdas.is_empty() || self.atmo.stride == 0 {
            bail!("atmo.orders and atmo.lambdas must be non-empty and atmo.stride positive");
        }
        self.atmo.init.validate()?;
        if self.atmo.sun_radius < 0.0 || self.atmo.csi_half_window_s < 0.0 || self.window.csi_half_window_s < 0.0 {
            bail!("radii and time windows must be non-negative");
        }
        if !(self.classify.c > 0.0) || self.classify.persistence == 0 {
            bail!("classify.c must be positive and classify.persistence at least 1");
        }
        if self.window.min_frames == 0 {
            bail!("window.min_frames must be at least 1");
        }
        if !(self.flow.tau_lower >= 0.0 && self.flow.tau_lower < self.flow.tau_upper) {
            bail!("flow thresholds must satisfy 0 <= tau_lower < tau_upper");
        }
        if !(self.grid.height_m > 0.0) {
            bail!("grid.height_m must be positive");
        }
        Ok(())
    }

    /// Checks that the dataset root exists, for stages that read it.
    pub fn require_dataset(&self) -> Result<()> {
        if !self.dataset_root.is_dir() {
            bail!("dataset root {} does not exist", self.dataset_root.display());
        }
        Ok(())
    }
}
