//! Seeded experiment runner behind the `restoreib` CLI.
//!
//! Each command is a pure function of its resolved [`ExperimentConfig`] and
//! writes, next to its outputs, the resolved config itself
//! (`config.resolved.json`), a `report.csv` with per-run rows plus medians,
//! a machine-readable `verdict.json` for its assertions, and SVG plots.
//! Wall-clock timings go to `timing.csv`, which is the only
//! non-reproducible output file.

pub mod commands;
pub mod report;
pub mod svg;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DegradationSpec, HazeParams, RainParams};
use crate::fit::FitError;
use crate::info::InfoError;
use crate::nn::{GenKind, GeneratorConfig, NnError};
use crate::tensor::TensorError;
use crate::train::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

// ── configuration ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub spec: DegradationSpec,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Load an existing dataset directory instead of synthesizing.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            spec: DegradationSpec::rain(),
            count: 160,
            size: 64,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kinds: Vec<GenKind>,
    pub depths: Vec<usize>,
    pub layers: Vec<usize>,
    pub position_sets: Vec<Vec<usize>>,
    pub models: Vec<String>,
    /// Number of independent seeds per sweep point.
    pub seeds: usize,
    /// SSIM plateau tolerance for saturation detection.
    pub saturation_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kinds: vec![GenKind::Unet, GenKind::Endecoder],
            depths: (1..=5).collect(),
            layers: vec![0, 1, 2, 3, 5, 8],
            position_sets: vec![vec![], vec![1], vec![2], vec![3]],
            models: vec![
                "endecoder5".into(),
                "endecoder5+ia15".into(),
                "unet5".into(),
                "unet5+subpix".into(),
                "unet5+ia15".into(),
                "unet5+ia15+subpix".into(),
            ],
            seeds: 3,
            saturation_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Quantization levels per pooled scalar.
    pub bins: usize,
    /// Pooled feature grid (grid x grid cells per image).
    pub grid: usize,
    /// Epochs for the reconstruction table.
    pub recon_epochs: usize,
    /// Desk-scale reconstruction PSNR bar for the details-enhanced variant.
    pub recon_psnr_threshold: f64,
    /// Loss-trace CSV for fit-loss.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Checkpoint stem for eval / info-analysis.
    #[serde(default)]
    pub net: Option<PathBuf>,
    /// fit-loss: also assert the two-stage shape (double beats single fit).
    #[serde(default)]
    pub assert_two_stage: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bins: 2,
            grid: 2,
            recon_epochs: 300,
            recon_psnr_threshold: 45.0,
            trace: None,
            net: None,
            assert_two_stage: false,
        }
    }
}

/// Full description of one experiment invocation. The output directory is
/// deliberately not part of the config, so reruns into fresh directories
/// produce byte-identical artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_generator")]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_generator() -> GeneratorConfig {
    GeneratorConfig::unet(5, 16)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::new("train")
    }
}

impl ExperimentConfig {
    pub fn new(command: &str) -> Self {
        ExperimentConfig {
            command: command.to_string(),
            seed: 0,
            dataset: DatasetConfig::default(),
            generator: default_generator(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ExpError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Apply a dotted-path override, e.g. `dataset.count=20` or
    /// `train.loss_kind="jsgan"`. Values parse as JSON first, then as bare
    /// strings.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<(), ExpError> {
        let mut value: serde_json::Value = serde_json::to_value(&*self)?;
        let mut cursor = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if i + 1 == parts.len() {
                let parsed: serde_json::Value = serde_json::from_str(raw)
                    .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
                match cursor {
                    serde_json::Value::Object(map) => {
                        map.insert(part.to_string(), parsed);
                    }
                    _ => return Err(ExpError::Config(format!("{key}: not an object"))),
                }
            } else {
                cursor = cursor
                    .get_mut(*part)
                    .ok_or_else(|| ExpError::Config(format!("unknown config path {key}")))?;
            }
        }
        *self = serde_json::from_value(value)
            .map_err(|e| ExpError::Config(format!("override {key}={raw}: {e}")))?;
        Ok(())
    }
}

/// Named degradation presets for `--task`; a path to a JSON spec file is
/// accepted anywhere a task name is.
pub fn task_spec(name: &str) -> Result<DegradationSpec, ExpError> {
    match name {
        "noise" => Ok(DegradationSpec::Noise { sigma: 0.1 }),
        "rain" => Ok(DegradationSpec::Rain(RainParams::default())),
        "haze" => Ok(DegradationSpec::Haze(HazeParams::default())),
        "rain_haze" => Ok(DegradationSpec::RainHaze {
            rain: RainParams::default(),
            haze: HazeParams::default(),
        }),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ExpError::Config(format!("task {path:?} is neither a preset nor a readable file: {e}"))
            })?;
            let spec: DegradationSpec = serde_json::from_str(&text)?;
            spec.validate()?;
            Ok(spec)
        }
    }
}

/// Parse a reconstruct-table variant label: `unet5`, `endecoder3+ia15`,
/// `unet5+ia15+subpix`, ...
pub fn parse_variant(label: &str, base_channels: usize) -> Result<GeneratorConfig, ExpError> {
    let mut parts = label.split('+');
    let base = parts.next().unwrap_or_default();
    let (kind, depth_str) = if let Some(d) = base.strip_prefix("unet") {
        (GenKind::Unet, d)
    } else if let Some(d) = base.strip_prefix("endecoder") {
        (GenKind::Endecoder, d)
    } else {
        return Err(ExpError::Config(format!("unknown variant base {base:?}")));
    };
    let depth: usize = depth_str
        .parse()
        .map_err(|_| ExpError::Config(format!("bad depth in variant {label:?}")))?;
    let mut cfg = GeneratorConfig::unet(depth, base_channels);
    cfg.kind = kind;
    for part in parts {
        if let Some(l) = part.strip_prefix("ia") {
            let layers: usize = l
                .parse()
                .map_err(|_| ExpError::Config(format!("bad infoaccum layer count in {label:?}")))?;
            cfg = cfg.with_infoaccum(layers);
        } else if part == "subpix" {
            cfg = cfg.with_subpix();
        } else {
            return Err(ExpError::Config(format!("unknown variant suffix {part:?} in {label:?}")));
        }
    }
    Ok(cfg)
}

// ── job execution ───────────────────────────────────────────────────

/// Worker cap: `RESTOREIB_THREADS`, else the machine's parallelism.
pub fn thread_cap() -> usize {
    std::env::var("RESTOREIB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run independent jobs with bounded parallelism; results come back in job
/// order regardless of scheduling.
pub fn run_jobs<T, F>(jobs: Vec<F>) -> Result<Vec<T>, ExpError>
where
    T: Send,
    F: FnOnce() -> Result<T, ExpError> + Send,
{
    let n = jobs.len();
    let workers = thread_cap().min(n.max(1));
    if workers <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let slots: Mutex<Vec<Option<Result<T, ExpError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let queue: Vec<Mutex<Option<F>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i].lock().expect("job mutex").take().expect("job taken once");
                let result = job();
                slots.lock().expect("slot mutex")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("all jobs ran"))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ExpError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
