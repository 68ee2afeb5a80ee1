//! Declarative parameter sweeps and the built-in experiment grids.
//!
//! A sweep runs every `(content, style, value)` cell and writes, per content
//! image, under `output_dir/<sweep name>/<content stem>/`:
//!
//! - `sheet.png`: styles as rows, values as columns in ascending order;
//! - `cells/<style>_<value>.png` and `cells/<style>_<value>.csv`;
//! - `summary.csv`: final losses per cell (deterministic);
//! - `timings.csv`: wall-clock runtime per cell.
//!
//! Cell `(i, j, k)` (content, style, value index) runs with seed
//! `base.seed + i·10000 + j·100 + k`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{format_number, OptimizerKind, TransferConfig};
use crate::error::{Error, Result};
use crate::imaging::{self, contact_sheet, failed_cell, RgbImage};
use crate::network::LossNetwork;
use crate::objective::{history_csv, LossReport};
use crate::optimize::{run_transfer, ProgressSink, RunOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    NumIterations,
    LearningRate,
    TvStrength,
    ContentWeight,
}

impl SweepParameter {
    /// `base` with this parameter set to `value`, validated.
    pub fn apply(self, base: &TransferConfig, value: f64) -> Result<TransferConfig> {
        let mut c = base.clone();
        match self {
            SweepParameter::NumIterations => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::field(
                        "num_iterations",
                        format!("must be a non-negative integer, got {value}"),
                    ));
                }
                c.num_iterations = value as usize;
            }
            SweepParameter::LearningRate => c.learning_rate = value,
            SweepParameter::TvStrength => c.tv_strength = value,
            SweepParameter::ContentWeight => c.content_weight = value,
        }
        c.validate()?;
        Ok(c)
    }

    pub fn value_of(self, config: &TransferConfig) -> f64 {
        match self {
            SweepParameter::NumIterations => config.num_iterations as f64,
            SweepParameter::LearningRate => config.learning_rate,
            SweepParameter::TvStrength => config.tv_strength,
            SweepParameter::ContentWeight => config.content_weight,
        }
    }

    /// Column label for a value, e.g. `1e-6` or `50:100`.
    pub fn label(self, base: &TransferConfig, value: f64) -> String {
        match self {
            SweepParameter::ContentWeight => {
                format!(
                    "{}:{}",
                    format_number(value),
                    format_number(base.style_weight)
                )
            }
            _ => format_number(value),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("sweeps")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    #[serde(default)]
    pub base: TransferConfig,
    pub varied_parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default)]
    pub content_images: Vec<PathBuf>,
    #[serde(default)]
    pub style_images: Vec<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl SweepSpec {
    /// Checks the grid itself; image lists are checked by [`run_sweep`].
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return Err(Error::field(
                "name",
                "must be a non-empty plain directory name",
            ));
        }
        if self.values.is_empty() {
            return Err(Error::field("values", "must not be empty"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::field("values", "must be strictly increasing"));
        }
        self.base.validate()?;
        for &v in &self.values {
            self.varied_parameter.apply(&self.base, v)?;
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.content_images.len() * self.style_images.len() * self.values.len()
    }

    pub fn cell_seed(&self, content: usize, style: usize, value: usize) -> u64 {
        cell_seed(self.base.seed, content, style, value)
    }
}

pub fn cell_seed(base: u64, content: usize, style: usize, value: usize) -> u64 {
    base + (content as u64) * 10_000 + (style as u64) * 100 + value as u64
}

/// The configuration the parameter study converged on: 300 L-BFGS
/// iterations, TV strength 1e-6, content:style 100:100, and an Adam learning
/// rate of 2e1 for runs that switch optimizer.
pub fn recommended_preset() -> TransferConfig {
    TransferConfig {
        num_iterations: 300,
        tv_strength: 1e-6,
        content_weight: 100.0,
        style_weight: 100.0,
        optimizer: OptimizerKind::Lbfgs,
        learning_rate: 2e1,
        ..TransferConfig::default()
    }
}

/// Named configurations offered to clients.
pub fn presets() -> Vec<(&'static str, TransferConfig)> {
    vec![
        ("default", TransferConfig::default()),
        ("recommended", recommended_preset()),
        (
            "recommended_adam",
            TransferConfig {
                optimizer: OptimizerKind::Adam,
                ..recommended_preset()
            },
        ),
    ]
}

/// The four parameter studies: iterations, Adam learning rate, TV strength
/// and content:style ratio. Image lists are left empty for the caller.
pub fn builtin_sweeps() -> Vec<SweepSpec> {
    let spec = |name: &str, base: TransferConfig, p: SweepParameter, values: &[f64]| SweepSpec {
        name: name.to_string(),
        base,
        varied_parameter: p,
        values: values.to_vec(),
        content_images: Vec::new(),
        style_images: Vec::new(),
        output_dir: default_output_dir(),
    };
    let lbfgs = TransferConfig::default();
    let adam = TransferConfig {
        optimizer: OptimizerKind::Adam,
        ..TransferConfig::default()
    };
    vec![
        spec(
            "experiment1_iterations",
            lbfgs.clone(),
            SweepParameter::NumIterations,
            &[100.0, 200.0, 300.0, 400.0, 500.0],
        ),
        spec(
            "experiment2_learning_rate",
            adam,
            SweepParameter::LearningRate,
            &[1e0, 5e0, 1e1, 2e1, 4e1, 6e1],
        ),
        spec(
            "experiment3_tv_strength",
            lbfgs.clone(),
            SweepParameter::TvStrength,
            &[1e-8, 1e-6, 1e-4, 1e-2, 1e-1, 1e0],
        ),
        spec(
            "experiment4_content_weight",
            lbfgs,
            SweepParameter::ContentWeight,
            &[10.0, 50.0, 100.0, 200.0, 300.0],
        ),
    ]
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub content: usize,
    pub style: usize,
    pub value_index: usize,
    pub value: f64,
    pub seed: u64,
    /// `None` when the run failed.
    pub image: Option<RgbImage>,
    pub history: Vec<LossReport>,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

impl CellResult {
    pub fn final_report(&self) -> Option<&LossReport> {
        self.history.last()
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub name: String,
    pub values: Vec<f64>,
    pub content_names: Vec<String>,
    pub style_names: Vec<String>,
    /// Ordered by content, then style, then value.
    pub cells: Vec<CellResult>,
    /// One contact sheet per content image.
    pub sheets: Vec<PathBuf>,
}

impl SweepResult {
    pub fn cell(&self, content: usize, style: usize, value: usize) -> &CellResult {
        let (s, v) = (self.style_names.len(), self.values.len());
        &self.cells[(content * s + style) * v + value]
    }

    /// Final images of one content image, `rows = styles × cols = values`.
    pub fn grid(&self, content: usize) -> Vec<Vec<Option<&RgbImage>>> {
        (0..self.style_names.len())
            .map(|j| {
                (0..self.values.len())
                    .map(|k| self.cell(content, j, k).image.as_ref())
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; `0` means the number of available cores.
    pub workers: usize,
}

fn unique_stems(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("image{i}"));
            if seen.insert(stem.clone()) {
                stem
            } else {
                let alt = format!("{stem}-{i}");
                seen.insert(alt.clone());
                alt
            }
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Records timestamps per iteration and every emitted frame.
struct CellSink {
    start: Instant,
    elapsed: Vec<f64>,
    frames: Vec<(usize, RgbImage)>,
}

impl ProgressSink for CellSink {
    fn on_report(&mut self, _report: &LossReport) {
        self.elapsed.push(self.start.elapsed().as_secs_f64());
    }

    fn on_frame(&mut self, iteration: usize, frame: &RgbImage) {
        self.frames.push((iteration, frame.clone()));
    }
}

struct Job {
    content: usize,
    style: usize,
    value_index: usize,
}

fn run_cells(
    spec: &SweepSpec,
    net: &LossNetwork,
    contents: &[RgbImage],
    styles: &[RgbImage],
    job: &Job,
) -> Vec<CellResult> {
    let start = Instant::now();
    let failed =
        |value_index: usize, seed: u64, history: Vec<LossReport>, error: String| CellResult {
            content: job.content,
            style: job.style,
            value_index,
            value: spec.values[value_index],
            seed,
            image: None,
            history,
            runtime_seconds: start.elapsed().as_secs_f64(),
            error: Some(error),
        };

    if spec.varied_parameter == SweepParameter::NumIterations {
        // One run to the largest count, snapshotted at every requested count.
        let seed = spec.cell_seed(job.content, job.style, 0);
        let max = *spec.values.last().expect("validated non-empty") as usize;
        let step = spec
            .values
            .iter()
            .fold(0, |g, &v| gcd(g, v as usize))
            .max(1);
        let config = TransferConfig {
            num_iterations: max,
            save_every: step,
            seed,
            ..spec.base.clone()
        };
        let mut sink = CellSink {
            start,
            elapsed: Vec::new(),
            frames: Vec::new(),
        };
        let result = run_transfer(
            &contents[job.content],
            &styles[job.style],
            &config,
            net,
            &mut sink,
        );
        return spec
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let v = v as usize;
                let result = match &result {
                    Ok(r) => r,
                    Err(e) => return failed(k, seed, Vec::new(), e.to_string()),
                };
                let frame = sink.frames.iter().find(|(it, _)| *it == v);
                match frame {
                    Some((_, image)) if result.history.len() >= v => CellResult {
                        content: job.content,
                        style: job.style,
                        value_index: k,
                        value: v as f64,
                        seed,
                        image: Some(image.clone()),
                        history: result.history[..v].to_vec(),
                        runtime_seconds: if v == 0 { 0.0 } else { sink.elapsed[v - 1] },
                        error: None,
                    },
                    _ => {
                        let reason = match &result.outcome {
                            RunOutcome::Aborted { reason, .. } => reason.clone(),
                            other => format!("{other:?}"),
                        };
                        failed(k, seed, result.history.clone(), reason)
                    }
                }
            })
            .collect();
    }

    let seed = spec.cell_seed(job.content, job.style, job.value_index);
    let value = spec.values[job.value_index];
    let config = match spec.varied_parameter.apply(&spec.base, value) {
        Ok(c) => TransferConfig { seed, ..c },
        Err(e) => return vec![failed(job.value_index, seed, Vec::new(), e.to_string())],
    };
    let mut sink = CellSink {
        start,
        elapsed: Vec::new(),
        frames: Vec::new(),
    };
    match run_transfer(
        &contents[job.content],
        &styles[job.style],
        &config,
        net,
        &mut sink,
    ) {
        Ok(r) if r.is_completed() => vec![CellResult {
            content: job.content,
            style: job.style,
            value_index: job.value_index,
            value,
            seed,
            image: Some(r.final_image),
            history: r.history,
            runtime_seconds: start.elapsed().as_secs_f64(),
            error: None,
        }],
        Ok(r) => {
            let reason = match r.outcome {
                RunOutcome::Aborted { reason, .. } => reason,
                other => format!("{other:?}"),
            };
            vec![failed(job.value_index, seed, r.history, reason)]
        }
        Err(e) => vec![failed(job.value_index, seed, Vec::new(), e.to_string())],
    }
}

/// Runs every cell of `spec` and writes sheets, per-cell files and summaries.
pub fn run_sweep(
    spec: &SweepSpec,
    net: &LossNetwork,
    options: SweepOptions,
) -> Result<SweepResult> {
    spec.validate()?;
    if spec.content_images.is_empty() {
        return Err(Error::field(
            "content_images",
            "must list at least one image",
        ));
    }
    if spec.style_images.is_empty() {
        return Err(Error::field("style_images", "must list at least one image"));
    }
    let load = |p: &PathBuf| {
        imaging::load_png(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))
    };
    let contents = spec
        .content_images
        .iter()
        .map(load)
        .collect::<Result<Vec<_>>>()?;
    let styles = spec
        .style_images
        .iter()
        .map(load)
        .collect::<Result<Vec<_>>>()?;
    let content_names = unique_stems(&spec.content_images);
    let style_names = unique_stems(&spec.style_images);

    let mut jobs = Vec::new();
    for content in 0..contents.len() {
        for style in 0..styles.len() {
            if spec.varied_parameter == SweepParameter::NumIterations {
                jobs.push(Job {
                    content,
                    style,
                    value_index: 0,
                });
            } else {
                for value_index in 0..spec.values.len() {
                    jobs.push(Job {
                        content,
                        style,
                        value_index,
                    });
                }
            }
        }
    }

    let workers = if options.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        options.workers
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let mut cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|job| run_cells(spec, net, &contents, &styles, job))
            .collect()
    });
    cells.sort_by_key(|c| (c.content, c.style, c.value_index));

    let mut result = SweepResult {
        name: spec.name.clone(),
        values: spec.values.clone(),
        content_names,
        style_names,
        cells,
        sheets: Vec::new(),
    };
    for content in 0..contents.len() {
        let path = write_content_outputs(spec, &result, content)?;
        result.sheets.push(path);
    }
    Ok(result)
}

fn write_content_outputs(
    spec: &SweepSpec,
    result: &SweepResult,
    content: usize,
) -> Result<PathBuf> {
    let dir = spec
        .output_dir
        .join(&spec.name)
        .join(&result.content_names[content]);
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let labels: Vec<String> = spec
        .values
        .iter()
        .map(|&v| spec.varied_parameter.label(&spec.base, v))
        .collect();
    let file_labels: Vec<String> = spec.values.iter().map(|&v| format_number(v)).collect();

    let (cw, ch) = result
        .cells
        .iter()
        .filter(|c| c.content == content)
        .find_map(|c| c.image.as_ref().map(|i| (i.width(), i.height())))
        .unwrap_or((spec.base.image_size, spec.base.image_size));

    let mut summary = String::from("cell,style,value,seed,status,content,style_loss,tv,total\n");
    let mut timings = String::from("cell,runtime_seconds\n");
    let mut grid = Vec::with_capacity(result.style_names.len());
    for (j, style) in result.style_names.iter().enumerate() {
        let mut row = Vec::with_capacity(spec.values.len());
        for k in 0..spec.values.len() {
            let cell = result.cell(content, j, k);
            let stem = format!("{style}_{}", file_labels[k]);
            fs::write(
                cells_dir.join(format!("{stem}.csv")),
                history_csv(&cell.history),
            )?;
            let status = match &cell.image {
                Some(img) => {
                    imaging::save_png(img, cells_dir.join(format!("{stem}.png")))?;
                    row.push(img.clone());
                    "done"
                }
                None => {
                    row.push(failed_cell(cw, ch));
                    "failed"
                }
            };
            let last = cell.final_report();
            let field =
                |f: fn(&LossReport) -> f64| last.map_or(String::new(), |r| f(r).to_string());
            let _ = writeln!(
                summary,
                "{stem},{style},{},{},{status},{},{},{},{}",
                file_labels[k],
                cell.seed,
                field(|r| r.content),
                field(|r| r.style),
                field(|r| r.tv),
                field(|r| r.total),
            );
            let _ = writeln!(timings, "{stem},{:.3}", cell.runtime_seconds);
        }
        grid.push(row);
    }
    let sheet = contact_sheet(&grid, &result.style_names, &labels)?;
    let sheet_path = dir.join("sheet.png");
    imaging::save_png(&sheet, &sheet_path)?;
    fs::write(dir.join("summary.csv"), summary)?;
    fs::write(dir.join("timings.csv"), timings)?;
    Ok(sheet_path)
}

/// Reads a sweep spec from a JSON file.
pub fn load_sweep_spec(path: impl AsRef<Path>) -> Result<SweepSpec> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("invalid sweep spec: {e}")))
}
