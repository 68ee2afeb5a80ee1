use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use nst_core::config::{ConfigOverrides, TransferConfig};
use nst_core::experiments::{
    builtin_sweeps, load_sweep_spec, presets, run_sweep, SweepOptions, SweepSpec,
};
use nst_core::imaging::{self, RgbImage};
use nst_core::network::LossNetwork;
use nst_core::objective::{history_csv, LossReport};
use nst_core::optimize::{run_transfer, ProgressSink, RunOutcome};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "nst",
    version,
    about = "Optimization-based neural style transfer"
)]
struct Cli {
    /// `tiny:SEED` or a path to an NSTW weight file.
    #[arg(long, global = true, default_value = "tiny:7")]
    weights: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize one content image.
    Run(RunArgs),
    /// Run a parameter sweep from a JSON spec file or a built-in sweep name.
    Sweep(SweepArgs),
    /// Print the named presets and built-in sweeps as JSON.
    Presets,
    /// Write the seeded tiny network to an NSTW weight file.
    ExportWeights {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Directory for frames, the final image and the loss history.
    #[arg(long, short, default_value = "nst-out")]
    output: PathBuf,
    /// Start from a named preset instead of the defaults.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Spec file, or the name of a built-in sweep.
    spec: String,
    /// Content images; replace those listed in the spec.
    #[arg(long)]
    content: Vec<PathBuf>,
    /// Style images; replace those listed in the spec.
    #[arg(long)]
    style: Vec<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Parallel cells; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    overrides: OverrideArgs,
}

/// Flags layered over the base configuration. Everything goes through
/// `ConfigOverrides` so the CLI and the HTTP API validate identically.
#[derive(Args, Serialize)]
struct OverrideArgs {
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    num_iterations: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    save_every: Option<i64>,
    /// `lbfgs` or `adam`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tv_strength: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    content_weight: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    style_weight: Option<f64>,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    content_taps: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    style_taps: Option<Vec<String>>,
    /// `gram` or `spatial_average`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    style_target: Option<String>,
    /// `content` or `noise`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
    /// Longest side in pixels.
    #[arg(long = "size", allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    image_size: Option<i64>,
}

impl OverrideArgs {
    fn apply(&self, base: &TransferConfig) -> Result<TransferConfig, Box<dyn Error>> {
        let overrides: ConfigOverrides = serde_json::from_value(serde_json::to_value(self)?)?;
        Ok(overrides.apply(base)?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Run(args) => run(&cli.weights, args),
        Command::Sweep(args) => sweep(&cli.weights, args),
        Command::Presets => {
            let presets: Vec<_> = presets()
                .into_iter()
                .map(|(name, config)| json!({ "name": name, "config": config }))
                .collect();
            let body = json!({ "presets": presets, "sweeps": builtin_sweeps() });
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(())
        }
        Command::ExportWeights { seed, output } => {
            LossNetwork::tiny(seed).save_weights(&output)?;
            println!("{}", output.display());
            Ok(())
        }
    }
}

/// Writes frames as they arrive and logs progress at each one.
struct FrameWriter {
    dir: PathBuf,
    latest: Option<LossReport>,
    error: Option<String>,
}

impl ProgressSink for FrameWriter {
    fn on_report(&mut self, report: &LossReport) {
        self.latest = Some(*report);
    }

    fn on_frame(&mut self, iteration: usize, frame: &RgbImage) {
        let path = self.dir.join(format!("{iteration:05}.png"));
        if let Err(e) = imaging::save_png(frame, &path) {
            self.error
                .get_or_insert(format!("cannot write {}: {e}", path.display()));
        }
        match &self.latest {
            Some(r) => info!(
                "iteration {iteration}: total {:.6e} content {:.6e} style {:.6e} tv {:.6e}",
                r.total, r.content, r.style, r.tv
            ),
            None => info!("iteration {iteration}: initial image"),
        }
    }

    fn cancelled(&self) -> bool {
        self.error.is_some()
    }
}

fn run(weights: &str, args: RunArgs) -> Result<(), Box<dyn Error>> {
    let base = match &args.preset {
        None => TransferConfig::default(),
        Some(name) => presets()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| format!("unknown preset `{name}`"))?,
    };
    let config = args.overrides.apply(&base)?;
    let net = LossNetwork::from_spec(weights)?;
    let content = imaging::load_png(&args.content)?;
    let style = imaging::load_png(&args.style)?;

    let frames = args.output.join("frames");
    fs::create_dir_all(&frames)?;
    write_json(&args.output.join("config.json"), &config)?;
    let mut sink = FrameWriter {
        dir: frames,
        latest: None,
        error: None,
    };
    let started = Instant::now();
    let result = run_transfer(&content, &style, &config, &net, &mut sink)?;
    if let Some(e) = sink.error {
        return Err(e.into());
    }
    imaging::save_png(&result.final_image, args.output.join("final.png"))?;
    fs::write(args.output.join("losses.csv"), history_csv(&result.history))?;

    let last = result.history.last().unwrap_or(&result.initial);
    println!(
        "{} iterations in {:.1}s: total {:.6e} content {:.6e} style {:.6e} tv {:.6e}",
        result.history.len(),
        started.elapsed().as_secs_f64(),
        last.total,
        last.content,
        last.style,
        last.tv
    );
    println!("{}", args.output.join("final.png").display());
    match result.outcome {
        RunOutcome::Aborted { after, reason } => {
            Err(format!("aborted after iteration {after}: {reason}").into())
        }
        _ => Ok(()),
    }
}

fn sweep(weights: &str, args: SweepArgs) -> Result<(), Box<dyn Error>> {
    let mut spec = resolve_spec(&args.spec)?;
    if !args.content.is_empty() {
        spec.content_images = args.content;
    }
    if !args.style.is_empty() {
        spec.style_images = args.style;
    }
    if let Some(dir) = args.output {
        spec.output_dir = dir;
    }
    spec.base = args.overrides.apply(&spec.base)?;
    if spec.content_images.is_empty() || spec.style_images.is_empty() {
        return Err("a sweep needs at least one --content and one --style image".into());
    }
    let net = LossNetwork::from_spec(weights)?;
    info!("sweep {}: {} cell(s)", spec.name, spec.cell_count());
    let result = run_sweep(
        &spec,
        &net,
        SweepOptions {
            workers: args.workers,
        },
    )?;

    for cell in &result.cells {
        let label = format!(
            "{}/{} @ {}",
            result.content_names[cell.content],
            result.style_names[cell.style],
            spec.varied_parameter.label(&spec.base, cell.value)
        );
        match (&cell.error, cell.final_report()) {
            (Some(e), _) => println!("{label}: failed: {e}"),
            (None, Some(r)) => println!(
                "{label}: total {:.6e} ({:.1}s)",
                r.total, cell.runtime_seconds
            ),
            (None, None) => println!("{label}: no iterations ({:.1}s)", cell.runtime_seconds),
        }
    }
    for sheet in &result.sheets {
        println!("{}", sheet.display());
    }
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        return Err(format!("{failed} cell(s) failed").into());
    }
    Ok(())
}

fn resolve_spec(arg: &str) -> Result<SweepSpec, Box<dyn Error>> {
    if let Some(spec) = builtin_sweeps().into_iter().find(|s| s.name == arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if !path.exists() {
        let names: Vec<String> = builtin_sweeps().into_iter().map(|s| s.name).collect();
        return Err(format!(
            "`{arg}` is neither a spec file nor a built-in sweep ({})",
            names.join(", ")
        )
        .into());
    }
    Ok(load_sweep_spec(path)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Box<dyn Error>> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
