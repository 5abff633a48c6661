//! Command-line front end: `train`, `sweep`, `measure`, `render`, `baseline`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{parse_range_list, run_sweep_to_dir, SweepKind, SweepSpec};
use crate::layer::{load_checkpoint, save_checkpoint, Init, LayerShape};
use crate::orderedness::{orderedness_with_scope, MassScope, OrderednessResult};
use crate::pruning::PruneSpec;
use crate::render::render_weights_svg;
use crate::training::{run_clp, train_mlp_baseline, Task, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "orderlab", version, about = "Train complete perceptron layers and measure weight orderedness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one layer and write its checkpoint and run record.
    Train(TrainArgs),
    /// Run a seeded sweep and write raw.jsonl, aggregate.csv and plot.svg.
    Sweep(SweepArgs),
    /// Print the orderedness of a checkpoint as one JSON line.
    Measure(MeasureArgs),
    /// Render a checkpoint's weights matrix to SVG.
    Render(RenderArgs),
    /// Train the two-layer MLP reference on a task.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// xor, sine or untrained
    #[arg(long, default_value = "xor")]
    pub task: Task,
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,
    #[arg(long, value_name = "T")]
    pub iters: Option<usize>,
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    /// none or <random|topk|dyntopk|trildamp|dyntrildamp>:<coefficient>
    #[arg(long, value_name = "SPEC", default_value = "none")]
    pub prune: PruneSpec,
    #[arg(long, value_name = "INIT", default_value = "normal")]
    pub init_w: Init,
    #[arg(long, value_name = "INIT", default_value = "normal")]
    pub init_v: Init,
    #[arg(long)]
    pub bias: bool,
    /// Keep the initial state vector fixed during training.
    #[arg(long)]
    pub freeze_values: bool,
    #[arg(long, value_name = "F", default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// recurrent or full
    #[arg(long, default_value = "recurrent")]
    pub scope: MassScope,
    #[arg(long, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::defaults(self.task);
        let shape = &mut cfg.shape;
        shape.hidden = self.hidden.unwrap_or(shape.hidden);
        shape.iters = self.iters.unwrap_or(shape.iters);
        cfg.steps = self.steps.unwrap_or(cfg.steps);
        cfg.batch = self.batch.unwrap_or(cfg.batch);
        TrainConfig {
            prune: self.prune,
            init_w: self.init_w,
            init_v: self.init_v,
            bias: self.bias,
            freeze_values: self.freeze_values,
            lr: self.lr,
            seed: self.seed,
            scope: self.scope,
            ..cfg
        }
    }
}

/// Integer list flag value such as `0..10` or `2,4..=6`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntList<T>(pub Vec<T>);

fn seed_list(s: &str) -> Result<IntList<u64>> {
    parse_range_list(s).map(IntList)
}

fn usize_list(s: &str) -> Result<IntList<usize>> {
    parse_range_list(s).map(IntList)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// table1a, table1b, hi or sparsity; may instead come from --config
    pub kind: Option<SweepKind>,
    /// key = value sweep file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Comma separated tasks
    #[arg(long, value_delimiter = ',')]
    pub task: Option<Vec<Task>>,
    /// Seed range A..B (exclusive) or list
    #[arg(long, value_name = "A..B", value_parser = seed_list)]
    pub seeds: Option<IntList<u64>>,
    #[arg(long, value_name = "RANGE", value_parser = usize_list)]
    pub hidden: Option<IntList<usize>>,
    #[arg(long, value_name = "RANGE", value_parser = usize_list)]
    pub iters: Option<IntList<usize>>,
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    #[arg(long, value_name = "SPEC", value_delimiter = ',')]
    pub prune: Option<Vec<PruneSpec>>,
    #[arg(long)]
    pub scope: Option<MassScope>,
    #[arg(long, value_name = "DIR", default_value = "sweep")]
    pub out: PathBuf,
}

impl SweepArgs {
    pub fn spec(&self) -> Result<SweepSpec> {
        let mut spec = match (&self.config, self.kind) {
            (Some(path), kind) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let spec = SweepSpec::parse(&text).map_err(|e| match e {
                    Error::Parse(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })?;
                if kind.is_some_and(|k| k != spec.kind) {
                    return Err(Error::Config(format!(
                        "sweep kind argument disagrees with {} (kind = {})",
                        path.display(),
                        spec.kind
                    )));
                }
                spec
            }
            (None, Some(kind)) => SweepSpec::new(kind),
            (None, None) => {
                return Err(Error::Config("sweep needs a kind or --config FILE".into()));
            }
        };
        if let Some(t) = &self.task {
            spec.tasks = t.clone();
        }
        if let Some(s) = &self.seeds {
            spec.seeds = s.0.clone();
        }
        if let Some(h) = &self.hidden {
            spec.hidden = h.0.clone();
        }
        if let Some(t) = &self.iters {
            spec.iters = t.0.clone();
        }
        if let Some(p) = &self.prune {
            spec.prunes = p.clone();
        }
        if let Some(s) = self.scope {
            spec.scope = s;
        }
        spec.steps = self.steps.or(spec.steps);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "recurrent")]
    pub scope: MassScope,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "weights.svg")]
    pub out: PathBuf,
    #[arg(long, default_value = "recurrent")]
    pub scope: MassScope,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, default_value = "xor")]
    pub task: Task,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the record as JSON here as well as printing a summary.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Measurement<'a> {
    checkpoint: &'a Path,
    shape: LayerShape,
    scope: MassScope,
    #[serde(flatten)]
    result: OrderednessResult,
}

/// Config and parse problems are the caller's fault; everything else is a
/// runtime failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".orderlab-write-test");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn ensure_parent(file: &Path) -> Result<()> {
    match file.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) if !parent.is_dir() => Err(Error::io(
            parent,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        )),
        _ => Ok(()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.config();
    cfg.validate().map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    ensure_dir(&args.out)?;
    let (record, params) = run_clp(&cfg)?;
    let ckpt = args.out.join("checkpoint.txt");
    save_checkpoint(&ckpt, &cfg.shape, &params)?;
    let rec_path = args.out.join("record.jsonl");
    fs::write(&rec_path, format!("{}\n", record.to_json_line()?)).map_err(|e| Error::io(&rec_path, e))?;
    let o_post = record.o_post.as_ref().map(|o| o.orderedness);
    let _ = writeln!(
        out,
        "final_loss={} o_pre={:.6} o_post={} delta_o={} diverged={}",
        fmt_opt(record.final_loss),
        record.o_pre.orderedness,
        fmt_opt(o_post),
        fmt_opt(record.delta_o),
        record.diverged
    );
    Ok(if record.diverged { EXIT_RUNTIME } else { EXIT_OK })
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = args.spec()?;
    ensure_dir(&args.out)?;
    let result = run_sweep_to_dir(&spec, &args.out)?;
    for row in &result.rows {
        let _ = writeln!(
            out,
            "{:<36} dO {:+.3} ± {:.3}  O_pre {:.3}  n={} diverged={}",
            row.cell, row.mean_delta_o, row.std_delta_o, row.mean_o_pre, row.n_seeds, row.n_diverged
        );
    }
    Ok(EXIT_OK)
}

fn cmd_measure(args: &MeasureArgs, out: &mut dyn Write) -> Result<i32> {
    let (shape, params) = load_checkpoint(&args.checkpoint)?;
    let result = orderedness_with_scope(&params.effective_weights(), &shape, args.scope)?;
    let m = Measurement { checkpoint: &args.checkpoint, shape, scope: args.scope, result };
    let _ = writeln!(out, "{}", serde_json::to_string(&m)?);
    Ok(EXIT_OK)
}

fn cmd_render(args: &RenderArgs, out: &mut dyn Write) -> Result<i32> {
    ensure_parent(&args.out)?;
    let (shape, params) = load_checkpoint(&args.checkpoint)?;
    let svg = render_weights_svg(&shape, &params, args.scope)?;
    fs::write(&args.out, svg).map_err(|e| Error::io(&args.out, e))?;
    let _ = writeln!(out, "wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn cmd_baseline(args: &BaselineArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(path) = &args.out {
        ensure_parent(path)?;
    }
    let record = train_mlp_baseline(args.task, args.seed)?;
    if let Some(path) = &args.out {
        fs::write(path, format!("{}\n", serde_json::to_string(&record)?)).map_err(|e| Error::io(path, e))?;
    }
    let _ = writeln!(
        out,
        "task={} hidden={} steps={} final_loss={:.6} stopped_early={}",
        record.task,
        record.hidden,
        record.losses.len(),
        record.final_loss,
        record.stopped_early
    );
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Measure(a) => cmd_measure(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Baseline(a) => cmd_baseline(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().ansi().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{text}");
            return e.exit_code();
        }
    };
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
