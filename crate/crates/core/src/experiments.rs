//! Seeded sweeps over initialisers, pruning operators, layer sizes and
//! sparsity coefficients, with per-cell aggregation and on-disk outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::Init;
use crate::orderedness::MassScope;
use crate::pruning::PruneSpec;
use crate::svg::{self, Series};
use crate::training::{train_clp, RunRecord, Task, TrainConfig};

pub const THREADS_ENV: &str = "ORDERLAB_THREADS";
pub const DEFAULT_SEEDS: std::ops::Range<u64> = 0..10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Table1a,
    Table1b,
    Hi,
    Sparsity,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1a" | "init" => Ok(SweepKind::Table1a),
            "table1b" | "prune" => Ok(SweepKind::Table1b),
            "hi" | "hi-grid" => Ok(SweepKind::Hi),
            "sparsity" | "so" => Ok(SweepKind::Sparsity),
            other => Err(Error::Config(format!(
                "unknown sweep {other:?} (expected table1a, table1b, hi or sparsity)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepKind::Table1a => "table1a",
            SweepKind::Table1b => "table1b",
            SweepKind::Hi => "hi",
            SweepKind::Sparsity => "sparsity",
        })
    }
}

/// Initialiser rows of the initialisation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitVariant {
    Default,
    UniformW,
    ZerosV,
}

impl InitVariant {
    pub const ALL: [InitVariant; 3] = [InitVariant::Default, InitVariant::UniformW, InitVariant::ZerosV];

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            InitVariant::Default => {}
            InitVariant::UniformW => cfg.init_w = Init::Uniform,
            InitVariant::ZerosV => cfg.init_v = Init::Zeros,
        }
    }
}

impl FromStr for InitVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(InitVariant::Default),
            "uniform-w" => Ok(InitVariant::UniformW),
            "zeros-v" => Ok(InitVariant::ZerosV),
            other => Err(Error::Config(format!(
                "unknown init variant {other:?} (expected default, uniform-w or zeros-v)"
            ))),
        }
    }
}

impl std::fmt::Display for InitVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitVariant::Default => "default",
            InitVariant::UniformW => "uniform-w",
            InitVariant::ZerosV => "zeros-v",
        })
    }
}

/// Everything that defines a sweep. Axes that a kind does not use are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub tasks: Vec<Task>,
    pub seeds: Vec<u64>,
    pub inits: Vec<InitVariant>,
    pub prunes: Vec<PruneSpec>,
    pub hidden: Vec<usize>,
    pub iters: Vec<usize>,
    /// Operators of the sparsity sweep, each with its coefficient grid.
    pub grids: Vec<(PruneSpec, Vec<f64>)>,
    pub steps: Option<usize>,
    pub scope: MassScope,
}

fn table_prunes() -> Vec<PruneSpec> {
    vec![
        PruneSpec::None,
        PruneSpec::Random(0.5),
        PruneSpec::TopK(0.5),
        PruneSpec::DynTopK(0.5),
        PruneSpec::TrilDamp(0.8),
        PruneSpec::DynTrilDamp(0.8),
    ]
}

fn default_grids() -> Vec<(PruneSpec, Vec<f64>)> {
    let k = vec![0.9, 0.7, 0.5, 0.3, 0.1];
    let f = vec![0.2, 0.4, 0.6, 0.8, 1.0];
    let p = (1..=9).map(|i| i as f64 / 10.0).collect();
    vec![
        (PruneSpec::TopK(0.5), k.clone()),
        (PruneSpec::DynTopK(0.5), k),
        (PruneSpec::TrilDamp(0.8), f.clone()),
        (PruneSpec::DynTrilDamp(0.8), f),
        (PruneSpec::Random(0.5), p),
    ]
}

impl SweepSpec {
    pub fn new(kind: SweepKind) -> Self {
        let tasks = match kind {
            SweepKind::Table1a | SweepKind::Table1b => vec![Task::Untrained, Task::Xor, Task::Sine],
            SweepKind::Hi | SweepKind::Sparsity => vec![Task::Xor],
        };
        Self {
            kind,
            tasks,
            seeds: DEFAULT_SEEDS.collect(),
            inits: InitVariant::ALL.to_vec(),
            prunes: if kind == SweepKind::Hi { vec![PruneSpec::DynTopK(0.5)] } else { table_prunes() },
            hidden: (2..=10).collect(),
            iters: (1..=8).collect(),
            grids: default_grids(),
            steps: None,
            scope: MassScope::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("sweep axis `{name}` is empty")))
            } else {
                Ok(())
            }
        };
        empty("tasks", self.tasks.len())?;
        empty("seeds", self.seeds.len())?;
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("sweep seeds must be distinct".into()));
        }
        match self.kind {
            SweepKind::Table1a => empty("inits", self.inits.len())?,
            SweepKind::Table1b => empty("prunes", self.prunes.len())?,
            SweepKind::Hi => {
                empty("hidden", self.hidden.len())?;
                empty("iters", self.iters.len())?;
                empty("prunes", self.prunes.len())?;
                if self.hidden.contains(&0) || self.iters.contains(&0) {
                    return Err(Error::Config("hidden and iters values must be >= 1".into()));
                }
            }
            SweepKind::Sparsity => {
                empty("operators", self.grids.len())?;
                for (op, grid) in &self.grids {
                    empty(op.name(), grid.len())?;
                    for &c in grid {
                        op.with_coefficient(c)?;
                    }
                }
            }
        }
        for p in &self.prunes {
            p.validate()?;
        }
        if self.steps == Some(0) {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses the key=value sweep file format. Blank lines and `#` comments are
    /// skipped; `kind` is required. Lists are comma separated and integer
    /// axes also accept `a..b` (exclusive) or `a..=b`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            pairs.push((n + 1, k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(_, k, _)| k == "kind")
            .ok_or_else(|| Error::Parse("sweep config needs a `kind` line".into()))?
            .2
            .parse()?;
        let mut spec = SweepSpec::new(kind);
        let mut grid_override: Vec<(PruneSpec, Option<Vec<f64>>)> = Vec::new();
        let mut explicit_ops = false;
        for (line, key, value) in pairs {
            let ctx = |e: Error| Error::Parse(format!("line {line} ({key}): {e}"));
            match key.as_str() {
                "kind" => {}
                "tasks" | "task" => spec.tasks = parse_list(&value).map_err(ctx)?,
                "seeds" => spec.seeds = parse_range_list(&value).map_err(ctx)?,
                "inits" => spec.inits = parse_list(&value).map_err(ctx)?,
                "prunes" | "prune" => spec.prunes = parse_list(&value).map_err(ctx)?,
                "hidden" => spec.hidden = parse_range_list(&value).map_err(ctx)?,
                "iters" => spec.iters = parse_range_list(&value).map_err(ctx)?,
                "steps" => spec.steps = Some(parse_one(&value).map_err(ctx)?),
                "scope" => spec.scope = value.parse().map_err(ctx)?,
                "operators" => {
                    explicit_ops = true;
                    let ops: Vec<String> = parse_list(&value).map_err(ctx)?;
                    for op in ops {
                        let spec = operator(&op).map_err(ctx)?;
                        if !grid_override.iter().any(|(p, _)| p.name() == spec.name()) {
                            grid_override.push((spec, None));
                        }
                    }
                }
                k if k.starts_with("coefficients.") => {
                    let op = operator(&k["coefficients.".len()..]).map_err(ctx)?;
                    let grid: Vec<f64> = parse_list(&value).map_err(ctx)?;
                    match grid_override.iter_mut().find(|(p, _)| p.name() == op.name()) {
                        Some(slot) => slot.1 = Some(grid),
                        None => grid_override.push((op, Some(grid))),
                    }
                }
                other => {
                    return Err(Error::Parse(format!("line {line}: unknown key {other:?}")));
                }
            }
        }
        if explicit_ops || !grid_override.is_empty() {
            let defaults = default_grids();
            let mut grids = if explicit_ops { Vec::new() } else { defaults.clone() };
            for (op, grid) in grid_override {
                let grid = grid.unwrap_or_else(|| {
                    defaults
                        .iter()
                        .find(|(p, _)| p.name() == op.name())
                        .map(|(_, g)| g.clone())
                        .unwrap_or_default()
                });
                match grids.iter_mut().find(|(p, _)| p.name() == op.name()) {
                    Some(slot) => slot.1 = grid,
                    None => grids.push((op, grid)),
                }
            }
            spec.grids = grids;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// The resolved spec in the key=value format accepted by `parse`.
    pub fn to_text(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut out = String::new();
        let _ = writeln!(out, "kind = {}", self.kind);
        let _ = writeln!(out, "tasks = {}", join(self.tasks.iter().map(|t| t.to_string()).collect()));
        let _ = writeln!(out, "seeds = {}", join(self.seeds.iter().map(|s| s.to_string()).collect()));
        let _ = writeln!(out, "scope = {}", self.scope);
        if let Some(steps) = self.steps {
            let _ = writeln!(out, "steps = {steps}");
        }
        match self.kind {
            SweepKind::Table1a => {
                let _ = writeln!(out, "inits = {}", join(self.inits.iter().map(|i| i.to_string()).collect()));
            }
            SweepKind::Table1b => {
                let _ = writeln!(out, "prunes = {}", join(self.prunes.iter().map(|p| p.to_string()).collect()));
            }
            SweepKind::Hi => {
                let _ = writeln!(out, "prunes = {}", join(self.prunes.iter().map(|p| p.to_string()).collect()));
                let _ = writeln!(out, "hidden = {}", join(self.hidden.iter().map(|h| h.to_string()).collect()));
                let _ = writeln!(out, "iters = {}", join(self.iters.iter().map(|t| t.to_string()).collect()));
            }
            SweepKind::Sparsity => {
                let ops: Vec<String> = self.grids.iter().map(|(p, _)| p.name().to_string()).collect();
                let _ = writeln!(out, "operators = {}", join(ops));
                for (op, grid) in &self.grids {
                    let g = join(grid.iter().map(|c| format!("{c:?}")).collect());
                    let _ = writeln!(out, "coefficients.{} = {g}", op.name());
                }
            }
        }
        out
    }

    /// Expands the spec into cells, each carrying a config template with the
    /// seed left at 0.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let base = |task: Task| {
            let mut cfg = TrainConfig::defaults(task);
            cfg.scope = self.scope;
            if let (Some(steps), false) = (self.steps, task == Task::Untrained) {
                cfg.steps = steps;
            }
            cfg
        };
        let mut cells = Vec::new();
        match self.kind {
            SweepKind::Table1a => {
                for &init in &self.inits {
                    for &task in &self.tasks {
                        let mut cfg = base(task);
                        init.apply(&mut cfg);
                        cells.push(Cell::new(init.to_string(), cfg, None));
                    }
                }
            }
            SweepKind::Table1b => {
                for prune in &self.prunes {
                    for &task in &self.tasks {
                        let cfg = TrainConfig { prune: *prune, ..base(task) };
                        cells.push(Cell::new(prune.to_string(), cfg, None));
                    }
                }
            }
            SweepKind::Hi => {
                for prune in &self.prunes {
                    for &task in &self.tasks {
                        for &h in &self.hidden {
                            for &t in &self.iters {
                                let mut cfg = TrainConfig { prune: *prune, ..base(task) };
                                cfg.shape.hidden = h;
                                cfg.shape.iters = t;
                                cells.push(Cell::new(prune.to_string(), cfg, None));
                            }
                        }
                    }
                }
            }
            SweepKind::Sparsity => {
                for &task in &self.tasks {
                    let controls: &[Task] =
                        if task == Task::Untrained { &[Task::Untrained] } else { &[task, Task::Untrained] };
                    for &variant in controls {
                        cells.push(Cell::new("none".into(), base(variant), Some(0.0)));
                        for (op, grid) in &self.grids {
                            for &c in grid {
                                let prune = op.with_coefficient(c)?;
                                let cfg = TrainConfig { prune, ..base(variant) };
                                cells.push(Cell::new(prune.to_string(), cfg, Some(sparsity_of(&prune))));
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

fn operator(name: &str) -> Result<PruneSpec> {
    let name = name.trim();
    let probe = if name.contains(':') { name.to_string() } else { format!("{name}:0.5") };
    probe.parse()
}

fn parse_one<T: FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e: T::Err| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_one).collect()
}

/// Comma-separated integers and ranges, e.g. `0..10` or `2,4..=6`.
pub fn parse_range_list<T>(s: &str) -> Result<Vec<T>>
where
    T: TryFrom<u64>,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((a, b)) = part.split_once("..") else {
            let v: u64 = parse_one(part)?;
            out.push(T::try_from(v).map_err(|_| Error::Parse(format!("{v} out of range")))?);
            continue;
        };
        let (b, inclusive) = match b.strip_prefix('=') {
            Some(b) => (b, true),
            None => (b, false),
        };
        let lo: u64 = parse_one(a)?;
        let hi: u64 = parse_one(b)?;
        let end = if inclusive { hi.saturating_add(1) } else { hi };
        if end <= lo {
            return Err(Error::Parse(format!("empty range {part:?}")));
        }
        for v in lo..end {
            out.push(T::try_from(v).map_err(|_| Error::Parse(format!("{v} out of range")))?);
        }
    }
    Ok(out)
}

/// Sparsity implied by a pruning coefficient: 1−k for the Top-K family, the
/// coefficient itself for damping and random pruning.
pub fn sparsity_of(prune: &PruneSpec) -> f64 {
    match prune {
        PruneSpec::None => 0.0,
        PruneSpec::TopK(k) | PruneSpec::DynTopK(k) => 1.0 - k,
        PruneSpec::Random(c) | PruneSpec::TrilDamp(c) | PruneSpec::DynTrilDamp(c) => *c,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: String,
    pub variant: String,
    pub sparsity: Option<f64>,
    pub config: TrainConfig,
}

impl Cell {
    fn new(variant: String, config: TrainConfig, sparsity: Option<f64>) -> Self {
        let s = &config.shape;
        let key = format!("{variant}/{}/h{}/T{}", config.task, s.hidden, s.iters);
        Self { key, variant, sparsity, config }
    }
}

/// Mean/std over the non-diverged seeds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: String,
    pub variant: String,
    pub task: Task,
    pub hidden: usize,
    pub iters: usize,
    pub sparsity: Option<f64>,
    pub n_seeds: usize,
    pub n_diverged: usize,
    pub mean_o_pre: f64,
    pub std_o_pre: f64,
    pub mean_o_post: f64,
    pub std_o_post: f64,
    pub mean_delta_o: f64,
    pub std_delta_o: f64,
    pub mean_final_loss: f64,
}

pub const CSV_HEADER: &str = "cell,variant,task,hidden,iters,sparsity,n_seeds,n_diverged,\
mean_o_pre,std_o_pre,mean_o_post,std_o_post,mean_delta_o,std_delta_o,mean_final_loss";

impl AggregateRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.cell,
            self.variant,
            self.task,
            self.hidden,
            self.iters,
            opt(self.sparsity),
            self.n_seeds,
            self.n_diverged,
            self.mean_o_pre,
            self.std_o_pre,
            self.mean_o_post,
            self.std_o_post,
            self.mean_delta_o,
            self.std_delta_o,
            self.mean_final_loss,
        )
    }
}

/// Arithmetic mean and sample (n−1) standard deviation; NaN where undefined.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn aggregate(cell: &Cell, records: &[&RunRecord]) -> AggregateRow {
    let ok: Vec<&&RunRecord> = records.iter().filter(|r| !r.diverged).collect();
    let pick = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
        ok.iter().filter_map(|r| f(r)).collect()
    };
    let (mean_o_pre, std_o_pre) = mean_std(&pick(&|r| Some(r.o_pre.orderedness)));
    let (mean_o_post, std_o_post) = mean_std(&pick(&|r| r.o_post.as_ref().map(|o| o.orderedness)));
    let (mean_delta_o, std_delta_o) = mean_std(&pick(&|r| r.delta_o));
    let (mean_final_loss, _) = mean_std(&pick(&|r| r.final_loss));
    AggregateRow {
        cell: cell.key.clone(),
        variant: cell.variant.clone(),
        task: cell.config.task,
        hidden: cell.config.shape.hidden,
        iters: cell.config.shape.iters,
        sparsity: cell.sparsity,
        n_seeds: records.len(),
        n_diverged: records.len() - ok.len(),
        mean_o_pre,
        std_o_pre,
        mean_o_post,
        std_o_post,
        mean_delta_o,
        std_delta_o,
        mean_final_loss,
    }
}

/// One line of `raw.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLine {
    pub cell: String,
    pub record: RunRecord,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub spec: SweepSpec,
    pub rows: Vec<AggregateRow>,
    pub raw: Vec<RawLine>,
}

/// Worker count: `ORDERLAB_THREADS` if set and positive, else rayon's default.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Buffers out-of-order completions and appends whole lines in job order.
struct OrderedSink {
    next: usize,
    pending: BTreeMap<usize, String>,
    out: Option<(BufWriter<File>, PathBuf)>,
}

impl OrderedSink {
    fn push(&mut self, idx: usize, line: String) -> Result<()> {
        self.pending.insert(idx, line);
        while let Some(line) = self.pending.remove(&self.next) {
            if let Some((w, path)) = self.out.as_mut() {
                w.write_all(line.as_bytes())
                    .and_then(|_| w.write_all(b"\n"))
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(path.clone(), e))?;
            }
            self.next += 1;
        }
        Ok(())
    }
}

/// Runs every (cell, seed) job on a bounded pool. When `raw_path` is given,
/// records are appended there in job order as they complete.
pub fn run_sweep(spec: &SweepSpec, raw_path: Option<&Path>) -> Result<SweepOutput> {
    spec.validate()?;
    let cells = spec.cells()?;
    let jobs: Vec<(usize, TrainConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, cell)| {
            spec.seeds.iter().map(move |&seed| (ci, TrainConfig { seed, ..cell.config.clone() }))
        })
        .collect();
    for (_, cfg) in &jobs {
        cfg.validate()?;
    }

    let out = match raw_path {
        Some(p) => Some((BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?), p.to_path_buf())),
        None => None,
    };
    let sink = Mutex::new(OrderedSink { next: 0, pending: BTreeMap::new(), out });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let results: Vec<Result<RawLine>> = pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(idx, (ci, cfg))| {
                let line = RawLine { cell: cells[*ci].key.clone(), record: train_clp(cfg)? };
                let text = serde_json::to_string(&line)?;
                sink.lock().expect("sink poisoned").push(idx, text)?;
                Ok(line)
            })
            .collect()
    });
    let raw: Vec<RawLine> = results.into_iter().collect::<Result<_>>()?;

    let per_cell = spec.seeds.len();
    let rows = cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            let recs: Vec<&RunRecord> =
                raw[ci * per_cell..(ci + 1) * per_cell].iter().map(|l| &l.record).collect();
            aggregate(cell, &recs)
        })
        .collect();
    Ok(SweepOutput { spec: spec.clone(), rows, raw })
}

pub fn run_table1a(seeds: &[u64]) -> Result<SweepOutput> {
    run_sweep(&SweepSpec { seeds: seeds.to_vec(), ..SweepSpec::new(SweepKind::Table1a) }, None)
}

pub fn run_table1b(seeds: &[u64]) -> Result<SweepOutput> {
    run_sweep(&SweepSpec { seeds: seeds.to_vec(), ..SweepSpec::new(SweepKind::Table1b) }, None)
}

pub fn run_hi_grid(task: Task, hidden: &[usize], iters: &[usize], seeds: &[u64]) -> Result<SweepOutput> {
    let spec = SweepSpec {
        tasks: vec![task],
        hidden: hidden.to_vec(),
        iters: iters.to_vec(),
        seeds: seeds.to_vec(),
        ..SweepSpec::new(SweepKind::Hi)
    };
    run_sweep(&spec, None)
}

pub fn run_sparsity_sweep(
    task: Task,
    grids: &[(PruneSpec, Vec<f64>)],
    seeds: &[u64],
) -> Result<SweepOutput> {
    let spec = SweepSpec {
        tasks: vec![task],
        grids: grids.to_vec(),
        seeds: seeds.to_vec(),
        ..SweepSpec::new(SweepKind::Sparsity)
    };
    run_sweep(&spec, None)
}

impl SweepOutput {
    pub fn row(&self, variant: &str, task: Task) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.variant == variant && r.task == task)
    }

    /// Mean ΔO indexed `[h][T]` in the order of the spec's axes.
    pub fn hi_grid(&self, task: Task) -> Vec<Vec<f64>> {
        self.spec
            .hidden
            .iter()
            .map(|&h| {
                self.spec
                    .iters
                    .iter()
                    .map(|&t| {
                        self.rows
                            .iter()
                            .find(|r| r.task == task && r.hidden == h && r.iters == t)
                            .map_or(f64::NAN, |r| r.mean_delta_o)
                    })
                    .collect()
            })
            .collect()
    }

    /// (sparsity, mean O_post) points for one operator family, sorted by
    /// sparsity and including the unpruned point at sparsity 0.
    pub fn curve(&self, operator: &str, task: Task) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.task == task && (r.variant == "none" || r.variant.split(':').next() == Some(operator)))
            .filter_map(|r| r.sparsity.map(|s| (s, r.mean_o_post)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn plot(&self) -> String {
        match self.spec.kind {
            SweepKind::Table1a | SweepKind::Table1b => {
                let variants: Vec<String> = dedup(self.rows.iter().map(|r| r.variant.clone()));
                let series: Vec<String> = self.spec.tasks.iter().map(|t| t.to_string()).collect();
                let values = variants
                    .iter()
                    .map(|v| {
                        self.spec
                            .tasks
                            .iter()
                            .map(|&t| {
                                self.row(v, t).map_or((f64::NAN, 0.0), |r| {
                                    let untrained_o = self.spec.kind == SweepKind::Table1a
                                        && t == Task::Untrained;
                                    if untrained_o {
                                        (r.mean_o_pre, r.std_o_pre)
                                    } else {
                                        (r.mean_delta_o, r.std_delta_o)
                                    }
                                })
                            })
                            .collect()
                    })
                    .collect::<Vec<_>>();
                let title = if self.spec.kind == SweepKind::Table1a {
                    "Initialisation: O (untrained) and mean ΔO per task"
                } else {
                    "Pruning: mean ΔO per task"
                };
                svg::bar_chart(title, &variants, &series, &values)
            }
            SweepKind::Hi => {
                let task = self.spec.tasks[0];
                let rows: Vec<String> = self.spec.hidden.iter().map(|h| h.to_string()).collect();
                let cols: Vec<String> = self.spec.iters.iter().map(|t| t.to_string()).collect();
                svg::grid_heatmap(
                    &format!("mean ΔO, {task}, {}", self.spec.prunes[0]),
                    "hidden units",
                    "iterations",
                    &rows,
                    &cols,
                    &self.hi_grid(task),
                )
            }
            SweepKind::Sparsity => {
                let task = self.spec.tasks[0];
                let mut series = Vec::new();
                for (op, _) in &self.spec.grids {
                    for (t, dashed) in [(task, false), (Task::Untrained, true)] {
                        if dashed && task == Task::Untrained {
                            continue;
                        }
                        series.push(Series {
                            name: format!("{} {t}", op.name()),
                            points: self.curve(op.name(), t),
                            dashed,
                        });
                    }
                }
                svg::line_chart("Orderedness after pruning vs sparsity", "sparsity", "mean O", &series)
            }
        }
    }

    /// Writes `raw.jsonl` (unless already streamed there), `aggregate.csv`,
    /// `plot.svg` and the resolved `sweep.conf` under `dir`.
    pub fn write(&self, dir: &Path, raw_written: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: &str| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        if !raw_written {
            let mut raw = String::new();
            for line in &self.raw {
                raw.push_str(&serde_json::to_string(line)?);
                raw.push('\n');
            }
            put("raw.jsonl", &raw)?;
        }
        put("aggregate.csv", &self.csv())?;
        put("plot.svg", &self.plot())?;
        put("sweep.conf", &self.spec.to_text())
    }
}

fn dedup(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Runs a sweep and writes every output file under `dir`.
pub fn run_sweep_to_dir(spec: &SweepSpec, dir: &Path) -> Result<SweepOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = run_sweep(spec, Some(&dir.join("raw.jsonl")))?;
    out.write(dir, true)?;
    Ok(out)
}

/// Reads `raw.jsonl` back.
pub fn read_raw(path: &Path) -> Result<Vec<RawLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return f64::NAN;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sample_std_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_relative_eq!(s, (5.0_f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert!(mean_std(&[]).0.is_nan());
        assert!(mean_std(&[3.0]).1.is_nan());
    }

    #[test]
    fn spearman_reference_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // ranks y = [1, 2.5, 2.5, 4]; textbook value 0.9486832980505138
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 6.0, 9.0]),
            0.9486832980505138,
            epsilon = 1e-12
        );
        assert!(spearman(&[1.0, 2.0], &[4.0, 4.0]).is_nan());
    }

    #[test]
    fn range_lists() {
        assert_eq!(parse_range_list::<u64>("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_range_list::<usize>("2,4..=6").unwrap(), vec![2, 4, 5, 6]);
        assert!(parse_range_list::<u64>("3..3").is_err());
        assert!(parse_range_list::<u64>("a").is_err());
    }

    #[test]
    fn config_round_trips_and_validates() {
        let text = "# hi grid\nkind = hi\nhidden = 2..=3\niters = 1,2\nseeds = 0..2\nsteps = 5\n";
        let spec = SweepSpec::parse(text).unwrap();
        assert_eq!(spec.hidden, vec![2, 3]);
        assert_eq!(spec.steps, Some(5));
        assert_eq!(SweepSpec::parse(&spec.to_text()).unwrap(), spec);

        let sp = SweepSpec::parse("kind = sparsity\noperators = topk\ncoefficients.topk = 0.5, 0.1").unwrap();
        assert_eq!(sp.grids, vec![(PruneSpec::TopK(0.5), vec![0.5, 0.1])]);
        assert_eq!(SweepSpec::parse(&sp.to_text()).unwrap(), sp);

        assert!(SweepSpec::parse("hidden = 2").is_err());
        assert!(SweepSpec::parse("kind = hi\nseeds = 1,1").is_err());
        assert!(SweepSpec::parse("kind = hi\nhidden = ").is_err());
        assert!(SweepSpec::parse("kind = sparsity\ncoefficients.topk = 1.5").is_err());
        assert!(SweepSpec::parse("kind = hi\nbogus = 1").is_err());
    }

    #[test]
    fn cell_expansion_counts() {
        assert_eq!(SweepSpec::new(SweepKind::Table1a).cells().unwrap().len(), 9);
        assert_eq!(SweepSpec::new(SweepKind::Table1b).cells().unwrap().len(), 18);
        assert_eq!(SweepSpec::new(SweepKind::Hi).cells().unwrap().len(), 72);
        // (1 + 5+5+5+5+9) cells for xor and again for the untrained control
        assert_eq!(SweepSpec::new(SweepKind::Sparsity).cells().unwrap().len(), 60);
    }

    fn tiny(kind: SweepKind) -> SweepSpec {
        SweepSpec {
            seeds: vec![3, 1],
            steps: Some(20),
            hidden: vec![1, 2],
            iters: vec![1, 2],
            ..SweepSpec::new(kind)
        }
    }

    #[test]
    fn aggregates_match_raw_records() {
        let out = run_sweep(&tiny(SweepKind::Table1b), None).unwrap();
        assert_eq!(out.rows.len(), 18);
        for (ci, row) in out.rows.iter().enumerate() {
            let recs = &out.raw[ci * 2..ci * 2 + 2];
            assert!(recs.iter().all(|l| l.cell == row.cell));
            assert_eq!(recs[0].record.config.seed, 3);
            let d: Vec<f64> = recs.iter().map(|l| l.record.delta_o.unwrap()).collect();
            assert_eq!(row.mean_delta_o, (d[0] + d[1]) / 2.0);
            assert_eq!(row.n_seeds, 2);
        }
        let none_untrained = out.row("none", Task::Untrained).unwrap();
        assert_eq!(none_untrained.mean_delta_o, 0.0);
        assert_eq!(none_untrained.std_delta_o, 0.0);
    }

    #[test]
    fn diverged_runs_are_counted_not_averaged() {
        let cell = Cell::new("x".into(), TrainConfig::defaults(Task::Xor), None);
        let mut good = train_clp(&TrainConfig { steps: 2, ..cell.config.clone() }).unwrap();
        good.delta_o = Some(0.25);
        let mut bad = good.clone();
        bad.diverged = true;
        bad.delta_o = None;
        let row = aggregate(&cell, &[&good, &bad]);
        assert_eq!((row.n_seeds, row.n_diverged), (2, 1));
        assert_eq!(row.mean_delta_o, 0.25);
    }

    #[test]
    fn outputs_are_deterministic_and_thread_independent() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(SweepKind::Hi);
        run_sweep_to_dir(&spec, &dir.path().join("a")).unwrap();
        let serial = run_sweep(&spec, None).unwrap();
        serial.write(&dir.path().join("b"), false).unwrap();
        for name in ["raw.jsonl", "aggregate.csv", "plot.svg", "sweep.conf"] {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let raw = read_raw(&dir.path().join("a/raw.jsonl")).unwrap();
        let text = |lines: &[RawLine]| lines.iter().map(|l| serde_json::to_string(l).unwrap()).collect::<Vec<_>>();
        assert_eq!(text(&raw), text(&serial.raw));
        assert_eq!(serial.hi_grid(Task::Xor).len(), 2);
        let csv = fs::read_to_string(dir.path().join("a/aggregate.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn tril_zero_coefficient_is_the_baseline() {
        let grids = vec![(PruneSpec::TrilDamp(0.8), vec![0.0])];
        let spec = SweepSpec { seeds: vec![0, 1], steps: Some(30), grids, ..SweepSpec::new(SweepKind::Sparsity) };
        let out = run_sweep(&spec, None).unwrap();
        let curve = out.curve("trildamp", Task::Xor);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].1, curve[1].1);
        assert!(out.plot().contains("<polyline"));
    }
}
