//! Command line front end: `prepare`, `train`, `sweep` and `report`.
//!
//! Every subcommand reads one JSON document. A run spec is a flat object
//! holding [`TrainConfig`] keys plus the run-level keys of [`RunSpec`].

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CgpError, Result};
use crate::graph::{edge_homophily, generate_sbm, load_dataset, write_dataset, Graph, SbmConfig, SplitSet};
use crate::model::Checkpoint;
use crate::sparsify::mask_dump;
use crate::train::{train_run, EpochSnapshot, Precision, TrainConfig, TrainReport};

pub const PRECISION_ENV: &str = "CGP_PRECISION";

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "train_loss",
    "train_acc",
    "val_acc",
    "test_acc",
    "sparsity_w",
    "sparsity_a",
    "sparsity_x",
    "event",
];

#[derive(Debug, Parser)]
#[command(name = "cgp", version, about = "Gradual co-sparsification of GNN weights, edges and features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a stochastic block model dataset and write it to disk.
    Prepare(CommonArgs),
    /// Train one model and write metrics, report, masks and checkpoint.
    Train(CommonArgs),
    /// Train every grid point and repeat, then write summary.csv.
    Sweep(SweepArgs),
    /// Convert a sweep summary.csv into long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of sweep points trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A summary.csv written by `sweep`, or the sweep directory holding it.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for summary_long.csv; defaults to the input's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dataset generation config for `prepare`: [`SbmConfig`] keys plus an
/// optional `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSpec {
    pub sbm: SbmConfig,
    pub out: Option<PathBuf>,
}

impl PrepareSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut map: Map<String, Value> = serde_json::from_str(text)?;
        let out = map.remove("out").map(serde_json::from_value).transpose()?;
        let sbm = serde_json::from_value(Value::Object(map))?;
        Ok(Self { sbm, out })
    }
}

/// Where a run gets its graph from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Sbm(SbmConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub data: DataSource,
    pub out: Option<PathBuf>,
    pub grid_p_w: Option<Vec<f64>>,
    pub grid_p_a: Option<Vec<f64>>,
    pub grid_p_x: Option<Vec<f64>>,
    pub repeats: usize,
    pub train: TrainConfig,
}

impl RunSpec {
    /// Parses a run spec. Relative `dataset` and `out` paths resolve
    /// against `base`, then against the working directory.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut map: Map<String, Value> = serde_json::from_str(text)?;
        let mut take = |k: &str| map.remove(k);
        let dataset: Option<PathBuf> = take("dataset").map(serde_json::from_value).transpose()?;
        let sbm: Option<SbmConfig> = take("sbm").map(serde_json::from_value).transpose()?;
        let out: Option<PathBuf> = take("out").map(serde_json::from_value).transpose()?;
        let grid_p_w = take("grid_p_w").map(serde_json::from_value).transpose()?;
        let grid_p_a = take("grid_p_a").map(serde_json::from_value).transpose()?;
        let grid_p_x = take("grid_p_x").map(serde_json::from_value).transpose()?;
        let repeats = take("repeats").map(serde_json::from_value).transpose()?.unwrap_or(1);
        let train: TrainConfig = serde_json::from_value(Value::Object(map))?;

        let data = match (dataset, sbm) {
            (Some(dir), None) => DataSource::Dir(absolute(&base.join(dir))?),
            (None, Some(sbm)) => DataSource::Sbm(sbm),
            (Some(_), Some(_)) => {
                return Err(CgpError::Config("give either `dataset` or `sbm`, not both".into()))
            }
            (None, None) => return Err(CgpError::Config("missing data source: set `dataset` or `sbm`".into())),
        };
        Ok(Self {
            data,
            out: out.map(|o| absolute(&base.join(o))).transpose()?,
            grid_p_w,
            grid_p_a,
            grid_p_x,
            repeats,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CgpError::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// The flat JSON form, with paths as given.
    pub fn to_json(&self) -> Result<Value> {
        let mut map = match serde_json::to_value(&self.train)? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        match &self.data {
            DataSource::Dir(dir) => map.insert("dataset".into(), serde_json::to_value(dir)?),
            DataSource::Sbm(sbm) => map.insert("sbm".into(), serde_json::to_value(sbm)?),
        };
        if let Some(out) = &self.out {
            map.insert("out".into(), serde_json::to_value(out)?);
        }
        for (key, grid) in [
            ("grid_p_w", &self.grid_p_w),
            ("grid_p_a", &self.grid_p_a),
            ("grid_p_x", &self.grid_p_x),
        ] {
            if let Some(g) = grid {
                map.insert(key.into(), serde_json::to_value(g)?);
            }
        }
        map.insert("repeats".into(), self.repeats.into());
        Ok(Value::Object(map))
    }

    pub fn load_data(&self) -> Result<(Graph, SplitSet)> {
        match &self.data {
            DataSource::Dir(dir) => load_dataset(dir),
            DataSource::Sbm(cfg) => generate_sbm(cfg),
        }
    }

    /// Grid points in `p_w`-major order. A missing grid is the config's
    /// own target.
    pub fn grid(&self) -> Result<Vec<(f64, f64, f64)>> {
        let axis = |name: &str, grid: &Option<Vec<f64>>, fallback: f64| match grid {
            Some(g) if g.is_empty() => Err(CgpError::Config(format!("{name} is an empty grid"))),
            Some(g) => Ok(g.clone()),
            None => Ok(vec![fallback]),
        };
        let ws = axis("grid_p_w", &self.grid_p_w, self.train.p_w)?;
        let as_ = axis("grid_p_a", &self.grid_p_a, self.train.p_a)?;
        let xs = axis("grid_p_x", &self.grid_p_x, self.train.p_x)?;
        let mut points = Vec::with_capacity(ws.len() * as_.len() * xs.len());
        for &w in &ws {
            for &a in &as_ {
                for &x in &xs {
                    points.push((w, a, x));
                }
            }
        }
        Ok(points)
    }

    fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .ok_or_else(|| CgpError::Config("no output directory: pass --out or set `out`".into()))
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CgpError::io(p, e))
}

/// Applies `CGP_PRECISION` if set.
pub fn precision_override(cfg: &mut TrainConfig) -> Result<()> {
    if let Ok(v) = std::env::var(PRECISION_ENV) {
        cfg.precision = v.parse::<Precision>()?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => cmd_prepare(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

pub fn cmd_prepare(args: &CommonArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| CgpError::io(&args.config, e))?;
    let mut spec = PrepareSpec::from_json(&text)?;
    if let Some(seed) = args.seed {
        spec.sbm.seed = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new(""));
    let out = args
        .out
        .clone()
        .or_else(|| spec.out.as_ref().map(|o| base.join(o)))
        .ok_or_else(|| CgpError::Config("no output directory: pass --out or set `out`".into()))?;
    let (graph, splits) = generate_sbm(&spec.sbm)?;
    write_dataset(&graph, &splits, &out)?;

    let homophily = match edge_homophily(&graph) {
        Ok(h) => format!("{h:.4}"),
        Err(_) => "undefined".into(),
    };
    println!("dataset   {}", out.display());
    println!("nodes     {}", graph.n_nodes());
    println!("edges     {}", graph.n_arcs() / 2);
    println!("classes   {}", graph.n_classes());
    println!("features  {}", graph.feature_dim());
    println!("homophily {homophily}");
    println!(
        "splits    {}/{}/{}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

/// Files written by one training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: TrainReport,
}

pub fn cmd_train(args: &CommonArgs) -> Result<()> {
    let mut spec = RunSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.train.seed = seed;
    }
    precision_override(&mut spec.train)?;
    let out = spec.out_dir(args.out.as_deref())?;
    let (graph, splits) = spec.load_data()?;
    let run = train_to_dir(&graph, &splits, &spec, &out)?;
    let r = &run.report;
    println!(
        "best epoch {} val {:.4} test {:.4} sparsity w/a/x {:.4}/{:.4}/{:.4} MACs {:.0} (dense {:.0})",
        r.best_epoch,
        r.best_val_acc,
        r.test_acc_at_best,
        r.final_sparsity_w,
        r.final_sparsity_a,
        r.final_sparsity_x,
        r.inference.total_macs,
        r.dense_inference.total_macs
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
    sparsity_w: f64,
    sparsity_a: f64,
    sparsity_x: f64,
    event: u8,
}

/// Trains `spec.train` on the given data and writes all run artifacts to
/// `dir`. Metrics are streamed, so a diverged run still leaves its rows.
pub fn train_to_dir(graph: &Graph, splits: &SplitSet, spec: &RunSpec, dir: &Path) -> Result<RunArtifacts> {
    spec.train.validate()?;
    fs::create_dir_all(dir).map_err(|e| CgpError::io(dir, e))?;
    let mut echo = spec.clone();
    echo.out = Some(dir.to_path_buf());
    write_json(&dir.join("config.json"), &echo.to_json()?)?;

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&metrics_path)?;
    metrics.write_record(METRICS_HEADER)?;
    let mut stream_err: Option<CgpError> = None;
    let mut observer = |s: &EpochSnapshot<'_>| {
        if stream_err.is_some() {
            return;
        }
        let r = s.record;
        let row = MetricsRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_acc: r.train_acc,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
            sparsity_w: r.sparsity_w,
            sparsity_a: r.sparsity_a,
            sparsity_x: r.sparsity_x,
            event: r.event as u8,
        };
        let res = metrics.serialize(row).and_then(|_| Ok(metrics.flush()?));
        if let Err(e) = res {
            stream_err = Some(e.into());
        }
    };
    let result = train_run(graph, splits, &spec.train, &mut observer);
    metrics.flush().map_err(|e| CgpError::io(&metrics_path, e))?;
    if let Some(e) = stream_err {
        return Err(e);
    }
    let run = result?;

    write_json(&dir.join("report.json"), &run.report)?;
    run.best.save(dir.join("checkpoint.json"))?;
    write_masks(&run.best, &dir.join("masks"))?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        report: run.report,
    })
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CgpError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| CgpError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CgpError::io(path, e))
}

/// Writes `weights.tsv`, `edges.tsv` and `features.tsv` from a checkpoint.
/// Weights are indexed across layers in row-major order.
pub fn write_masks(ck: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CgpError::io(dir, e))?;
    let mut active = Vec::new();
    let mut values = Vec::new();
    for layer in &ck.layers {
        active.extend(layer.mask.chars().map(|c| c == '1'));
        values.extend_from_slice(&layer.values);
    }
    write_text(&dir.join("weights.tsv"), &mask_dump(&active, &values))?;
    for (name, rec) in [("edges.tsv", &ck.edge_mask), ("features.tsv", &ck.feature_mask)] {
        let active: Vec<bool> = rec.active.chars().map(|c| c == '1').collect();
        write_text(&dir.join(name), &mask_dump(&active, &rec.values))?;
    }
    Ok(())
}

/// One line of summary.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub p_w: f64,
    pub p_a: f64,
    pub p_x: f64,
    pub seed: u64,
    pub test_acc: Option<f64>,
    #[serde(rename = "inference_MACs")]
    pub inference_macs: Option<f64>,
    #[serde(rename = "training_FLOPs")]
    pub training_flops: Option<f64>,
    /// `ok`, or the error that stopped this run.
    pub status: String,
}

/// Directory name of one sweep point.
pub fn point_dir(p_w: f64, p_a: f64, p_x: f64, seed: u64) -> String {
    format!("pw{p_w}_pa{p_a}_px{p_x}_seed{seed}")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut spec = RunSpec::load(&args.common.config)?;
    if let Some(seed) = args.common.seed {
        spec.train.seed = seed;
    }
    precision_override(&mut spec.train)?;
    let out = spec.out_dir(args.common.out.as_deref())?;
    let rows = sweep(&spec, &out, args.jobs)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{} runs, {} failed, summary at {}",
        rows.len(),
        failed,
        out.join("summary.csv").display()
    );
    Ok(())
}

/// Runs the full grid and writes `summary.csv` in `out`. Failed points are
/// kept as rows with an error status.
pub fn sweep(spec: &RunSpec, out: &Path, jobs: usize) -> Result<Vec<SummaryRow>> {
    if jobs == 0 {
        return Err(CgpError::Config("--jobs must be at least 1".into()));
    }
    if spec.repeats == 0 {
        return Err(CgpError::Config("repeats must be at least 1".into()));
    }
    let grid = spec.grid()?;
    let mut runs = Vec::with_capacity(grid.len() * spec.repeats);
    for &(p_w, p_a, p_x) in &grid {
        for k in 0..spec.repeats {
            let mut point = spec.clone();
            point.grid_p_w = None;
            point.grid_p_a = None;
            point.grid_p_x = None;
            point.repeats = 1;
            point.train.p_w = p_w;
            point.train.p_a = p_a;
            point.train.p_x = p_x;
            point.train.seed = spec.train.seed + k as u64;
            runs.push(point);
        }
    }
    // Catch bad grid values before any work starts.
    for point in &runs {
        point.train.validate()?;
    }
    let (graph, splits) = spec.load_data()?;
    fs::create_dir_all(out).map_err(|e| CgpError::io(out, e))?;

    let run_one = |point: &RunSpec| {
        let t = &point.train;
        let dir = out.join("runs").join(point_dir(t.p_w, t.p_a, t.p_x, t.seed));
        let mut row = SummaryRow {
            p_w: t.p_w,
            p_a: t.p_a,
            p_x: t.p_x,
            seed: t.seed,
            test_acc: None,
            inference_macs: None,
            training_flops: None,
            status: "ok".into(),
        };
        match train_to_dir(&graph, &splits, point, &dir) {
            Ok(a) => {
                row.test_acc = Some(a.report.test_acc_at_best);
                row.inference_macs = Some(a.report.inference.total_macs);
                row.training_flops = Some(a.report.training_flops);
            }
            Err(e) => row.status = format!("error: {e}"),
        }
        row
    };
    let rows: Vec<SummaryRow> = if jobs == 1 {
        runs.iter().map(run_one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CgpError::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| runs.par_iter().map(run_one).collect())
    };

    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CgpError::io(out.join("summary.csv"), e))?;
    Ok(rows)
}

/// One line of the long-format report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub p_w: f64,
    pub p_a: f64,
    pub p_x: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Melts summary rows into `(grid point, seed, metric, value)` rows,
/// skipping failed runs.
pub fn to_long(rows: &[SummaryRow]) -> Vec<LongRow> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        for (metric, value) in [
            ("test_acc", r.test_acc),
            ("inference_MACs", r.inference_macs),
            ("training_FLOPs", r.training_flops),
        ] {
            if let Some(value) = value {
                out.push(LongRow {
                    p_w: r.p_w,
                    p_a: r.p_a,
                    p_x: r.p_x,
                    seed: r.seed,
                    metric: metric.into(),
                    value,
                });
            }
        }
    }
    out
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    Ok(rows)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let input = if args.config.is_dir() {
        args.config.join("summary.csv")
    } else {
        args.config.clone()
    };
    if !input.exists() {
        return Err(CgpError::MissingFile(input));
    }
    let rows = read_summary(&input)?;
    let long = to_long(&rows);
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| input.parent().unwrap_or(Path::new("")).to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| CgpError::io(&dir, e))?;
    let path = dir.join("summary_long.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &long {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CgpError::io(&path, e))?;
    println!("{} rows written to {}", long.len(), path.display());
    Ok(())
}
