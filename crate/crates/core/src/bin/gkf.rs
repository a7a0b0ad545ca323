use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use gkf::experiment::{
    aggregate, evaluate, init_model, render_table, true_replica, write_node_traces, write_rows_csv, EvalOptions,
    Evaluation, KfrMode, Oracle, ReportFile, ReportRow,
};
use gkf::io::{overlay_config, read_episode, read_json, write_episode, write_json, Checkpoint};
use gkf::sim::generate;
use gkf::{AnyModel, Episode, Error, GeneratorConfig, ModelFamily, TrainConfig, TrainReport};

const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "gkf", version, about = "Graph Kalman filter experiments on synthetic graph state-space data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic episode directory.
    Generate(GenerateArgs),
    /// Train a model on an episode and evaluate it on the test segment.
    Train(TrainArgs),
    /// Run the filter with and/or without refinement over the test segment.
    Evaluate(EvaluateArgs),
    /// Render report files as a table, CSV and per-node traces.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Lingss,
    Nonlingss,
}

impl Preset {
    fn config(self, seed: u64) -> GeneratorConfig {
        match self {
            Preset::Lingss => GeneratorConfig::lingss(seed),
            Preset::Nonlingss => GeneratorConfig::nonlingss(seed),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Replica,
    Stgnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum KfrArg {
    On,
    Off,
    Both,
}

impl From<KfrArg> for KfrMode {
    fn from(k: KfrArg) -> Self {
        match k {
            KfrArg::On => KfrMode::On,
            KfrArg::Off => KfrMode::Off,
            KfrArg::Both => KfrMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exp,
    Gt,
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in generator parameters.
    #[arg(long, value_enum, default_value = "lingss")]
    preset: Preset,
    /// JSON object whose keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "GKF_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

/// Episode source: a directory written by `generate`, or a preset name
/// generated in memory.
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: String,
    /// Seed for in-memory preset episodes.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

#[derive(Args)]
struct EvalFlags {
    /// Filter steps (with refinement) run before the test segment.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// Steps per RPI mini-batch.
    #[arg(long, default_value_t = 32)]
    rpi_batch: usize,
    /// Record wall-clock runtime in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[command(flatten)]
    data: DataArgs,
    /// JSON object whose keys override the default training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Seed of the first run; run i uses seed + i.
    #[arg(long, env = "GKF_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "true_replica"])))]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use the Replica with the generator's parameters.
    #[arg(long)]
    true_replica: bool,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    kfr: KfrArg,
    /// Replace the model's a priori state by a baseline (Replica only).
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files written by `train` or `evaluate`.
    #[arg(required = true)]
    rows: Vec<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated node ids to export as time series.
    #[arg(long, value_delimiter = ',', requires = "data")]
    trace_nodes: Vec<usize>,
    /// Episode directory for the trace export.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA })
        }
    }
}

fn create(path: &Path) -> gkf::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> gkf::Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> gkf::Result<()> {
    let base = a.preset.config(1);
    let mut cfg = match &a.config {
        Some(path) => overlay_config(&base, path)?,
        None => base,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.nodes {
        cfg.n_nodes = n;
    }
    if let Some(t) = a.steps {
        cfg.steps = t;
    }
    let ep = generate(&cfg)?;
    write_episode(&a.out, &ep)?;
    println!("nodes {}", ep.n_nodes());
    println!("steps {}", ep.len());
    println!("edges {}", ep.topology.edges().len());
    println!(
        "ones fraction {:.4} (expected {:.4})",
        ep.ones_fraction(),
        cfg.expected_ones_fraction()
    );
    if let Some(v) = ep.state_variance() {
        println!("state variance {v:.4}");
    }
    Ok(())
}

fn load_episode(d: &DataArgs) -> gkf::Result<Episode> {
    let path = Path::new(&d.data);
    if path.is_dir() {
        return read_episode(path);
    }
    match d.data.as_str() {
        "lingss" => generate(&GeneratorConfig::lingss(d.data_seed)),
        "nonlingss" => generate(&GeneratorConfig::nonlingss(d.data_seed)),
        _ => Err(Error::Data(format!("{}: no such episode directory or preset", d.data))),
    }
}

fn eval_options(f: &EvalFlags, kfr: KfrMode, oracle: Option<Oracle>) -> EvalOptions {
    EvalOptions {
        kfr,
        oracle,
        warmup: f.warmup,
        batch_size: f.rpi_batch,
        timing: f.timing,
        ..EvalOptions::default()
    }
}

fn write_report(dir: &Path, rows: &[ReportRow]) -> gkf::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), &ReportFile::new(rows.to_vec()))?;
    write_rows_csv(rows, create(&dir.join("report.csv"))?)
}

fn write_traces(dir: &Path, episode: &Episode, ev: &Evaluation) -> gkf::Result<()> {
    let outputs = &episode.outputs[ev.test_range.clone()];
    let t0 = ev.test_range.start;
    if let Some(tr) = &ev.refined {
        tr.write_csv(outputs, t0, create(&dir.join("trace_kfr.csv"))?)?;
    }
    if let Some(tr) = &ev.open_loop {
        tr.write_csv(outputs, t0, create(&dir.join("trace_open_loop.csv"))?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    seed: u64,
    report: &'a TrainReport,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    format_version: u32,
    config: &'a TrainConfig,
    runs: Vec<RunSummary<'a>>,
}

fn cmd_train(a: TrainArgs) -> gkf::Result<()> {
    let episode = load_episode(&a.data)?;
    let base = TrainConfig::default();
    let mut cfg = match &a.config {
        Some(path) => overlay_config(&base, path)?,
        None => base,
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.burn_in {
        cfg.burn_in = v;
    }
    cfg.validate()?;
    let family = match a.model {
        ModelArg::Replica => ModelFamily::Replica,
        ModelArg::Stgnn => ModelFamily::Stgnn,
    };
    let opts = eval_options(&a.eval, KfrMode::Both, None);

    let seeds: Vec<u64> = (0..a.runs).map(|i| a.seed + i).collect();
    let runs: Vec<(AnyModel, TrainReport, Evaluation, TrainConfig)> = seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let mut model = init_model(family, &episode, seed)?;
            let report = gkf::train(&mut model, &episode, &run_cfg)?;
            let ev = evaluate(&model, &episode, &opts)?;
            Ok((model, report, ev, run_cfg))
        })
        .collect::<gkf::Result<_>>()?;

    fs::create_dir_all(&a.out)?;
    for ((model, report, ev, run_cfg), seed) in runs.iter().zip(&seeds) {
        let dir = if a.runs == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("run-{seed}"))
        };
        Checkpoint::from_model(model, Some(run_cfg.clone()), Some(*seed)).save(&dir.join("checkpoint.json"))?;
        report.write_metrics_csv(create(&dir.join("metrics.csv"))?)?;
        write_traces(&dir, &episode, ev)?;
        println!(
            "seed {seed}: best epoch {} of {}, val {:.4}, test {:.4}",
            report.best_epoch,
            report.epochs.len(),
            report.best_val_mse,
            report.test_mse
        );
    }
    let evals: Vec<Evaluation> = runs.iter().map(|r| r.2.clone()).collect();
    let row = aggregate(&evals)?;
    write_report(&a.out, std::slice::from_ref(&row))?;
    write_json(
        &a.out.join("train.json"),
        &TrainSummary {
            format_version: gkf::io::FORMAT_VERSION,
            config: &cfg,
            runs: runs
                .iter()
                .zip(&seeds)
                .map(|(r, &seed)| RunSummary { seed, report: &r.1 })
                .collect(),
        },
    )?;
    print!("{}", render_table(&[row]));
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> gkf::Result<()> {
    let episode = load_episode(&a.data)?;
    let model: AnyModel = match &a.checkpoint {
        Some(path) => Checkpoint::load(path)?.to_model()?,
        None => true_replica(&episode).into(),
    };
    let oracle = a.oracle.map(|o| match o {
        OracleArg::Exp => Oracle::Exp,
        OracleArg::Gt => Oracle::Gt,
    });
    let ev = evaluate(&model, &episode, &eval_options(&a.eval, a.kfr.into(), oracle))?;
    write_report(&a.out, std::slice::from_ref(&ev.row))?;
    write_traces(&a.out, &episode, &ev)?;
    print!("{}", render_table(std::slice::from_ref(&ev.row)));
    Ok(())
}

fn cmd_report(a: ReportArgs) -> gkf::Result<()> {
    let mut rows = Vec::new();
    for path in &a.rows {
        let file: ReportFile = read_json(path)?;
        if file.format_version != gkf::io::FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: format version {}, expected {}",
                path.display(),
                file.format_version,
                gkf::io::FORMAT_VERSION
            )));
        }
        rows.extend(file.rows);
    }
    let table = render_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        write_text(&out.join("table.txt"), &table)?;
        write_rows_csv(&rows, create(&out.join("report.csv"))?)?;
    }
    if let Some(data) = &a.data {
        if !a.trace_nodes.is_empty() {
            let episode = read_episode(data)?;
            let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let n = write_node_traces(&episode, &a.trace_nodes, create(&dir.join("node_traces.csv"))?)?;
            println!("wrote {n} trace rows");
        }
    }
    Ok(())
}
