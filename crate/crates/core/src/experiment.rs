//! Evaluation of trained or fixed models on an episode's test segment,
//! aggregation over runs, and report rendering.

use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gkf::{fmt_f64, gkf_predict, gkf_step, mse, GkfConfig, GkfStep, GkfTrace};
use crate::models::{AnyModel, GssModel, ModelFamily, Replica, ReplicaParams, Stgnn, STGNN_HIDDEN};
use crate::rng::{Rng, Stream};
use crate::sim::{Episode, GeneratorConfig};
use crate::training::split_segments;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KfrMode {
    On,
    Off,
    Both,
}

impl FromStr for KfrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(KfrMode::On),
            "off" => Ok(KfrMode::Off),
            "both" => Ok(KfrMode::Both),
            _ => Err(Error::InvalidConfig(format!("unknown --kfr mode '{s}' (on|off|both)"))),
        }
    }
}

/// Baselines that replace the model's own a priori state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    /// Noiseless transition from the recorded previous state.
    Exp,
    /// The recorded true state.
    Gt,
}

impl FromStr for Oracle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(Oracle::Exp),
            "gt" => Ok(Oracle::Gt),
            _ => Err(Error::InvalidConfig(format!("unknown oracle '{s}' (exp|gt)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub kfr: KfrMode,
    pub oracle: Option<Oracle>,
    /// Filter steps run (with refinement) before the test segment starts.
    pub warmup: usize,
    pub batch_size: usize,
    pub split: [f64; 3],
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kfr: KfrMode::Both,
            oracle: None,
            warmup: 0,
            batch_size: 32,
            split: [0.7, 0.1, 0.2],
            timing: false,
        }
    }
}

/// Mean and standard deviation (population) of a set of values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn single(v: f64) -> Self {
        Stat { mean: v, std: 0.0 }
    }

    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    pub mse_without_kfr: Option<Stat>,
    pub mse_with_kfr: Option<Stat>,
    /// Relative prediction improvement in percent.
    pub rpi: Option<Stat>,
    pub n_batches: usize,
    pub n_runs: usize,
    /// Wall-clock seconds; only recorded on request so outputs stay
    /// reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

/// One evaluation: the summary row plus the raw material for aggregation
/// and plotting.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub row: ReportRow,
    pub rpi_batches: Vec<f64>,
    pub test_range: Range<usize>,
    /// Filter trace over the test segment with refinement, if it ran.
    pub refined: Option<GkfTrace>,
    /// Open-loop trace over the test segment, if it ran.
    pub open_loop: Option<GkfTrace>,
}

/// "LinGSS"/"NonLinGSS" when the generator matches a preset, else "custom".
pub fn dataset_label(cfg: &GeneratorConfig) -> String {
    let same = |p: &GeneratorConfig| {
        p.lambda0 == cfg.lambda0
            && p.lambda1 == cfg.lambda1
            && p.replica_params() == cfg.replica_params()
            && p.sigma_eta == cfg.sigma_eta
            && p.sigma_nu == cfg.sigma_nu
    };
    if same(&GeneratorConfig::lingss(0)) {
        "LinGSS".into()
    } else if same(&GeneratorConfig::nonlingss(0)) {
        "NonLinGSS".into()
    } else {
        "custom".into()
    }
}

pub fn model_label(family: ModelFamily, oracle: Option<Oracle>) -> String {
    let base = match family {
        ModelFamily::Replica => "Replica",
        ModelFamily::Stgnn => "STGNN",
        ModelFamily::LinearAdjacency => "LinearAdjacency",
    };
    match oracle {
        None => base.into(),
        Some(Oracle::Exp) => format!("{base} Exp"),
        Some(Oracle::Gt) => format!("{base} GT"),
    }
}

/// The Replica with the generator's own parameters.
pub fn true_replica(episode: &Episode) -> Replica {
    Replica::new(episode.topology.clone(), episode.config.replica_params())
}

/// Fresh model for training. Replica draws keep the initial transition a
/// contraction (both thetas in [0, 0.5]) and the readout gain positive
/// (psi1 in [0, 1], psi0 in [-0.5, 0.5]); the generator's nonlinearities
/// are kept. STGNN weights use
/// fan-in scaled uniform initialization.
pub fn init_model(family: ModelFamily, episode: &Episode, seed: u64) -> Result<AnyModel> {
    let mut rng = Rng::for_purpose(seed, Stream::Init, 0);
    let topology = episode.topology.clone();
    Ok(match family {
        ModelFamily::Replica => {
            let truth = episode.config.replica_params();
            let theta_tm = rng.uniform_range(0.0, 0.5);
            let theta_sp = rng.uniform_range(0.0, 0.5);
            let psi0 = rng.uniform_range(-0.5, 0.5);
            let psi1 = rng.uniform_range(0.0, 1.0);
            Replica::new(
                topology,
                ReplicaParams {
                    theta_tm,
                    theta_sp,
                    psi0,
                    psi1,
                    rho_st: truth.rho_st,
                    rho_ro: truth.rho_ro,
                },
            )
            .into()
        }
        ModelFamily::Stgnn => Stgnn::random(topology, STGNN_HIDDEN, &mut rng).into(),
        ModelFamily::LinearAdjacency => {
            return Err(Error::Unsupported("training the linear-adjacency model".into()));
        }
    })
}

fn oracle_prior(model: &dyn GssModel, episode: &Episode, oracle: Oracle, t: usize) -> Result<Vec<f64>> {
    let states = episode
        .states
        .as_ref()
        .ok_or_else(|| Error::Data("oracle baselines need recorded states (states.csv)".into()))?;
    match oracle {
        Oracle::Gt => Ok(states[t].clone()),
        Oracle::Exp => {
            let prev = if t == 0 {
                vec![0.0; model.state_len()]
            } else {
                states[t - 1].clone()
            };
            let x_enc = model.encode(&episode.input_before(t))?;
            model.transition(&prev, &x_enc)
        }
    }
}

fn check_oracle_model(model: &dyn GssModel, episode: &Episode, oracle: Option<Oracle>) -> Result<()> {
    if oracle.is_none() {
        return Ok(());
    }
    if model.family() != ModelFamily::Replica {
        return Err(Error::Unsupported(
            "oracle baselines need a state space matching the generator (replica)".into(),
        ));
    }
    if episode.states.is_none() {
        return Err(Error::Data("oracle baselines need recorded states (states.csv)".into()));
    }
    Ok(())
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// RPI (percent) over consecutive blocks of `batch` steps. A trailing
/// partial block is dropped unless it is the only one.
pub fn rpi_batches(steps: &[GkfStep], outputs: &[Vec<f64>], batch: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let n_full = steps.len() / batch.max(1);
    let blocks = if n_full == 0 && !steps.is_empty() { 1 } else { n_full };
    for b in 0..blocks {
        let range = b * batch..((b + 1) * batch).min(steps.len());
        let (mut post, mut prior) = (0.0, 0.0);
        for k in range {
            post += sq_err(&steps[k].y_post, &outputs[k]);
            prior += sq_err(&steps[k].y_prior, &outputs[k]);
        }
        out.push(if prior > 0.0 { 100.0 * (post - prior) / prior } else { 0.0 });
    }
    out
}

/// Runs the filter from the prior over `run`; returns steps inside `keep`.
fn run_filter(
    model: &dyn GssModel,
    cfg: &GkfConfig,
    episode: &Episode,
    run: Range<usize>,
    keep: &Range<usize>,
    refine: bool,
) -> Result<Vec<GkfStep>> {
    let mut belief = cfg.prior.clone();
    let mut steps = Vec::with_capacity(keep.len());
    for t in run {
        let x = episode.input_before(t);
        let y = &episode.outputs[t];
        // Warm-up steps always refine; the open-loop run starts after them.
        if refine || !keep.contains(&t) {
            let (next, step) = gkf_step(model, cfg, &belief, &x, y, false)?;
            belief = next;
            if keep.contains(&t) {
                steps.push(step);
            }
        } else {
            let (_, s_prior, y_prior) = gkf_predict(model, &belief.mean, &x)?;
            belief.mean.clone_from(&s_prior);
            steps.push(GkfStep {
                s_post: s_prior.clone(),
                y_post: y_prior.clone(),
                s_prior,
                y_prior,
                trace_p_prior: None,
                trace_p_post: None,
                gain_norm: None,
                matrices: None,
            });
        }
    }
    Ok(steps)
}

/// Evaluates `model` over the test segment of `episode`.
pub fn evaluate(model: &dyn GssModel, episode: &Episode, opts: &EvalOptions) -> Result<Evaluation> {
    if model.n_nodes() != episode.n_nodes() {
        return Err(Error::dim("evaluate node count", model.n_nodes(), episode.n_nodes()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    check_oracle_model(model, episode, opts.oracle)?;
    let started = Instant::now();
    let test = split_segments(episode.len(), opts.split).test;
    if test.is_empty() {
        return Err(Error::Data("episode has an empty test segment".into()));
    }
    let run = test.start.saturating_sub(opts.warmup)..test.end;
    let cfg = GkfConfig::from_noise_levels(model, episode.config.sigma_eta, episode.config.sigma_nu);
    let outputs = &episode.outputs[test.clone()];

    // Oracle baselines fix the a priori state, so neither filter run applies.
    let refined = match (opts.kfr, opts.oracle) {
        (KfrMode::On | KfrMode::Both, None) => Some(GkfTrace {
            steps: run_filter(model, &cfg, episode, run.clone(), &test, true)?,
        }),
        _ => None,
    };
    let open_loop = match (opts.kfr, opts.oracle) {
        (KfrMode::Off | KfrMode::Both, None) => Some(GkfTrace {
            steps: run_filter(model, &cfg, episode, run.clone(), &test, false)?,
        }),
        _ => None,
    };

    let (mse_without, mse_with) = match opts.oracle {
        Some(o) => {
            let mut total = 0.0;
            for t in test.clone() {
                let y = model.readout(&oracle_prior(model, episode, o, t)?)?;
                total += mse(&y, &episode.outputs[t]);
            }
            let v = Stat::single(total / test.len() as f64);
            (
                matches!(opts.kfr, KfrMode::Off | KfrMode::Both).then_some(v),
                matches!(opts.kfr, KfrMode::On | KfrMode::Both).then_some(v),
            )
        }
        None => (
            open_loop.as_ref().map(|tr| Stat::single(tr.mse_prior(outputs))),
            refined.as_ref().map(|tr| Stat::single(tr.mse_prior(outputs))),
        ),
    };
    let rpi = refined
        .as_ref()
        .map(|tr| rpi_batches(&tr.steps, outputs, opts.batch_size))
        .unwrap_or_default();

    let row = ReportRow {
        model: model_label(model.family(), opts.oracle),
        dataset: dataset_label(&episode.config),
        mse_without_kfr: mse_without,
        mse_with_kfr: mse_with,
        rpi: Stat::of(&rpi),
        n_batches: rpi.len(),
        n_runs: 1,
        runtime_secs: opts.timing.then(|| started.elapsed().as_secs_f64()),
    };
    Ok(Evaluation {
        row,
        rpi_batches: rpi,
        test_range: test,
        refined,
        open_loop,
    })
}

/// Combines repeated runs: MSEs as mean/std over runs, RPI over the pooled
/// mini-batches of all runs.
pub fn aggregate(evals: &[Evaluation]) -> Result<ReportRow> {
    let first = evals
        .first()
        .ok_or_else(|| Error::InvalidConfig("nothing to aggregate".into()))?;
    let collect = |f: fn(&ReportRow) -> Option<Stat>| -> Option<Stat> {
        let vals: Option<Vec<f64>> = evals.iter().map(|e| f(&e.row).map(|s| s.mean)).collect();
        vals.and_then(|v| Stat::of(&v))
    };
    let pooled: Vec<f64> = evals.iter().flat_map(|e| e.rpi_batches.iter().copied()).collect();
    let runtime: Option<Vec<f64>> = evals.iter().map(|e| e.row.runtime_secs).collect();
    Ok(ReportRow {
        model: first.row.model.clone(),
        dataset: first.row.dataset.clone(),
        mse_without_kfr: collect(|r| r.mse_without_kfr),
        mse_with_kfr: collect(|r| r.mse_with_kfr),
        rpi: Stat::of(&pooled),
        n_batches: pooled.len(),
        n_runs: evals.len(),
        runtime_secs: runtime.map(|r| r.iter().sum()),
    })
}

/// Rows as serialized by `evaluate`/`train` and read back by `report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
}

impl ReportFile {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self {
            format_version: crate::io::FORMAT_VERSION,
            rows,
        }
    }
}

fn fmt_stat(s: Option<Stat>, digits: usize) -> String {
    match s {
        None => "-".into(),
        Some(s) if s.std == 0.0 => format!("{:.*}", digits, s.mean),
        Some(s) => format!("{:.*}±{:.*}", digits, s.mean, digits, s.std),
    }
}

fn fmt_rpi(s: Option<Stat>) -> String {
    match s {
        None => "-".into(),
        Some(s) => format!("{:.1}±{:.1}", s.mean, s.std),
    }
}

/// Aligned text table: one line per model, a column group per dataset.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let sub = ["Pred. Err. w/o KFR", "Pred. Err. w/ KFR", "RPI (MSE%)"];
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut head = vec!["Model".to_string()];
    for _ in &datasets {
        head.extend(sub.iter().map(|s| s.to_string()));
    }
    grid.push(head);
    for m in &models {
        let mut line = vec![m.to_string()];
        for d in &datasets {
            match rows.iter().find(|r| r.model == *m && r.dataset == *d) {
                Some(r) => {
                    line.push(fmt_stat(r.mse_without_kfr, 3));
                    line.push(fmt_stat(r.mse_with_kfr, 3));
                    line.push(fmt_rpi(r.rpi));
                }
                None => line.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        grid.push(line);
    }
    let ncol = grid[0].len();
    let width: Vec<usize> = (0..ncol)
        .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    // Dataset banner over each group of three columns.
    let mut banner = format!("{:<w$}", "", w = width[0]);
    for (k, d) in datasets.iter().enumerate() {
        let group: usize = width[1 + 3 * k..4 + 3 * k].iter().sum::<usize>() + 6;
        let _ = write!(banner, " | {:<w$}", d, w = group);
    }
    out.push_str(banner.trim_end());
    out.push('\n');
    for (i, line) in grid.iter().enumerate() {
        let mut s = String::new();
        for (c, cell) in line.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{:<w$}", cell, w = width[c]);
            } else {
                let sep = if (c - 1) % 3 == 0 { " | " } else { "   " };
                let _ = write!(s, "{sep}{:>w$}", cell, w = width[c]);
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(s.trim_end().chars().count()));
            out.push('\n');
        }
    }
    out
}

pub fn write_rows_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "model",
        "dataset",
        "mse_without_kfr",
        "mse_without_kfr_std",
        "mse_with_kfr",
        "mse_with_kfr_std",
        "rpi_mean",
        "rpi_std",
        "n_batches",
        "n_runs",
        "runtime_secs",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        wr.write_record([
            r.model.clone(),
            r.dataset.clone(),
            opt(r.mse_without_kfr.map(|s| s.mean)),
            opt(r.mse_without_kfr.map(|s| s.std)),
            opt(r.mse_with_kfr.map(|s| s.mean)),
            opt(r.mse_with_kfr.map(|s| s.std)),
            opt(r.rpi.map(|s| s.mean)),
            opt(r.rpi.map(|s| s.std)),
            r.n_batches.to_string(),
            r.n_runs.to_string(),
            opt(r.runtime_secs),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Per-node time series (`t,node,input,state,output`) for plotting.
/// `state` is empty when the episode has no recorded states.
pub fn write_node_traces<W: Write>(episode: &Episode, nodes: &[usize], w: W) -> Result<usize> {
    for &v in nodes {
        if v >= episode.n_nodes() {
            return Err(Error::Data(format!(
                "node {v} out of range for {} nodes",
                episode.n_nodes()
            )));
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "node", "input", "state", "output"])?;
    let mut rows = 0;
    for &v in nodes {
        for t in 0..episode.len() {
            let state = episode
                .states
                .as_ref()
                .map(|s| fmt_f64(s[t][v]))
                .unwrap_or_default();
            wr.write_record([
                t.to_string(),
                v.to_string(),
                fmt_f64(episode.inputs[t][v]),
                state,
                fmt_f64(episode.outputs[t][v]),
            ])?;
            rows += 1;
        }
    }
    wr.flush()?;
    Ok(rows)
}
