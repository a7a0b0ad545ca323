//! Synthetic graph state-space data: a random connected topology, binary
//! inputs made of Poisson-length runs, noisy diffusion states and a noisy
//! node-wise readout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::Matrix;
use crate::models::{Activation, ReplicaParams};
use crate::rng::{Rng, Stream};

/// States beyond this magnitude abort generation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const TOPOLOGY_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Mean length of runs of zeros.
    pub lambda0: f64,
    /// Mean length of runs of ones.
    pub lambda1: f64,
    pub theta_tm: f64,
    pub theta_sp: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub sigma_eta: f64,
    pub sigma_nu: f64,
    pub rho_st: Activation,
    pub rho_ro: Activation,
    pub n_nodes: usize,
    pub steps: usize,
    /// Erdos-Renyi edge probability of the generated topology.
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    pub seed: u64,
}

fn default_edge_prob() -> f64 {
    0.3
}

impl GeneratorConfig {
    pub fn lingss(seed: u64) -> Self {
        Self {
            lambda0: 20.0,
            lambda1: 5.0,
            theta_tm: 0.6,
            theta_sp: 0.3,
            psi0: -0.5,
            psi1: 2.0,
            sigma_eta: 0.25,
            sigma_nu: 0.12,
            rho_st: Activation::Identity,
            rho_ro: Activation::Identity,
            n_nodes: 12,
            steps: 5000,
            edge_prob: default_edge_prob(),
            seed,
        }
    }

    pub fn nonlingss(seed: u64) -> Self {
        Self {
            theta_sp: -0.3,
            psi0: -2.0,
            psi1: 5.0,
            rho_st: Activation::Tanh,
            rho_ro: Activation::Tanh,
            ..Self::lingss(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "lingss" => Ok(Self::lingss(seed)),
            "nonlingss" => Ok(Self::nonlingss(seed)),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?} (expected lingss or nonlingss)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda0 > 0.0 && self.lambda1 > 0.0) || !self.lambda0.is_finite() || !self.lambda1.is_finite() {
            return bad(format!("Poisson rates must be positive, got {} and {}", self.lambda0, self.lambda1));
        }
        if !(self.sigma_eta >= 0.0 && self.sigma_nu >= 0.0) {
            return bad("noise standard deviations must be >= 0".into());
        }
        if self.n_nodes == 0 {
            return bad("n_nodes must be >= 1".into());
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad(format!("edge_prob {} outside [0, 1]", self.edge_prob));
        }
        for v in [self.theta_tm, self.theta_sp, self.psi0, self.psi1] {
            if !v.is_finite() {
                return bad("model parameters must be finite".into());
            }
        }
        Ok(())
    }

    /// The generator's transition and readout as Replica parameters.
    pub fn replica_params(&self) -> ReplicaParams {
        ReplicaParams {
            theta_tm: self.theta_tm,
            theta_sp: self.theta_sp,
            psi0: self.psi0,
            psi1: self.psi1,
            rho_st: self.rho_st,
            rho_ro: self.rho_ro,
        }
    }

    /// Long-run fraction of ones for zero-truncated Poisson run lengths.
    pub fn expected_ones_fraction(&self) -> f64 {
        let mean = |l: f64| l / (1.0 - (-l).exp());
        mean(self.lambda1) / (mean(self.lambda0) + mean(self.lambda1))
    }
}

/// One generated time series. Arrays are indexed `[t][node]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub config: GeneratorConfig,
    pub topology: GraphTopology,
    pub inputs: Vec<Vec<f64>>,
    pub states: Option<Vec<Vec<f64>>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    /// The input driving step `t`, i.e. `x_{t-1}`; zero before the start.
    pub fn input_before(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            vec![0.0; self.n_nodes()]
        } else {
            self.inputs[t - 1].clone()
        }
    }

    /// Paired `(x_{t-1}, y_t)` for `t` in `range`.
    pub fn steps(&self, range: std::ops::Range<usize>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let xs = range.clone().map(|t| self.input_before(t)).collect();
        let ys = range.map(|t| self.outputs[t].clone()).collect();
        (xs, ys)
    }

    pub fn ones_fraction(&self) -> f64 {
        let total = self.inputs.len() * self.n_nodes();
        if total == 0 {
            return 0.0;
        }
        self.inputs.iter().flatten().sum::<f64>() / total as f64
    }

    pub fn state_variance(&self) -> Option<f64> {
        let states = self.states.as_ref()?;
        let vals: Vec<f64> = states.iter().flatten().copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        Some(vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
    }
}

/// Connected undirected 0/1 graph: Erdos-Renyi resampled until connected,
/// falling back to a ring with random chords.
pub fn gen_topology(n_nodes: usize, edge_prob: f64, seed: u64) -> Result<GraphTopology> {
    if n_nodes == 0 {
        return Err(Error::InvalidConfig("n_nodes must be >= 1".into()));
    }
    let mut rng = Rng::for_purpose(seed, Stream::Topology, 0);
    for _ in 0..TOPOLOGY_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                if rng.bernoulli(edge_prob) {
                    edges.push((i, j));
                }
            }
        }
        let g = GraphTopology::from_edges(n_nodes, &edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    let mut edges: Vec<(usize, usize)> = (0..n_nodes).map(|i| (i, (i + 1) % n_nodes)).filter(|(i, j)| i != j).collect();
    for i in 0..n_nodes {
        for j in (i + 2)..n_nodes {
            if rng.bernoulli(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    GraphTopology::from_edges(n_nodes, &edges)
}

/// Alternating runs of zeros and ones, one independent stream per node.
pub fn gen_inputs(cfg: &GeneratorConfig) -> Vec<Vec<f64>> {
    let n = cfg.n_nodes;
    let mut out = vec![vec![0.0; n]; cfg.steps];
    let p_start_zero = cfg.lambda0 / (cfg.lambda0 + cfg.lambda1);
    for v in 0..n {
        let mut rng = Rng::for_purpose(cfg.seed, Stream::Inputs, v as u32);
        let mut value = if rng.bernoulli(p_start_zero) { 0.0 } else { 1.0 };
        let mut t = 0;
        while t < cfg.steps {
            let lambda = if value == 0.0 { cfg.lambda0 } else { cfg.lambda1 };
            let mut len = 0;
            while len == 0 {
                len = rng.poisson(lambda) as usize;
            }
            for row in out.iter_mut().skip(t).take(len) {
                row[v] = value;
            }
            t += len;
            value = 1.0 - value;
        }
    }
    out
}

/// Simulates states and outputs for given inputs.
///
/// `s_0 ~ N(0, sigma_eta^2)`, then
/// `s_t = rho_st((theta_tm I + theta_sp Abar)(s_{t-1} + x_{t-1})) + eta_{t-1}` and
/// `y_t = rho_ro(psi0 + psi1 s_t) + nu_t`.
pub fn simulate(cfg: &GeneratorConfig, topology: &GraphTopology, inputs: &[Vec<f64>]) -> Result<Episode> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    if topology.n_nodes() != n {
        return Err(Error::dim("simulate topology", n, topology.n_nodes()));
    }
    if inputs.len() != cfg.steps || inputs.iter().any(|r| r.len() != n) {
        return Err(Error::dim("simulate inputs", format!("{} x {n}", cfg.steps), inputs.len()));
    }
    let mut mix: Matrix = topology.normalized_sym().scale(cfg.theta_sp);
    for i in 0..n {
        mix[(i, i)] += cfg.theta_tm;
    }
    let mut eta_rng = Rng::for_purpose(cfg.seed, Stream::StateNoise, 0);
    let mut nu_rng = Rng::for_purpose(cfg.seed, Stream::ReadoutNoise, 0);

    let mut states = Vec::with_capacity(cfg.steps);
    let mut outputs = Vec::with_capacity(cfg.steps);
    let mut s: Vec<f64> = (0..n).map(|_| eta_rng.normal(cfg.sigma_eta)).collect();
    for t in 0..cfg.steps {
        if t > 0 {
            let u: Vec<f64> = s.iter().zip(&inputs[t - 1]).map(|(a, b)| a + b).collect();
            let z = mix.matvec(&u)?;
            s = z.iter().map(|&v| cfg.rho_st.apply(v) + eta_rng.normal(cfg.sigma_eta)).collect();
            let magnitude = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(magnitude <= DIVERGENCE_LIMIT) {
                return Err(Error::GeneratorInstability {
                    t,
                    magnitude,
                    config: serde_json::to_string(cfg).unwrap_or_default(),
                });
            }
        }
        let y = s
            .iter()
            .map(|&v| cfg.rho_ro.apply(cfg.psi0 + cfg.psi1 * v) + nu_rng.normal(cfg.sigma_nu))
            .collect();
        states.push(s.clone());
        outputs.push(y);
    }
    Ok(Episode {
        config: cfg.clone(),
        topology: topology.clone(),
        inputs: inputs.to_vec(),
        states: Some(states),
        outputs,
    })
}

/// Topology, inputs and simulation from a single config.
pub fn generate(cfg: &GeneratorConfig) -> Result<Episode> {
    cfg.validate()?;
    let topology = gen_topology(cfg.n_nodes, cfg.edge_prob, cfg.seed)?;
    let inputs = gen_inputs(cfg);
    simulate(cfg, &topology, &inputs)
}
