//! Graph Kalman filter over a [`GssModel`].
//!
//! One iteration encodes the input, propagates the state with the noise-free
//! transition, predicts the output, and (when refining) linearizes the
//! transition in the state and in the noise `alpha`, linearizes the readout
//! in the state and output noise, propagates the covariance, and applies the
//! gain with a Joseph-form covariance update.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kalman::{joseph_update, kalman_gain, Belief};
use crate::linalg::{Matrix, Tensor3};
use crate::models::GssModel;

/// Covariance given either as `scalar * I` or as a dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseCov {
    Scalar(f64),
    Full(Matrix),
}

impl NoiseCov {
    pub fn dense(&self, n: usize) -> Result<Matrix> {
        match self {
            NoiseCov::Scalar(v) => Ok(Matrix::scaled_identity(n, *v)),
            NoiseCov::Full(m) if m.shape() == (n, n) => Ok(m.clone()),
            NoiseCov::Full(m) => Err(Error::dim("noise covariance", format!("({n}, {n})"), format!("{:?}", m.shape()))),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        match self {
            NoiseCov::Scalar(v) if *v >= 0.0 && v.is_finite() => Ok(()),
            NoiseCov::Scalar(v) => Err(Error::InvalidConfig(format!("{what} variance {v} must be finite and >= 0"))),
            NoiseCov::Full(m) => {
                if m.asymmetry() > 1e-12 {
                    return Err(Error::InvalidConfig(format!("{what} covariance is not symmetric")));
                }
                if m.min_eigenvalue()? < -1e-12 {
                    return Err(Error::InvalidConfig(format!("{what} covariance is not PSD")));
                }
                Ok(())
            }
        }
    }
}

/// Largest transition-noise dimension for which a dense `Q` is accepted.
pub const MAX_FULL_Q_DIM: usize = 64;

#[derive(Clone, Debug)]
pub struct GkfConfig {
    /// Covariance of the transition noise `alpha` (over its flattened entries).
    pub q: NoiseCov,
    /// Covariance of the output noise.
    pub r: NoiseCov,
    pub prior: Belief,
}

impl GkfConfig {
    /// `Q = sigma_eta^2 I`, `R = sigma_nu^2 I`, prior `N(0, sigma_eta^2 I)`.
    pub fn from_noise_levels(model: &dyn GssModel, sigma_eta: f64, sigma_nu: f64) -> Self {
        let n = model.state_len();
        let var = sigma_eta * sigma_eta;
        Self {
            q: NoiseCov::Scalar(var),
            r: NoiseCov::Scalar(sigma_nu * sigma_nu),
            prior: Belief {
                mean: vec![0.0; n],
                cov: Matrix::scaled_identity(n, var),
            },
        }
    }

    pub fn validate(&self, model: &dyn GssModel) -> Result<()> {
        self.q.validate("Q")?;
        self.r.validate("R")?;
        let (p, q) = model.alpha_shape();
        if let NoiseCov::Full(m) = &self.q {
            if p * q > MAX_FULL_Q_DIM {
                return Err(Error::InvalidConfig(format!(
                    "dense Q over {} noise entries exceeds the limit of {MAX_FULL_Q_DIM}",
                    p * q
                )));
            }
            if m.shape() != (p * q, p * q) {
                return Err(Error::dim("Q", p * q, format!("{:?}", m.shape())));
            }
        }
        if let NoiseCov::Full(m) = &self.r {
            let o = model.output_len();
            if m.shape() != (o, o) {
                return Err(Error::dim("R", o, format!("{:?}", m.shape())));
            }
        }
        let n = model.state_len();
        if self.prior.dim() != n {
            return Err(Error::dim("prior mean", n, self.prior.dim()));
        }
        if self.prior.cov.asymmetry() > 1e-12 || self.prior.cov.min_eigenvalue()? < -1e-12 {
            return Err(Error::InvalidConfig("prior covariance must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// `L Q L^T` with `L` unfolded to `(state_len, |alpha|)`.
pub fn process_noise(l: &Tensor3, q: &NoiseCov) -> Result<Matrix> {
    let lu = l.unfold();
    let mut out = match q {
        NoiseCov::Scalar(v) => lu.matmul_t(&lu)?.scale(*v),
        NoiseCov::Full(m) => {
            if m.shape() != (lu.cols(), lu.cols()) {
                return Err(Error::dim("Q", lu.cols(), format!("{:?}", m.shape())));
            }
            lu.congruence(m)?
        }
    };
    out.symmetrize();
    Ok(out)
}

/// Matrices of one refinement, kept only when requested.
#[derive(Clone, Debug)]
pub struct StepMatrices {
    pub f: Matrix,
    pub l: Tensor3,
    pub h: Matrix,
    pub m: Matrix,
    pub p_prior: Matrix,
    pub gain: Matrix,
    pub p_post: Matrix,
}

/// Per-step record. Covariance summaries are `None` without refinement.
#[derive(Clone, Debug)]
pub struct GkfStep {
    pub s_prior: Vec<f64>,
    pub y_prior: Vec<f64>,
    pub s_post: Vec<f64>,
    pub y_post: Vec<f64>,
    pub trace_p_prior: Option<f64>,
    pub trace_p_post: Option<f64>,
    pub gain_norm: Option<f64>,
    pub matrices: Option<Box<StepMatrices>>,
}

impl GkfStep {
    pub fn mse_prior(&self, y: &[f64]) -> f64 {
        mse(&self.y_prior, y)
    }

    pub fn mse_post(&self, y: &[f64]) -> f64 {
        mse(&self.y_post, y)
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Steps i-iii: encode, propagate, predict.
pub fn gkf_predict(model: &dyn GssModel, s_post: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let x_enc = model.encode(x)?;
    let s_prior = model.transition(s_post, &x_enc)?;
    let y_prior = model.readout(&s_prior)?;
    Ok((x_enc, s_prior, y_prior))
}

/// One full filter iteration. `record` keeps every intermediate matrix.
pub fn gkf_step(
    model: &dyn GssModel,
    cfg: &GkfConfig,
    belief: &Belief,
    x: &[f64],
    y: &[f64],
    record: bool,
) -> Result<(Belief, GkfStep)> {
    gkf_step_with_prior(model, cfg, belief, x, y, None, record)
}

/// Like [`gkf_step`], but optionally replaces the a priori state with an
/// externally supplied one, e.g. from a reference trajectory; the covariance
/// recursion is unchanged.
pub fn gkf_step_with_prior(
    model: &dyn GssModel,
    cfg: &GkfConfig,
    belief: &Belief,
    x: &[f64],
    y: &[f64],
    prior_override: Option<&[f64]>,
    record: bool,
) -> Result<(Belief, GkfStep)> {
    if belief.dim() != model.state_len() {
        return Err(Error::dim("gkf belief", model.state_len(), belief.dim()));
    }
    if y.len() != model.output_len() {
        return Err(Error::dim("gkf output", model.output_len(), y.len()));
    }
    let (x_enc, mut s_prior, mut y_prior) = gkf_predict(model, &belief.mean, x)?;
    if let Some(sp) = prior_override {
        if sp.len() != s_prior.len() {
            return Err(Error::dim("prior override", s_prior.len(), sp.len()));
        }
        s_prior = sp.to_vec();
        y_prior = model.readout(&s_prior)?;
    }

    let f = model.transition_jacobian(&belief.mean, &x_enc)?;
    let l = model.alpha_jacobian(&belief.mean, &x_enc)?;
    let h = model.readout_jacobian(&s_prior)?;
    let m = model.readout_noise_jacobian(&s_prior)?;

    let mut p_prior = f.congruence(&belief.cov)?.add(&process_noise(&l, &cfg.q)?)?;
    p_prior.symmetrize();

    let r = cfg.r.dense(m.cols())?;
    let r_eff = m.congruence(&r)?.symmetrized();
    let gain = kalman_gain(&p_prior, &h, &r_eff)?;
    let innovation: Vec<f64> = y.iter().zip(&y_prior).map(|(a, b)| a - b).collect();
    let correction = gain.matvec(&innovation)?;
    let s_post: Vec<f64> = s_prior.iter().zip(&correction).map(|(a, b)| a + b).collect();
    let p_post = joseph_update(&p_prior, &gain, &h, &r_eff)?;
    let y_post = model.readout(&s_post)?;

    if !p_post.is_finite() || s_post.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph Kalman filter posterior".into()));
    }

    let step = GkfStep {
        s_prior,
        y_prior,
        s_post: s_post.clone(),
        y_post,
        trace_p_prior: Some(p_prior.trace()),
        trace_p_post: Some(p_post.trace()),
        gain_norm: Some(gain.frobenius_norm()),
        matrices: record.then(|| {
            Box::new(StepMatrices {
                f,
                l,
                h,
                m,
                p_prior,
                gain,
                p_post: p_post.clone(),
            })
        }),
    };
    Ok((
        Belief {
            mean: s_post,
            cov: p_post,
        },
        step,
    ))
}

/// Filter output over a sequence.
#[derive(Clone, Debug, Default)]
pub struct GkfTrace {
    pub steps: Vec<GkfStep>,
}

impl GkfTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Mean squared a priori prediction error over all steps and nodes.
    pub fn mse_prior(&self, outputs: &[Vec<f64>]) -> f64 {
        mean(self.steps.iter().zip(outputs).map(|(s, y)| s.mse_prior(y)))
    }

    pub fn mse_post(&self, outputs: &[Vec<f64>]) -> f64 {
        mean(self.steps.iter().zip(outputs).map(|(s, y)| s.mse_post(y)))
    }

    /// One row per step: `t,mse_prior,mse_post,trace_p_prior,trace_p_post,gain_norm`.
    /// Covariance columns are empty when the run did not refine.
    pub fn write_csv<W: Write>(&self, outputs: &[Vec<f64>], t0: usize, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "mse_prior", "mse_post", "trace_p_prior", "trace_p_post", "gain_norm"])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for (k, (step, y)) in self.steps.iter().zip(outputs).enumerate() {
            wr.write_record([
                (t0 + k).to_string(),
                fmt_f64(step.mse_prior(y)),
                fmt_f64(step.mse_post(y)),
                opt(step.trace_p_prior),
                opt(step.trace_p_post),
                opt(step.gain_norm),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs the filter over paired `(x_{t-1}, y_t)` sequences.
///
/// Without refinement only the prediction steps run and the a priori state
/// is fed forward as if it were the a posteriori one.
pub fn gkf_run(
    model: &dyn GssModel,
    cfg: &GkfConfig,
    inputs: &[Vec<f64>],
    outputs: &[Vec<f64>],
    refine: bool,
    record: bool,
) -> Result<GkfTrace> {
    if inputs.is_empty() {
        return Err(Error::Data("filter needs at least one step".into()));
    }
    if inputs.len() != outputs.len() {
        return Err(Error::dim("gkf_run sequence", inputs.len(), outputs.len()));
    }
    cfg.validate(model)?;
    let mut belief = cfg.prior.clone();
    let mut steps = Vec::with_capacity(inputs.len());
    for (x, y) in inputs.iter().zip(outputs) {
        if refine {
            let (next, step) = gkf_step(model, cfg, &belief, x, y, record)?;
            belief = next;
            steps.push(step);
        } else {
            let (_, s_prior, y_prior) = gkf_predict(model, &belief.mean, x)?;
            belief.mean = s_prior.clone();
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
    Ok(GkfTrace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphTopology;
    use crate::models::{Activation, Replica, ReplicaParams};

    fn replica() -> Replica {
        let g = GraphTopology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        Replica::new(
            g,
            ReplicaParams {
                theta_tm: 0.6,
                theta_sp: 0.3,
                psi0: -0.5,
                psi1: 2.0,
                rho_st: Activation::Identity,
                rho_ro: Activation::Identity,
            },
        )
    }

    #[test]
    fn zero_innovation_keeps_prior_mean() {
        let m = replica();
        let cfg = GkfConfig::from_noise_levels(&m, 0.25, 0.12);
        let x = [1.0, 0.0, 1.0];
        let (_, _, y_prior) = gkf_predict(&m, &cfg.prior.mean, &x).unwrap();
        let (_, step) = gkf_step(&m, &cfg, &cfg.prior, &x, &y_prior, false).unwrap();
        assert_eq!(step.s_post, step.s_prior);
        assert!(step.trace_p_post.unwrap() <= step.trace_p_prior.unwrap());
    }

    #[test]
    fn run_rejects_empty_and_mismatched() {
        let m = replica();
        let cfg = GkfConfig::from_noise_levels(&m, 0.25, 0.12);
        assert!(gkf_run(&m, &cfg, &[], &[], true, false).is_err());
        assert!(gkf_run(&m, &cfg, &[vec![0.0; 3]], &[], true, false).is_err());
    }

    #[test]
    fn full_q_limit_enforced() {
        let g = GraphTopology::empty(9);
        let m = Replica::new(
            g,
            ReplicaParams {
                theta_tm: 0.5,
                theta_sp: 0.0,
                psi0: 0.0,
                psi1: 1.0,
                rho_st: Activation::Identity,
                rho_ro: Activation::Identity,
            },
        );
        let mut cfg = GkfConfig::from_noise_levels(&m, 0.1, 0.1);
        cfg.q = NoiseCov::Full(Matrix::identity(81));
        assert!(matches!(cfg.validate(&m), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let m = replica();
        let cfg = GkfConfig::from_noise_levels(&m, 0.25, 0.12);
        let xs = vec![vec![1.0, 0.0, 0.0]; 4];
        let ys = vec![vec![0.5, -0.5, 0.0]; 4];
        let trace = gkf_run(&m, &cfg, &xs, &ys, true, false).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&ys, 10, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "t,mse_prior,mse_post,trace_p_prior,trace_p_post,gain_norm");
        assert!(lines[1].starts_with("10,"));
    }
}
