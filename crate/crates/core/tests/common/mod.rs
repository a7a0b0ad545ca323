#![allow(dead_code)]

use gkf::diffable::{fd_jacobian_fn, max_rel_error, FnDiff};
use gkf::kalman::{ekf_step, kf_predict, kf_update, Belief, ConstantSystem, SystemMatrices};
use gkf::models::{ReadoutFn, Replica, Stgnn, TransitionFn, STGNN_HIDDEN};
use gkf::rng::{Rng, Stream};
use gkf::sim::generate;
use gkf::{gkf_step, Episode, GeneratorConfig, GkfConfig, GssModel, Matrix};

/// Entries below this magnitude are compared absolutely in Jacobian checks.
pub const JAC_FLOOR: f64 = 1e-3;

pub fn test_rng(seed: u64, sub: u32) -> Rng {
    Rng::for_purpose(seed, Stream::Test, sub)
}

pub fn uniform_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::new(rows, cols, uniform_vec(rng, rows * cols, lo, hi)).unwrap()
}

/// `A A^T + eps I` for a random `A`.
pub fn random_spd(rng: &mut Rng, n: usize, eps: f64) -> Matrix {
    let a = uniform_matrix(rng, n, n, -1.0, 1.0);
    let mut s = a.matmul_t(&a).unwrap().add(&Matrix::scaled_identity(n, eps)).unwrap();
    s.symmetrize();
    s
}

/// Random linear system with spectral radius of `F` at most 0.95.
pub fn stable_system(rng: &mut Rng, d_h: usize, d_x: usize, d_y: usize) -> SystemMatrices {
    let mut f = uniform_matrix(rng, d_h, d_h, -1.0, 1.0);
    let rho = f.spectral_radius().unwrap();
    let target = rng.uniform_range(0.2, 0.95);
    if rho > 0.0 {
        f = f.scale(target / rho);
    }
    SystemMatrices {
        f,
        g: uniform_matrix(rng, d_h, d_x, -1.0, 1.0),
        h: uniform_matrix(rng, d_y, d_h, -1.0, 1.0),
        q: random_spd(rng, d_h, 0.05).scale(0.2),
        r: random_spd(rng, d_y, 0.05).scale(0.2),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest element-wise disagreement between the linear KF and the EKF over
/// one random system driven for `steps` steps.
pub fn kf_ekf_max_diff(rng: &mut Rng, steps: usize) -> f64 {
    let d_h = 1 + rng.index(6);
    let d_x = 1 + rng.index(3);
    let d_y = 1 + rng.index(4);
    let m = stable_system(rng, d_h, d_x, d_y);
    let sys = ConstantSystem(m.clone());
    let f_st = FnDiff::linear_transition(m.f.clone(), m.g.clone());
    let f_ro = FnDiff::linear_readout(m.h.clone());

    let mut truth = vec![0.0; d_h];
    let prior = Belief::new(uniform_vec(rng, d_h, -1.0, 1.0), random_spd(rng, d_h, 0.1)).unwrap();
    let (mut kf, mut ekf) = (prior.clone(), prior);
    let mut worst = 0.0f64;
    for t in 0..steps {
        let x = uniform_vec(rng, d_x, -1.0, 1.0);
        let fh = m.f.matvec(&truth).unwrap();
        let gx = m.g.matvec(&x).unwrap();
        truth = fh.iter().zip(&gx).map(|(a, b)| a + b + rng.normal(0.3)).collect();
        let y: Vec<f64> = m.h.matvec(&truth).unwrap().iter().map(|v| v + rng.normal(0.3)).collect();

        let pred = kf_predict(&kf, &sys, &x, t).unwrap();
        kf = kf_update(&pred, &sys, &y, t).unwrap().belief;
        ekf = ekf_step(&ekf, &f_st, &f_ro, &x, &y, &m.q, &m.r).unwrap().posterior;

        worst = worst
            .max(max_abs_diff(&kf.mean, &ekf.mean))
            .max(max_abs_diff(kf.cov.as_slice(), ekf.cov.as_slice()));
    }
    worst
}

/// Worst relative errors of the analytic F, L, H and M Jacobians against
/// central differences.
#[derive(Clone, Copy, Debug, Default)]
pub struct JacobianErrors {
    pub f: f64,
    pub l: f64,
    pub h: f64,
    pub m: f64,
}

impl JacobianErrors {
    pub fn worst(&self) -> f64 {
        self.f.max(self.l).max(self.h).max(self.m)
    }

    fn merge(&mut self, o: JacobianErrors) {
        self.f = self.f.max(o.f);
        self.l = self.l.max(o.l);
        self.h = self.h.max(o.h);
        self.m = self.m.max(o.m);
    }
}

/// Checks all four Jacobians at one state `s` and raw input `x`.
pub fn jacobian_errors_at(model: &dyn GssModel, s: &[f64], x: &[f64]) -> JacobianErrors {
    let x_enc = model.encode(x).unwrap();
    let f_fd = fd_jacobian_fn(|v| model.transition(v, &x_enc), s).unwrap();
    let f = model.transition_jacobian(s, &x_enc).unwrap();

    let (p, q) = model.alpha_shape();
    let alpha0 = vec![0.0; p * q];
    let l_fd = fd_jacobian_fn(
        |a| model.transition_with_noise(s, &x_enc, &Matrix::new(p, q, a.to_vec()).unwrap()),
        &alpha0,
    )
    .unwrap();
    let l = model.alpha_jacobian(s, &x_enc).unwrap().unfold();

    let h_fd = fd_jacobian_fn(|v| model.readout(v), s).unwrap();
    let h = model.readout_jacobian(s).unwrap();

    let nu0 = vec![0.0; model.output_len()];
    let m_fd = fd_jacobian_fn(|n| model.readout_with_noise(s, n), &nu0).unwrap();
    let m = model.readout_noise_jacobian(s).unwrap();

    JacobianErrors {
        f: max_rel_error(&f, &f_fd, JAC_FLOOR),
        l: max_rel_error(&l, &l_fd, JAC_FLOOR),
        h: max_rel_error(&h, &h_fd, JAC_FLOOR),
        m: max_rel_error(&m, &m_fd, JAC_FLOOR),
    }
}

/// Worst errors over `points` random states (uniform in `[-1.5, 1.5]`) and
/// random binary inputs.
pub fn jacobian_errors(model: &dyn GssModel, rng: &mut Rng, points: usize) -> JacobianErrors {
    let mut out = JacobianErrors::default();
    for _ in 0..points {
        let s = uniform_vec(rng, model.state_len(), -1.5, 1.5);
        let x: Vec<f64> = (0..model.input_len()).map(|_| f64::from(u8::from(rng.bernoulli(0.3)))).collect();
        out.merge(jacobian_errors_at(model, &s, &x));
    }
    out
}

pub fn episode(preset: &str, seed: u64, steps: usize) -> Episode {
    let mut cfg = GeneratorConfig::preset(preset, seed).unwrap();
    cfg.steps = steps;
    generate(&cfg).unwrap()
}

pub fn true_replica(ep: &Episode) -> Replica {
    Replica::new(ep.topology.clone(), ep.config.replica_params())
}

pub fn random_stgnn(ep: &Episode, seed: u64) -> Stgnn {
    Stgnn::random(ep.topology.clone(), STGNN_HIDDEN, &mut test_rng(seed, 99))
}

/// Runs the graph filter and an EKF on the flattened system
/// `s -> f_st(s, f_enc(x))`, `s -> f_ro(s)` with `Q = sigma_eta^2 I`,
/// `R = sigma_nu^2 I`; returns the largest element-wise disagreement in
/// the a posteriori mean and covariance.
pub fn gkf_ekf_max_diff(model: &dyn GssModel, ep: &Episode, steps: usize) -> f64 {
    let (se, sn) = (ep.config.sigma_eta, ep.config.sigma_nu);
    let cfg = GkfConfig::from_noise_levels(model, se, sn);
    let n = model.state_len();
    let q = Matrix::scaled_identity(n, se * se);
    let r = Matrix::scaled_identity(model.output_len(), sn * sn);
    let f_st = TransitionFn(model);
    let f_ro = ReadoutFn(model);
    let mut g = cfg.prior.clone();
    let mut e = cfg.prior.clone();
    let mut worst = 0.0f64;
    for t in 0..steps {
        let x = ep.input_before(t);
        let y = &ep.outputs[t];
        let (next, _) = gkf_step(model, &cfg, &g, &x, y, false).unwrap();
        g = next;
        let x_enc = model.encode(&x).unwrap();
        e = ekf_step(&e, &f_st, &f_ro, &x_enc, y, &q, &r).unwrap().posterior;
        worst = worst
            .max(max_abs_diff(&g.mean, &e.mean))
            .max(max_abs_diff(g.cov.as_slice(), e.cov.as_slice()));
    }
    worst
}

/// Covariance diagnostics over a filter run.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceHealth {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    /// Steps where `trace(P+) > trace(P-)`.
    pub trace_violations: usize,
    pub steps: usize,
}

pub fn covariance_health(model: &dyn GssModel, ep: &Episode, steps: usize) -> CovarianceHealth {
    let cfg = GkfConfig::from_noise_levels(model, ep.config.sigma_eta, ep.config.sigma_nu);
    let mut belief = cfg.prior.clone();
    let mut out = CovarianceHealth {
        max_asymmetry: 0.0,
        min_eigenvalue: f64::INFINITY,
        trace_violations: 0,
        steps,
    };
    for t in 0..steps {
        let (next, step) = gkf_step(model, &cfg, &belief, &ep.input_before(t), &ep.outputs[t], true).unwrap();
        let mats = step.matrices.expect("recorded");
        for p in [&mats.p_prior, &mats.p_post] {
            out.max_asymmetry = out.max_asymmetry.max(p.asymmetry());
            out.min_eigenvalue = out.min_eigenvalue.min(p.min_eigenvalue().unwrap());
        }
        if mats.p_post.trace() > mats.p_prior.trace() {
            out.trace_violations += 1;
        }
        belief = next;
    }
    out
}

/// Mean of a zero-truncated Poisson by direct series summation.
pub fn truncated_poisson_mean(lambda: f64) -> f64 {
    let mut p = (-lambda).exp();
    let p0 = p;
    let mut mean = 0.0;
    for k in 1..2000 {
        p *= lambda / k as f64;
        mean += k as f64 * p;
        if p < 1e-300 && k as f64 > lambda {
            break;
        }
    }
    mean / (1.0 - p0)
}

/// Observed statistics of an episode against their design values.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorStats {
    pub ones_fraction: f64,
    pub expected_ones_fraction: f64,
    pub state_noise_var: f64,
    pub readout_noise_var: f64,
}

/// Recovers the noise samples from recorded states and outputs, rebuilding
/// the symmetric normalization from the raw adjacency.
pub fn generator_stats(ep: &Episode) -> GeneratorStats {
    let c = &ep.config;
    let n = ep.n_nodes();
    let a = ep.topology.adjacency();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).map(|j| a[(i, j)]).sum::<f64>()).collect();
    let mut mix = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let aij = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
            mix[i * n + j] = c.theta_sp * aij / (deg[i] * deg[j]).sqrt() + if i == j { c.theta_tm } else { 0.0 };
        }
    }
    let act = |tanh: bool, v: f64| if tanh { v.tanh() } else { v };
    let st_tanh = c.rho_st == gkf::models::Activation::Tanh;
    let ro_tanh = c.rho_ro == gkf::models::Activation::Tanh;
    let states = ep.states.as_ref().expect("states recorded");

    let (mut eta_sq, mut eta_n) = (0.0, 0usize);
    let (mut nu_sq, mut nu_n) = (0.0, 0usize);
    for t in 0..ep.len() {
        if t > 0 {
            for i in 0..n {
                let z: f64 = (0..n).map(|j| mix[i * n + j] * (states[t - 1][j] + ep.inputs[t - 1][j])).sum();
                let e = states[t][i] - act(st_tanh, z);
                eta_sq += e * e;
                eta_n += 1;
            }
        }
        for i in 0..n {
            let e = ep.outputs[t][i] - act(ro_tanh, c.psi0 + c.psi1 * states[t][i]);
            nu_sq += e * e;
            nu_n += 1;
        }
    }
    let ones = ep.inputs.iter().flatten().filter(|v| **v == 1.0).count();
    let (m0, m1) = (truncated_poisson_mean(c.lambda0), truncated_poisson_mean(c.lambda1));
    GeneratorStats {
        ones_fraction: ones as f64 / (ep.len() * n) as f64,
        expected_ones_fraction: m1 / (m0 + m1),
        state_noise_var: eta_sq / eta_n as f64,
        readout_noise_var: nu_sq / nu_n as f64,
    }
}
