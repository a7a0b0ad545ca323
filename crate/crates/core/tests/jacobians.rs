mod common;

use common::*;
use gkf::diffable::{fd_gradient, max_rel_error};
use gkf::models::{LinearAdjacency, Replica, ReplicaParams};
use gkf::training::window_loss;
use gkf::{AnyModel, GraphTopology, GssModel, Matrix};

const POINTS: usize = 20;
const TOL: f64 = 1e-4;

fn check(model: &dyn GssModel, seed: u64) {
    let errs = jacobian_errors(model, &mut test_rng(seed, 0), POINTS);
    assert!(errs.worst() <= TOL, "{:?}: {errs:?}", model.family());
}

#[test]
fn replica_lingss_jacobians() {
    let ep = episode("lingss", 1, 10);
    check(&true_replica(&ep), 11);
}

#[test]
fn replica_nonlingss_jacobians() {
    let ep = episode("nonlingss", 1, 10);
    check(&true_replica(&ep), 12);
}

#[test]
fn replica_mixed_activations_jacobians() {
    let ep = episode("lingss", 2, 10);
    let mut p = ep.config.replica_params();
    p.rho_ro = gkf::models::Activation::Tanh;
    check(&Replica::new(ep.topology.clone(), p), 13);
}

#[test]
fn stgnn_jacobians() {
    let ep = episode("lingss", 1, 10);
    for seed in 0..3 {
        check(&random_stgnn(&ep, seed), 14 + seed);
    }
}

#[test]
fn stgnn_single_node_and_empty_graph() {
    let single = GraphTopology::empty(1);
    let m = gkf::models::Stgnn::random(single, 7, &mut test_rng(5, 1));
    check(&m, 15);
    let empty = GraphTopology::empty(4);
    let m = gkf::models::Stgnn::random(empty, 7, &mut test_rng(5, 2));
    check(&m, 16);
}

#[test]
fn adjacency_noise_jacobians() {
    let ep = episode("lingss", 3, 10);
    let m = LinearAdjacency::new(ep.topology.clone(), 0.6, 0.3, -0.5, 2.0);
    check(&m, 17);
}

/// `f = (theta_tm I + theta_sp (A + alpha))(s + x)` gives
/// `L[v, i, j] = theta_sp * delta(v, i) * (s + x)_j`.
#[test]
fn adjacency_alpha_jacobian_closed_form() {
    let topo = GraphTopology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let m = LinearAdjacency::new(topo, 0.6, 0.3, 0.0, 1.0);
    let s = [0.5, -1.0, 2.0];
    let x = [1.0, 0.0, 1.0];
    let x_enc = m.encode(&x).unwrap();
    let l = m.alpha_jacobian(&s, &x_enc).unwrap();
    let u: Vec<f64> = s.iter().zip(&x_enc).map(|(a, b)| a + b).collect();
    for v in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let want = if v == i { 0.3 * u[j] } else { 0.0 };
                assert!((l.get(v, i, j) - want).abs() < 1e-15, "L[{v},{i},{j}]");
            }
        }
    }
    let zero = vec![0.0; 3];
    let neg: Vec<f64> = x_enc.iter().map(|v| -v).collect();
    assert!(m.alpha_jacobian(&neg, &x_enc).unwrap().as_slice().iter().all(|v| *v == 0.0));
    assert!(m.alpha_jacobian(&zero, &zero).unwrap().as_slice().iter().all(|v| *v == 0.0));
}

/// Additive signal noise with d_h = 1: `L[v, i, j] = delta(v, i) delta(i, j)`.
#[test]
fn replica_alpha_jacobian_is_identity_embedding() {
    let ep = episode("lingss", 1, 10);
    let m = true_replica(&ep);
    let n = m.n_nodes();
    let l = m.alpha_jacobian(&vec![0.3; n], &vec![1.0; n]).unwrap();
    assert_eq!(l.dims(), (n, n, n));
    for v in 0..n {
        for i in 0..n {
            for j in 0..n {
                let want = f64::from(u8::from(v == i && i == j));
                assert_eq!(l.get(v, i, j), want);
            }
        }
    }
}

fn gradient_check(model: AnyModel, preset: &str, burn_in: usize) {
    let ep = episode(preset, 4, 200);
    let start = 100;
    let (_, grad) = window_loss(&model, &ep, start, 12, burn_in, true).unwrap();
    let grad = grad.unwrap();
    let fd = fd_gradient(
        |p| {
            let mut m = model.clone();
            m.set_params(p)?;
            Ok(window_loss(&m, &ep, start, 12, burn_in, false)?.0)
        },
        model.params(),
    )
    .unwrap();
    let a = Matrix::column(&grad);
    let b = Matrix::column(&fd);
    let err = max_rel_error(&a, &b, JAC_FLOOR);
    assert!(err <= TOL, "{:?} burn_in {burn_in}: rel err {err:e}", model.family());
}

#[test]
fn replica_window_gradient_matches_fd() {
    for preset in ["lingss", "nonlingss"] {
        let ep = episode(preset, 4, 10);
        let mut p: ReplicaParams = ep.config.replica_params();
        p.theta_tm = 0.4;
        p.psi1 *= 0.7;
        let m: AnyModel = Replica::new(ep.topology.clone(), p).into();
        gradient_check(m.clone(), preset, 0);
        gradient_check(m, preset, 24);
    }
}

#[test]
fn stgnn_window_gradient_matches_fd() {
    let ep = episode("lingss", 4, 10);
    let m: AnyModel = random_stgnn(&ep, 3).into();
    gradient_check(m.clone(), "lingss", 0);
    gradient_check(m, "lingss", 8);
}
