mod common;

use common::*;
use gkf::gkf::{process_noise, NoiseCov};
use gkf::models::LinearAdjacency;
use gkf::sim::{gen_topology, generate};
use gkf::{GeneratorConfig, GssModel, Matrix};

#[test]
fn truncated_mean_oracle_matches_closed_form() {
    for l in [0.5f64, 5.0, 20.0] {
        let closed = l / (1.0 - (-l).exp());
        assert!((truncated_poisson_mean(l) - closed).abs() < 1e-10);
    }
    let cfg = GeneratorConfig::lingss(1);
    let m0 = truncated_poisson_mean(20.0);
    let m1 = truncated_poisson_mean(5.0);
    assert!((cfg.expected_ones_fraction() - m1 / (m0 + m1)).abs() < 1e-12);
}

#[test]
fn long_run_statistics() {
    for preset in ["lingss", "nonlingss"] {
        let ep = episode(preset, 7, 100_000);
        let s = generator_stats(&ep);
        let c = &ep.config;
        assert!((s.ones_fraction - s.expected_ones_fraction).abs() <= 0.02, "{preset}: {s:?}");
        let (eta, nu) = (c.sigma_eta * c.sigma_eta, c.sigma_nu * c.sigma_nu);
        assert!((s.state_noise_var / eta - 1.0).abs() <= 0.02, "{preset}: {s:?}");
        assert!((s.readout_noise_var / nu - 1.0).abs() <= 0.02, "{preset}: {s:?}");
    }
}

#[test]
fn same_seed_same_episode_different_seed_differs() {
    let a = episode("lingss", 3, 500);
    let b = episode("lingss", 3, 500);
    let c = episode("lingss", 4, 500);
    assert_eq!(a, b);
    assert_ne!(a.outputs, c.outputs);
}

#[test]
fn presets_echo_noise_levels() {
    let ep = episode("lingss", 1, 5000);
    assert_eq!(ep.len(), 5000);
    assert_eq!(ep.n_nodes(), 12);
    assert_eq!(ep.config.sigma_eta, 0.25);
    assert_eq!(ep.config.sigma_nu, 0.12);
}

#[test]
fn single_node_episode() {
    let mut cfg = GeneratorConfig::nonlingss(2);
    cfg.n_nodes = 1;
    cfg.steps = 300;
    let ep = generate(&cfg).unwrap();
    assert_eq!(ep.n_nodes(), 1);
    assert!(ep.topology.edges().is_empty());
    assert_eq!(ep.outputs.len(), 300);
}

#[test]
fn topologies_are_connected() {
    for seed in 0..40 {
        let t = gen_topology(12, 0.3, seed).unwrap();
        assert!(t.is_connected(), "seed {seed}");
        let a = t.adjacency();
        assert_eq!(a.asymmetry(), 0.0);
    }
}

/// Monte Carlo check of the adjacency-noise covariance: sampled
/// `f(A + alpha) - f(A)` has covariance `L Q L^T`.
#[test]
fn adjacency_noise_covariance_monte_carlo() {
    let ep = episode("lingss", 5, 10);
    let m = LinearAdjacency::new(ep.topology.clone(), 0.6, 0.3, -0.5, 2.0);
    let n = m.n_nodes();
    let mut rng = test_rng(5, 40);
    let s = uniform_vec(&mut rng, n, -1.0, 1.0);
    let x_enc = m.encode(&ep.inputs[3]).unwrap();
    let sigma = 0.25;
    let base = m.transition(&s, &x_enc).unwrap();
    let cov = process_noise(&m.alpha_jacobian(&s, &x_enc).unwrap(), &NoiseCov::Scalar(sigma * sigma)).unwrap();

    let samples = 20_000;
    let mut acc = Matrix::zeros(n, n);
    for _ in 0..samples {
        let alpha = Matrix::new(n, n, (0..n * n).map(|_| rng.normal(sigma)).collect()).unwrap();
        let d: Vec<f64> = m
            .transition_with_noise(&s, &x_enc, &alpha)
            .unwrap()
            .iter()
            .zip(&base)
            .map(|(a, b)| a - b)
            .collect();
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += d[i] * d[j];
            }
        }
    }
    let emp = acc.scale(1.0 / samples as f64);
    let scale = cov.diagonal().iter().fold(0.0f64, |a, b| a.max(*b));
    let tol = 6.0 * (2.0 / samples as f64).sqrt() * scale;
    let err = emp.sub(&cov).unwrap().max_abs();
    assert!(err <= tol, "max deviation {err:e} > {tol:e}");
}
