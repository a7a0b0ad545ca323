use serde::{Deserialize, Serialize};

use super::{
    add_signal_noise, additive_alpha_jacobian, check_finite, check_len, Activation, Dims, GssModel, ModelFamily,
    NoiseEntry,
};
use crate::error::Result;
use crate::graph::GraphTopology;
use crate::linalg::{Matrix, Tensor3};

/// The four parameters plus the two fixed nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaParams {
    pub theta_tm: f64,
    pub theta_sp: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub rho_st: Activation,
    pub rho_ro: Activation,
}

/// Scalar-state model with the generator's own functional form:
///
/// `s_t = rho_st((theta_tm I + theta_sp Abar)(s_{t-1} + x_{t-1}))`,
/// `y_t = rho_ro(psi0 + psi1 s_t)`.
///
/// The encoder is the identity; transition noise is additive on the state.
#[derive(Clone, Debug)]
pub struct Replica {
    topology: GraphTopology,
    rho_st: Activation,
    rho_ro: Activation,
    // [theta_tm, theta_sp, psi0, psi1]
    params: Vec<f64>,
}

impl Replica {
    pub fn new(topology: GraphTopology, p: ReplicaParams) -> Self {
        Self {
            topology,
            rho_st: p.rho_st,
            rho_ro: p.rho_ro,
            params: vec![p.theta_tm, p.theta_sp, p.psi0, p.psi1],
        }
    }

    pub fn replica_params(&self) -> ReplicaParams {
        ReplicaParams {
            theta_tm: self.params[0],
            theta_sp: self.params[1],
            psi0: self.params[2],
            psi1: self.params[3],
            rho_st: self.rho_st,
            rho_ro: self.rho_ro,
        }
    }

    /// `(theta_tm I + theta_sp Abar)`.
    pub fn mixing_matrix(&self) -> Matrix {
        let n = self.n_nodes();
        let mut m = self.topology.normalized_sym().scale(self.params[1]);
        for i in 0..n {
            m[(i, i)] += self.params[0];
        }
        m
    }

    fn pre_activation(&self, s: &[f64], x_enc: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.n_nodes();
        check_len("replica state", n, s.len())?;
        check_len("replica input", n, x_enc.len())?;
        let u: Vec<f64> = s.iter().zip(x_enc).map(|(a, b)| a + b).collect();
        let au = self.topology.normalized_sym().matvec(&u)?;
        let z = u
            .iter()
            .zip(&au)
            .map(|(ui, ai)| self.params[0] * ui + self.params[1] * ai)
            .collect();
        Ok((u, au, z))
    }
}

impl GssModel for Replica {
    fn family(&self) -> ModelFamily {
        ModelFamily::Replica
    }

    fn topology(&self) -> &GraphTopology {
        &self.topology
    }

    fn dims(&self) -> Dims {
        Dims { d_x: 1, d_h: 1, d_y: 1 }
    }

    fn noise_entry(&self) -> NoiseEntry {
        NoiseEntry::AdditiveSignal
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("replica encoder input", self.n_nodes(), x.len())?;
        Ok(x.to_vec())
    }

    fn transition(&self, s: &[f64], x_enc: &[f64]) -> Result<Vec<f64>> {
        let (_, _, z) = self.pre_activation(s, x_enc)?;
        let out: Vec<f64> = z.iter().map(|&v| self.rho_st.apply(v)).collect();
        check_finite("replica transition", &out)?;
        Ok(out)
    }

    fn transition_with_noise(&self, s: &[f64], x_enc: &[f64], alpha: &Matrix) -> Result<Vec<f64>> {
        let mut out = self.transition(s, x_enc)?;
        add_signal_noise(&mut out, alpha, self.n_nodes(), 1)?;
        Ok(out)
    }

    fn readout(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("replica readout", self.n_nodes(), s.len())?;
        let (psi0, psi1) = (self.params[2], self.params[3]);
        let out: Vec<f64> = s.iter().map(|&v| self.rho_ro.apply(psi0 + psi1 * v)).collect();
        check_finite("replica readout", &out)?;
        Ok(out)
    }

    fn transition_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Matrix> {
        let (_, _, z) = self.pre_activation(s, x_enc)?;
        let mut jac = self.mixing_matrix();
        for (i, zi) in z.iter().enumerate() {
            let d = self.rho_st.derivative(*zi);
            jac.row_mut(i).iter_mut().for_each(|v| *v *= d);
        }
        Ok(jac)
    }

    fn alpha_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Tensor3> {
        let n = self.n_nodes();
        check_len("replica state", n, s.len())?;
        check_len("replica input", n, x_enc.len())?;
        Ok(additive_alpha_jacobian(n, 1))
    }

    fn readout_jacobian(&self, s: &[f64]) -> Result<Matrix> {
        check_len("replica readout", self.n_nodes(), s.len())?;
        let (psi0, psi1) = (self.params[2], self.params[3]);
        let d: Vec<f64> = s
            .iter()
            .map(|&v| self.rho_ro.derivative(psi0 + psi1 * v) * psi1)
            .collect();
        Ok(Matrix::from_diagonal(&d))
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("replica params", 4, params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_blocks(&self) -> [usize; 3] {
        [0, 2, 2]
    }

    fn encode_vjp(&self, x: &[f64], _g_out: &[f64], _g_params: &mut [f64]) -> Result<()> {
        check_len("replica encoder input", self.n_nodes(), x.len())
    }

    fn transition_vjp(
        &self,
        s: &[f64],
        x_enc: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (u, au, z) = self.pre_activation(s, x_enc)?;
        check_len("replica transition cotangent", u.len(), g_out.len())?;
        let g_z: Vec<f64> = g_out
            .iter()
            .zip(&z)
            .map(|(g, zi)| g * self.rho_st.derivative(*zi))
            .collect();
        g_params[0] += g_z.iter().zip(&u).map(|(g, v)| g * v).sum::<f64>();
        g_params[1] += g_z.iter().zip(&au).map(|(g, v)| g * v).sum::<f64>();
        let at_g = self.topology.normalized_sym().t_matvec(&g_z)?;
        let g_u: Vec<f64> = g_z
            .iter()
            .zip(&at_g)
            .map(|(g, a)| self.params[0] * g + self.params[1] * a)
            .collect();
        Ok((g_u.clone(), g_u))
    }

    fn readout_vjp(&self, s: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<Vec<f64>> {
        check_len("replica readout", self.n_nodes(), s.len())?;
        check_len("replica readout cotangent", s.len(), g_out.len())?;
        let (psi0, psi1) = (self.params[2], self.params[3]);
        let mut g_s = Vec::with_capacity(s.len());
        for (&v, &g) in s.iter().zip(g_out) {
            let gp = g * self.rho_ro.derivative(psi0 + psi1 * v);
            g_params[2] += gp;
            g_params[3] += gp * v;
            g_s.push(gp * psi1);
        }
        Ok(g_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin_params() -> ReplicaParams {
        ReplicaParams {
            theta_tm: 0.6,
            theta_sp: 0.3,
            psi0: -0.5,
            psi1: 2.0,
            rho_st: Activation::Identity,
            rho_ro: Activation::Identity,
        }
    }

    fn nonlin_params() -> ReplicaParams {
        ReplicaParams {
            theta_tm: 0.6,
            theta_sp: -0.3,
            psi0: -2.0,
            psi1: 5.0,
            rho_st: Activation::Tanh,
            rho_ro: Activation::Tanh,
        }
    }

    fn path2() -> GraphTopology {
        GraphTopology::from_edges(2, &[(0, 1)]).unwrap()
    }

    #[test]
    fn zero_is_fixed_point() {
        for p in [lin_params(), nonlin_params()] {
            let m = Replica::new(path2(), p);
            assert_eq!(m.transition(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn lingss_transition_on_path() {
        let m = Replica::new(path2(), lin_params());
        let out = m.transition(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-15);
        assert!((out[1] - 0.15).abs() < 1e-15);
        // Same pre-activation when the unit mass arrives through the input.
        assert_eq!(m.transition(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), out);
    }

    #[test]
    fn nonlingss_transition_is_bounded() {
        let m = Replica::new(path2(), nonlin_params());
        let out = m.transition(&[30.0, -12.0], &[1.0, 1.0]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn readout_examples() {
        let m = Replica::new(path2(), lin_params());
        assert_eq!(m.readout(&[1.0, 1.0]).unwrap(), vec![1.5, 1.5]);

        let mut flat = lin_params();
        flat.psi1 = 0.0;
        let m = Replica::new(path2(), flat);
        assert_eq!(m.readout(&[3.0, -4.0]).unwrap(), vec![-0.5, -0.5]);
        assert_eq!(m.readout_jacobian(&[3.0, -4.0]).unwrap(), Matrix::zeros(2, 2));

        let m = Replica::new(path2(), nonlin_params());
        let y = m.readout(&[0.4, 0.4]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn linear_jacobian_is_mixing_matrix() {
        let m = Replica::new(path2(), lin_params());
        let f = m.transition_jacobian(&[0.3, 1.1], &[1.0, 0.0]).unwrap();
        assert_eq!(f, m.mixing_matrix());
    }

    #[test]
    fn additive_alpha_jacobian_is_diagonal_embedding() {
        let m = Replica::new(path2(), lin_params());
        let l = m.alpha_jacobian(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l.dims(), (2, 2, 2));
        for v in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want = if v == i && i == j { 1.0 } else { 0.0 };
                    assert_eq!(l.get(v, i, j), want);
                }
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let m = Replica::new(path2(), lin_params());
        assert!(m.transition(&[0.0], &[0.0, 0.0]).is_err());
        assert!(m.readout(&[0.0; 3]).is_err());
    }
}
