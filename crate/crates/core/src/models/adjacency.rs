use super::{check_finite, check_len, Dims, GssModel, ModelFamily, NoiseEntry};
use crate::error::Result;
use crate::graph::GraphTopology;
use crate::linalg::{Matrix, Tensor3};

/// Linear diffusion over the raw (unnormalized) adjacency, with the
/// transition noise perturbing the adjacency itself:
///
/// `s_t = (theta_tm I + theta_sp (A + alpha)) (s_{t-1} + x_{t-1})`,
/// `y_t = psi0 + psi1 s_t`.
///
/// Exercises the tensor-valued noise Jacobian and the contraction that
/// carries it into the covariance.
#[derive(Clone, Debug)]
pub struct LinearAdjacency {
    topology: GraphTopology,
    // [theta_tm, theta_sp, psi0, psi1]
    params: Vec<f64>,
}

impl LinearAdjacency {
    pub fn new(topology: GraphTopology, theta_tm: f64, theta_sp: f64, psi0: f64, psi1: f64) -> Self {
        Self {
            topology,
            params: vec![theta_tm, theta_sp, psi0, psi1],
        }
    }

    fn propagate(&self, adjacency: &Matrix, s: &[f64], x_enc: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_nodes();
        check_len("adjacency-model state", n, s.len())?;
        check_len("adjacency-model input", n, x_enc.len())?;
        let u: Vec<f64> = s.iter().zip(x_enc).map(|(a, b)| a + b).collect();
        let au = adjacency.matvec(&u)?;
        let out = u
            .iter()
            .zip(&au)
            .map(|(ui, ai)| self.params[0] * ui + self.params[1] * ai)
            .collect();
        Ok((u, out))
    }
}

impl GssModel for LinearAdjacency {
    fn family(&self) -> ModelFamily {
        ModelFamily::LinearAdjacency
    }

    fn topology(&self) -> &GraphTopology {
        &self.topology
    }

    fn dims(&self) -> Dims {
        Dims { d_x: 1, d_h: 1, d_y: 1 }
    }

    fn noise_entry(&self) -> NoiseEntry {
        NoiseEntry::Adjacency
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("adjacency-model encoder input", self.n_nodes(), x.len())?;
        Ok(x.to_vec())
    }

    fn transition(&self, s: &[f64], x_enc: &[f64]) -> Result<Vec<f64>> {
        let (_, out) = self.propagate(self.topology.adjacency(), s, x_enc)?;
        check_finite("adjacency-model transition", &out)?;
        Ok(out)
    }

    fn transition_with_noise(&self, s: &[f64], x_enc: &[f64], alpha: &Matrix) -> Result<Vec<f64>> {
        let perturbed = self.topology.adjacency().add(alpha)?;
        let (_, out) = self.propagate(&perturbed, s, x_enc)?;
        Ok(out)
    }

    fn readout(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("adjacency-model readout", self.n_nodes(), s.len())?;
        Ok(s.iter().map(|v| self.params[2] + self.params[3] * v).collect())
    }

    fn transition_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Matrix> {
        check_len("adjacency-model state", self.n_nodes(), s.len())?;
        check_len("adjacency-model input", self.n_nodes(), x_enc.len())?;
        let mut f = self.topology.adjacency().scale(self.params[1]);
        for i in 0..self.n_nodes() {
            f[(i, i)] += self.params[0];
        }
        Ok(f)
    }

    /// `L[v, i, j] = theta_sp * delta(v, i) * (s + x)_j`.
    fn alpha_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Tensor3> {
        let n = self.n_nodes();
        check_len("adjacency-model state", n, s.len())?;
        check_len("adjacency-model input", n, x_enc.len())?;
        let mut l = Tensor3::zeros((n, n, n));
        for v in 0..n {
            for j in 0..n {
                l.set(v, v, j, self.params[1] * (s[j] + x_enc[j]));
            }
        }
        Ok(l)
    }

    fn readout_jacobian(&self, s: &[f64]) -> Result<Matrix> {
        check_len("adjacency-model readout", self.n_nodes(), s.len())?;
        Ok(Matrix::scaled_identity(self.n_nodes(), self.params[3]))
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("adjacency-model params", 4, params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_blocks(&self) -> [usize; 3] {
        [0, 2, 2]
    }

    fn encode_vjp(&self, x: &[f64], _g_out: &[f64], _g_params: &mut [f64]) -> Result<()> {
        check_len("adjacency-model encoder input", self.n_nodes(), x.len())
    }

    fn transition_vjp(
        &self,
        s: &[f64],
        x_enc: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (u, _) = self.propagate(self.topology.adjacency(), s, x_enc)?;
        check_len("adjacency-model cotangent", u.len(), g_out.len())?;
        let au = self.topology.adjacency().matvec(&u)?;
        g_params[0] += g_out.iter().zip(&u).map(|(g, v)| g * v).sum::<f64>();
        g_params[1] += g_out.iter().zip(&au).map(|(g, v)| g * v).sum::<f64>();
        let at_g = self.topology.adjacency().t_matvec(g_out)?;
        let g_u: Vec<f64> = g_out
            .iter()
            .zip(&at_g)
            .map(|(g, a)| self.params[0] * g + self.params[1] * a)
            .collect();
        Ok((g_u.clone(), g_u))
    }

    fn readout_vjp(&self, s: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<Vec<f64>> {
        check_len("adjacency-model readout", self.n_nodes(), s.len())?;
        check_len("adjacency-model cotangent", s.len(), g_out.len())?;
        for (v, g) in s.iter().zip(g_out) {
            g_params[2] += g;
            g_params[3] += g * v;
        }
        Ok(g_out.iter().map(|g| g * self.params[3]).collect())
    }
}
