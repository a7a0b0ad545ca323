use super::mlp::Mlp2;
use super::{
    add_signal_noise, additive_alpha_jacobian, check_finite, check_len, Dims, GssModel, ModelFamily, NoiseEntry,
};
use crate::error::Result;
use crate::graph::GraphTopology;
use crate::linalg::{dot, Matrix, Tensor3};
use crate::rng::Rng;

/// Hidden width of every STGNN module.
pub const STGNN_HIDDEN: usize = 7;

/// Residual message-passing model:
///
/// `s_t = s_{t-1} + x_enc + tanh(z W1 + Arow z W2)`,
/// `z = gamma(s_{t-1} + x_enc)`,
///
/// with node-wise two-layer encoder, `gamma` and readout. Node states are
/// rows of `z`; `Arow` is the row-normalized adjacency.
#[derive(Clone, Debug)]
pub struct Stgnn {
    topology: GraphTopology,
    hidden: usize,
    encoder: Mlp2,
    gamma: Mlp2,
    w_self: usize,
    w_neigh: usize,
    readout: Mlp2,
    params: Vec<f64>,
}

struct Forward {
    u: Vec<f64>,
    // gamma hidden pre-activations and activations, node-major
    pre: Vec<f64>,
    hid: Vec<f64>,
    z: Vec<f64>,
    az: Vec<f64>,
    tanh_p: Vec<f64>,
}

impl Stgnn {
    /// Zero-initialized model.
    pub fn zeros(topology: GraphTopology, hidden: usize) -> Self {
        let encoder = Mlp2::new(1, hidden, hidden, 0);
        let gamma = Mlp2::new(hidden, hidden, hidden, encoder.end());
        let w_self = gamma.end();
        let w_neigh = w_self + hidden * hidden;
        let readout = Mlp2::new(hidden, hidden, 1, w_neigh + hidden * hidden);
        let params = vec![0.0; readout.end()];
        Self {
            topology,
            hidden,
            encoder,
            gamma,
            w_self,
            w_neigh,
            readout,
            params,
        }
    }

    /// Uniform(+-1/sqrt(fan_in)) initialization.
    pub fn random(topology: GraphTopology, hidden: usize, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(topology, hidden);
        m.encoder.init(&mut m.params, rng);
        m.gamma.init(&mut m.params, rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        for p in &mut m.params[m.w_self..m.readout.offset] {
            *p = rng.uniform_range(-bound, bound);
        }
        m.readout.init(&mut m.params, rng);
        m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `z W` for node rows `z` (n x h) and an `h x h` block of the params.
    fn right_mul(&self, z: &[f64], w_off: usize) -> Vec<f64> {
        let h = self.hidden;
        let w = &self.params[w_off..w_off + h * h];
        let mut out = vec![0.0; z.len()];
        for (zr, or) in z.chunks(h).zip(out.chunks_mut(h)) {
            for (a, &za) in zr.iter().enumerate() {
                if za == 0.0 {
                    continue;
                }
                or.iter_mut().zip(&w[a * h..(a + 1) * h]).for_each(|(o, wv)| *o += za * wv);
            }
        }
        out
    }

    /// `Arow z` (or `Arow^T z` when `transpose`).
    fn propagate(&self, z: &[f64], transpose: bool) -> Vec<f64> {
        let h = self.hidden;
        let a = self.topology.normalized_row();
        let mut out = vec![0.0; z.len()];
        for (v, arow) in a.as_slice().chunks_exact(self.n_nodes()).enumerate() {
            for (j, &w) in arow.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (src, dst) = if transpose { (v, j) } else { (j, v) };
                let zs = &z[src * h..(src + 1) * h];
                out[dst * h..(dst + 1) * h]
                    .iter_mut()
                    .zip(zs)
                    .for_each(|(o, zv)| *o += w * zv);
            }
        }
        out
    }

    fn forward(&self, s: &[f64], x_enc: &[f64]) -> Result<Forward> {
        let len = self.state_len();
        check_len("stgnn state", len, s.len())?;
        check_len("stgnn encoded input", len, x_enc.len())?;
        let h = self.hidden;
        let u: Vec<f64> = s.iter().zip(x_enc).map(|(a, b)| a + b).collect();
        let hg = self.gamma.d_hidden;
        let mut pre = vec![0.0; self.n_nodes() * hg];
        let mut hid = vec![0.0; self.n_nodes() * hg];
        let mut z = vec![0.0; len];
        for (((uv, pv), hv), zv) in u
            .chunks(h)
            .zip(pre.chunks_mut(hg))
            .zip(hid.chunks_mut(hg))
            .zip(z.chunks_mut(h))
        {
            self.gamma.forward_into(&self.params, uv, pv, hv, zv);
        }
        let az = self.propagate(&z, false);
        let p_self = self.right_mul(&z, self.w_self);
        let p_neigh = self.right_mul(&az, self.w_neigh);
        let tanh_p = p_self.iter().zip(&p_neigh).map(|(a, b)| (a + b).tanh()).collect();
        Ok(Forward {
            u,
            pre,
            hid,
            z,
            az,
            tanh_p,
        })
    }

    /// `W^T J` for an `h x h` parameter block `W` and an `h x h` matrix `J`.
    fn wt_times(&self, w_off: usize, j: &Matrix) -> Matrix {
        let h = self.hidden;
        let w = &self.params[w_off..w_off + h * h];
        let mut out = Matrix::zeros(h, h);
        for b in 0..h {
            for a in 0..h {
                let wab = w[a * h + b];
                if wab == 0.0 {
                    continue;
                }
                for c in 0..h {
                    out[(b, c)] += wab * j[(a, c)];
                }
            }
        }
        out
    }
}

impl GssModel for Stgnn {
    fn family(&self) -> ModelFamily {
        ModelFamily::Stgnn
    }

    fn topology(&self) -> &GraphTopology {
        &self.topology
    }

    fn dims(&self) -> Dims {
        Dims {
            d_x: 1,
            d_h: self.hidden,
            d_y: 1,
        }
    }

    fn noise_entry(&self) -> NoiseEntry {
        NoiseEntry::AdditiveSignal
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("stgnn encoder input", self.n_nodes(), x.len())?;
        let h = self.hidden;
        let mut out = vec![0.0; x.len() * h];
        let (mut pre, mut hid) = (vec![0.0; self.encoder.d_hidden], vec![0.0; self.encoder.d_hidden]);
        for (&xv, ov) in x.iter().zip(out.chunks_mut(h)) {
            self.encoder.forward_into(&self.params, &[xv], &mut pre, &mut hid, ov);
        }
        check_finite("stgnn encoder", &out)?;
        Ok(out)
    }

    fn transition(&self, s: &[f64], x_enc: &[f64]) -> Result<Vec<f64>> {
        let f = self.forward(s, x_enc)?;
        let out: Vec<f64> = f.u.iter().zip(&f.tanh_p).map(|(a, b)| a + b).collect();
        check_finite("stgnn transition", &out)?;
        Ok(out)
    }

    fn transition_with_noise(&self, s: &[f64], x_enc: &[f64], alpha: &Matrix) -> Result<Vec<f64>> {
        let mut out = self.transition(s, x_enc)?;
        add_signal_noise(&mut out, alpha, self.n_nodes(), self.hidden)?;
        Ok(out)
    }

    fn readout(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("stgnn readout", self.state_len(), s.len())?;
        let mut out = vec![0.0; self.n_nodes()];
        let (mut pre, mut hid) = (vec![0.0; self.readout.d_hidden], vec![0.0; self.readout.d_hidden]);
        for (sv, o) in s.chunks(self.hidden).zip(out.iter_mut()) {
            self.readout
                .forward_into(&self.params, sv, &mut pre, &mut hid, std::slice::from_mut(o));
        }
        check_finite("stgnn readout", &out)?;
        Ok(out)
    }

    fn transition_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Matrix> {
        let f = self.forward(s, x_enc)?;
        let (n, h) = (self.n_nodes(), self.hidden);
        let arow = self.topology.normalized_row();
        // Per node: W_self^T J_v and W_neigh^T J_v with J_v = d gamma / d u_v.
        let hg = self.gamma.d_hidden;
        let (self_terms, neigh_terms): (Vec<Matrix>, Vec<Matrix>) = f
            .pre
            .chunks(hg)
            .map(|pv| {
                let j = self.gamma.jacobian_at(&self.params, pv);
                (self.wt_times(self.w_self, &j), self.wt_times(self.w_neigh, &j))
            })
            .unzip();
        let mut jac = Matrix::zeros(n * h, n * h);
        for v in 0..n {
            let d: Vec<f64> = f.tanh_p[v * h..(v + 1) * h].iter().map(|t| 1.0 - t * t).collect();
            for j in 0..n {
                let w = arow[(v, j)];
                if v != j && w == 0.0 {
                    continue;
                }
                for b in 0..h {
                    for c in 0..h {
                        let mut val = w * neigh_terms[j][(b, c)];
                        if v == j {
                            val += self_terms[v][(b, c)];
                        }
                        let mut entry = d[b] * val;
                        if v == j && b == c {
                            entry += 1.0;
                        }
                        jac[(v * h + b, j * h + c)] = entry;
                    }
                }
            }
        }
        Ok(jac)
    }

    fn alpha_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Tensor3> {
        check_len("stgnn state", self.state_len(), s.len())?;
        check_len("stgnn encoded input", self.state_len(), x_enc.len())?;
        Ok(additive_alpha_jacobian(self.n_nodes(), self.hidden))
    }

    fn readout_jacobian(&self, s: &[f64]) -> Result<Matrix> {
        check_len("stgnn readout", self.state_len(), s.len())?;
        let (n, h) = (self.n_nodes(), self.hidden);
        let mut jac = Matrix::zeros(n, n * h);
        for (v, sv) in s.chunks(h).enumerate() {
            let c = self.readout.forward(&self.params, sv);
            let jv = self.readout.jacobian(&self.params, &c);
            jac.row_mut(v)[v * h..(v + 1) * h].copy_from_slice(jv.row(0));
        }
        Ok(jac)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("stgnn params", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_blocks(&self) -> [usize; 3] {
        [
            self.encoder.n_params(),
            self.readout.offset - self.gamma.offset,
            self.readout.n_params(),
        ]
    }

    fn encode_vjp(&self, x: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<()> {
        check_len("stgnn encoder input", self.n_nodes(), x.len())?;
        check_len("stgnn encoder cotangent", self.state_len(), g_out.len())?;
        let hd = self.encoder.d_hidden;
        let (mut pre, mut hid, mut out) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; self.hidden]);
        let mut g_in = [0.0];
        for (xv, gv) in x.iter().zip(g_out.chunks(self.hidden)) {
            self.encoder.forward_into(&self.params, &[*xv], &mut pre, &mut hid, &mut out);
            self.encoder
                .backward_into(&self.params, &[*xv], &pre, &hid, gv, g_params, &mut g_in);
        }
        Ok(())
    }

    fn transition_vjp(
        &self,
        s: &[f64],
        x_enc: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.forward(s, x_enc)?;
        check_len("stgnn transition cotangent", f.u.len(), g_out.len())?;
        let h = self.hidden;
        let g_p: Vec<f64> = g_out.iter().zip(&f.tanh_p).map(|(g, t)| g * (1.0 - t * t)).collect();

        // p = z W_self + (Arow z) W_neigh
        let mut g_z = vec![0.0; f.z.len()];
        let mut g_az = vec![0.0; f.z.len()];
        for (v, gpv) in g_p.chunks(h).enumerate() {
            for a in 0..h {
                let ws = &self.params[self.w_self + a * h..self.w_self + (a + 1) * h];
                let wn = &self.params[self.w_neigh + a * h..self.w_neigh + (a + 1) * h];
                g_z[v * h + a] = dot(ws, gpv);
                g_az[v * h + a] = dot(wn, gpv);
                let (za, aza) = (f.z[v * h + a], f.az[v * h + a]);
                for b in 0..h {
                    g_params[self.w_self + a * h + b] += za * gpv[b];
                    g_params[self.w_neigh + a * h + b] += aza * gpv[b];
                }
            }
        }
        let back = self.propagate(&g_az, true);
        g_z.iter_mut().zip(&back).for_each(|(a, b)| *a += b);

        let mut g_u = g_out.to_vec();
        let hg = self.gamma.d_hidden;
        let mut g_in = vec![0.0; h];
        for v in 0..self.n_nodes() {
            self.gamma.backward_into(
                &self.params,
                &f.u[v * h..(v + 1) * h],
                &f.pre[v * hg..(v + 1) * hg],
                &f.hid[v * hg..(v + 1) * hg],
                &g_z[v * h..(v + 1) * h],
                g_params,
                &mut g_in,
            );
            g_u[v * h..(v + 1) * h].iter_mut().zip(&g_in).for_each(|(a, b)| *a += b);
        }
        Ok((g_u.clone(), g_u))
    }

    fn readout_vjp(&self, s: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<Vec<f64>> {
        check_len("stgnn readout", self.state_len(), s.len())?;
        check_len("stgnn readout cotangent", self.n_nodes(), g_out.len())?;
        let h = self.hidden;
        let hd = self.readout.d_hidden;
        let mut g_s = vec![0.0; s.len()];
        let (mut pre, mut hid, mut out) = (vec![0.0; hd], vec![0.0; hd], [0.0]);
        for ((sv, &g), gv) in s.chunks(h).zip(g_out).zip(g_s.chunks_mut(h)) {
            self.readout.forward_into(&self.params, sv, &mut pre, &mut hid, &mut out);
            self.readout
                .backward_into(&self.params, sv, &pre, &hid, &[g], g_params, gv);
        }
        Ok(g_s)
    }
}
