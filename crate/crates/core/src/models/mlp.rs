use crate::linalg::{dot, Matrix};
use crate::rng::Rng;

/// Two-layer dense network `relu(x W1 + b1) W2 + b2` whose weights live in
/// a shared flat parameter vector starting at `offset`.
///
/// Layout: `W1` (`d_in x d_hidden`, row-major), `b1`, `W2`
/// (`d_hidden x d_out`), `b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp2 {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub offset: usize,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp2 {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, offset: usize) -> Self {
        Self {
            d_in,
            d_hidden,
            d_out,
            offset,
        }
    }

    pub fn n_params(&self) -> usize {
        self.d_in * self.d_hidden + self.d_hidden + self.d_hidden * self.d_out + self.d_out
    }

    pub fn end(&self) -> usize {
        self.offset + self.n_params()
    }

    fn w1(&self) -> usize {
        self.offset
    }
    fn b1(&self) -> usize {
        self.w1() + self.d_in * self.d_hidden
    }
    fn w2(&self) -> usize {
        self.b1() + self.d_hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.d_hidden * self.d_out
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpCache {
        let mut c = MlpCache {
            pre: vec![0.0; self.d_hidden],
            hidden: vec![0.0; self.d_hidden],
            out: vec![0.0; self.d_out],
        };
        self.forward_into(params, x, &mut c.pre, &mut c.hidden, &mut c.out);
        c
    }

    /// Allocation-free forward pass into caller buffers.
    pub fn forward_into(&self, params: &[f64], x: &[f64], pre: &mut [f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d_in);
        let (h, o) = (self.d_hidden, self.d_out);
        pre.copy_from_slice(&params[self.b1()..self.b1() + h]);
        let w1 = &params[self.w1()..self.w1() + self.d_in * h];
        for (&xi, row) in x.iter().zip(w1.chunks_exact(h)) {
            if xi != 0.0 {
                pre.iter_mut().zip(row).for_each(|(p, w)| *p += xi * w);
            }
        }
        hidden.iter_mut().zip(pre.iter()).for_each(|(hd, &p)| *hd = p.max(0.0));
        out.copy_from_slice(&params[self.b2()..self.b2() + o]);
        let w2 = &params[self.w2()..self.w2() + h * o];
        for (&hk, row) in hidden.iter().zip(w2.chunks_exact(o)) {
            if hk != 0.0 {
                out.iter_mut().zip(row).for_each(|(p, w)| *p += hk * w);
            }
        }
    }

    /// Input-output Jacobian (`d_out x d_in`) at a cached point.
    pub fn jacobian(&self, params: &[f64], cache: &MlpCache) -> Matrix {
        self.jacobian_at(params, &cache.pre)
    }

    /// Input-output Jacobian given the hidden pre-activations.
    pub fn jacobian_at(&self, params: &[f64], pre: &[f64]) -> Matrix {
        let (h, o) = (self.d_hidden, self.d_out);
        let mut jac = Matrix::zeros(o, self.d_in);
        for k in 0..h {
            if pre[k] <= 0.0 {
                continue;
            }
            for r in 0..o {
                let w2 = params[self.w2() + k * o + r];
                if w2 == 0.0 {
                    continue;
                }
                for i in 0..self.d_in {
                    jac[(r, i)] += w2 * params[self.w1() + i * h + k];
                }
            }
        }
        jac
    }

    /// Accumulates parameter gradients and returns the input cotangent.
    pub fn backward(&self, params: &[f64], x: &[f64], cache: &MlpCache, g_out: &[f64], g_params: &mut [f64]) -> Vec<f64> {
        let mut g_in = vec![0.0; self.d_in];
        self.backward_into(params, x, &cache.pre, &cache.hidden, g_out, g_params, &mut g_in);
        g_in
    }

    /// Like [`Mlp2::backward`], writing the input cotangent into `g_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_into(
        &self,
        params: &[f64],
        x: &[f64],
        pre: &[f64],
        hidden: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
        g_in: &mut [f64],
    ) {
        let (h, o) = (self.d_hidden, self.d_out);
        let (b1, w1, w2, b2) = (self.b1(), self.w1(), self.w2(), self.b2());
        g_params[b2..b2 + o].iter_mut().zip(g_out).for_each(|(a, g)| *a += g);
        let mut g_pre_buf = [0.0f64; 32];
        let mut g_pre_vec;
        let g_pre: &mut [f64] = if h <= 32 {
            &mut g_pre_buf[..h]
        } else {
            g_pre_vec = vec![0.0; h];
            &mut g_pre_vec
        };
        for k in 0..h {
            if hidden[k] != 0.0 {
                let hk = hidden[k];
                g_params[w2 + k * o..w2 + (k + 1) * o]
                    .iter_mut()
                    .zip(g_out)
                    .for_each(|(a, g)| *a += hk * g);
            }
            g_pre[k] = if pre[k] > 0.0 {
                dot(&params[w2 + k * o..w2 + (k + 1) * o], g_out)
            } else {
                0.0
            };
        }
        g_params[b1..b1 + h].iter_mut().zip(g_pre.iter()).for_each(|(a, g)| *a += g);
        for i in 0..self.d_in {
            let xi = x[i];
            if xi != 0.0 {
                g_params[w1 + i * h..w1 + (i + 1) * h]
                    .iter_mut()
                    .zip(g_pre.iter())
                    .for_each(|(a, g)| *a += xi * g);
            }
            g_in[i] = dot(&params[w1 + i * h..w1 + (i + 1) * h], g_pre);
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of each layer.
    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let b1 = 1.0 / (self.d_in as f64).sqrt();
        for p in &mut params[self.w1()..self.w2()] {
            *p = rng.uniform_range(-b1, b1);
        }
        let b2 = 1.0 / (self.d_hidden as f64).sqrt();
        for p in &mut params[self.w2()..self.end()] {
            *p = rng.uniform_range(-b2, b2);
        }
    }
}
