//! Graph state-space model families.
//!
//! A model is the triple (encoder, transition, readout) over a fixed node
//! set. States are flattened node-major: node 0's features, then node 1's,
//! and so on. Besides evaluation, every model exposes the Jacobians the
//! graph Kalman filter linearizes with and vector-Jacobian products for
//! backpropagation through time.

mod adjacency;
mod mlp;
mod replica;
mod stgnn;

pub use adjacency::LinearAdjacency;
pub use mlp::Mlp2;
pub use replica::{Replica, ReplicaParams};
pub use stgnn::{Stgnn, STGNN_HIDDEN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::{Matrix, Tensor3};

/// Component-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "id")]
    Identity,
    #[serde(rename = "tanh")]
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// How the state-transition noise `alpha` enters the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseEntry {
    /// Added to the state signal after the transition.
    AdditiveSignal,
    /// Added to the adjacency matrix the transition propagates over.
    Adjacency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_h: usize,
    pub d_y: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Replica,
    Stgnn,
    #[serde(rename = "linear-adjacency")]
    LinearAdjacency,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelFamily::Replica => "replica",
            ModelFamily::Stgnn => "stgnn",
            ModelFamily::LinearAdjacency => "linear-adjacency",
        })
    }
}

/// Encoder `f_enc`, transition `f_st(s, x_enc, alpha)` and readout
/// `f_ro(s, nu)` of a graph state-space model.
pub trait GssModel: Send + Sync {
    fn family(&self) -> ModelFamily;

    fn topology(&self) -> &GraphTopology;

    fn dims(&self) -> Dims;

    fn noise_entry(&self) -> NoiseEntry;

    fn n_nodes(&self) -> usize {
        self.topology().n_nodes()
    }

    fn input_len(&self) -> usize {
        self.n_nodes() * self.dims().d_x
    }

    fn state_len(&self) -> usize {
        self.n_nodes() * self.dims().d_h
    }

    fn output_len(&self) -> usize {
        self.n_nodes() * self.dims().d_y
    }

    /// Shape of the transition noise matrix `alpha`.
    fn alpha_shape(&self) -> (usize, usize) {
        let n = self.n_nodes();
        match (self.noise_entry(), self.dims().d_h) {
            (NoiseEntry::Adjacency, _) | (NoiseEntry::AdditiveSignal, 1) => (n, n),
            (NoiseEntry::AdditiveSignal, d_h) => (n, d_h),
        }
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Noise-free transition.
    fn transition(&self, s: &[f64], x_enc: &[f64]) -> Result<Vec<f64>>;

    /// Transition with explicit noise `alpha` (shape [`GssModel::alpha_shape`]).
    fn transition_with_noise(&self, s: &[f64], x_enc: &[f64], alpha: &Matrix) -> Result<Vec<f64>>;

    /// Noise-free readout.
    fn readout(&self, s: &[f64]) -> Result<Vec<f64>>;

    /// Readout with additive output noise.
    fn readout_with_noise(&self, s: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.readout(s)?;
        if nu.len() != y.len() {
            return Err(Error::dim("readout noise", y.len(), nu.len()));
        }
        y.iter_mut().zip(nu).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    /// `F = d f_st / d s` at `alpha = 0`.
    fn transition_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Matrix>;

    /// `L = d f_st / d alpha` at `alpha = 0`, shaped `(state_len, alpha rows, alpha cols)`.
    fn alpha_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Tensor3>;

    /// `H = d f_ro / d s` at `nu = 0`.
    fn readout_jacobian(&self, s: &[f64]) -> Result<Matrix>;

    /// `M = d f_ro / d nu`; identity for additive output noise.
    fn readout_noise_jacobian(&self, _s: &[f64]) -> Result<Matrix> {
        Ok(Matrix::identity(self.output_len()))
    }

    /// All parameters, laid out as `[encoder | transition | readout]`.
    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Lengths of the encoder, transition and readout parameter blocks.
    fn param_blocks(&self) -> [usize; 3];

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Accumulates `g_out^T d f_enc / d params` into `g_params`.
    fn encode_vjp(&self, x: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<()>;

    /// Accumulates the parameter VJP of the noise-free transition into
    /// `g_params`, returning the VJPs with respect to `s` and `x_enc`.
    fn transition_vjp(
        &self,
        s: &[f64],
        x_enc: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Accumulates the parameter VJP of the noise-free readout into
    /// `g_params`, returning the VJP with respect to `s`.
    fn readout_vjp(&self, s: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<Vec<f64>>;
}

pub(crate) fn check_len(ctx: &'static str, want: usize, got: usize) -> Result<()> {
    if want == got {
        Ok(())
    } else {
        Err(Error::dim(ctx, want, got))
    }
}

pub(crate) fn check_finite(ctx: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{ctx} output")))
    }
}

/// Identity embedding of additive signal noise into the state.
pub(crate) fn additive_alpha_jacobian(n_nodes: usize, d_h: usize) -> Tensor3 {
    if d_h == 1 {
        let mut l = Tensor3::zeros((n_nodes, n_nodes, n_nodes));
        for v in 0..n_nodes {
            l.set(v, v, v, 1.0);
        }
        l
    } else {
        let mut l = Tensor3::zeros((n_nodes * d_h, n_nodes, d_h));
        for v in 0..n_nodes {
            for k in 0..d_h {
                l.set(v * d_h + k, v, k, 1.0);
            }
        }
        l
    }
}

/// Adds additive signal noise `alpha` to a transition output in place.
pub(crate) fn add_signal_noise(out: &mut [f64], alpha: &Matrix, n_nodes: usize, d_h: usize) -> Result<()> {
    if d_h == 1 {
        check_len("alpha rows", n_nodes, alpha.rows())?;
        check_len("alpha cols", n_nodes, alpha.cols())?;
        for v in 0..n_nodes {
            out[v] += alpha[(v, v)];
        }
    } else {
        check_len("alpha rows", n_nodes, alpha.rows())?;
        check_len("alpha cols", d_h, alpha.cols())?;
        out.iter_mut().zip(alpha.as_slice()).for_each(|(o, a)| *o += a);
    }
    Ok(())
}

/// Any supported model, for persistence and the command line.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Replica(Replica),
    Stgnn(Stgnn),
    LinearAdjacency(LinearAdjacency),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Replica($m) => $e,
            AnyModel::Stgnn($m) => $e,
            AnyModel::LinearAdjacency($m) => $e,
        }
    };
}

impl GssModel for AnyModel {
    fn family(&self) -> ModelFamily {
        delegate!(self, m => m.family())
    }
    fn topology(&self) -> &GraphTopology {
        delegate!(self, m => m.topology())
    }
    fn dims(&self) -> Dims {
        delegate!(self, m => m.dims())
    }
    fn noise_entry(&self) -> NoiseEntry {
        delegate!(self, m => m.noise_entry())
    }
    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, m => m.encode(x))
    }
    fn transition(&self, s: &[f64], x_enc: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, m => m.transition(s, x_enc))
    }
    fn transition_with_noise(&self, s: &[f64], x_enc: &[f64], alpha: &Matrix) -> Result<Vec<f64>> {
        delegate!(self, m => m.transition_with_noise(s, x_enc, alpha))
    }
    fn readout(&self, s: &[f64]) -> Result<Vec<f64>> {
        delegate!(self, m => m.readout(s))
    }
    fn transition_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Matrix> {
        delegate!(self, m => m.transition_jacobian(s, x_enc))
    }
    fn alpha_jacobian(&self, s: &[f64], x_enc: &[f64]) -> Result<Tensor3> {
        delegate!(self, m => m.alpha_jacobian(s, x_enc))
    }
    fn readout_jacobian(&self, s: &[f64]) -> Result<Matrix> {
        delegate!(self, m => m.readout_jacobian(s))
    }
    fn params(&self) -> &[f64] {
        delegate!(self, m => m.params())
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        delegate!(self, m => m.set_params(params))
    }
    fn param_blocks(&self) -> [usize; 3] {
        delegate!(self, m => m.param_blocks())
    }
    fn encode_vjp(&self, x: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<()> {
        delegate!(self, m => m.encode_vjp(x, g_out, g_params))
    }
    fn transition_vjp(
        &self,
        s: &[f64],
        x_enc: &[f64],
        g_out: &[f64],
        g_params: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        delegate!(self, m => m.transition_vjp(s, x_enc, g_out, g_params))
    }
    fn readout_vjp(&self, s: &[f64], g_out: &[f64], g_params: &mut [f64]) -> Result<Vec<f64>> {
        delegate!(self, m => m.readout_vjp(s, g_out, g_params))
    }
}

impl From<Replica> for AnyModel {
    fn from(m: Replica) -> Self {
        AnyModel::Replica(m)
    }
}

impl From<Stgnn> for AnyModel {
    fn from(m: Stgnn) -> Self {
        AnyModel::Stgnn(m)
    }
}

impl From<LinearAdjacency> for AnyModel {
    fn from(m: LinearAdjacency) -> Self {
        AnyModel::LinearAdjacency(m)
    }
}

/// Wraps a model's transition as a [`crate::diffable::DiffFn`] over `(s, x_enc)`.
pub struct TransitionFn<'a, M: ?Sized>(pub &'a M);

/// Wraps a model's readout as a [`crate::diffable::DiffFn`] over `s`.
pub struct ReadoutFn<'a, M: ?Sized>(pub &'a M);

impl<M: GssModel + ?Sized> crate::diffable::DiffFn for TransitionFn<'_, M> {
    fn input_lens(&self) -> Vec<usize> {
        vec![self.0.state_len(), self.0.state_len()]
    }
    fn output_len(&self) -> usize {
        self.0.state_len()
    }
    fn eval(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        crate::diffable::check_inputs(self, inputs)?;
        self.0.transition(inputs[0], inputs[1])
    }
    fn jacobian(&self, slot: usize, inputs: &[&[f64]]) -> Result<Matrix> {
        crate::diffable::check_inputs(self, inputs)?;
        match slot {
            0 => self.0.transition_jacobian(inputs[0], inputs[1]),
            _ => Err(Error::Unsupported("transition Jacobian w.r.t. encoded input".into())),
        }
    }
}

impl<M: GssModel + ?Sized> crate::diffable::DiffFn for ReadoutFn<'_, M> {
    fn input_lens(&self) -> Vec<usize> {
        vec![self.0.state_len()]
    }
    fn output_len(&self) -> usize {
        self.0.output_len()
    }
    fn eval(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        crate::diffable::check_inputs(self, inputs)?;
        self.0.readout(inputs[0])
    }
    fn jacobian(&self, _slot: usize, inputs: &[&[f64]]) -> Result<Matrix> {
        crate::diffable::check_inputs(self, inputs)?;
        self.0.readout_jacobian(inputs[0])
    }
}
