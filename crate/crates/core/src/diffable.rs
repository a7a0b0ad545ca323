//! Differentiable-function contract, a central-difference oracle, and Adam.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A vector-valued function of one or more vector input slots with an
/// analytic Jacobian for each slot.
pub trait DiffFn {
    /// Lengths of the input slots.
    fn input_lens(&self) -> Vec<usize>;

    fn output_len(&self) -> usize;

    fn eval(&self, inputs: &[&[f64]]) -> Result<Vec<f64>>;

    /// Jacobian of the output with respect to input slot `slot`, shaped
    /// `(output_len, input_lens()[slot])`.
    fn jacobian(&self, slot: usize, inputs: &[&[f64]]) -> Result<Matrix>;
}

pub(crate) fn check_inputs(f: &dyn DiffFn, inputs: &[&[f64]]) -> Result<()> {
    let lens = f.input_lens();
    if lens.len() != inputs.len() {
        return Err(Error::dim("DiffFn inputs", lens.len(), inputs.len()));
    }
    for (want, got) in lens.iter().zip(inputs) {
        if *want != got.len() {
            return Err(Error::dim("DiffFn input slot", want, got.len()));
        }
    }
    Ok(())
}

type EvalFn<'a> = Box<dyn Fn(&[&[f64]]) -> Vec<f64> + Send + Sync + 'a>;
type JacFn<'a> = Box<dyn Fn(usize, &[&[f64]]) -> Matrix + Send + Sync + 'a>;

/// A [`DiffFn`] assembled from closures.
pub struct FnDiff<'a> {
    input_lens: Vec<usize>,
    output_len: usize,
    eval: EvalFn<'a>,
    jac: JacFn<'a>,
}

impl<'a> FnDiff<'a> {
    pub fn new(
        input_lens: Vec<usize>,
        output_len: usize,
        eval: impl Fn(&[&[f64]]) -> Vec<f64> + Send + Sync + 'a,
        jac: impl Fn(usize, &[&[f64]]) -> Matrix + Send + Sync + 'a,
    ) -> Self {
        Self {
            input_lens,
            output_len,
            eval: Box::new(eval),
            jac: Box::new(jac),
        }
    }

    /// `h -> F h + G x` (slots: state, input).
    pub fn linear_transition(f: Matrix, g: Matrix) -> FnDiff<'static> {
        let (dh, dx) = (f.cols(), g.cols());
        let (f2, g2) = (f.clone(), g.clone());
        FnDiff::new(
            vec![dh, dx],
            f.rows(),
            move |inp| {
                let fh = f.matvec(inp[0]).expect("checked dims");
                let gx = g.matvec(inp[1]).expect("checked dims");
                fh.iter().zip(&gx).map(|(a, b)| a + b).collect()
            },
            move |slot, _| if slot == 0 { f2.clone() } else { g2.clone() },
        )
    }

    /// `h -> H h` (single slot).
    pub fn linear_readout(h: Matrix) -> FnDiff<'static> {
        let dh = h.cols();
        let h2 = h.clone();
        FnDiff::new(
            vec![dh],
            h.rows(),
            move |inp| h.matvec(inp[0]).expect("checked dims"),
            move |_, _| h2.clone(),
        )
    }

    /// Element-wise `tanh` (single slot).
    pub fn tanh(n: usize) -> FnDiff<'static> {
        FnDiff::new(
            vec![n],
            n,
            |inp| inp[0].iter().map(|v| v.tanh()).collect(),
            |_, inp| {
                let d: Vec<f64> = inp[0].iter().map(|v| 1.0 - v.tanh().powi(2)).collect();
                Matrix::from_diagonal(&d)
            },
        )
    }
}

impl DiffFn for FnDiff<'_> {
    fn input_lens(&self) -> Vec<usize> {
        self.input_lens.clone()
    }

    fn output_len(&self) -> usize {
        self.output_len
    }

    fn eval(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        check_inputs(self, inputs)?;
        Ok((self.eval)(inputs))
    }

    fn jacobian(&self, slot: usize, inputs: &[&[f64]]) -> Result<Matrix> {
        check_inputs(self, inputs)?;
        if slot >= self.input_lens.len() {
            return Err(Error::dim("jacobian slot", self.input_lens.len(), slot));
        }
        Ok((self.jac)(slot, inputs))
    }
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference Jacobian of a single-argument closure.
pub fn fd_jacobian_fn(f: impl Fn(&[f64]) -> Result<Vec<f64>>, point: &[f64]) -> Result<Matrix> {
    let base = f(point)?;
    if let Some(r) = base.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("fd base evaluation, output {r}")));
    }
    let mut jac = Matrix::zeros(base.len(), point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let h = fd_step(point[i]);
        probe[i] = point[i] + h;
        let up = f(&probe)?;
        probe[i] = point[i] - h;
        let down = f(&probe)?;
        probe[i] = point[i];
        if up.len() != base.len() || down.len() != base.len() {
            return Err(Error::dim("fd_jacobian output", base.len(), up.len()));
        }
        for r in 0..base.len() {
            let d = (up[r] - down[r]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("fd probe of input {i}, output {r}")));
            }
            jac[(r, i)] = d;
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian of `f` with respect to input `slot` at `point`.
pub fn fd_jacobian(f: &dyn DiffFn, slot: usize, point: &[&[f64]]) -> Result<Matrix> {
    check_inputs(f, point)?;
    if slot >= point.len() {
        return Err(Error::dim("fd_jacobian slot", point.len(), slot));
    }
    fd_jacobian_fn(
        |x| {
            let mut args: Vec<&[f64]> = point.to_vec();
            args[slot] = x;
            f.eval(&args)
        },
        point[slot],
    )
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, point: &[f64]) -> Result<Vec<f64>> {
    let jac = fd_jacobian_fn(|x| f(x).map(|v| vec![v]), point)?;
    Ok(jac.into_vec())
}

/// Largest entry-wise relative deviation `|a - b| / max(|b|, floor)`.
pub fn max_rel_error(analytic: &Matrix, reference: &Matrix, floor: f64) -> f64 {
    if analytic.shape() != reference.shape() {
        return f64::INFINITY;
    }
    analytic
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim("adam_step", self.m.len(), grad.len()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters.
pub fn adam_step(state: &mut AdamState, params: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step(&mut out, grad)?;
    Ok(out)
}
