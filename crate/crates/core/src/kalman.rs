//! Linear Kalman filter for time-variant systems and the extended Kalman
//! filter for vector state-space models.
//!
//! The covariance update is always the Joseph form
//! `(I - K H) P (I - K H)^T + K R K^T`, and every covariance leaving this
//! module has been symmetrized.

use crate::diffable::DiffFn;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, Matrix};

/// State mean and error covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl Belief {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::dim(
                "Belief",
                format!("({0}, {0}) covariance", mean.len()),
                format!("{:?}", cov.shape()),
            ));
        }
        if mean.iter().any(|v| !v.is_finite()) || !cov.is_finite() {
            return Err(Error::NonFinite("belief".into()));
        }
        Ok(Self {
            mean,
            cov: cov.symmetrized(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Matrices of a linear system at one time step:
/// `h_t = F h_{t-1} + G x_{t-1} + eta`, `y_t = H h_t + nu`.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl SystemMatrices {
    pub fn validate(&self) -> Result<()> {
        let dh = self.f.rows();
        let check = |ok: bool, what: &'static str, m: &Matrix| {
            if ok {
                Ok(())
            } else {
                Err(Error::dim(what, "compatible with state dim", format!("{:?}", m.shape())))
            }
        };
        check(self.f.is_square(), "F", &self.f)?;
        check(self.g.rows() == dh, "G", &self.g)?;
        check(self.h.cols() == dh, "H", &self.h)?;
        check(self.q.shape() == (dh, dh), "Q", &self.q)?;
        check(self.r.shape() == (self.h.rows(), self.h.rows()), "R", &self.r)
    }
}

/// A possibly time-variant linear system.
pub trait LinearSystem {
    fn matrices(&self, t: usize) -> SystemMatrices;
}

#[derive(Clone, Debug)]
pub struct ConstantSystem(pub SystemMatrices);

impl LinearSystem for ConstantSystem {
    fn matrices(&self, _t: usize) -> SystemMatrices {
        self.0.clone()
    }
}

/// Time-variant system backed by a callback.
pub struct TimeVaryingSystem<F>(pub F);

impl<F: Fn(usize) -> SystemMatrices> LinearSystem for TimeVaryingSystem<F> {
    fn matrices(&self, t: usize) -> SystemMatrices {
        (self.0)(t)
    }
}

/// `F P F^T + Q`, symmetrized.
pub fn propagate_covariance(f: &Matrix, p: &Matrix, q: &Matrix) -> Result<Matrix> {
    let mut out = f.congruence(p)?.add(q)?;
    out.symmetrize();
    Ok(out)
}

/// Trace-minimizing gain `P H^T (H P H^T + R)^{-1}`, via a Cholesky solve.
pub fn kalman_gain(p_prior: &Matrix, h: &Matrix, r: &Matrix) -> Result<Matrix> {
    let hp = h.matmul(p_prior)?;
    let s = hp.matmul_t(h)?.add(r)?;
    // K^T = S^{-1} H P since S and P are symmetric.
    Ok(spd_solve(&s, &hp)?.transpose())
}

/// Joseph-form a posteriori covariance, symmetrized.
pub fn joseph_update(p_prior: &Matrix, k: &Matrix, h: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = p_prior.rows();
    let a = Matrix::identity(n).sub(&k.matmul(h)?)?;
    let mut out = a.congruence(p_prior)?.add(&k.congruence(r)?)?;
    out.symmetrize();
    Ok(out)
}

/// Result of a measurement update.
#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub belief: Belief,
    pub gain: Matrix,
    pub innovation: Vec<f64>,
}

/// Shared measurement-update algebra given the linearized readout.
pub(crate) fn update_with(
    prior: &Belief,
    h: &Matrix,
    r: &Matrix,
    y: &[f64],
    y_pred: &[f64],
) -> Result<UpdateOutcome> {
    if y.len() != y_pred.len() {
        return Err(Error::dim("measurement", y_pred.len(), y.len()));
    }
    let gain = kalman_gain(&prior.cov, h, r)?;
    let innovation: Vec<f64> = y.iter().zip(y_pred).map(|(a, b)| a - b).collect();
    let correction = gain.matvec(&innovation)?;
    let mean = prior.mean.iter().zip(&correction).map(|(m, c)| m + c).collect();
    let cov = joseph_update(&prior.cov, &gain, h, r)?;
    Ok(UpdateOutcome {
        belief: Belief { mean, cov },
        gain,
        innovation,
    })
}

pub fn kf_predict(belief: &Belief, sys: &dyn LinearSystem, x: &[f64], t: usize) -> Result<Belief> {
    let m = sys.matrices(t);
    m.validate()?;
    if belief.dim() != m.f.cols() {
        return Err(Error::dim("kf_predict state", m.f.cols(), belief.dim()));
    }
    let fh = m.f.matvec(&belief.mean)?;
    let gx = m.g.matvec(x)?;
    let mean = fh.iter().zip(&gx).map(|(a, b)| a + b).collect();
    let cov = propagate_covariance(&m.f, &belief.cov, &m.q)?;
    Ok(Belief { mean, cov })
}

pub fn kf_update(belief: &Belief, sys: &dyn LinearSystem, y: &[f64], t: usize) -> Result<UpdateOutcome> {
    let m = sys.matrices(t);
    m.validate()?;
    if belief.dim() != m.h.cols() {
        return Err(Error::dim("kf_update state", m.h.cols(), belief.dim()));
    }
    let y_pred = m.h.matvec(&belief.mean)?;
    update_with(belief, &m.h, &m.r, y, &y_pred)
}

/// One extended Kalman filter iteration.
#[derive(Clone, Debug)]
pub struct EkfOutcome {
    pub prior: Belief,
    pub posterior: Belief,
    pub y_pred: Vec<f64>,
    pub transition_jacobian: Matrix,
    pub readout_jacobian: Matrix,
    pub gain: Matrix,
}

/// Linearizes `f_st(h, x)` at the previous posterior and `f_ro(h)` at the
/// new prior, then applies the linear predict/update algebra.
pub fn ekf_step(
    belief: &Belief,
    f_st: &dyn DiffFn,
    f_ro: &dyn DiffFn,
    x: &[f64],
    y: &[f64],
    q: &Matrix,
    r: &Matrix,
) -> Result<EkfOutcome> {
    let args: [&[f64]; 2] = [&belief.mean, x];
    let f = f_st.jacobian(0, &args)?;
    let mean = f_st.eval(&args)?;
    let cov = propagate_covariance(&f, &belief.cov, q)?;
    let prior = Belief { mean, cov };
    let y_pred = f_ro.eval(&[&prior.mean])?;
    let h = f_ro.jacobian(0, &[&prior.mean])?;
    let upd = update_with(&prior, &h, r, y, &y_pred)?;
    Ok(EkfOutcome {
        prior,
        posterior: upd.belief,
        y_pred,
        transition_jacobian: f,
        readout_jacobian: h,
        gain: upd.gain,
    })
}
