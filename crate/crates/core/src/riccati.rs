//! Riccati system for exponential-affine bond prices.
//!
//! `(Phi, Psi)` solve
//!
//! ```text
//! Phi'   = -1/2 Psi_J^T a_JJ Psi_J + b^T Psi + gamma,         Phi(0) = 0
//! Psi_i' = -1/2 Psi^T alpha_i Psi + beta_i^T Psi + delta_i,   i in I
//! Psi_J' = B_JJ^T Psi_J + delta_J,                            Psi(0) = u
//! ```
//!
//! and the time-`t` zero-coupon bond price is
//! `P(t, x) = exp(-Phi(t) - (Psi(t) - u)^T x)`.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{AffineModel, ModelError, PricingKernel};
use crate::ode::{self, OdeError, OdeOptions, StepControl, Trajectory};

/// `||Psi||_inf` above which the solution is treated as diverged.
pub const BLOW_UP_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The quadratic terms drive `Psi` to infinity in finite time, so the
    /// kernel is not integrable beyond `time`.
    #[error("Riccati solution explodes at t = {time}")]
    FiniteExplosion { time: f64 },
    /// `Psi` exceeded the blow-up threshold while the linear part of the
    /// vector field dominates: unbounded growth without a finite-time
    /// singularity.
    #[error("Riccati solution grows without bound (threshold crossed at t = {time})")]
    Unbounded { time: f64 },
    #[error("integration horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("time {t} is outside the solved range [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("maturity must be positive, got {0}")]
    NonPositiveMaturity(f64),
    #[error("bond price exponent {exponent} is not representable")]
    PriceOverflow { exponent: f64 },
    #[error("integrator failed: {0}")]
    Integrator(OdeError),
}

/// Absolute and relative local error tolerances for the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-10,
        }
    }
}

/// Evaluates the right-hand side of the Riccati system at `psi`.
///
/// Panics if dimensions disagree; callers validate with
/// [`PricingKernel::check_dims`].
pub fn rhs(model: &AffineModel, pk: &PricingKernel, psi: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut psi_dot = DVector::zeros(model.dim());
    let phi_dot = rhs_into(model, pk, psi.as_slice(), psi_dot.as_mut_slice());
    (phi_dot, psi_dot)
}

fn rhs_into(model: &AffineModel, pk: &PricingKernel, psi: &[f64], out: &mut [f64]) -> f64 {
    let (m, d) = (model.m(), model.dim());
    let a = model.a();
    let b = model.b();
    let beta = model.beta();

    let mut quad_j = 0.0;
    for k in m..d {
        for l in m..d {
            quad_j += psi[k] * a[(k, l)] * psi[l];
        }
    }
    let mut lin = 0.0;
    for k in 0..d {
        lin += b[k] * psi[k];
    }
    let phi_dot = -0.5 * quad_j + lin + pk.gamma;

    for i in 0..m {
        let al = model.alpha(i);
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += psi[k] * al[(k, l)] * psi[l];
            }
        }
        // beta_i is column i of B
        let mut l = 0.0;
        for k in 0..d {
            l += beta[(k, i)] * psi[k];
        }
        out[i] = -0.5 * q + l + pk.delta[i];
    }
    for j in m..d {
        // (B_JJ^T Psi_J)_j = sum_{k in J} B[k][j] Psi_k
        let mut l = 0.0;
        for k in m..d {
            l += beta[(k, j)] * psi[k];
        }
        out[j] = l + pk.delta[j];
    }
    phi_dot
}

/// Magnitudes of the quadratic and linear parts of the Psi vector field.
fn quadratic_vs_linear(model: &AffineModel, psi: &[f64]) -> (f64, f64) {
    let (m, d) = (model.m(), model.dim());
    let beta = model.beta();
    let mut quad: f64 = 0.0;
    let mut lin: f64 = 0.0;
    for i in 0..m {
        let al = model.alpha(i);
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += psi[k] * al[(k, l)] * psi[l];
            }
        }
        quad = quad.max((0.5 * q).abs());
        let l: f64 = (0..d).map(|k| beta[(k, i)] * psi[k]).sum();
        lin = lin.max(l.abs());
    }
    for j in m..d {
        let l: f64 = (m..d).map(|k| beta[(k, j)] * psi[k]).sum();
        lin = lin.max(l.abs());
    }
    (quad, lin)
}

/// Dense solution of the Riccati system on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    traj: Trajectory,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn dim(&self) -> usize {
        self.traj.dim() - 1
    }

    /// Accepted integrator steps; the first point is `t = 0`.
    pub fn grid(&self) -> &[f64] {
        self.traj.times()
    }

    /// `Phi` at grid point `k`.
    pub fn phi_node(&self, k: usize) -> f64 {
        self.traj.state(k)[0]
    }

    pub fn psi_node(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.traj.state(k)[1..])
    }

    /// Stored `(Phi', Psi')` at grid point `k`.
    pub fn derivative_node(&self, k: usize) -> (f64, DVector<f64>) {
        let dy = self.traj.deriv(k);
        (dy[0], DVector::from_column_slice(&dy[1..]))
    }

    fn check_time(&self, t: f64) -> Result<(), RiccatiError> {
        let horizon = self.horizon();
        let slack = 1e-12 * horizon.max(1.0);
        if !(t >= -slack && t <= horizon + slack) {
            return Err(RiccatiError::OutOfRange { t, horizon });
        }
        Ok(())
    }

    /// `(Phi(t), Psi(t))` from the continuous extension.
    pub fn eval(&self, t: f64) -> Result<(f64, DVector<f64>), RiccatiError> {
        self.check_time(t)?;
        let mut y = vec![0.0; self.traj.dim()];
        self.traj.eval(t, &mut y);
        Ok((y[0], DVector::from_column_slice(&y[1..])))
    }

    pub fn phi(&self, t: f64) -> Result<f64, RiccatiError> {
        Ok(self.eval(t)?.0)
    }

    pub fn psi(&self, t: f64) -> Result<DVector<f64>, RiccatiError> {
        Ok(self.eval(t)?.1)
    }
}

fn kernel_ok(model: &AffineModel, pk: &PricingKernel) -> Result<(), RiccatiError> {
    pk.check_dims(model.dim())?;
    Ok(())
}

/// Why an observed integration stopped early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Halt {
    None,
    Threshold { time: f64, explosive: bool },
    Observer,
}

/// Integrates from an arbitrary initial condition with a caller-supplied
/// observer. Crossing [`BLOW_UP_THRESHOLD`] always halts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_observed<O>(
    model: &AffineModel,
    pk: &PricingKernel,
    phi0: f64,
    psi0: &DVector<f64>,
    horizon: f64,
    tol: Tolerances,
    h_max: f64,
    mut observer: O,
) -> Result<(Trajectory, Halt), RiccatiError>
where
    O: FnMut(f64, &[f64], &[f64]) -> StepControl,
{
    kernel_ok(model, pk)?;
    if psi0.len() != model.dim() {
        return Err(ModelError::Dimension {
            what: "initial Psi".into(),
            expected: model.dim().to_string(),
            got: psi0.len().to_string(),
        }
        .into());
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(RiccatiError::InvalidHorizon(horizon));
    }
    let mut y0 = Vec::with_capacity(model.dim() + 1);
    y0.push(phi0);
    y0.extend_from_slice(psi0.as_slice());

    let f = |y: &[f64], dy: &mut [f64]| {
        let (head, tail) = dy.split_at_mut(1);
        head[0] = rhs_into(model, pk, &y[1..], tail);
    };
    let opts = OdeOptions {
        abs_tol: tol.abs,
        rel_tol: tol.rel,
        h_max,
        ..OdeOptions::default()
    };
    let mut halt = Halt::None;
    let result = ode::integrate(f, &y0, horizon, &opts, |t, y, dy| {
        let psi = &y[1..];
        if psi.iter().any(|v| v.abs() > BLOW_UP_THRESHOLD) {
            let (quad, lin) = quadratic_vs_linear(model, psi);
            halt = Halt::Threshold {
                time: t,
                explosive: quad > lin,
            };
            return StepControl::Stop;
        }
        match observer(t, y, dy) {
            StepControl::Stop => {
                halt = Halt::Observer;
                StepControl::Stop
            }
            StepControl::Continue => StepControl::Continue,
        }
    });
    match result {
        Ok(traj) => Ok((traj, halt)),
        Err(OdeError::StepUnderflow { t }) | Err(OdeError::NonFinite { t }) => {
            Err(RiccatiError::FiniteExplosion { time: t })
        }
        Err(e) => Err(RiccatiError::Integrator(e)),
    }
}

fn finish(traj: Trajectory, halt: Halt) -> Result<RiccatiSolution, RiccatiError> {
    match halt {
        Halt::Threshold { time, explosive: true } => Err(RiccatiError::FiniteExplosion { time }),
        Halt::Threshold { time, explosive: false } => Err(RiccatiError::Unbounded { time }),
        Halt::None | Halt::Observer => Ok(RiccatiSolution { traj }),
    }
}

/// Solves the Riccati system on `[0, horizon]` from `Phi(0) = 0`, `Psi(0) = u`.
pub fn integrate(
    model: &AffineModel,
    pk: &PricingKernel,
    horizon: f64,
    tol: Tolerances,
) -> Result<RiccatiSolution, RiccatiError> {
    integrate_from(model, pk, 0.0, &pk.u, horizon, tol)
}

/// Solves the Riccati system from an arbitrary initial condition.
///
/// With `Psi(0) = w` the solution prices the payoff `exp((u - w)^T X_t)`:
/// `E_x[S_t exp((u - w)^T X_t)] = exp(-Phi(t) - (Psi(t) - u)^T x)`.
pub fn integrate_from(
    model: &AffineModel,
    pk: &PricingKernel,
    phi0: f64,
    psi0: &DVector<f64>,
    horizon: f64,
    tol: Tolerances,
) -> Result<RiccatiSolution, RiccatiError> {
    let (traj, halt) = integrate_observed(
        model,
        pk,
        phi0,
        psi0,
        horizon,
        tol,
        f64::INFINITY,
        |_, _, _| StepControl::Continue,
    )?;
    finish(traj, halt)
}

/// `P(t, x) = exp(-Phi(t) - (Psi(t) - u)^T x)`.
pub fn bond_price(
    sol: &RiccatiSolution,
    pk: &PricingKernel,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64, RiccatiError> {
    let (phi, psi) = sol.eval(t)?;
    pk.check_dims(psi.len())?;
    if x.len() != psi.len() {
        return Err(ModelError::Dimension {
            what: "state".into(),
            expected: psi.len().to_string(),
            got: x.len().to_string(),
        }
        .into());
    }
    let exponent = -phi - (psi - &pk.u).dot(x);
    let price = exponent.exp();
    if !(price.is_finite() && price > 0.0) {
        return Err(RiccatiError::PriceOverflow { exponent });
    }
    Ok(price)
}

/// Gross return over `[0, t]` on the zero-coupon bond maturing at
/// `t + remaining`: `P(remaining, x_t) / P(t + remaining, x_0)`.
pub fn holding_return(
    sol: &RiccatiSolution,
    pk: &PricingKernel,
    t: f64,
    remaining: f64,
    x0: &DVector<f64>,
    xt: &DVector<f64>,
) -> Result<f64, RiccatiError> {
    if !(remaining > 0.0) {
        return Err(RiccatiError::NonPositiveMaturity(remaining));
    }
    for x in [x0, xt] {
        if x.len() != sol.dim() {
            return Err(ModelError::Dimension {
                what: "state".into(),
                expected: sol.dim().to_string(),
                got: x.len().to_string(),
            }
            .into());
        }
    }
    let (phi_end, psi_end) = sol.eval(remaining)?;
    let (phi_start, psi_start) = sol.eval(t + remaining)?;
    let log_ret = -phi_end - (psi_end - &pk.u).dot(xt) + phi_start + (psi_start - &pk.u).dot(x0);
    Ok(log_ret.exp())
}

/// One point of a zero-coupon yield curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldPoint {
    pub maturity: f64,
    pub price: f64,
    pub yield_: f64,
}

/// Zero-coupon yields `-ln P(t, x) / t` at the requested maturities.
pub fn yield_curve(
    sol: &RiccatiSolution,
    pk: &PricingKernel,
    x: &DVector<f64>,
    maturities: &[f64],
) -> Result<Vec<YieldPoint>, RiccatiError> {
    maturities
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(RiccatiError::NonPositiveMaturity(t));
            }
            let price = bond_price(sol, pk, t, x)?;
            Ok(YieldPoint {
                maturity: t,
                price,
                yield_: -price.ln() / t,
            })
        })
        .collect()
}
