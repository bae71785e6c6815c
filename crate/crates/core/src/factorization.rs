//! Risk-neutral and long-term factorizations of an affine pricing kernel.
//!
//! The risk-neutral factorization `S_t = exp(-int r ds) M0_t` exists for every
//! integrable affine kernel and is pure algebra. The long-term factorization
//! `S_t = M_inf_t / B_inf_t` exists when the Riccati flow `Psi(t)` converges
//! to a fixed point `v`; it is located by integrating the flow until it
//! settles and polishing the limit with Newton's method on the stationarity
//! equations. Only the root reached by the flow is accepted.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{AffineModel, ModelError, PricingKernel};
use crate::ode::StepControl;
use crate::riccati::{self, Halt, RiccatiError, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("no fixed point: long forward measure does not exist for this model ({0})")]
    Divergent(Divergence),
    #[error("Newton polish did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("polished root is {gap:e} away from the ODE limit")]
    RootMismatch { gap: f64 },
}

/// Risk-neutral factorization: short rate `r(x) = g + h^T x` and
/// market price of risk `sigma(x)^T u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskNeutralFactorization {
    pub g: f64,
    pub h: DVector<f64>,
    /// State dynamics under the risk-neutral measure.
    pub q_model: AffineModel,
    pub mpr_loading: DVector<f64>,
}

impl RiskNeutralFactorization {
    pub fn short_rate(&self, x: &DVector<f64>) -> f64 {
        self.g + self.h.dot(x)
    }
}

pub fn risk_neutral_factorize(
    model: &AffineModel,
    pk: &PricingKernel,
) -> Result<RiskNeutralFactorization, FactorError> {
    let (m, d) = (model.m(), model.dim());
    pk.check_dims(d)?;
    let u = &pk.u;
    let a = model.a();
    let beta = model.beta();

    let mut quad_j = 0.0;
    for k in m..d {
        for l in m..d {
            quad_j += u[k] * a[(k, l)] * u[l];
        }
    }
    let g = pk.gamma - 0.5 * quad_j + model.b().dot(u);

    let mut h = DVector::zeros(d);
    for i in 0..m {
        let quad = u.dot(&(model.alpha(i) * u));
        let lin: f64 = (0..d).map(|k| beta[(k, i)] * u[k]).sum();
        h[i] = pk.delta[i] - 0.5 * quad + lin;
    }
    for j in m..d {
        let lin: f64 = (m..d).map(|k| beta[(k, j)] * u[k]).sum();
        h[j] = pk.delta[j] + lin;
    }

    Ok(RiskNeutralFactorization {
        g,
        h,
        q_model: model.tilt(u)?,
        mpr_loading: u.clone(),
    })
}

/// Long-term factorization built on the Riccati fixed point `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermFactorization {
    pub v: DVector<f64>,
    /// Principal eigenvalue; also the asymptotic zero-coupon yield.
    pub lambda: f64,
    /// Coefficients of the eigenfunction `pi(x) = exp((u - v)^T x)`.
    pub eigen_coeffs: DVector<f64>,
    /// State dynamics under the long forward measure.
    pub l_model: AffineModel,
    pub longbond_vol_loading: DVector<f64>,
    pub mpr_inf_loading: DVector<f64>,
}

impl LongTermFactorization {
    pub fn eigenfunction(&self, x: &DVector<f64>) -> f64 {
        self.eigen_coeffs.dot(x).exp()
    }

    /// Long bond gross return `exp(lambda t) pi(x_t) / pi(x_0)`.
    pub fn long_bond(&self, t: f64, x0: &DVector<f64>, xt: &DVector<f64>) -> f64 {
        (self.lambda * t + self.eigen_coeffs.dot(&(xt - x0))).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub horizon_max: f64,
    /// `||Psi'||_inf` below which the flow counts as settled.
    pub settle_tol: f64,
    /// Time span over which the settle condition must hold without a break.
    pub window: f64,
    pub tol: Tolerances,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Largest allowed gap between the ODE limit and the polished root.
    pub limit_gap_tol: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            horizon_max: 5000.0,
            settle_tol: 1e-9,
            window: 10.0,
            tol: Tolerances::default(),
            newton_tol: 1e-12,
            newton_max_iter: 50,
            limit_gap_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceReason {
    /// The Riccati solution explodes in finite time.
    BlowUp,
    /// The flow neither settles nor explodes before `horizon_max`.
    NoSettling,
}

impl std::fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceReason::BlowUp => f.write_str("blow-up"),
            DivergenceReason::NoSettling => f.write_str("no-settling"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub reason: DivergenceReason,
    /// Time at which integration stopped.
    pub time: f64,
    /// Last `Psi` reached, when available.
    pub last_psi: Option<DVector<f64>>,
    pub last_psi_dot_norm: Option<f64>,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at t = {}", self.reason, self.time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointDiagnostics {
    pub horizon_used: f64,
    pub terminal_psi_dot_norm: f64,
    /// `Psi` at the end of the integration, before polishing.
    pub ode_limit: DVector<f64>,
    /// `||ode_limit - v||_inf`.
    pub limit_gap: f64,
    pub newton_iterations: usize,
    /// `||F(v)||_inf` of the stationarity equations at the returned root.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FixedPointOutcome {
    Converged {
        factorization: LongTermFactorization,
        diagnostics: FixedPointDiagnostics,
    },
    Divergent(Divergence),
}

impl FixedPointOutcome {
    pub fn converged(&self) -> Option<&LongTermFactorization> {
        match self {
            FixedPointOutcome::Converged { factorization, .. } => Some(factorization),
            FixedPointOutcome::Divergent(_) => None,
        }
    }
}

/// Stationarity residual of the Psi-flow: the Psi-part of the Riccati
/// right-hand side. Fixed points are the zeros of this map.
pub fn qve_residual(model: &AffineModel, pk: &PricingKernel, v: &DVector<f64>) -> DVector<f64> {
    riccati::rhs(model, pk, v).1
}

/// Jacobian of [`qve_residual`]: rows `i in I` are `-(alpha_i v)^T + beta_i^T`,
/// rows `j in J` carry `B_JJ^T` in the `J` columns.
pub fn qve_jacobian(model: &AffineModel, v: &DVector<f64>) -> DMatrix<f64> {
    let (m, d) = (model.m(), model.dim());
    let beta = model.beta();
    let mut jac = DMatrix::zeros(d, d);
    for i in 0..m {
        let av = model.alpha(i) * v;
        for k in 0..d {
            jac[(i, k)] = -av[k] + beta[(k, i)];
        }
    }
    for j in m..d {
        for k in m..d {
            jac[(j, k)] = beta[(k, j)];
        }
    }
    jac
}

/// Coordinates whose Psi-equation is identically zero; they keep their
/// initial value along the whole flow.
fn frozen_coordinates(model: &AffineModel, pk: &PricingKernel) -> Vec<bool> {
    let (m, d) = (model.m(), model.dim());
    let beta = model.beta();
    (0..d)
        .map(|i| {
            if pk.delta[i] != 0.0 {
                return false;
            }
            if i < m {
                model.alpha(i).iter().all(|&x| x == 0.0) && (0..d).all(|k| beta[(k, i)] == 0.0)
            } else {
                (m..d).all(|k| beta[(k, i)] == 0.0)
            }
        })
        .collect()
}

/// Newton iteration on the stationarity equations, moving only coordinates
/// that are not frozen by the flow. Rank-deficient Jacobians are handled
/// with the minimum-norm step.
fn newton_polish(
    model: &AffineModel,
    pk: &PricingKernel,
    start: &DVector<f64>,
    opts: &FixedPointOptions,
) -> Result<(DVector<f64>, usize, f64), FactorError> {
    let frozen = frozen_coordinates(model, pk);
    let free: Vec<usize> = (0..model.dim()).filter(|&i| !frozen[i]).collect();
    let mut v = start.clone();
    let mut residual = qve_residual(model, pk, &v).amax();
    if free.is_empty() || residual < opts.newton_tol {
        return Ok((v, 0, residual));
    }
    let k = free.len();
    for iter in 1..=opts.newton_max_iter {
        let f = qve_residual(model, pk, &v);
        let jac = qve_jacobian(model, &v);
        let jf = DMatrix::from_fn(k, k, |r, c| jac[(free[r], free[c])]);
        let rhs = DVector::from_fn(k, |r, _| -f[free[r]]);
        let svd = jf.svd(true, true);
        let eps = 1e-13 * svd.singular_values.max();
        let step = svd
            .solve(&rhs, eps)
            .map_err(|_| FactorError::NewtonFailed {
                iterations: iter,
                residual,
            })?;
        let mut step_norm: f64 = 0.0;
        for (r, &idx) in free.iter().enumerate() {
            v[idx] += step[r];
            step_norm = step_norm.max(step[r].abs());
        }
        let prev = residual;
        residual = qve_residual(model, pk, &v).amax();
        if residual < opts.newton_tol {
            return Ok((v, iter, residual));
        }
        // Stagnation at round-off level: accept if the residual is still tiny.
        if step_norm <= 4.0 * f64::EPSILON * v.amax().max(1.0) && residual >= 0.5 * prev {
            if residual < 1e-10 {
                return Ok((v, iter, residual));
            }
            break;
        }
    }
    Err(FactorError::NewtonFailed {
        iterations: opts.newton_max_iter,
        residual,
    })
}

/// Locates the limit of the Riccati flow `Psi(t)` as `t -> infinity`.
///
/// Integrates until `||Psi'||_inf < settle_tol` holds over a trailing window
/// of length `window`, polishes the endpoint with Newton's method and checks
/// the polished root is within `limit_gap_tol` of where the flow ended up.
pub fn find_fixed_point(
    model: &AffineModel,
    pk: &PricingKernel,
    opts: &FixedPointOptions,
) -> Result<FixedPointOutcome, FactorError> {
    pk.check_dims(model.dim())?;
    let mut last_unsettled = 0.0;
    let mut settled = false;
    let settle_tol = opts.settle_tol;
    let window = opts.window;
    let result = riccati::integrate_observed(
        model,
        pk,
        0.0,
        &pk.u,
        opts.horizon_max,
        opts.tol,
        window / 4.0,
        |t, _y, dy| {
            let norm = dy[1..].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if norm >= settle_tol {
                last_unsettled = t;
            } else if t - last_unsettled >= window {
                settled = true;
                return StepControl::Stop;
            }
            StepControl::Continue
        },
    );
    let (traj, halt) = match result {
        Ok(ok) => ok,
        Err(RiccatiError::FiniteExplosion { time }) => {
            return Ok(FixedPointOutcome::Divergent(Divergence {
                reason: DivergenceReason::BlowUp,
                time,
                last_psi: None,
                last_psi_dot_norm: None,
            }));
        }
        Err(e) => return Err(e.into()),
    };

    let end = traj.len() - 1;
    let last_psi = DVector::from_column_slice(&traj.state(end)[1..]);
    let last_psi_dot_norm = traj.deriv(end)[1..]
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    match halt {
        Halt::Threshold { time, explosive } => {
            return Ok(FixedPointOutcome::Divergent(Divergence {
                reason: if explosive {
                    DivergenceReason::BlowUp
                } else {
                    DivergenceReason::NoSettling
                },
                time,
                last_psi: Some(last_psi),
                last_psi_dot_norm: Some(last_psi_dot_norm),
            }));
        }
        _ if !settled => {
            return Ok(FixedPointOutcome::Divergent(Divergence {
                reason: DivergenceReason::NoSettling,
                time: traj.t_end(),
                last_psi: Some(last_psi),
                last_psi_dot_norm: Some(last_psi_dot_norm),
            }));
        }
        _ => {}
    }

    let (v, newton_iterations, residual) = newton_polish(model, pk, &last_psi, opts)?;
    let limit_gap = (&last_psi - &v).amax();
    if !(limit_gap < opts.limit_gap_tol) {
        return Err(FactorError::RootMismatch { gap: limit_gap });
    }
    let factorization = assemble(model, pk, v)?;
    Ok(FixedPointOutcome::Converged {
        factorization,
        diagnostics: FixedPointDiagnostics {
            horizon_used: traj.t_end(),
            terminal_psi_dot_norm: last_psi_dot_norm,
            ode_limit: last_psi,
            limit_gap,
            newton_iterations,
            residual,
        },
    })
}

fn assemble(
    model: &AffineModel,
    pk: &PricingKernel,
    v: DVector<f64>,
) -> Result<LongTermFactorization, FactorError> {
    let (m, d) = (model.m(), model.dim());
    let a = model.a();
    let mut quad_j = 0.0;
    for k in m..d {
        for l in m..d {
            quad_j += v[k] * a[(k, l)] * v[l];
        }
    }
    let lambda = pk.gamma - 0.5 * quad_j + model.b().dot(&v);
    let eigen_coeffs = &pk.u - &v;
    Ok(LongTermFactorization {
        l_model: model.tilt(&v)?,
        lambda,
        longbond_vol_loading: eigen_coeffs.clone(),
        eigen_coeffs,
        mpr_inf_loading: v.clone(),
        v,
    })
}

/// Long-term factorization, or [`FactorError::Divergent`] when the Riccati
/// flow has no limit.
pub fn long_term_factorize(
    model: &AffineModel,
    pk: &PricingKernel,
    opts: &FixedPointOptions,
) -> Result<LongTermFactorization, FactorError> {
    match find_fixed_point(model, pk, opts)? {
        FixedPointOutcome::Converged { factorization, .. } => Ok(factorization),
        FixedPointOutcome::Divergent(div) => Err(FactorError::Divergent(div)),
    }
}

/// `|P_t pi(x) e^{lambda t} / pi(x) - 1|`, with the pricing operator applied
/// to the eigenfunction evaluated by integrating the Riccati system from
/// `Psi(0) = v`.
pub fn eigen_check(
    model: &AffineModel,
    pk: &PricingKernel,
    ltf: &LongTermFactorization,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64, FactorError> {
    let sol = riccati::integrate_from(model, pk, 0.0, &ltf.v, t, Tolerances::default())?;
    let (phi, psi) = sol.eval(t)?;
    let log_ratio = ltf.lambda * t - phi - (psi - &ltf.v).dot(x);
    Ok(log_ratio.exp_m1().abs())
}

/// Volatility loadings at state `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVolatilities {
    /// Market price of risk `sigma(x)^T u`.
    pub mpr: DVector<f64>,
    /// Long bond volatility `sigma(x)^T (u - v)`.
    pub sigma_inf: DVector<f64>,
    /// Volatility of the martingale component, `sigma(x)^T v`.
    pub mpr_inf: DVector<f64>,
}

pub fn state_volatilities(
    model: &AffineModel,
    pk: &PricingKernel,
    ltf: &LongTermFactorization,
    x: &DVector<f64>,
) -> Result<StateVolatilities, FactorError> {
    let (sigma, _) = model.diffusion(x)?;
    let st = sigma.transpose();
    Ok(StateVolatilities {
        mpr: &st * &pk.u,
        sigma_inf: &st * &ltf.longbond_vol_loading,
        mpr_inf: &st * &ltf.mpr_inf_loading,
    })
}
