//! Closed-form solutions for the standard one- and two-factor examples and
//! the three-factor long-run risks model.
//!
//! Everything here is written from explicit formulas and never calls the
//! general Riccati or fixed-point machinery, so it can be used to check it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{AffineModel, PricingKernel, TimeUnit, VolStructure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("closed form not available: {0}")]
    Unsupported(String),
}

fn scalar(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn mat1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

/// Square-root short-rate model `dX = (a - kappa_p X) dt + sigma sqrt(X) dW`
/// with kernel loadings `(gamma, u, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub a: f64,
    pub kappa_p: f64,
    pub sigma: f64,
    pub u: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl CirParams {
    /// Kernel chosen so that the short rate equals the state:
    /// `gamma = -a u`, `delta = 1 + u kappa_p + u^2 sigma^2 / 2`.
    pub fn new(a: f64, kappa_p: f64, sigma: f64, u: f64) -> Self {
        Self {
            a,
            kappa_p,
            sigma,
            u,
            gamma: -a * u,
            delta: 1.0 + u * kappa_p + 0.5 * u * u * sigma * sigma,
        }
    }

    pub fn with_kernel(mut self, gamma: f64, delta: f64) -> Self {
        self.gamma = gamma;
        self.delta = delta;
        self
    }

    pub fn model(&self) -> AffineModel {
        AffineModel::from_volatility(
            1,
            0,
            scalar(self.a),
            mat1(-self.kappa_p),
            VolStructure::new(mat1(self.sigma), DVector::zeros(1), DMatrix::identity(1, 1)),
            TimeUnit::Years,
        )
        .expect("scalar CIR dimensions are consistent")
    }

    pub fn kernel(&self) -> PricingKernel {
        PricingKernel::new(self.gamma, scalar(self.u), scalar(self.delta))
    }

    /// The two choices of `u` for which the fixed point is zero, when they exist.
    pub fn recovery_loadings(kappa_p: f64, sigma: f64) -> Option<(f64, f64)> {
        let disc = kappa_p * kappa_p - 2.0 * sigma * sigma;
        if disc < 0.0 || kappa_p <= 0.0 {
            return None;
        }
        let s2 = sigma * sigma;
        Some(((-kappa_p - disc.sqrt()) / s2, (-kappa_p + disc.sqrt()) / s2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirClosedForm {
    pub params: CirParams,
    pub v: f64,
    pub lambda: f64,
    /// Mean reversion under the risk-neutral measure, `kappa_p + sigma^2 u`.
    pub kappa_q: f64,
    /// Mean reversion under the long forward measure.
    pub kappa_l: f64,
}

pub fn cir_closed_form(p: CirParams) -> Result<CirClosedForm, OracleError> {
    if !(p.sigma > 0.0) {
        return Err(OracleError::InvalidParams(format!("sigma must be positive, got {}", p.sigma)));
    }
    if !(p.a >= 0.0) {
        return Err(OracleError::InvalidParams(format!("a must be non-negative, got {}", p.a)));
    }
    let s2 = p.sigma * p.sigma;
    let disc = p.kappa_p * p.kappa_p + 2.0 * s2 * p.delta;
    if !(disc > 0.0) {
        return Err(OracleError::Unsupported(format!(
            "kappa_p^2 + 2 sigma^2 delta = {disc} is not positive"
        )));
    }
    let kappa_l = disc.sqrt();
    let v = (kappa_l - p.kappa_p) / s2;
    // The flow from u reaches v only if u lies above the lower root v - 2 kappa_l / sigma^2.
    if p.u - v <= -2.0 * kappa_l / s2 {
        return Err(OracleError::Unsupported(format!(
            "u = {} is below the lower stationary point; the solution explodes",
            p.u
        )));
    }
    Ok(CirClosedForm {
        params: p,
        v,
        lambda: p.gamma + p.a * v,
        kappa_q: p.kappa_p + s2 * p.u,
        kappa_l,
    })
}

impl CirClosedForm {
    fn decay_parts(&self, t: f64) -> (f64, f64, f64) {
        let s2 = self.params.sigma * self.params.sigma;
        let y0 = self.params.u - self.v;
        let scale = 2.0 * self.kappa_l / s2;
        (y0, scale, -(-self.kappa_l * t).exp_m1())
    }

    pub fn psi(&self, t: f64) -> f64 {
        let (y0, scale, one_minus_e) = self.decay_parts(t);
        let e = 1.0 - one_minus_e;
        self.v + scale * y0 * e / (scale + y0 * one_minus_e)
    }

    pub fn phi(&self, t: f64) -> f64 {
        let p = &self.params;
        let (y0, scale, one_minus_e) = self.decay_parts(t);
        let s2 = p.sigma * p.sigma;
        p.gamma * t + p.a * self.v * t + 2.0 * p.a / s2 * (y0 * one_minus_e / scale).ln_1p()
    }

    pub fn bond_price(&self, t: f64, x: f64) -> f64 {
        (-self.phi(t) - (self.psi(t) - self.params.u) * x).exp()
    }
}

/// Textbook CIR zero-coupon price for `dr = (a - kappa r) dt + sigma sqrt(r) dW`
/// under the pricing measure: `A(t) exp(-B(t) r)`.
pub fn cir_classic_bond(a: f64, kappa: f64, sigma: f64, t: f64, r: f64) -> f64 {
    let h = (kappa * kappa + 2.0 * sigma * sigma).sqrt();
    let em1 = (h * t).exp_m1();
    let denom = 2.0 * h + (kappa + h) * em1;
    let b = 2.0 * em1 / denom;
    let log_a = 2.0 * a / (sigma * sigma) * ((2.0 * h).ln() + 0.5 * (kappa + h) * t - denom.ln());
    (log_a - b * r).exp()
}

/// Gaussian short-rate model `dX = kappa (theta_p - X) dt + sigma dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VasicekParams {
    pub kappa: f64,
    pub theta_p: f64,
    pub sigma: f64,
    pub u: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl VasicekParams {
    /// Kernel chosen so that the short rate equals the state:
    /// `gamma = -u kappa theta_p + u^2 sigma^2 / 2`, `delta = 1 + u kappa`.
    pub fn new(kappa: f64, theta_p: f64, sigma: f64, u: f64) -> Self {
        Self {
            kappa,
            theta_p,
            sigma,
            u,
            gamma: -u * kappa * theta_p + 0.5 * u * u * sigma * sigma,
            delta: 1.0 + u * kappa,
        }
    }

    pub fn model(&self) -> AffineModel {
        gaussian_model(self.kappa, self.theta_p, self.sigma)
    }

    pub fn kernel(&self) -> PricingKernel {
        PricingKernel::new(self.gamma, scalar(self.u), scalar(self.delta))
    }
}

fn gaussian_model(kappa: f64, theta: f64, sigma: f64) -> AffineModel {
    AffineModel::from_volatility(
        0,
        1,
        scalar(kappa * theta),
        mat1(-kappa),
        VolStructure::new(mat1(sigma), scalar(1.0), DMatrix::zeros(1, 1)),
        TimeUnit::Years,
    )
    .expect("scalar Gaussian dimensions are consistent")
}

/// Gaussian model with `kappa < 0`; the short rate is the state.
pub fn gaussian_nonreverting(kappa: f64, theta: f64, sigma: f64) -> (AffineModel, PricingKernel) {
    (gaussian_model(kappa, theta, sigma), PricingKernel::new(0.0, scalar(0.0), scalar(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VasicekClosedForm {
    pub params: VasicekParams,
    pub v: f64,
    pub lambda: f64,
    pub theta_q: f64,
    pub theta_l: f64,
}

pub fn vasicek_closed_form(p: VasicekParams) -> Result<VasicekClosedForm, OracleError> {
    if !(p.kappa > 0.0) {
        return Err(OracleError::InvalidParams(format!("kappa must be positive, got {}", p.kappa)));
    }
    if !(p.sigma > 0.0) {
        return Err(OracleError::InvalidParams(format!("sigma must be positive, got {}", p.sigma)));
    }
    let v = p.delta / p.kappa;
    let s2 = p.sigma * p.sigma;
    let theta_q = p.theta_p - s2 * p.u / p.kappa;
    Ok(VasicekClosedForm {
        params: p,
        v,
        lambda: p.gamma - 0.5 * s2 * v * v + p.kappa * p.theta_p * v,
        theta_q,
        theta_l: theta_q - s2 / (p.kappa * p.kappa),
    })
}

impl VasicekClosedForm {
    pub fn psi(&self, t: f64) -> f64 {
        (self.params.u - self.v) * (-self.params.kappa * t).exp() + self.v
    }

    pub fn phi(&self, t: f64) -> f64 {
        let p = &self.params;
        let k = p.kappa;
        let y0 = p.u - self.v;
        let one_minus_e = -(-k * t).exp_m1();
        let one_minus_e2 = -(-2.0 * k * t).exp_m1();
        let int_psi = self.v * t + y0 * one_minus_e / k;
        let int_psi2 =
            self.v * self.v * t + 2.0 * self.v * y0 * one_minus_e / k + y0 * y0 * one_minus_e2 / (2.0 * k);
        p.gamma * t + k * p.theta_p * int_psi - 0.5 * p.sigma * p.sigma * int_psi2
    }

    pub fn bond_price(&self, t: f64, x: f64) -> f64 {
        (-self.phi(t) - (self.psi(t) - self.params.u) * x).exp()
    }
}

/// `B(t) = (1 - e^{-kappa t}) / kappa`, the state loading of the Gaussian bond price.
pub fn ou_bond_b(kappa: f64, t: f64) -> f64 {
    -(-kappa * t).exp_m1() / kappa
}

/// Textbook Gaussian zero-coupon price `A(t) exp(-B(t) r)` for
/// `dr = kappa (theta - r) dt + sigma dW` under the pricing measure.
pub fn vasicek_classic_bond(kappa: f64, theta: f64, sigma: f64, t: f64, r: f64) -> f64 {
    let b = ou_bond_b(kappa, t);
    let s2 = sigma * sigma;
    let log_a = (theta - s2 / (2.0 * kappa * kappa)) * (b - t) - s2 * b * b / (4.0 * kappa);
    (log_a - b * r).exp()
}

/// Consumption model with a square-root volatility factor and a Gaussian
/// growth-rate factor, priced by power utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreedenParams {
    pub kappa_v: f64,
    pub theta_v: f64,
    pub sigma_v: f64,
    pub kappa_g: f64,
    pub theta_g: f64,
    pub sigma_g: f64,
    pub sigma_c: f64,
    pub risk_aversion: f64,
    pub discount_rate: f64,
}

impl BreedenParams {
    pub fn model(&self) -> AffineModel {
        let b = DVector::from_vec(vec![self.kappa_v * self.theta_v, self.kappa_g * self.theta_g]);
        let beta = DMatrix::from_diagonal(&DVector::from_vec(vec![-self.kappa_v, -self.kappa_g]));
        let rho = DMatrix::from_diagonal(&DVector::from_vec(vec![self.sigma_v, self.sigma_g]));
        let s_const = DVector::from_vec(vec![0.0, 1.0]);
        let s_slope = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        AffineModel::from_volatility(1, 1, b, beta, VolStructure::new(rho, s_const, s_slope), TimeUnit::Years)
            .expect("two-factor dimensions are consistent")
    }

    pub fn kernel(&self) -> PricingKernel {
        let ra = self.risk_aversion;
        let gamma = self.discount_rate
            - ra * self.kappa_v * self.theta_v / self.sigma_v
            - ra * self.sigma_c * self.kappa_g * self.theta_g / self.sigma_g;
        let u = DVector::from_vec(vec![ra / self.sigma_v, ra * self.sigma_c / self.sigma_g]);
        let delta = DVector::from_vec(vec![
            ra * self.kappa_v / self.sigma_v,
            ra + ra * self.sigma_c * self.kappa_g / self.sigma_g,
        ]);
        PricingKernel::new(gamma, u, delta)
    }

    fn vol_discriminant(&self) -> f64 {
        self.kappa_v * self.kappa_v + 2.0 * self.risk_aversion * self.kappa_v * self.sigma_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreedenClosedForm {
    pub v1: f64,
    pub v2: f64,
    pub lambda: f64,
    /// Mean reversion of the volatility factor under the long forward measure.
    pub kappa_v_l: f64,
    /// Long-run level of the growth factor under the long forward measure.
    pub theta_g_l: f64,
}

pub fn breeden_closed_form(p: &BreedenParams) -> Result<BreedenClosedForm, OracleError> {
    if !(p.kappa_g > 0.0) {
        return Err(OracleError::Unsupported(format!(
            "growth factor is not mean-reverting (kappa_g = {})",
            p.kappa_g
        )));
    }
    if !(p.sigma_g > 0.0) || p.sigma_v == 0.0 {
        return Err(OracleError::InvalidParams("volatility loadings must be nonzero".into()));
    }
    let disc = p.vol_discriminant();
    if !(disc >= 0.0) {
        return Err(OracleError::Unsupported(format!(
            "kappa_v^2 + 2 a kappa_v sigma_v = {disc} is negative"
        )));
    }
    let root = disc.sqrt();
    let ra = p.risk_aversion;
    if !(p.kappa_v + root + ra * p.sigma_v > 0.0) {
        return Err(OracleError::Unsupported(
            "kappa_v + sqrt(kappa_v^2 + 2 a kappa_v sigma_v) + a sigma_v is not positive".into(),
        ));
    }
    let v1 = (root - p.kappa_v) / (p.sigma_v * p.sigma_v);
    let v2 = ra * (1.0 / p.kappa_g + p.sigma_c / p.sigma_g);
    let gamma = p.discount_rate
        - ra * p.kappa_v * p.theta_v / p.sigma_v
        - ra * p.sigma_c * p.kappa_g * p.theta_g / p.sigma_g;
    let lambda = gamma - 0.5 * p.sigma_g * p.sigma_g * v2 * v2
        + p.kappa_v * p.theta_v * v1
        + p.kappa_g * p.theta_g * v2;
    Ok(BreedenClosedForm {
        v1,
        v2,
        lambda,
        kappa_v_l: root,
        theta_g_l: p.theta_g
            - ra * p.sigma_g * p.sigma_g / (p.kappa_g * p.kappa_g)
            - ra * p.sigma_c * p.sigma_g / p.kappa_g,
    })
}

/// Primitive parameters of the long-run risks economy with recursive
/// preferences and unit elasticity of substitution (monthly frequency).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BhsCalibration {
    pub kappa1: f64,
    pub theta1: f64,
    pub sigma1: f64,
    pub kappa2: f64,
    pub sigma2: f64,
    pub mu_c: f64,
    pub sigma_c: f64,
    pub discount_rate: f64,
    pub risk_aversion: f64,
}

impl Default for BhsCalibration {
    fn default() -> Self {
        Self {
            kappa1: 0.013,
            theta1: 1.0,
            sigma1: -0.038,
            kappa2: 0.021,
            sigma2: 0.00034,
            mu_c: 0.0015,
            sigma_c: 0.0078,
            discount_rate: 0.002,
            risk_aversion: 10.0,
        }
    }
}

impl BhsCalibration {
    /// Loading of the continuation value on the growth factor.
    pub fn value_loading_growth(&self) -> f64 {
        1.0 / (self.discount_rate + self.kappa2)
    }

    /// Loading of the continuation value on the volatility factor: the
    /// root of smaller magnitude of the value-function quadratic.
    pub fn value_loading_vol(&self) -> f64 {
        let one_minus = 1.0 - self.risk_aversion;
        let w2 = self.value_loading_growth();
        let qa = 0.5 * one_minus * self.sigma1 * self.sigma1;
        let qb = -(self.discount_rate + self.kappa1);
        let qc = 0.5 * one_minus * (self.sigma2 * self.sigma2 * w2 * w2 + self.sigma_c * self.sigma_c);
        let disc = qb * qb - 4.0 * qa * qc;
        // Stable form of the small root.
        let q = -0.5 * (qb + qb.signum() * disc.sqrt());
        qc / q
    }

    /// Exposure of the log pricing kernel to the three shocks, per unit `sqrt(X1)`.
    pub fn kernel_exposure(&self) -> [f64; 3] {
        let one_minus = 1.0 - self.risk_aversion;
        [
            one_minus * self.sigma1 * self.value_loading_vol(),
            one_minus * self.sigma2 * self.value_loading_growth(),
            -self.risk_aversion * self.sigma_c,
        ]
    }

    /// Loading of the log pricing kernel drift on the volatility factor.
    pub fn kernel_drift_vol(&self) -> f64 {
        let one_minus = 1.0 - self.risk_aversion;
        let w = [
            self.sigma1 * self.value_loading_vol(),
            self.sigma2 * self.value_loading_growth(),
            self.sigma_c,
        ];
        let norm2: f64 = w.iter().map(|x| x * x).sum();
        -0.5 * one_minus * one_minus * norm2
    }

    fn assemble(
        &self,
        b3: f64,
        b31: f64,
        rho3: [f64; 3],
        sigma1: f64,
        sigma2: f64,
    ) -> (AffineModel, PricingKernel) {
        let b = DVector::from_vec(vec![self.kappa1 * self.theta1, 0.0, b3]);
        let beta = DMatrix::from_row_slice(
            3,
            3,
            &[-self.kappa1, 0.0, 0.0, 0.0, -self.kappa2, 0.0, b31, -1.0, 0.0],
        );
        let rho = DMatrix::from_row_slice(
            3,
            3,
            &[sigma1, 0.0, 0.0, 0.0, sigma2, 0.0, rho3[0], rho3[1], rho3[2]],
        );
        let s_slope = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let vol = VolStructure::new(rho, DVector::zeros(3), s_slope);
        let model = AffineModel::from_volatility(1, 2, b, beta, vol, TimeUnit::Months)
            .expect("three-factor dimensions are consistent");
        let pk = PricingKernel::new(
            0.0,
            DVector::from_vec(vec![0.0, 0.0, -1.0]),
            DVector::zeros(3),
        );
        (model, pk)
    }

    /// State `(vol, growth, log S)` with the kernel `S = exp(X3)`.
    pub fn model(&self) -> (AffineModel, PricingKernel) {
        self.assemble(
            -(self.discount_rate + self.mu_c),
            self.kernel_drift_vol(),
            self.kernel_exposure(),
            self.sigma1,
            self.sigma2,
        )
    }
}

/// The three-factor long-run risks model at its unrounded calibration.
pub fn bhs_model() -> (AffineModel, PricingKernel) {
    BhsCalibration::default().model()
}

/// The same model built from coefficients rounded to four significant digits.
pub fn bhs_printed_model() -> (AffineModel, PricingKernel) {
    BhsCalibration::default().assemble(
        -0.0035,
        -0.0118,
        [-0.0298, -0.1330, -0.0780],
        -0.038,
        0.00034,
    )
}

/// Closed-form growth-factor coordinate of the flow, `(B32/B22)(1 - e^{B22 t})`.
pub fn bhs_psi2(model: &AffineModel, t: f64) -> f64 {
    let b22 = model.beta()[(1, 1)];
    let b32 = model.beta()[(2, 1)];
    -b32 / b22 * (b22 * t).exp_m1()
}
