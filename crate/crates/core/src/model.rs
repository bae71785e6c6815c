//! Affine diffusions on the canonical state space `R_+^m x R^n`.
//!
//! The state solves `dX = (b + B X) dt + sigma(X) dW` with diffusion matrix
//! `alpha(x) = a + sum_{i in I} x_i alpha_i`. The first `m` coordinates
//! (index set `I`) are square-root (CIR-type), the remaining `n` (index set
//! `J`) are Gaussian (OU-type). Loadings `alpha_j` for `j in J` are zero and
//! are not stored.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Smallest eigenvalue still accepted as positive semi-definite.
pub const PSD_TOL: f64 = 1e-12;
/// How far a CIR-type coordinate may dip below zero before it is rejected.
pub const DOMAIN_TOL: f64 = 1e-12;
/// Entrywise tolerance when matching `sigma sigma^T` against `a`, `alpha_i`.
pub const VOL_CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },
    #[error("state outside the domain: x[{index}] = {value} < 0")]
    Domain { index: usize, value: f64 },
    #[error("variance factor s[{index}](x) = {value} is negative")]
    NegativeVariance { index: usize, value: f64 },
}

fn dim_err(what: &str, expected: impl fmt::Display, got: impl fmt::Display) -> ModelError {
    ModelError::Dimension {
        what: what.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

fn check_square(what: &str, mat: &DMatrix<f64>, d: usize) -> Result<(), ModelError> {
    if mat.nrows() != d || mat.ncols() != d {
        return Err(dim_err(
            what,
            format!("{d}x{d}"),
            format!("{}x{}", mat.nrows(), mat.ncols()),
        ));
    }
    Ok(())
}

fn check_len(what: &str, v: &DVector<f64>, d: usize) -> Result<(), ModelError> {
    if v.len() != d {
        return Err(dim_err(what, d, v.len()));
    }
    Ok(())
}

/// Unit in which model time is expressed. Never converted implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeUnit {
    Months,
    #[default]
    Years,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeUnit::Months => f.write_str("months"),
            TimeUnit::Years => f.write_str("years"),
        }
    }
}

/// Volatility factorization `sigma(x) = rho * diag(sqrt(s_1(x)), ..., sqrt(s_d(x)))`
/// with affine factors `s_j(x) = s_const[j] + s_slope.row(j) . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolStructure {
    pub rho: DMatrix<f64>,
    pub s_const: DVector<f64>,
    pub s_slope: DMatrix<f64>,
}

impl VolStructure {
    pub fn new(rho: DMatrix<f64>, s_const: DVector<f64>, s_slope: DMatrix<f64>) -> Self {
        Self {
            rho,
            s_const,
            s_slope,
        }
    }

    fn check_dims(&self, d: usize) -> Result<(), ModelError> {
        check_square("rho", &self.rho, d)?;
        check_len("s_const", &self.s_const, d)?;
        check_square("s_slope", &self.s_slope, d)
    }

    /// `rho diag(w) rho^T`.
    fn sandwich(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let scaled = &self.rho * DMatrix::from_diagonal(w);
        &scaled * self.rho.transpose()
    }

    /// The constant diffusion matrix implied by the factorization.
    pub fn implied_a(&self) -> DMatrix<f64> {
        self.sandwich(&self.s_const)
    }

    /// The diffusion loading on coordinate `i` implied by the factorization.
    pub fn implied_alpha(&self, i: usize) -> DMatrix<f64> {
        self.sandwich(&self.s_slope.column(i).into_owned())
    }

    /// Evaluates the factors `s_j(x)`, clamping values in `[-DOMAIN_TOL, 0)` to zero.
    pub fn factors(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let mut s = &self.s_const + &self.s_slope * x;
        for (j, v) in s.iter_mut().enumerate() {
            if *v < -DOMAIN_TOL {
                return Err(ModelError::NegativeVariance { index: j, value: *v });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(s)
    }
}

/// Exponential-affine pricing kernel
/// `S_t = exp(-gamma t - u^T (X_t - X_0) - int_0^t delta^T X_s ds)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingKernel {
    pub gamma: f64,
    pub u: DVector<f64>,
    pub delta: DVector<f64>,
}

impl PricingKernel {
    pub fn new(gamma: f64, u: DVector<f64>, delta: DVector<f64>) -> Self {
        Self { gamma, u, delta }
    }

    /// The trivial kernel `S = 1`.
    pub fn zero(d: usize) -> Self {
        Self::new(0.0, DVector::zeros(d), DVector::zeros(d))
    }

    pub fn check_dims(&self, d: usize) -> Result<(), ModelError> {
        check_len("kernel u", &self.u, d)?;
        check_len("kernel delta", &self.delta, d)
    }
}

/// Identifies a sub-condition of the admissibility check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// (1) `a_JJ` and `alpha_{i,JJ}` symmetric positive semi-definite.
    PsdBlocks,
    /// (2) `a_II = 0`, `a_IJ = a_JI^T = 0`.
    CirBlockOfA,
    /// (3) `alpha_j = 0` for `j in J`; holds by construction here.
    OuLoadings,
    /// (4) `alpha_{i,kl} = alpha_{i,lk} = 0` for `k in I \ {i}`.
    CrossLoadings,
    /// (5) `b_I >= 0`, `B_IJ = 0`, off-diagonals of `B_II` non-negative.
    Drift,
    /// `sigma(x) sigma(x)^T = a + sum x_i alpha_i` and `s_j >= 0` on the state space.
    VolConsistency,
}

impl Condition {
    pub fn id(&self) -> &'static str {
        match self {
            Condition::PsdBlocks => "(1)",
            Condition::CirBlockOfA => "(2)",
            Condition::OuLoadings => "(3)",
            Condition::CrossLoadings => "(4)",
            Condition::Drift => "(5)",
            Condition::VolConsistency => "vol",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }

    fn push(&mut self, condition: Condition, message: String) {
        self.violations.push(Violation { condition, message });
    }
}

/// Affine diffusion in canonical form. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    m: usize,
    n: usize,
    a: DMatrix<f64>,
    alpha: Vec<DMatrix<f64>>,
    b: DVector<f64>,
    beta: DMatrix<f64>,
    vol: VolStructure,
    time_unit: TimeUnit,
}

impl AffineModel {
    /// Builds a model from explicit diffusion data. Only dimensions are
    /// checked here; admissibility is reported by [`validate_admissibility`].
    ///
    /// [`validate_admissibility`]: AffineModel::validate_admissibility
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        n: usize,
        a: DMatrix<f64>,
        alpha: Vec<DMatrix<f64>>,
        b: DVector<f64>,
        beta: DMatrix<f64>,
        vol: VolStructure,
        time_unit: TimeUnit,
    ) -> Result<Self, ModelError> {
        let d = m + n;
        if d == 0 {
            return Err(dim_err("state dimension", ">= 1", 0));
        }
        check_square("a", &a, d)?;
        if alpha.len() != m {
            return Err(dim_err("alpha (one matrix per CIR coordinate)", m, alpha.len()));
        }
        for (i, al) in alpha.iter().enumerate() {
            check_square(&format!("alpha[{i}]"), al, d)?;
        }
        check_len("b", &b, d)?;
        check_square("B", &beta, d)?;
        vol.check_dims(d)?;
        Ok(Self {
            m,
            n,
            a,
            alpha,
            b,
            beta,
            vol,
            time_unit,
        })
    }

    /// Builds a model whose `a` and `alpha_i` are derived from the volatility
    /// factorization.
    pub fn from_volatility(
        m: usize,
        n: usize,
        b: DVector<f64>,
        beta: DMatrix<f64>,
        vol: VolStructure,
        time_unit: TimeUnit,
    ) -> Result<Self, ModelError> {
        let d = m + n;
        vol.check_dims(d)?;
        let a = vol.implied_a();
        let alpha = (0..m).map(|i| vol.implied_alpha(i)).collect();
        Self::new(m, n, a, alpha, b, beta, vol, time_unit)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m + self.n
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Diffusion loading of CIR coordinate `i < m`.
    pub fn alpha(&self, i: usize) -> &DMatrix<f64> {
        &self.alpha[i]
    }

    pub fn alphas(&self) -> &[DMatrix<f64>] {
        &self.alpha
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Linear drift matrix `B`; column `i` is `beta_i`.
    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn vol(&self) -> &VolStructure {
        &self.vol
    }

    pub fn time_unit(&self) -> TimeUnit {
        self.time_unit
    }

    pub fn with_time_unit(mut self, unit: TimeUnit) -> Self {
        self.time_unit = unit;
        self
    }

    /// Checks the canonical admissibility restrictions plus consistency of
    /// the volatility factorization.
    pub fn validate_admissibility(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let (m, d) = (self.m, self.dim());
        let zero_tol = VOL_CONSISTENCY_TOL;

        // (1)
        check_psd_block(&mut report, "a", &self.a, m, d);
        for (i, al) in self.alpha.iter().enumerate() {
            check_psd_block(&mut report, &format!("alpha[{i}]"), al, m, d);
        }

        // (2)
        for k in 0..m {
            for l in 0..d {
                for (r, c) in [(k, l), (l, k)] {
                    let v = self.a[(r, c)];
                    if v.abs() > zero_tol {
                        report.push(
                            Condition::CirBlockOfA,
                            format!("a[{r}][{c}] = {v} must vanish (row or column in I)"),
                        );
                    }
                }
            }
        }

        // (4)
        for (i, al) in self.alpha.iter().enumerate() {
            for k in (0..m).filter(|&k| k != i) {
                for l in 0..d {
                    for (r, c) in [(k, l), (l, k)] {
                        let v = al[(r, c)];
                        if v.abs() > zero_tol {
                            report.push(
                                Condition::CrossLoadings,
                                format!("alpha[{i}][{r}][{c}] = {v} must vanish"),
                            );
                        }
                    }
                }
            }
        }

        // (5)
        for i in 0..m {
            if self.b[i] < -DOMAIN_TOL {
                report.push(
                    Condition::Drift,
                    format!("b[{i}] = {} must be non-negative", self.b[i]),
                );
            }
            for j in m..d {
                let v = self.beta[(i, j)];
                if v != 0.0 {
                    report.push(Condition::Drift, format!("B[{i}][{j}] = {v} must vanish (B_IJ)"));
                }
            }
            for k in (0..m).filter(|&k| k != i) {
                let v = self.beta[(i, k)];
                if v < 0.0 {
                    report.push(
                        Condition::Drift,
                        format!("B[{i}][{k}] = {v} must be non-negative (off-diagonal of B_II)"),
                    );
                }
            }
        }

        self.check_vol_consistency(&mut report);
        report
    }

    fn check_vol_consistency(&self, report: &mut ValidationReport) {
        let (m, d) = (self.m, self.dim());
        let vol = &self.vol;
        let mismatch = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).amax();

        let gap = mismatch(&vol.implied_a(), &self.a);
        if gap > VOL_CONSISTENCY_TOL {
            report.push(
                Condition::VolConsistency,
                format!("rho diag(s_const) rho^T differs from a by {gap:e}"),
            );
        }
        for i in 0..d {
            let implied = vol.implied_alpha(i);
            let gap = if i < m {
                mismatch(&implied, &self.alpha[i])
            } else {
                implied.amax()
            };
            if gap > VOL_CONSISTENCY_TOL {
                report.push(
                    Condition::VolConsistency,
                    format!("volatility loading on x[{i}] differs from alpha[{i}] by {gap:e}"),
                );
            }
        }
        for j in 0..d {
            if vol.s_const[j] < 0.0 {
                report.push(
                    Condition::VolConsistency,
                    format!("s[{j}] has negative constant {}", vol.s_const[j]),
                );
            }
            for k in 0..d {
                let slope = vol.s_slope[(j, k)];
                if k < m && slope < 0.0 {
                    report.push(
                        Condition::VolConsistency,
                        format!("s[{j}] has negative slope {slope} on CIR coordinate {k}"),
                    );
                } else if k >= m && slope != 0.0 {
                    report.push(
                        Condition::VolConsistency,
                        format!("s[{j}] loads on OU coordinate {k}; it can turn negative"),
                    );
                }
            }
        }
    }

    fn checked_state(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        check_len("state", x, self.dim())?;
        let mut x = x.clone();
        for i in 0..self.m {
            if x[i] < -DOMAIN_TOL || x[i].is_nan() {
                return Err(ModelError::Domain { index: i, value: x[i] });
            }
            if x[i] < 0.0 {
                x[i] = 0.0;
            }
        }
        Ok(x)
    }

    /// Drift `b + B x`.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let x = self.checked_state(x)?;
        Ok(&self.b + &self.beta * x)
    }

    /// Returns `(sigma(x), alpha(x))`.
    pub fn diffusion(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
        let x = self.checked_state(x)?;
        let s = self.vol.factors(&x)?;
        let sigma = &self.vol.rho * DMatrix::from_diagonal(&s.map(f64::sqrt));
        let mut alpha_x = self.a.clone();
        for (i, al) in self.alpha.iter().enumerate() {
            alpha_x += al * x[i];
        }
        Ok((sigma, alpha_x))
    }

    /// The model under the measure with density driven by `-sigma(X)^T w`:
    /// drift `b(x) - alpha(x) w`, unchanged diffusion.
    pub fn tilt(&self, w: &DVector<f64>) -> Result<AffineModel, ModelError> {
        check_len("tilt vector", w, self.dim())?;
        let mut out = self.clone();
        out.b = &self.b - &self.a * w;
        for (i, al) in self.alpha.iter().enumerate() {
            let col = self.beta.column(i) - al * w;
            out.beta.set_column(i, &col);
        }
        Ok(out)
    }

    /// Stationary mean of the recurrent part of the state.
    ///
    /// Coordinates that never feed back into the drift (zero column of `B`)
    /// are dropped and pinned to zero; the remaining block must be stable.
    /// Returns `None` when no stable autonomous block exists.
    pub fn stationary_mean(&self) -> Option<DVector<f64>> {
        let d = self.dim();
        let mut keep: Vec<usize> = (0..d).collect();
        loop {
            let kept = keep.clone();
            keep.retain(|&k| kept.iter().any(|&r| self.beta[(r, k)] != 0.0));
            if keep.len() == kept.len() {
                break;
            }
        }
        if keep.is_empty() {
            return None;
        }
        let k = keep.len();
        let sub = DMatrix::from_fn(k, k, |r, c| self.beta[(keep[r], keep[c])]);
        let eig = sub.clone().complex_eigenvalues();
        if eig.iter().any(|z| z.re >= 0.0) {
            return None;
        }
        let rhs = DVector::from_fn(k, |r, _| -self.b[keep[r]]);
        let sol = sub.lu().solve(&rhs)?;
        let mut mean = DVector::zeros(d);
        for (r, &idx) in keep.iter().enumerate() {
            mean[idx] = sol[r];
        }
        Some(mean)
    }
}

fn check_psd_block(report: &mut ValidationReport, name: &str, mat: &DMatrix<f64>, m: usize, d: usize) {
    let asym = (mat - mat.transpose()).amax();
    if asym > VOL_CONSISTENCY_TOL {
        report.push(
            Condition::PsdBlocks,
            format!("{name} is not symmetric (max asymmetry {asym:e})"),
        );
    }
    if d == m {
        return;
    }
    let block = mat.view((m, m), (d - m, d - m)).into_owned();
    let sym = (&block + block.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
    if min_eig < -PSD_TOL {
        report.push(
            Condition::PsdBlocks,
            format!("{name}_JJ has negative eigenvalue {min_eig:e}"),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cir(a_cir: f64, kappa: f64, sigma: f64) -> AffineModel {
        AffineModel::from_volatility(
            1,
            0,
            DVector::from_element(1, a_cir),
            DMatrix::from_element(1, 1, -kappa),
            VolStructure::new(
                DMatrix::from_element(1, 1, sigma),
                DVector::zeros(1),
                DMatrix::identity(1, 1),
            ),
            TimeUnit::Years,
        )
        .unwrap()
    }

    fn vasicek(kappa: f64, theta: f64, sigma: f64) -> AffineModel {
        AffineModel::from_volatility(
            0,
            1,
            DVector::from_element(1, kappa * theta),
            DMatrix::from_element(1, 1, -kappa),
            VolStructure::new(
                DMatrix::from_element(1, 1, sigma),
                DVector::from_element(1, 1.0),
                DMatrix::zeros(1, 1),
            ),
            TimeUnit::Years,
        )
        .unwrap()
    }

    #[test]
    fn cir_is_admissible() {
        let report = cir(0.02, 0.5, 0.2).validate_admissibility();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn nonzero_a_on_cir_coordinate_violates_condition_2() {
        let base = cir(0.02, 0.5, 0.2);
        let bad = AffineModel::new(
            1,
            0,
            DMatrix::from_element(1, 1, 1.0),
            base.alphas().to_vec(),
            base.b().clone(),
            base.beta().clone(),
            base.vol().clone(),
            TimeUnit::Years,
        )
        .unwrap();
        let report = bad.validate_admissibility();
        assert!(report.violates(Condition::CirBlockOfA));
        assert!(!report.passed());
    }

    #[test]
    fn negative_b_on_cir_coordinate_violates_condition_5() {
        let report = cir(-0.01, 0.5, 0.2).validate_admissibility();
        assert!(report.violates(Condition::Drift));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let err = AffineModel::new(
            1,
            1,
            DMatrix::zeros(2, 2),
            vec![],
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            VolStructure::new(DMatrix::zeros(2, 2), DVector::zeros(2), DMatrix::zeros(2, 2)),
            TimeUnit::Years,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Dimension { .. }));
    }

    #[test]
    fn inconsistent_vol_is_reported() {
        let base = cir(0.02, 0.5, 0.2);
        let bad = AffineModel::new(
            1,
            0,
            base.a().clone(),
            vec![DMatrix::from_element(1, 1, 0.05)],
            base.b().clone(),
            base.beta().clone(),
            base.vol().clone(),
            TimeUnit::Years,
        )
        .unwrap();
        assert!(bad.validate_admissibility().violates(Condition::VolConsistency));
    }

    #[test]
    fn cir_drift_at_stationary_mean_vanishes() {
        let model = cir(0.02, 0.5, 0.2);
        let drift = model.drift(&DVector::from_element(1, 0.04)).unwrap();
        assert!(drift[0].abs() < 1e-18);
        assert_eq!(model.drift(&DVector::zeros(1)).unwrap(), *model.b());
    }

    #[test]
    fn drift_rejects_negative_cir_state() {
        let model = cir(0.02, 0.5, 0.2);
        let err = model.drift(&DVector::from_element(1, -1e-6)).unwrap_err();
        assert!(matches!(err, ModelError::Domain { index: 0, .. }));
        // grazing the boundary is tolerated
        assert!(model.drift(&DVector::from_element(1, -1e-13)).is_ok());
    }

    #[test]
    fn cir_diffusion() {
        let model = cir(0.02, 0.5, 0.2);
        let (sigma, alpha_x) = model.diffusion(&DVector::from_element(1, 0.04)).unwrap();
        assert!((alpha_x[(0, 0)] - 0.0016).abs() < 1e-18);
        assert!((sigma[(0, 0)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn vasicek_diffusion_is_constant() {
        let model = vasicek(0.5, 0.05, 0.02);
        for x in [-3.0, 0.0, 0.1, 7.0] {
            let (sigma, _) = model.diffusion(&DVector::from_element(1, x)).unwrap();
            assert_eq!(sigma[(0, 0)], 0.02);
        }
    }

    #[test]
    fn zero_tilt_is_identity() {
        let model = cir(0.02, 0.5, 0.2);
        assert_eq!(model.tilt(&DVector::zeros(1)).unwrap(), model);
    }

    #[test]
    fn cir_tilt_shifts_mean_reversion() {
        let (kappa, sigma, u) = (0.5, 0.2, 0.7);
        let q = cir(0.02, kappa, sigma).tilt(&DVector::from_element(1, u)).unwrap();
        assert!((-q.beta()[(0, 0)] - (kappa + sigma * sigma * u)).abs() < 1e-15);
        assert_eq!(q.b()[0], 0.02);
    }

    #[test]
    fn tilted_ou_stays_admissible() {
        // b_J carries no sign restriction, so a large tilt is harmless
        let tilted = vasicek(0.5, 0.05, 0.02)
            .tilt(&DVector::from_element(1, 1000.0))
            .unwrap();
        assert!(tilted.b()[0] < 0.0);
        assert!(tilted.validate_admissibility().passed());
    }

    #[test]
    fn stationary_mean_of_cir() {
        let mean = cir(0.02, 0.5, 0.2).stationary_mean().unwrap();
        assert!((mean[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn explosive_ou_has_no_stationary_mean() {
        assert!(vasicek(-0.1, 0.05, 0.02).stationary_mean().is_none());
    }
}
