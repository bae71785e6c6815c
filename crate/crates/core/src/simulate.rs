//! Monte Carlo simulation of affine state paths and pathwise pricing-kernel
//! functionals.
//!
//! Paths use Euler-Maruyama with full truncation: drift and diffusion are
//! evaluated at the state with negative square-root coordinates set to zero,
//! and the truncated state is what gets recorded. Each path draws from its own
//! ChaCha stream keyed by `(seed, path index)`, so output does not depend on
//! thread count or scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::factorization::{LongTermFactorization, RiskNeutralFactorization};
use crate::model::{AffineModel, ModelError, PricingKernel};
use crate::riccati::{self, RiccatiError, RiccatiSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("time {0} is not on the recorded grid")]
    OffGrid(f64),
    #[error("Riccati solution covers [0, {available}] but maturity {required} is needed")]
    HorizonInsufficient { required: f64, available: f64 },
    #[error("{0}")]
    Unavailable(&'static str),
}

/// Label for the measure a path bundle was simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Measure {
    #[default]
    P,
    Q,
    L,
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::P => "P",
            Measure::Q => "Q",
            Measure::L => "L",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub measure: Measure,
    /// Record the state every this many steps (the final step is always a
    /// multiple by construction of the checks in [`SimConfig::n_steps`]).
    pub record_every: usize,
    /// Keep every Brownian increment; needed for stochastic integrals.
    pub store_increments: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, horizon: f64, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            horizon,
            dt,
            seed,
            measure: Measure::P,
            record_every: 1,
            store_increments: false,
        }
    }

    pub fn with_measure(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_increments(mut self) -> Self {
        self.store_increments = true;
        self
    }

    /// Number of Euler steps; errors unless `horizon / dt` is an integer.
    pub fn n_steps(&self) -> Result<usize, SimError> {
        if self.n_paths == 0 {
            return Err(SimError::Config("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(SimError::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        let steps = steps as usize;
        if self.record_every == 0 || !steps.is_multiple_of(self.record_every) {
            return Err(SimError::Config(format!(
                "record_every = {} must divide the step count {steps}",
                self.record_every
            )));
        }
        Ok(steps)
    }
}

/// Simulated paths on the recorded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    measure: Measure,
    dim: usize,
    n_paths: usize,
    dt: f64,
    record_every: usize,
    times: Vec<f64>,
    /// `[path][record][coord]`
    states: Vec<f64>,
    /// Trapezoidal `int_0^t X_s ds`, same layout as `states`.
    integrals: Vec<f64>,
    /// `[path][step][coord]`
    increments: Option<Vec<f64>>,
}

impl PathBundle {
    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn n_records(&self) -> usize {
        self.times.len()
    }

    fn offset(&self, path: usize, rec: usize) -> usize {
        (path * self.n_records() + rec) * self.dim
    }

    pub fn state(&self, path: usize, rec: usize) -> &[f64] {
        let o = self.offset(path, rec);
        &self.states[o..o + self.dim]
    }

    pub fn integral(&self, path: usize, rec: usize) -> &[f64] {
        let o = self.offset(path, rec);
        &self.integrals[o..o + self.dim]
    }

    /// Brownian increment of `path` over step `step`, if stored.
    pub fn increment(&self, path: usize, step: usize) -> Option<&[f64]> {
        let n_steps = (self.n_records() - 1) * self.record_every;
        self.increments.as_ref().map(|inc| {
            let o = (path * n_steps + step) * self.dim;
            &inc[o..o + self.dim]
        })
    }

    /// Index of the record at time `t`.
    pub fn record_index(&self, t: f64) -> Result<usize, SimError> {
        let spacing = self.dt * self.record_every as f64;
        let k = (t / spacing).round();
        if k < 0.0 || k as usize >= self.n_records() || (t - k * spacing).abs() > 1e-9 * spacing {
            return Err(SimError::OffGrid(t));
        }
        Ok(k as usize)
    }

    /// `int_0^t (sigma(X_s)^T w) . dW_s` on the recorded grid, with the
    /// integrand frozen at the start of each step. Needs stored increments
    /// and a record at every step.
    pub fn stochastic_integral(
        &self,
        model: &AffineModel,
        w: &DVector<f64>,
    ) -> Result<PathSeries, SimError> {
        if self.increments.is_none() || self.record_every != 1 {
            return Err(SimError::Unavailable(
                "stochastic integrals need stored increments at every step",
            ));
        }
        let n_rec = self.n_records();
        let mut values = vec![0.0; self.n_paths * n_rec];
        for p in 0..self.n_paths {
            let mut acc = 0.0;
            for step in 0..n_rec - 1 {
                let x = DVector::from_column_slice(self.state(p, step));
                let (sigma, _) = model.diffusion(&x)?;
                let load = sigma.transpose() * w;
                let dw = self.increment(p, step).expect("increments stored");
                acc += load.iter().zip(dw).map(|(l, z)| l * z).sum::<f64>();
                values[p * n_rec + step + 1] = acc;
            }
        }
        Ok(PathSeries {
            times: self.times.clone(),
            n_paths: self.n_paths,
            values,
        })
    }
}

struct PathOut {
    states: Vec<f64>,
    integrals: Vec<f64>,
    increments: Vec<f64>,
}

struct Stepper<'a> {
    m: usize,
    d: usize,
    b: &'a [f64],
    beta: &'a nalgebra::DMatrix<f64>,
    rho: &'a nalgebra::DMatrix<f64>,
    s_const: &'a [f64],
    s_slope: &'a nalgebra::DMatrix<f64>,
}

impl Stepper<'_> {
    fn run_path(
        &self,
        x0: &[f64],
        cfg: &SimConfig,
        n_steps: usize,
        path: usize,
    ) -> Result<PathOut, SimError> {
        let d = self.d;
        let n_rec = n_steps / cfg.record_every + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path as u64);
        let sqrt_dt = cfg.dt.sqrt();

        let mut out = PathOut {
            states: Vec::with_capacity(n_rec * d),
            integrals: Vec::with_capacity(n_rec * d),
            increments: Vec::with_capacity(if cfg.store_increments { n_steps * d } else { 0 }),
        };
        let mut x = x0.to_vec();
        let mut xp = vec![0.0; d];
        let mut xp_next = vec![0.0; d];
        let mut integral = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut vol = vec![0.0; d];
        self.truncate(&x, &mut xp);
        out.states.extend_from_slice(&xp);
        out.integrals.extend_from_slice(&integral);

        for step in 0..n_steps {
            for j in 0..d {
                let mut s = self.s_const[j];
                for k in 0..d {
                    s += self.s_slope[(j, k)] * xp[k];
                }
                vol[j] = s.max(0.0).sqrt();
                let z: f64 = StandardNormal.sample(&mut rng);
                dw[j] = z * sqrt_dt;
            }
            for i in 0..d {
                let mut drift = self.b[i];
                let mut diff = 0.0;
                for k in 0..d {
                    drift += self.beta[(i, k)] * xp[k];
                    diff += self.rho[(i, k)] * vol[k] * dw[k];
                }
                x[i] += drift * cfg.dt + diff;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite { path, step });
            }
            self.truncate(&x, &mut xp_next);
            for i in 0..d {
                integral[i] += 0.5 * (xp[i] + xp_next[i]) * cfg.dt;
            }
            std::mem::swap(&mut xp, &mut xp_next);
            if cfg.store_increments {
                out.increments.extend_from_slice(&dw);
            }
            if (step + 1) % cfg.record_every == 0 {
                out.states.extend_from_slice(&xp);
                out.integrals.extend_from_slice(&integral);
            }
        }
        Ok(out)
    }

    fn truncate(&self, x: &[f64], out: &mut [f64]) {
        for (k, (o, v)) in out.iter_mut().zip(x).enumerate() {
            *o = if k < self.m { v.max(0.0) } else { *v };
        }
    }
}

/// Simulates `cfg.n_paths` paths of `model` from `x0`. The model should
/// already carry the drift of the measure named in `cfg.measure`.
pub fn simulate(
    model: &AffineModel,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<PathBundle, SimError> {
    let n_steps = cfg.n_steps()?;
    // Domain and dimension check on the starting point.
    model.drift(x0)?;
    let d = model.dim();
    let vol = model.vol();
    let stepper = Stepper {
        m: model.m(),
        d,
        b: model.b().as_slice(),
        beta: model.beta(),
        rho: &vol.rho,
        s_const: vol.s_const.as_slice(),
        s_slope: &vol.s_slope,
    };
    let results: Vec<Result<PathOut, SimError>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| stepper.run_path(x0.as_slice(), cfg, n_steps, p))
        .collect();

    let n_rec = n_steps / cfg.record_every + 1;
    let mut states = Vec::with_capacity(cfg.n_paths * n_rec * d);
    let mut integrals = Vec::with_capacity(cfg.n_paths * n_rec * d);
    let mut increments = cfg
        .store_increments
        .then(|| Vec::with_capacity(cfg.n_paths * n_steps * d));
    for r in results {
        let out = r?;
        states.extend_from_slice(&out.states);
        integrals.extend_from_slice(&out.integrals);
        if let Some(inc) = increments.as_mut() {
            inc.extend_from_slice(&out.increments);
        }
    }
    let spacing = cfg.dt * cfg.record_every as f64;
    Ok(PathBundle {
        measure: cfg.measure,
        dim: d,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        record_every: cfg.record_every,
        times: (0..n_rec).map(|k| k as f64 * spacing).collect(),
        states,
        integrals,
        increments,
    })
}

/// One scalar per path per recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSeries {
    pub times: Vec<f64>,
    pub n_paths: usize,
    /// `[path][record]`
    pub values: Vec<f64>,
}

impl PathSeries {
    pub fn get(&self, path: usize, rec: usize) -> f64 {
        self.values[path * self.times.len() + rec]
    }

    /// All path values at record `rec`.
    pub fn cross_section(&self, rec: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, rec)).collect()
    }

    fn record_index(&self, t: f64) -> Result<usize, SimError> {
        let scale = self.times.last().copied().unwrap_or(1.0).max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * scale)
            .ok_or(SimError::OffGrid(t))
    }

    pub fn at_time(&self, t: f64) -> Result<Vec<f64>, SimError> {
        Ok(self.cross_section(self.record_index(t)?))
    }
}

/// Pathwise kernel and factorization components.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelProcesses {
    pub s: PathSeries,
    /// `S_t exp(int_0^t r ds)`.
    pub m0: PathSeries,
    /// `S_t B_inf_t`, when a long-term factorization is supplied.
    pub m_inf: Option<PathSeries>,
    pub b_inf: Option<PathSeries>,
}

/// Evaluates `S`, `M0` and (given `ltf`) `B_inf`, `M_inf` along each path.
pub fn kernel_processes(
    paths: &PathBundle,
    pk: &PricingKernel,
    rnf: &RiskNeutralFactorization,
    ltf: Option<&LongTermFactorization>,
) -> Result<KernelProcesses, SimError> {
    let d = paths.dim();
    pk.check_dims(d)?;
    if rnf.h.len() != d || ltf.is_some_and(|l| l.v.len() != d) {
        return Err(ModelError::Dimension {
            what: "factorization".into(),
            expected: d.to_string(),
            got: rnf.h.len().to_string(),
        }
        .into());
    }
    let n_rec = paths.times().len();
    let total = paths.n_paths() * n_rec;
    let mut s = Vec::with_capacity(total);
    let mut m0 = Vec::with_capacity(total);
    let mut m_inf = ltf.map(|_| Vec::with_capacity(total));
    let mut b_inf = ltf.map(|_| Vec::with_capacity(total));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    for p in 0..paths.n_paths() {
        let x0 = paths.state(p, 0);
        for (rec, &t) in paths.times().iter().enumerate() {
            let x = paths.state(p, rec);
            let ix = paths.integral(p, rec);
            let dx: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
            let log_s = -pk.gamma * t - dot(pk.u.as_slice(), &dx) - dot(pk.delta.as_slice(), ix);
            let int_r = rnf.g * t + dot(rnf.h.as_slice(), ix);
            s.push(log_s.exp());
            m0.push((log_s + int_r).exp());
            if let Some(l) = ltf {
                let log_b = l.lambda * t + dot(l.eigen_coeffs.as_slice(), &dx);
                b_inf.as_mut().unwrap().push(log_b.exp());
                m_inf.as_mut().unwrap().push((log_s + log_b).exp());
            }
        }
    }
    let series = |values| PathSeries {
        times: paths.times().to_vec(),
        n_paths: paths.n_paths(),
        values,
    };
    Ok(KernelProcesses {
        s: series(s),
        m0: series(m0),
        m_inf: m_inf.map(series),
        b_inf: b_inf.map(series),
    })
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// `NaN` when fewer than two samples are available.
    pub stderr: f64,
    pub n: usize,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let stderr = if n < 2 {
            f64::NAN
        } else {
            let ss = compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        Self { mean, stderr, n }
    }

    /// `|mean - target| < k stderr`; `None` when the standard error is undefined.
    pub fn within(&self, target: f64, k: f64) -> Option<bool> {
        if !self.stderr.is_finite() {
            return None;
        }
        Some((self.mean - target).abs() < k * self.stderr || self.mean == target)
    }

    /// `|a - b| < k sqrt(se_a^2 + se_b^2)`.
    pub fn consistent_with(&self, other: &McEstimate, k: f64) -> Option<bool> {
        let joint = self.stderr.hypot(other.stderr);
        if !joint.is_finite() {
            return None;
        }
        Some((self.mean - other.mean).abs() < k * joint || self.mean == other.mean)
    }
}

/// Estimate of `E[series_t]`; for a martingale starting at 1 this should be 1.
pub fn martingale_test(series: &PathSeries, t: f64) -> Result<McEstimate, SimError> {
    Ok(McEstimate::from_samples(&series.at_time(t)?))
}

/// Value at `t` of one unit invested at time 0 in the strategy that holds the
/// `period`-maturity bond and rolls into a fresh one at each multiple of `period`.
pub fn rollover_value(
    paths: &PathBundle,
    sol: &RiccatiSolution,
    pk: &PricingKernel,
    period: f64,
    t: f64,
) -> Result<Vec<f64>, SimError> {
    if !(period > 0.0) {
        return Err(SimError::Config(format!("roll-over period must be positive, got {period}")));
    }
    if sol.horizon() < period * (1.0 - 1e-12) {
        return Err(SimError::HorizonInsufficient {
            required: period,
            available: sol.horizon(),
        });
    }
    let ratio = t / period;
    let mut k = ratio.floor();
    if ratio - k > 1.0 - 1e-9 {
        k += 1.0;
    }
    let rec_t = paths.record_index(t)?;
    let roll_recs = (0..=k as usize)
        .map(|i| paths.record_index(i as f64 * period))
        .collect::<Result<Vec<_>, _>>()?;
    let remaining = ((k + 1.0) * period - t).min(sol.horizon());

    let mut out = Vec::with_capacity(paths.n_paths());
    for p in 0..paths.n_paths() {
        let mut log_v = 0.0;
        for &rec in &roll_recs {
            let x = DVector::from_column_slice(paths.state(p, rec));
            log_v -= riccati::bond_price(sol, pk, period.min(sol.horizon()), &x)?.ln();
        }
        let xt = DVector::from_column_slice(paths.state(p, rec_t));
        log_v += riccati::bond_price(sol, pk, remaining, &xt)?.ln();
        out.push(log_v.exp());
    }
    Ok(out)
}

/// Monte Carlo estimate of `P(maturity, x0) = E[S_maturity]` from paths under the
/// data-generating measure.
pub fn bond_price_mc(
    paths: &PathBundle,
    pk: &PricingKernel,
    maturity: f64,
) -> Result<McEstimate, SimError> {
    let d = paths.dim();
    pk.check_dims(d)?;
    let rec = paths.record_index(maturity)?;
    let t = paths.times()[rec];
    let samples: Vec<f64> = (0..paths.n_paths())
        .map(|p| {
            let x0 = paths.state(p, 0);
            let x = paths.state(p, rec);
            let ix = paths.integral(p, rec);
            let mut log_s = -pk.gamma * t;
            for k in 0..d {
                log_s -= pk.u[k] * (x[k] - x0[k]) + pk.delta[k] * ix[k];
            }
            log_s.exp()
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Monte Carlo estimate of `E[exp(-int_0^T r ds)]` from paths under the
/// risk-neutral measure.
pub fn discount_mc(
    paths: &PathBundle,
    rnf: &RiskNeutralFactorization,
    maturity: f64,
) -> Result<McEstimate, SimError> {
    let rec = paths.record_index(maturity)?;
    let t = paths.times()[rec];
    let samples: Vec<f64> = (0..paths.n_paths())
        .map(|p| {
            let ix = paths.integral(p, rec);
            let int_r = rnf.g * t + rnf.h.iter().zip(ix).map(|(h, i)| h * i).sum::<f64>();
            (-int_r).exp()
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}
