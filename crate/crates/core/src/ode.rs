//! Dormand–Prince 5(4) integrator with continuous output.
//!
//! Autonomous systems only (`y' = f(y)`); every right-hand side in this crate
//! is time-homogeneous. The embedded fourth-order solution drives step-size
//! control and the fifth-order solution is propagated (local extrapolation).
//! Each accepted step stores the coefficients of Hairer's quartic continuous
//! extension so the trajectory can be evaluated at any interior time.

use thiserror::Error;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Continuous extension (Hairer, Nørsett & Wanner, dopri5 `contd5`).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Upper bound on the step size; `f64::INFINITY` for none.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64 },
}

/// Decision returned by the step observer after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

/// Accepted steps of an integration together with their dense-output data.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    // Per step: rcont2..rcont5, each of length `dim` (rcont1 is the left state).
    dense: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn deriv(&self, k: usize) -> &[f64] {
        &self.derivs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory always holds the initial point")
    }

    /// Evaluates the continuous extension at `t`. `t` must lie within
    /// `[times[0], t_end]`; callers range-check.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            out.copy_from_slice(self.state(0));
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.state(n - 1));
            return;
        }
        // index of the step containing t: times[k] <= t < times[k + 1]
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let t0 = self.times[k];
        let h = self.times[k + 1] - t0;
        let theta = (t - t0) / h;
        let theta1 = 1.0 - theta;
        let d = self.dim;
        let base = k * 4 * d;
        let y0 = self.state(k);
        for i in 0..d {
            let r2 = self.dense[base + i];
            let r3 = self.dense[base + d + i];
            let r4 = self.dense[base + 2 * d + i];
            let r5 = self.dense[base + 3 * d + i];
            out[i] = y0[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
        }
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &OdeOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sc = opts.abs_tol + opts.rel_tol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / err.len() as f64).sqrt()
}

fn rms_scaled(v: &[f64], y: &[f64], opts: &OdeOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..v.len() {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs();
        acc += (v[i] / sc).powi(2);
    }
    (acc / v.len() as f64).sqrt()
}

/// Integrates `y' = f(y)` from `y0` at `t = 0` to `t_end`.
///
/// `observer(t, y, dy)` runs after every accepted step (not for the initial
/// point) and may stop the integration early; the returned trajectory then
/// ends at the last accepted step.
pub fn integrate<F, O>(
    f: F,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    mut observer: O,
) -> Result<Trajectory, OdeError>
where
    F: Fn(&[f64], &mut [f64]),
    O: FnMut(f64, &[f64], &[f64]) -> StepControl,
{
    let d = y0.len();
    let mut traj = Trajectory {
        dim: d,
        times: vec![0.0],
        states: y0.to_vec(),
        derivs: vec![0.0; d],
        dense: Vec::new(),
    };
    let mut k1 = vec![0.0; d];
    f(y0, &mut k1);
    traj.derivs.copy_from_slice(&k1);
    if t_end <= 0.0 {
        return Ok(traj);
    }

    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut h = initial_step(&f, &y, &k1, t_end, opts);

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
    );
    let mut ytmp = vec![0.0; d];
    let mut y1 = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut last_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(OdeError::MaxSteps { t });
        }
        steps += 1;
        let mut last = false;
        if t + h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t });
        }

        for i in 0..d {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(&ytmp, &mut k2);
        for i in 0..d {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(&ytmp, &mut k3);
        for i in 0..d {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(&ytmp, &mut k4);
        for i in 0..d {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(&ytmp, &mut k5);
        for i in 0..d {
            ytmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(&ytmp, &mut k6);
        for i in 0..d {
            y1[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(&y1, &mut k7);
        for i in 0..d {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }

        if y1.iter().any(|v| !v.is_finite()) || err.iter().any(|v| !v.is_finite()) {
            // Shrink hard; a finite-time singularity shows up as underflow.
            h *= FAC_MIN;
            last_rejected = true;
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::NonFinite { t });
            }
            continue;
        }

        let en = error_norm(&err, &y, &y1, opts);
        if en <= 1.0 {
            let base = traj.dense.len();
            traj.dense.resize(base + 4 * d, 0.0);
            for i in 0..d {
                let ydiff = y1[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                traj.dense[base + i] = ydiff;
                traj.dense[base + d + i] = bspl;
                traj.dense[base + 2 * d + i] = ydiff - h * k7[i] - bspl;
                traj.dense[base + 3 * d + i] = h
                    * (D1 * k1[i]
                        + D3 * k3[i]
                        + D4 * k4[i]
                        + D5 * k5[i]
                        + D6 * k6[i]
                        + D7 * k7[i]);
            }
            t = if last { t_end } else { t + h };
            y.copy_from_slice(&y1);
            k1.copy_from_slice(&k7);
            traj.times.push(t);
            traj.states.extend_from_slice(&y);
            traj.derivs.extend_from_slice(&k1);

            if last || observer(t, &y, &k1) == StepControl::Stop {
                return Ok(traj);
            }

            let mut fac = SAFETY * en.max(1e-10).powf(-0.2);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(opts.h_max);
            last_rejected = false;
        } else {
            let fac = (SAFETY * en.powf(-0.2)).max(FAC_MIN);
            h *= fac;
            last_rejected = true;
        }
    }
}

fn initial_step<F>(f: &F, y0: &[f64], f0: &[f64], t_end: f64, opts: &OdeOptions) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    let d0 = rms_scaled(y0, y0, opts);
    let d1 = rms_scaled(f0, y0, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_end).min(opts.h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, k)| y + h0 * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y0, opts) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(opts.h_max).min(t_end);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6_f64.min(t_end)
    }
}
