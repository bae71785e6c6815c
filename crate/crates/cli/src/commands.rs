use std::fmt::Write as _;

use affine_ltf::factorization::{
    find_fixed_point, risk_neutral_factorize, FixedPointOptions, FixedPointOutcome,
    LongTermFactorization,
};
use affine_ltf::model::AffineModel;
use affine_ltf::riccati;
use affine_ltf::simulate::{kernel_processes, martingale_test, simulate, SimConfig};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::Resolved;
use crate::error::CliError;

/// What a command produced: a JSON report, optional CSV text and an exit code.
#[derive(Debug)]
pub struct Output {
    pub report: Value,
    pub csv: Option<String>,
    pub exit: u8,
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.iter().copied().collect::<Vec<_>>())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn drift_json(model: &AffineModel) -> Value {
    json!({ "b": vec_json(model.b()), "B": mat_json(model.beta()) })
}

/// Comma-joined `Display` output: shortest representation that parses back exactly.
fn csv_row(fields: &[f64]) -> String {
    fields.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn check(r: &Resolved) -> Output {
    let report = r.model.validate_admissibility();
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| json!({ "condition": v.condition.id(), "message": v.message }))
        .collect();
    Output {
        report: json!({ "passed": report.passed(), "violations": violations }),
        csv: None,
        exit: if report.passed() { 0 } else { 1 },
    }
}

fn require_admissible(r: &Resolved) -> Result<(), CliError> {
    let report = r.model.validate_admissibility();
    if report.passed() {
        return Ok(());
    }
    let list: Vec<String> = report
        .violations
        .iter()
        .map(|v| format!("{}: {}", v.condition.id(), v.message))
        .collect();
    Err(CliError::Input(format!("model is not admissible: {}", list.join("; "))))
}

fn fixed_point(
    r: &Resolved,
    opts: &FixedPointOptions,
) -> Result<Result<(LongTermFactorization, Value), Value>, CliError> {
    match find_fixed_point(&r.model, &r.kernel, opts)? {
        FixedPointOutcome::Converged {
            factorization,
            diagnostics,
        } => {
            let diag = json!({
                "horizon_used": diagnostics.horizon_used,
                "terminal_psi_dot_norm": diagnostics.terminal_psi_dot_norm,
                "ode_limit": vec_json(&diagnostics.ode_limit),
                "limit_gap": diagnostics.limit_gap,
                "newton_iterations": diagnostics.newton_iterations,
                "residual": diagnostics.residual,
            });
            Ok(Ok((factorization, diag)))
        }
        FixedPointOutcome::Divergent(d) => Ok(Err(json!({
            "reason": d.reason.to_string(),
            "time": d.time,
            "last_psi": d.last_psi.as_ref().map(vec_json),
            "last_psi_dot_norm": d.last_psi_dot_norm,
        }))),
    }
}

const DIVERGENT_MESSAGE: &str = "no fixed point: long forward measure does not exist for this model";

pub struct FactorizeArgs {
    pub horizon: Option<f64>,
    pub points: usize,
}

pub fn factorize(
    r: &Resolved,
    opts: &FixedPointOptions,
    args: &FactorizeArgs,
) -> Result<Output, CliError> {
    require_admissible(r)?;
    let rnf = risk_neutral_factorize(&r.model, &r.kernel)?;
    let risk_neutral = json!({
        "g": rnf.g,
        "h": vec_json(&rnf.h),
        "q_drift": drift_json(&rnf.q_model),
    });
    let (long_term, default_horizon, exit) = match fixed_point(r, opts)? {
        Ok((ltf, diag)) => (
            json!({
                "status": "converged",
                "v": vec_json(&ltf.v),
                "lambda": ltf.lambda,
                "eigen_coeffs": vec_json(&ltf.eigen_coeffs),
                "l_drift": drift_json(&ltf.l_model),
                "diagnostics": diag,
            }),
            diag_horizon(&diag),
            0,
        ),
        Err(div) => {
            let t = div["time"].as_f64().unwrap_or(0.0);
            (
                json!({ "status": "divergent", "message": DIVERGENT_MESSAGE, "divergence": div }),
                t,
                3,
            )
        }
    };

    let horizon = args.horizon.unwrap_or(default_horizon);
    if args.points < 2 {
        return Err(CliError::Input("--points must be at least 2".into()));
    }
    let mut csv = String::from("t,phi");
    for k in 0..r.model.dim() {
        write!(csv, ",psi{}", k + 1).unwrap();
    }
    csv.push('\n');
    if horizon > 0.0 {
        let sol = riccati::integrate(&r.model, &r.kernel, horizon, opts.tol);
        // A divergent flow still has a trajectory up to the point it left bounds.
        if let Ok(sol) = sol {
            for i in 0..args.points {
                let t = horizon * i as f64 / (args.points - 1) as f64;
                let (phi, psi) = sol.eval(t)?;
                let mut row = vec![t, phi];
                row.extend(psi.iter());
                csv.push_str(&csv_row(&row));
                csv.push('\n');
            }
        } else if exit == 0 {
            sol?;
        }
    }
    Ok(Output {
        report: json!({ "risk_neutral": risk_neutral, "long_term": long_term }),
        csv: Some(csv),
        exit,
    })
}

fn diag_horizon(diag: &Value) -> f64 {
    diag["horizon_used"].as_f64().unwrap_or(100.0)
}

pub fn curve(
    r: &Resolved,
    opts: &FixedPointOptions,
    x: &DVector<f64>,
    maturities: &[f64],
) -> Result<Output, CliError> {
    require_admissible(r)?;
    if maturities.is_empty() {
        return Err(CliError::Input("no maturities given".into()));
    }
    if let Some(bad) = maturities.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(CliError::Input(format!("maturities must be positive, got {bad}")));
    }
    r.model.drift(x).map_err(|e| CliError::Input(e.to_string()))?;
    let longest = maturities.iter().copied().fold(0.0, f64::max);
    let sol = riccati::integrate(&r.model, &r.kernel, longest, opts.tol)?;
    let points = riccati::yield_curve(&sol, &r.kernel, x, maturities)?;
    let lambda = match fixed_point(r, opts)? {
        Ok((ltf, _)) => Some(ltf.lambda),
        Err(_) => None,
    };
    let mut csv = String::from("maturity,price,yield\n");
    for p in &points {
        csv.push_str(&csv_row(&[p.maturity, p.price, p.yield_]));
        csv.push('\n');
    }
    if let Some(l) = lambda {
        writeln!(csv, "inf,,{l}").unwrap();
    }
    Ok(Output {
        report: json!({
            "state": vec_json(x),
            "points": points.len(),
            "asymptotic_yield": lambda,
        }),
        csv: Some(csv),
        exit: 0,
    })
}

pub struct SimulateArgs {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub long_term: bool,
}

pub fn simulate_cmd(
    r: &Resolved,
    opts: &FixedPointOptions,
    x0: &DVector<f64>,
    args: &SimulateArgs,
) -> Result<Output, CliError> {
    require_admissible(r)?;
    let rnf = risk_neutral_factorize(&r.model, &r.kernel)?;
    let ltf = if args.long_term {
        match fixed_point(r, opts)? {
            Ok((ltf, _)) => Some(ltf),
            Err(_) => return Err(CliError::Divergent(DIVERGENT_MESSAGE.into())),
        }
    } else {
        None
    };
    let steps = (args.horizon / args.dt).round() as usize;
    let cfg = SimConfig::new(args.paths, args.horizon, args.dt, args.seed).with_record_every(steps.max(1));
    cfg.n_steps()?;
    let paths = simulate(&r.model, x0, &cfg)?;
    let kp = kernel_processes(&paths, &r.kernel, &rnf, ltf.as_ref())?;

    let mut series = vec![("M0", &kp.m0)];
    if let Some(m) = kp.m_inf.as_ref() {
        series.push(("Minf", m));
    }
    let mut csv = String::from("process,t,mean,stderr,n,z,passed\n");
    let mut tests = Vec::new();
    let mut all_pass = true;
    for (name, s) in series {
        let est = martingale_test(s, args.horizon)?;
        let z = (est.mean - 1.0) / est.stderr;
        let pass = est.within(1.0, 3.0);
        all_pass &= pass == Some(true);
        let pass_text = match pass {
            Some(true) => "true",
            Some(false) => "false",
            None => "undefined",
        };
        writeln!(
            csv,
            "{name},{},{},{},{},{},{pass_text}",
            args.horizon, est.mean, est.stderr, est.n, z
        )
        .unwrap();
        tests.push(json!({
            "process": name,
            "t": args.horizon,
            "mean": est.mean,
            "stderr": est.stderr,
            "n": est.n,
            "z": if z.is_finite() { json!(z) } else { Value::Null },
            "passed": pass,
            "note": if pass.is_none() { json!("standard error undefined for fewer than two paths") } else { Value::Null },
        }));
    }
    Ok(Output {
        report: json!({
            "paths": args.paths,
            "dt": args.dt,
            "horizon": args.horizon,
            "x0": vec_json(x0),
            "measure": cfg.measure.to_string(),
            "tests": tests,
            "all_passed": all_pass,
        }),
        csv: Some(csv),
        exit: if all_pass { 0 } else { 1 },
    })
}

pub fn convergence(
    r: &Resolved,
    opts: &FixedPointOptions,
    x: &DVector<f64>,
    t: f64,
    periods: &[f64],
) -> Result<Output, CliError> {
    require_admissible(r)?;
    if !(t > 0.0) {
        return Err(CliError::Input(format!("holding period must be positive, got {t}")));
    }
    if periods.is_empty() {
        return Err(CliError::Input("no remaining maturities given".into()));
    }
    if let Some(bad) = periods.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
        return Err(CliError::Input(format!("remaining maturities must be positive, got {bad}")));
    }
    r.model.drift(x).map_err(|e| CliError::Input(e.to_string()))?;
    let longest = periods.iter().copied().fold(0.0, f64::max);
    let sol = riccati::integrate(&r.model, &r.kernel, t + longest, opts.tol)?;
    let ltf = fixed_point(r, opts)?.ok().map(|(l, _)| l);
    let reference = ltf.as_ref().map(|l| l.long_bond(t, x, x));

    let mut csv = String::from("T,holding_return,long_bond\n");
    let mut last_gap = None;
    for &p in periods {
        let ret = riccati::holding_return(&sol, &r.kernel, t, p, x, x)?;
        match reference {
            Some(b) => {
                writeln!(csv, "{p},{ret},{b}").unwrap();
                last_gap = Some((ret / b - 1.0).abs());
            }
            None => writeln!(csv, "{p},{ret},").unwrap(),
        }
    }
    Ok(Output {
        report: json!({
            "t": t,
            "state": vec_json(x),
            "long_bond": reference,
            "relative_gap_at_longest": last_gap,
            "status": if ltf.is_some() { "converged" } else { "divergent" },
            "message": if ltf.is_some() { Value::Null } else { json!(DIVERGENT_MESSAGE) },
        }),
        csv: Some(csv),
        exit: if ltf.is_some() { 0 } else { 3 },
    })
}
