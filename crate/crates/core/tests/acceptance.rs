//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use affine_ltf::factorization::{
    find_fixed_point, long_term_factorize, qve_residual, risk_neutral_factorize,
    state_volatilities, DivergenceReason, FixedPointOptions, FixedPointOutcome,
    LongTermFactorization,
};
use affine_ltf::model::{AffineModel, PricingKernel};
use affine_ltf::oracles::{
    bhs_model, breeden_closed_form, cir_closed_form, gaussian_nonreverting, vasicek_closed_form,
    BreedenParams, CirParams, VasicekParams,
};
use affine_ltf::riccati::{self, Tolerances};
use affine_ltf::simulate::{
    bond_price_mc, discount_mc, kernel_processes, martingale_test, simulate, McEstimate, Measure,
    SimConfig,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn breeden_params() -> BreedenParams {
    BreedenParams {
        kappa_v: 0.1,
        theta_v: 1.0,
        sigma_v: -0.05,
        kappa_g: 0.2,
        theta_g: 0.02,
        sigma_g: 0.01,
        sigma_c: 0.005,
        risk_aversion: 0.5,
        discount_rate: 0.001,
    }
}

fn converged(model: &AffineModel, pk: &PricingKernel) -> Result<(LongTermFactorization, f64, f64), String> {
    match find_fixed_point(model, pk, &FixedPointOptions::default()).map_err(|e| e.to_string())? {
        FixedPointOutcome::Converged {
            factorization,
            diagnostics,
        } => Ok((factorization, diagnostics.residual, diagnostics.limit_gap)),
        FixedPointOutcome::Divergent(d) => Err(format!("divergent: {d}")),
    }
}

fn c1() -> Outcome {
    let start = Instant::now();
    let (model, pk) = bhs_model();
    let ltf = match converged(&model, &pk) {
        Ok((l, _, _)) => l,
        Err(e) => return (false, e),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let ok = (ltf.v[0] + 0.2449).abs() <= 5e-4
        && (ltf.v[1] - 47.6191).abs() <= 1e-3
        && (ltf.v[2] + 1.0).abs() <= 1e-12
        && (ltf.lambda - 0.0003163).abs() <= 1e-6
        && elapsed < 5.0;
    (
        ok,
        format!(
            "v = ({:.7}, {:.7}, {}), lambda = {:.8}, {elapsed:.3}s",
            ltf.v[0], ltf.v[1], ltf.v[2], ltf.lambda
        ),
    )
}

fn c2() -> Outcome {
    let (model, pk) = bhs_model();
    let rnf = risk_neutral_factorize(&model, &pk).unwrap();
    let ltf = match long_term_factorize(&model, &pk, &FixedPointOptions::default()) {
        Ok(l) => l,
        Err(e) => return (false, e.to_string()),
    };
    let q_printed = [-0.0119, -0.00004522, 0.0129];
    let l_printed = [-0.0115, -0.00005074, 0.0153];
    let mut worst: f64 = 0.0;
    for r in 0..3 {
        worst = worst.max((rnf.q_model.beta()[(r, 0)] - q_printed[r]).abs());
        worst = worst.max((ltf.l_model.beta()[(r, 0)] - l_printed[r]).abs());
    }
    let h1_gap = (rnf.h[0] + 0.00057798).abs();
    let exact_h = rnf.h[1] == 1.0 && rnf.h[2] == 0.0 && (rnf.g - 0.0035).abs() < 1e-15;
    (
        worst <= 1e-4 && h1_gap <= 1e-4 && exact_h,
        format!(
            "max drift gap {worst:.2e}; Q col = ({:.7}, {:.4e}, {:.7}); L col = ({:.7}, {:.4e}, {:.7}); h1 = {:.8}",
            rnf.q_model.beta()[(0, 0)],
            rnf.q_model.beta()[(1, 0)],
            rnf.q_model.beta()[(2, 0)],
            ltf.l_model.beta()[(0, 0)],
            ltf.l_model.beta()[(1, 0)],
            ltf.l_model.beta()[(2, 0)],
            rnf.h[0]
        ),
    )
}

fn c3() -> Outcome {
    let mut curve_err: f64 = 0.0;
    let mut fp_err: f64 = 0.0;
    let grid: Vec<f64> = (0..=500).map(|i| i as f64 * 0.1).collect();
    for u in [0.0, 0.5, -1.5] {
        let p = CirParams::new(0.02, 0.5, 0.2, u);
        let cf = cir_closed_form(p).unwrap();
        let (model, pk) = (p.model(), p.kernel());
        let sol = riccati::integrate(&model, &pk, 50.0, Tolerances::default()).unwrap();
        for &t in &grid {
            let (phi, psi) = sol.eval(t).unwrap();
            curve_err = curve_err.max((phi - cf.phi(t)).abs()).max((psi[0] - cf.psi(t)).abs());
        }
        match long_term_factorize(&model, &pk, &FixedPointOptions::default()) {
            Ok(l) => fp_err = fp_err.max((l.v[0] - cf.v).abs()).max((l.lambda - cf.lambda).abs()),
            Err(e) => return (false, format!("CIR u={u}: {e}")),
        }
    }
    for u in [0.0, 0.8, -2.0] {
        let p = VasicekParams::new(0.5, 0.05, 0.02, u);
        let cf = vasicek_closed_form(p).unwrap();
        let (model, pk) = (p.model(), p.kernel());
        let sol = riccati::integrate(&model, &pk, 50.0, Tolerances::default()).unwrap();
        for &t in &grid {
            let (phi, psi) = sol.eval(t).unwrap();
            curve_err = curve_err.max((phi - cf.phi(t)).abs()).max((psi[0] - cf.psi(t)).abs());
        }
        match long_term_factorize(&model, &pk, &FixedPointOptions::default()) {
            Ok(l) => fp_err = fp_err.max((l.v[0] - cf.v).abs()).max((l.lambda - cf.lambda).abs()),
            Err(e) => return (false, format!("Vasicek u={u}: {e}")),
        }
    }
    let bp = breeden_params();
    let cf = breeden_closed_form(&bp).unwrap();
    match long_term_factorize(&bp.model(), &bp.kernel(), &FixedPointOptions::default()) {
        Ok(l) => {
            fp_err = fp_err
                .max((l.v[0] - cf.v1).abs())
                .max((l.v[1] - cf.v2).abs())
                .max((l.lambda - cf.lambda).abs())
        }
        Err(e) => return (false, format!("Breeden: {e}")),
    }
    (
        curve_err < 1e-8 && fp_err < 1e-8,
        format!("max curve error {curve_err:.2e}, max (v, lambda) error {fp_err:.2e}"),
    )
}

fn example_models() -> Vec<(&'static str, AffineModel, PricingKernel)> {
    let mut out = Vec::new();
    for (name, u) in [("cir", 0.0), ("cir-u", 0.5)] {
        let p = CirParams::new(0.02, 0.5, 0.2, u);
        out.push((name, p.model(), p.kernel()));
    }
    let p = CirParams::new(0.0, 0.5, 0.2, 0.0);
    out.push(("cir-degenerate", p.model(), p.kernel()));
    let p = VasicekParams::new(0.5, 0.05, 0.02, 0.8);
    out.push(("vasicek", p.model(), p.kernel()));
    let bp = breeden_params();
    out.push(("breeden", bp.model(), bp.kernel()));
    let (m, pk) = bhs_model();
    out.push(("bhs", m, pk));
    out
}

fn c4() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for (name, model, pk) in example_models() {
        match converged(&model, &pk) {
            Ok((ltf, _, gap)) => {
                let res = qve_residual(&model, &pk, &ltf.v).amax();
                worst_res = worst_res.max(res);
                worst_gap = worst_gap.max(gap);
            }
            Err(e) => return (false, format!("{name}: {e}")),
        }
    }
    (
        worst_res < 1e-10 && worst_gap < 1e-6,
        format!("max QVE residual {worst_res:.2e}, max ODE-limit gap {worst_gap:.2e}"),
    )
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for (name, model, pk) in example_models() {
        let ltf = match long_term_factorize(&model, &pk, &FixedPointOptions::default()) {
            Ok(l) => l,
            Err(e) => return (false, format!("{name}: {e}")),
        };
        for _ in 0..100 {
            let x = DVector::from_fn(model.dim(), |k, _| {
                if k < model.m() {
                    rng.random_range(0.0..3.0)
                } else {
                    rng.random_range(-2.0..2.0)
                }
            });
            let vols = state_volatilities(&model, &pk, &ltf, &x).unwrap();
            let scale = vols.mpr.amax().max(vols.sigma_inf.amax()).max(vols.mpr_inf.amax());
            let gap = (&vols.mpr - &vols.sigma_inf - &vols.mpr_inf).amax();
            let rel = if scale > 0.0 { gap / scale } else { gap };
            worst = worst.max(rel);
        }
    }
    (worst <= 1e-14, format!("max relative gap {worst:.2e} over 600 states"))
}

fn mc_line(label: &str, est: &McEstimate, target: f64) -> (bool, String) {
    let ok = est.within(target, 3.0) == Some(true);
    let z = (est.mean - target) / est.stderr;
    (ok, format!("{label} = {:.6} +/- {:.2e} (z = {z:.2})", est.mean, est.stderr))
}

fn c6() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let runs: Vec<(&str, AffineModel, PricingKernel, DVector<f64>)> = {
        let p = CirParams::new(0.02, 0.5, 0.2, 0.5);
        let (bm, bpk) = bhs_model();
        let x_bhs = bm.stationary_mean().unwrap();
        vec![("cir", p.model(), p.kernel(), v1(0.04)), ("bhs", bm, bpk, x_bhs)]
    };
    for (name, model, pk, x0) in runs {
        let rnf = risk_neutral_factorize(&model, &pk).unwrap();
        let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
        let cfg = SimConfig::new(100_000, 1.0, 1.0 / 250.0, 2024).with_record_every(250);
        let paths = simulate(&model, &x0, &cfg).unwrap();
        let kp = kernel_processes(&paths, &pk, &rnf, Some(&ltf)).unwrap();
        let m0 = martingale_test(&kp.m0, 1.0).unwrap();
        let minf = martingale_test(kp.m_inf.as_ref().unwrap(), 1.0).unwrap();
        for (label, est) in [("M0", m0), ("Minf", minf)] {
            let (pass, text) = mc_line(&format!("{name} E[{label}_1]"), &est, 1.0);
            ok &= pass;
            parts.push(text);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 180.0;
    parts.push(format!("{elapsed:.1}s"));
    (ok, parts.join("; "))
}

fn c7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let cir = CirParams::new(0.02, 0.5, 0.2, 0.5);
    let cir_price = cir_closed_form(cir).unwrap().bond_price(1.0, 0.04);
    let vas = VasicekParams::new(0.5, 0.05, 0.02, 0.8);
    let vas_price = vasicek_closed_form(vas).unwrap().bond_price(5.0, 0.05);
    let runs = [
        ("cir T=1", cir.model(), cir.kernel(), v1(0.04), 1.0, cir_price),
        ("vasicek T=5", vas.model(), vas.kernel(), v1(0.05), 5.0, vas_price),
    ];
    for (name, model, pk, x0, maturity, exact) in runs {
        let rnf = risk_neutral_factorize(&model, &pk).unwrap();
        let steps = (maturity * 250.0) as usize;
        let cfg = SimConfig::new(100_000, maturity, 1.0 / 250.0, 77).with_record_every(steps);
        let p_paths = simulate(&model, &x0, &cfg).unwrap();
        let p_est = bond_price_mc(&p_paths, &pk, maturity).unwrap();
        let q_cfg = SimConfig {
            seed: 78,
            ..cfg.clone()
        }
        .with_measure(Measure::Q);
        let q_paths = simulate(&rnf.q_model, &x0, &q_cfg).unwrap();
        let q_est = discount_mc(&q_paths, &rnf, maturity).unwrap();
        let (pass, text) = mc_line(&format!("{name} P-sim"), &p_est, exact);
        ok &= pass;
        let joint = p_est.consistent_with(&q_est, 3.0) == Some(true);
        ok &= joint;
        parts.push(format!(
            "{text} vs exact {exact:.6}; Q-sim {:.6} +/- {:.2e} ({})",
            q_est.mean,
            q_est.stderr,
            if joint { "consistent" } else { "INCONSISTENT" }
        ));
    }
    (ok, parts.join("; "))
}

fn c8() -> Outcome {
    let (model, pk) = gaussian_nonreverting(-0.1, 0.05, 0.02);
    let reason = match find_fixed_point(&model, &pk, &FixedPointOptions::default()) {
        Ok(FixedPointOutcome::Divergent(d)) => Some(d.reason),
        _ => None,
    };
    let divergent = reason == Some(DivergenceReason::NoSettling);

    let p = CirParams::new(0.0, 0.5, 0.2, 0.0);
    let (model, pk) = (p.model(), p.kernel());
    let lambda = long_term_factorize(&model, &pk, &FixedPointOptions::default())
        .map(|l| l.lambda)
        .unwrap_or(f64::NAN);
    let paths = simulate(&model, &v1(0.0), &SimConfig::new(1000, 5.0, 0.01, 8)).unwrap();
    let absorbed = (0..paths.n_paths())
        .all(|p| (0..paths.times().len()).all(|r| paths.state(p, r)[0] == 0.0));
    (
        divergent && lambda.abs() <= 1e-10 && absorbed,
        format!(
            "gaussian kappa=-0.1: {:?}; degenerate CIR lambda = {lambda:.1e}; zero absorbing: {absorbed}",
            reason
        ),
    )
}

fn c9() -> Outcome {
    let (model, pk) = bhs_model();
    let ltf = match long_term_factorize(&model, &pk, &FixedPointOptions::default()) {
        Ok(l) => l,
        Err(e) => return (false, e.to_string()),
    };
    let sol = riccati::integrate(&model, &pk, 612.0, Tolerances::default()).unwrap();
    let mean = model.stationary_mean().unwrap();
    let (sd1, sd2) = (0.2357, 0.00166);
    let mut worst_ratio: f64 = 0.0;
    for d1 in [-3.0, 0.0, 3.0] {
        for d2 in [-3.0, 0.0, 3.0] {
            let mut x = mean.clone();
            x[0] = (x[0] + d1 * sd1).max(0.0);
            x[1] += d2 * sd2;
            let ret = riccati::holding_return(&sol, &pk, 12.0, 600.0, &x, &x).unwrap();
            let long = ltf.long_bond(12.0, &x, &x);
            worst_ratio = worst_ratio.max((ret / long - 1.0).abs());
        }
    }

    let psi360 = sol.psi(360.0).unwrap();
    let rel1 = (psi360[0] - ltf.v[0]).abs() / ltf.v[0].abs();
    let rel2 = (psi360[1] - ltf.v[1]).abs() / ltf.v[1].abs();

    // Monotone after the first 24 months.
    let mut monotone = true;
    let mut prev = sol.psi(24.0).unwrap();
    let mut t = 24.0;
    while t < 600.0 {
        t += 1.0;
        let cur = sol.psi(t).unwrap();
        monotone &= cur[0] <= prev[0] + 1e-12 && cur[1] >= prev[1] - 1e-12;
        prev = cur;
    }
    (
        worst_ratio < 1e-3 && rel1 < 1e-2 && rel2 < 1e-2 && monotone,
        format!(
            "max |B^(t+T)/B^inf - 1| at T=600 = {worst_ratio:.2e}; |Psi(360) - v|/|v| = ({rel1:.2e}, {rel2:.2e}); monotone after 24: {monotone}"
        ),
    )
}

fn c10() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let cir = CirParams::new(0.02, 0.5, 0.2, 0.0);
    let vas = VasicekParams::new(0.5, 0.05, 0.02, 0.0);
    let (bm, bpk) = bhs_model();
    let x_bhs = bm.stationary_mean().unwrap();
    let runs = [
        ("cir", cir.model(), cir.kernel(), v1(0.04), 1000.0),
        ("vasicek", vas.model(), vas.kernel(), v1(0.05), 1000.0),
        ("bhs", bm, bpk, x_bhs, 5000.0),
    ];
    for (name, model, pk, x, t) in runs {
        let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
        let sol = riccati::integrate(&model, &pk, t, Tolerances::default()).unwrap();
        let y = riccati::yield_curve(&sol, &pk, &x, &[t]).unwrap()[0].yield_;
        let gap = (y - ltf.lambda).abs();
        worst = worst.max(gap);
        parts.push(format!("{name} |y({t}) - lambda| = {gap:.2e}"));
    }
    (worst < 1e-3, parts.join("; "))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("C1", "BHS fixed point and eigenvalue", c1),
        ("C2", "BHS risk-neutral and long-forward drifts", c2),
        ("C3", "closed-form oracle agreement", c3),
        ("C4", "stationarity residual and ODE-limit agreement", c4),
        ("C5", "volatility decomposition identity", c5),
        ("C6", "martingale tests", c6),
        ("C7", "Monte Carlo bond prices", c7),
        ("C8", "non-existence and degenerate cases", c8),
        ("C9", "convergence of roll-over returns", c9),
        ("C10", "asymptotic yields", c10),
    ];
    let mut failed = 0;
    for (id, title, run) in criteria {
        let (ok, detail) = run();
        if !ok {
            failed += 1;
        }
        println!("[{}] {id} {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
