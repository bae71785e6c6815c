use affine_ltf::factorization::{
    eigen_check, find_fixed_point, long_term_factorize, risk_neutral_factorize,
    state_volatilities, DivergenceReason, FactorError, FixedPointOptions, FixedPointOutcome,
};
use affine_ltf::oracles::{
    bhs_model, bhs_printed_model, bhs_psi2, breeden_closed_form, cir_closed_form,
    gaussian_nonreverting, BreedenParams, CirParams, VasicekParams,
};
use affine_ltf::riccati::{self, Tolerances};
use nalgebra::DVector;

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn breeden(a: f64) -> BreedenParams {
    BreedenParams {
        kappa_v: 0.1,
        theta_v: 1.0,
        sigma_v: -0.05,
        kappa_g: 0.2,
        theta_g: 0.02,
        sigma_g: 0.01,
        sigma_c: 0.005,
        risk_aversion: a,
        discount_rate: 0.001,
    }
}

#[test]
fn bhs_short_rate() {
    let (model, pk) = bhs_model();
    let rnf = risk_neutral_factorize(&model, &pk).unwrap();
    assert!((rnf.g - 0.0035).abs() < 1e-15);
    assert!((rnf.h[0] + 0.00057798).abs() < 1e-8);
    assert_eq!(rnf.h[1], 1.0);
    assert_eq!(rnf.h[2], 0.0);
}

#[test]
fn bhs_printed_matrices_stay_close_on_short_rate_only() {
    let (model, pk) = bhs_printed_model();
    let rnf = risk_neutral_factorize(&model, &pk).unwrap();
    assert!((rnf.h[0] + 0.00057798).abs() < 1e-4);
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    assert!((ltf.v[0] + 0.24072).abs() < 1e-5);
    assert!((ltf.v[1] - 1.0 / 0.021).abs() < 1e-9);
}

#[test]
fn bhs_growth_coordinate_follows_closed_form() {
    let (model, pk) = bhs_model();
    let sol = riccati::integrate(&model, &pk, 600.0, Tolerances::default()).unwrap();
    for i in 0..=60 {
        let t = i as f64 * 10.0;
        let psi = sol.psi(t).unwrap();
        assert!((psi[1] - bhs_psi2(&model, t)).abs() < 1e-8);
        assert_eq!(psi[2], -1.0);
    }
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    assert!((ltf.v[1] - 47.6191).abs() < 1e-3);
    assert_eq!(ltf.v[2], -1.0);
}

#[test]
fn eigenfunction_is_invariant_under_pricing() {
    let p = CirParams::new(0.02, 0.5, 0.2, 0.0);
    let (model, pk) = (p.model(), p.kernel());
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    assert!(eigen_check(&model, &pk, &ltf, 1.0, &v1(0.04)).unwrap() < 1e-8);
    assert!(eigen_check(&model, &pk, &ltf, 10.0, &v1(0.04)).unwrap() < 1e-8);

    let (model, pk) = bhs_model();
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    let x = model.stationary_mean().unwrap();
    assert!(eigen_check(&model, &pk, &ltf, 120.0, &x).unwrap() < 1e-8);
}

#[test]
fn recovery_loading_removes_martingale_component() {
    let (lo, hi) = CirParams::recovery_loadings(0.5, 0.2).unwrap();
    for u in [lo, hi] {
        let p = CirParams::new(0.02, 0.5, 0.2, u);
        let (model, pk) = (p.model(), p.kernel());
        let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
        assert!(ltf.v.amax() < 1e-8, "u={u}: v={}", ltf.v[0]);
        let vols = state_volatilities(&model, &pk, &ltf, &v1(0.04)).unwrap();
        assert!(vols.mpr_inf.amax() < 1e-8);
    }
}

#[test]
fn cir_long_forward_mean_reversion_exceeds_risk_neutral() {
    for u in [0.0, 0.4, -0.7] {
        let p = CirParams::new(0.02, 0.5, 0.2, u);
        let (model, pk) = (p.model(), p.kernel());
        let rnf = risk_neutral_factorize(&model, &pk).unwrap();
        let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
        let kappa_q = -rnf.q_model.beta()[(0, 0)];
        let kappa_l = -ltf.l_model.beta()[(0, 0)];
        assert!(kappa_l > kappa_q);
        let cf = cir_closed_form(p).unwrap();
        assert!((kappa_q - cf.kappa_q).abs() < 1e-15);
        assert!((kappa_l - cf.kappa_l).abs() < 1e-10);
    }
}

#[test]
fn cir_long_bond_volatility() {
    let p = CirParams::new(0.02, 0.5, 0.2, 0.0);
    let (model, pk) = (p.model(), p.kernel());
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    let x = 0.09;
    let vols = state_volatilities(&model, &pk, &ltf, &v1(x)).unwrap();
    let expected = -ltf.v[0] * 0.2 * x.sqrt();
    assert!((vols.sigma_inf[0] - expected).abs() < 1e-15);
    assert!((vols.mpr_inf[0] + expected).abs() < 1e-15);
    assert_eq!(vols.mpr[0], 0.0);
    assert!(state_volatilities(&model, &pk, &ltf, &v1(-0.5)).is_err());
}

#[test]
fn vasicek_long_bond_volatility_is_constant() {
    let p = VasicekParams::new(0.5, 0.05, 0.02, 0.0);
    let (model, pk) = (p.model(), p.kernel());
    let ltf = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap();
    for x in [-0.1, 0.0, 0.05, 0.3] {
        let vols = state_volatilities(&model, &pk, &ltf, &v1(x)).unwrap();
        assert!((vols.sigma_inf[0] + 0.02 / 0.5).abs() < 1e-14);
    }
    // long-run level under the long forward measure
    let theta_l = ltf.l_model.b()[0] / 0.5;
    assert!((theta_l - 0.0484).abs() < 1e-12);
}

#[test]
fn breeden_matches_closed_form_and_tilted_dynamics() {
    let p = breeden(0.5);
    let cf = breeden_closed_form(&p).unwrap();
    let ltf = long_term_factorize(&p.model(), &p.kernel(), &FixedPointOptions::default()).unwrap();
    assert!((ltf.v[0] - cf.v1).abs() < 1e-8);
    assert!((ltf.v[1] - cf.v2).abs() < 1e-8);
    assert!((ltf.lambda - cf.lambda).abs() < 1e-8);
    let l_beta = ltf.l_model.beta();
    assert!((-l_beta[(0, 0)] - cf.kappa_v_l).abs() < 1e-8);
    assert_eq!(l_beta[(1, 1)], -p.kappa_g);
    assert!((ltf.l_model.b()[1] / p.kappa_g - cf.theta_g_l).abs() < 1e-12);
    // a negative volatility loading slows mean reversion under the long forward measure
    assert!(cf.kappa_v_l < p.kappa_v);
}

#[test]
fn breeden_without_real_fixed_point_blows_up() {
    let p = breeden(2.0);
    match find_fixed_point(&p.model(), &p.kernel(), &FixedPointOptions::default()).unwrap() {
        FixedPointOutcome::Divergent(d) => assert_eq!(d.reason, DivergenceReason::BlowUp),
        other => panic!("{other:?}"),
    }
    assert!(breeden_closed_form(&p).is_err());
}

#[test]
fn nonreverting_gaussian_has_no_long_bond() {
    let (model, pk) = gaussian_nonreverting(-0.1, 0.05, 0.02);
    match find_fixed_point(&model, &pk, &FixedPointOptions::default()).unwrap() {
        FixedPointOutcome::Divergent(d) => {
            assert_eq!(d.reason, DivergenceReason::NoSettling);
            assert!(d.last_psi.is_some());
        }
        other => panic!("{other:?}"),
    }
    let err = long_term_factorize(&model, &pk, &FixedPointOptions::default()).unwrap_err();
    assert!(err.to_string().contains("long forward measure does not exist"));
    assert!(matches!(err, FactorError::Divergent(_)));
}

#[test]
fn degenerate_cir_has_zero_eigenvalue() {
    let p = CirParams::new(0.0, 0.5, 0.2, 0.0);
    let ltf = long_term_factorize(&p.model(), &p.kernel(), &FixedPointOptions::default()).unwrap();
    assert!(ltf.lambda.abs() < 1e-10);
    let sol = riccati::integrate(&p.model(), &p.kernel(), 400.0, Tolerances::default()).unwrap();
    let ys = riccati::yield_curve(&sol, &p.kernel(), &v1(0.04), &[10.0, 100.0, 400.0]).unwrap();
    assert!(ys[0].yield_ > ys[1].yield_ && ys[1].yield_ > ys[2].yield_);
    assert!(ys[2].yield_ < 1e-3);
}

#[test]
fn short_maturity_yield_is_short_rate() {
    let p = VasicekParams::new(0.5, 0.05, 0.02, 0.8);
    let (model, pk) = (p.model(), p.kernel());
    let rnf = risk_neutral_factorize(&model, &pk).unwrap();
    let sol = riccati::integrate(&model, &pk, 1.0, Tolerances::default()).unwrap();
    let x = v1(0.031);
    let y = riccati::yield_curve(&sol, &pk, &x, &[1e-4]).unwrap()[0].yield_;
    assert!((y - rnf.short_rate(&x)).abs() < 1e-5);
}
