//! Model configuration documents.
//!
//! A config either spells out every matrix or names a preset with optional
//! parameter overrides. Matrices are row-major nested lists.

use std::collections::BTreeMap;

use affine_ltf::model::{AffineModel, PricingKernel, TimeUnit, VolStructure};
use affine_ltf::oracles::{
    bhs_model, bhs_printed_model, gaussian_nonreverting, BreedenParams, CirParams, VasicekParams,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnitConfig {
    Years,
    Months,
}

impl From<TimeUnitConfig> for TimeUnit {
    fn from(t: TimeUnitConfig) -> Self {
        match t {
            TimeUnitConfig::Years => TimeUnit::Years,
            TimeUnitConfig::Months => TimeUnit::Months,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_const: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_slope: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_unit: Option<TimeUnitConfig>,
    /// Default state for commands that need one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

pub const PRESETS: &[&str] = &[
    "cir",
    "cir-degenerate",
    "vasicek",
    "gaussian-nonreverting",
    "breeden",
    "bhs",
    "bhs-printed",
];

/// A model ready for the library, plus its default state.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: AffineModel,
    pub kernel: PricingKernel,
    pub x0: Option<DVector<f64>>,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Input(format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })
    }

    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let mut resolved = match &self.preset {
            Some(name) => self.resolve_preset(name)?,
            None => self.resolve_explicit()?,
        };
        if let Some(unit) = &self.time_unit {
            resolved.model = resolved.model.with_time_unit(unit.clone().into());
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != resolved.model.dim() {
                return Err(CliError::Input(format!(
                    "x0 has {} entries, model dimension is {}",
                    x0.len(),
                    resolved.model.dim()
                )));
            }
            resolved.x0 = Some(DVector::from_vec(x0.clone()));
        }
        Ok(resolved)
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn check_params(&self, preset: &str, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Input(format!(
                    "unknown parameter '{key}' for preset '{preset}' (expected one of: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn resolve_preset(&self, name: &str) -> Result<Resolved, CliError> {
        let scalar = |x: f64| Some(DVector::from_element(1, x));
        match name {
            "cir" | "cir-degenerate" => {
                self.check_params(name, &["a", "kappa_p", "sigma", "u", "x0"])?;
                let a_default = if name == "cir" { 0.02 } else { 0.0 };
                let p = CirParams::new(
                    self.param("a", a_default),
                    self.param("kappa_p", 0.5),
                    self.param("sigma", 0.2),
                    self.param("u", 0.0),
                );
                positive(name, "sigma", p.sigma)?;
                Ok(Resolved {
                    model: p.model(),
                    kernel: p.kernel(),
                    x0: scalar(self.param("x0", 0.04)),
                })
            }
            "vasicek" => {
                self.check_params(name, &["kappa", "theta_p", "sigma", "u", "x0"])?;
                let p = VasicekParams::new(
                    self.param("kappa", 0.5),
                    self.param("theta_p", 0.05),
                    self.param("sigma", 0.02),
                    self.param("u", 0.0),
                );
                positive(name, "kappa", p.kappa)?;
                Ok(Resolved {
                    model: p.model(),
                    kernel: p.kernel(),
                    x0: scalar(self.param("x0", p.theta_p)),
                })
            }
            "gaussian-nonreverting" => {
                self.check_params(name, &["kappa", "theta", "sigma", "x0"])?;
                let (model, kernel) = gaussian_nonreverting(
                    self.param("kappa", -0.1),
                    self.param("theta", 0.05),
                    self.param("sigma", 0.02),
                );
                Ok(Resolved {
                    model,
                    kernel,
                    x0: scalar(self.param("x0", 0.05)),
                })
            }
            "breeden" => {
                let keys = [
                    "kappa_v",
                    "theta_v",
                    "sigma_v",
                    "kappa_g",
                    "theta_g",
                    "sigma_g",
                    "sigma_c",
                    "risk_aversion",
                    "discount_rate",
                ];
                self.check_params(name, &keys)?;
                let p = BreedenParams {
                    kappa_v: self.param("kappa_v", 0.1),
                    theta_v: self.param("theta_v", 1.0),
                    sigma_v: self.param("sigma_v", -0.05),
                    kappa_g: self.param("kappa_g", 0.2),
                    theta_g: self.param("theta_g", 0.02),
                    sigma_g: self.param("sigma_g", 0.01),
                    sigma_c: self.param("sigma_c", 0.005),
                    risk_aversion: self.param("risk_aversion", 0.5),
                    discount_rate: self.param("discount_rate", 0.001),
                };
                Ok(Resolved {
                    model: p.model(),
                    kernel: p.kernel(),
                    x0: Some(DVector::from_vec(vec![p.theta_v, p.theta_g])),
                })
            }
            "bhs" | "bhs-printed" => {
                self.check_params(name, &[])?;
                let (model, kernel) = if name == "bhs" {
                    bhs_model()
                } else {
                    bhs_printed_model()
                };
                Ok(Resolved {
                    x0: model.stationary_mean(),
                    model,
                    kernel,
                })
            }
            other => Err(CliError::Input(format!(
                "unknown preset '{other}' (expected one of: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    fn resolve_explicit(&self) -> Result<Resolved, CliError> {
        if !self.params.is_empty() {
            return Err(CliError::Input("'params' is only valid together with 'preset'".into()));
        }
        let m = required(self.m, "m")?;
        let n = required(self.n, "n")?;
        let d = m + n;
        let b = vector("b", required(self.b.as_ref(), "b")?, d)?;
        let beta = matrix("B", required(self.beta.as_ref(), "B")?, d)?;
        let rho = matrix("rho", required(self.rho.as_ref(), "rho")?, d)?;
        let s_const = match &self.s_const {
            Some(v) => vector("s_const", v, d)?,
            None => DVector::zeros(d),
        };
        let s_slope = match &self.s_slope {
            Some(v) => matrix("s_slope", v, d)?,
            None => DMatrix::zeros(d, d),
        };
        let vol = VolStructure::new(rho, s_const, s_slope);
        let unit = self.time_unit.clone().map(TimeUnit::from).unwrap_or_default();
        let model = match (&self.a, &self.alpha) {
            (None, None) => AffineModel::from_volatility(m, n, b, beta, vol, unit),
            (Some(a), Some(alpha)) => {
                let a = matrix("a", a, d)?;
                let alpha = alpha
                    .iter()
                    .enumerate()
                    .map(|(i, rows)| matrix(&format!("alpha[{i}]"), rows, d))
                    .collect::<Result<Vec<_>, _>>()?;
                AffineModel::new(m, n, a, alpha, b, beta, vol, unit)
            }
            _ => {
                return Err(CliError::Input(
                    "give both 'a' and 'alpha' or neither (then both derive from rho and s)".into(),
                ))
            }
        }
        .map_err(|e| CliError::Input(e.to_string()))?;
        let k = required(self.kernel.as_ref(), "kernel")?;
        let kernel = PricingKernel::new(k.gamma, vector("kernel.u", &k.u, d)?, vector("kernel.delta", &k.delta, d)?);
        Ok(Resolved {
            x0: None,
            model,
            kernel,
        })
    }
}

fn positive(preset: &str, key: &str, value: f64) -> Result<(), CliError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!("preset '{preset}': {key} must be positive, got {value}")))
    }
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Input(format!("missing field '{field}'")))
}

fn vector(name: &str, values: &[f64], d: usize) -> Result<DVector<f64>, CliError> {
    if values.len() != d {
        return Err(CliError::Input(format!("{name} has {} entries, expected {d}", values.len())));
    }
    Ok(DVector::from_column_slice(values))
}

fn matrix(name: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Input(format!("{name} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}
