//! JSON experiment configuration: a one-to-one mirror of the problem
//! types with scalar fields given either as constants or as closed-form
//! expressions. Unknown fields are rejected everywhere.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::expr::compile;
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, ScalarFn};
use crate::model::{
    validate_problem, EllipticityPair, OperatorKind, ProblemData, ProblemSpec, VariantData,
};
use crate::solver::SolveOptions;

pub const SCHEMA_VERSION: u32 = 1;

/// A scalar field over the domain: a constant or a closed-form
/// expression in the coordinates `x1..xn`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum FieldExpr {
    Const(f64),
    Expr(String),
}

impl FieldExpr {
    pub fn build(&self, dim: usize) -> Result<ScalarFn> {
        match self {
            FieldExpr::Const(v) => {
                let v = *v;
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "constant field must be finite, got {v}"
                    )));
                }
                Ok(crate::grid::scalar_fn(move |_| v))
            }
            FieldExpr::Expr(src) => compile(src, dim),
        }
    }

    pub fn constant(v: f64) -> Self {
        FieldExpr::Const(v)
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_field_zero() -> FieldExpr {
    FieldExpr::Const(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Lower graph boundary in the last coordinate, an expression in the
    /// first n-1 coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<FieldExpr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum OperatorKindConfig {
    PucciPlus,
    PucciMinus,
    LinearTrace,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: OperatorKindConfig,
    pub lambda: f64,
    pub big_lambda: f64,
    /// Per-axis diagonal coefficients, linear-trace operators only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<FieldExpr>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum VariantConfig {
    Plain,
    Deadcore { sigma: f64, f0: FieldExpr },
    Obstacle { phi: FieldExpr },
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig::Plain
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: DomainConfig,
    pub h: f64,
    pub operator: OperatorConfig,
    pub p: FieldExpr,
    pub q: FieldExpr,
    #[serde(default = "default_field_zero")]
    pub a: FieldExpr,
    #[serde(default = "default_one")]
    pub l1: f64,
    #[serde(default = "default_one")]
    pub l2: f64,
    #[serde(default = "default_field_zero")]
    pub f: FieldExpr,
    #[serde(default = "default_field_zero")]
    pub g: FieldExpr,
    #[serde(default = "default_one")]
    pub beta_g: f64,
    #[serde(default)]
    pub shift: Option<Vec<f64>>,
    #[serde(default)]
    pub variant: VariantConfig,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemSpec> {
        let n = self.domain.lo.len();
        if n == 0 || self.domain.hi.len() != n {
            return Err(Error::Validation(
                "domain lo/hi must be nonempty and agree in length".into(),
            ));
        }
        let domain = match &self.domain.graph {
            None => DomainSpec::cube(self.domain.lo.clone(), self.domain.hi.clone()),
            Some(expr) => DomainSpec::graph_bounded(
                self.domain.lo.clone(),
                self.domain.hi.clone(),
                expr.build(n.saturating_sub(1))?,
            ),
        };
        let kind = match self.operator.kind {
            OperatorKindConfig::PucciPlus => OperatorKind::PucciPlus,
            OperatorKindConfig::PucciMinus => OperatorKind::PucciMinus,
            OperatorKindConfig::LinearTrace => OperatorKind::LinearTrace,
        };
        let ell = EllipticityPair::new(self.operator.lambda, self.operator.big_lambda);
        let mut data = ProblemData::base(domain, kind, ell);
        if let Some(coeffs) = &self.operator.coeffs {
            let mut fns = Vec::with_capacity(coeffs.len());
            for c in coeffs {
                fns.push(c.build(n)?);
            }
            data.coeff_fns = Some(fns);
        }
        data.p = self.p.build(n)?;
        data.q = self.q.build(n)?;
        data.a = self.a.build(n)?;
        data.l1 = self.l1;
        data.l2 = self.l2;
        data.f = self.f.build(n)?;
        data.g = self.g.build(n)?;
        data.beta_g = self.beta_g;
        data.shift = match &self.shift {
            None => vec![0.0; n],
            Some(z) => {
                if z.len() != n {
                    return Err(Error::Validation(format!(
                        "shift has {} components, domain has {n}",
                        z.len()
                    )));
                }
                z.clone()
            }
        };
        data.variant = match &self.variant {
            VariantConfig::Plain => VariantData::Plain,
            VariantConfig::Deadcore { sigma, f0 } => VariantData::DeadCore {
                sigma: *sigma,
                f0: f0.build(n)?,
            },
            VariantConfig::Obstacle { phi } => VariantData::Obstacle {
                phi: phi.build(n)?,
            },
        };
        let spec = ProblemSpec::build(data, self.h)?;
        let diags = validate_problem(&spec);
        if !diags.is_empty() {
            return Err(Error::Validation(diags.join("; ")));
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Solve,
    Probe,
    Deadcore,
    Obstacle,
    Barriers,
    Scaling,
    Validate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Probe => "probe",
            ExperimentKind::Deadcore => "deadcore",
            ExperimentKind::Obstacle => "obstacle",
            ExperimentKind::Barriers => "barriers",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Validate => "validate",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Probe centers; each must be a grid node.
    pub centers: Vec<Vec<f64>>,
    /// Radii ladder shared by all centers; defaults to the geometric
    /// ladder from a quarter of each center's boundary distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    /// Interior gradient-Hölder exponent fed to the sharp formula.
    #[serde(default = "default_one")]
    pub alpha_f: f64,
    /// Whether the interior exponent is attained (extremal operators).
    #[serde(default = "default_true")]
    pub alpha_f_attained: bool,
}

fn default_true() -> bool {
    true
}

/// Exterior tangent sphere: a ball of radius `r` centered at `x_z`
/// (outside the domain) that touches the closure only at the boundary
/// point `z`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExteriorSphereConfig {
    /// Boundary point the sphere touches.
    pub z: Vec<f64>,
    /// Center of the exterior ball, at distance `r` from `z`.
    pub x_z: Vec<f64>,
    pub r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierRunConfig {
    /// Center of the global supersolution; defaults to the box center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_patch")]
    pub r: f64,
    #[serde(default)]
    pub k_geom: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exterior: Option<ExteriorSphereConfig>,
    /// Positive lower bound on f for the non-degeneracy root; defaults
    /// to the interior minimum of f when positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default = "default_one")]
    pub c_abp: f64,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_patch() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub kappa: f64,
    pub tau: f64,
    pub x0: Vec<f64>,
}

/// Top-level experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barriers: Option<BarrierRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    /// Output directory; overridden by --out on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.solve.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"{
            "schema_version": 1,
            "experiment": "probe",
            "problem": {
                "domain": { "lo": [-1.0, -1.0], "hi": [1.0, 1.0] },
                "h": 0.125,
                "operator": { "kind": "pucci_plus", "lambda": 1.0, "big_lambda": 1.0 },
                "p": { "const": 2.0 },
                "q": { "const": 4.0 },
                "a": { "expr": "0.5 + 0.25*sin(x1)" },
                "l1": 1.0,
                "l2": 1.0,
                "f": { "const": 1.0 },
                "g": { "expr": "0.1*x1 - 0.2*x2" },
                "beta_g": 1.0,
                "shift": [0.0, 0.0],
                "variant": { "kind": "plain" }
            },
            "solve": { "tol_residual": 1e-6 },
            "probe": {
                "centers": [[0.0, 0.0]],
                "radii": [0.5, 0.25],
                "alpha_f": 1.0,
                "alpha_f_attained": true
            }
        }"#
    }

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(sample()).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Probe);
        assert_eq!(cfg.solve.tol_residual, 1e-6);
        let spec = cfg.problem.build().unwrap();
        assert_eq!(spec.grid.dim(), 2);
        assert_eq!(spec.law.exponents.p_min, 2.0);
        // The expression field was sampled.
        let i = spec.grid.interior[0];
        let x = spec.grid.node_point(i);
        assert!(
            (spec.law.exponents.a[i] - (0.5 + 0.25 * x[0].sin())).abs() <= 1e-15
        );
    }

    #[test]
    fn round_trip_is_field_identical() {
        let cfg = ExperimentConfig::from_json(sample()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let again = ExperimentConfig::from_json(&text).unwrap();
        let v1: serde_json::Value = serde_json::from_str(&text).unwrap();
        let v2 = serde_json::to_value(&again).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_versions() {
        let bad = sample().replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = sample().replace("\"h\": 0.125", "\"h\": 0.125, \"bogus\": 3");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = sample().replace("{ \"const\": 2.0 }", "{ \"konst\": 2.0 }");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_problem_fails_at_build() {
        // p = 0 violates the exponent window.
        let bad = sample().replace("\"p\": { \"const\": 2.0 }", "\"p\": { \"const\": 0.0 }");
        let cfg = ExperimentConfig::from_json(&bad).unwrap();
        let err = cfg.problem.build().err().expect("p = 0 must be rejected");
        let msg = err.to_string();
        assert!(msg.contains("A5"), "diagnostic should cite A5, got: {msg}");
    }

    #[test]
    fn variant_configs_build() {
        let dc = sample()
            .replace("\"experiment\": \"probe\"", "\"experiment\": \"deadcore\"")
            // Absorption problems need non-negative boundary data.
            .replace("\"g\": { \"expr\": \"0.1*x1 - 0.2*x2\" }", "\"g\": { \"const\": 1.0 }")
            .replace(
                "{ \"kind\": \"plain\" }",
                "{ \"kind\": \"deadcore\", \"sigma\": 0.5, \"f0\": { \"const\": 1.0 } }",
            );
        let cfg = ExperimentConfig::from_json(&dc).unwrap();
        let spec = cfg.problem.build().unwrap();
        assert_eq!(spec.variant.name(), "deadcore");

        // The obstacle must sit below the boundary data (g >= -0.3 here).
        let ob = sample().replace(
            "{ \"kind\": \"plain\" }",
            "{ \"kind\": \"obstacle\", \"phi\": { \"const\": -1.0 } }",
        );
        let cfg = ExperimentConfig::from_json(&ob).unwrap();
        let spec = cfg.problem.build().unwrap();
        assert_eq!(spec.variant.name(), "obstacle");
    }
}
