//! Continuous problem data: operators, degeneracy laws, boundary data and
//! problem variants, plus the structural validator and the quantitative
//! continuity / balancing estimates attached to the degeneracy law.
//!
//! Validation is deliberately split from construction: building a
//! [`ProblemSpec`] only samples fields onto the grid (rejecting non-finite
//! samples), while [`validate_problem`] reports every violated structural
//! assumption as a diagnostic string tagged with the assumption code it
//! breaks (A0-A5 for the base model, `deadcore:`/`obstacle:` for variants).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, DomainSpec, Grid, NodeClass, ScalarFn};

/// Uniform ellipticity constants for the extremal operators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EllipticityPair {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl EllipticityPair {
    pub fn new(lambda: f64, big_lambda: f64) -> Self {
        EllipticityPair { lambda, big_lambda }
    }

    pub fn is_valid(&self) -> bool {
        self.lambda > 0.0 && self.lambda <= self.big_lambda && self.big_lambda.is_finite()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum OperatorKind {
    PucciPlus,
    PucciMinus,
    /// Trace form with a diagonal coefficient matrix sampled per axis.
    LinearTrace,
}

/// Second-order part of the equation.
#[derive(Clone)]
pub struct Operator {
    pub kind: OperatorKind,
    pub ellipticity: EllipticityPair,
    /// Diagonal coefficient fields, one per axis (LinearTrace only).
    pub coeff_fns: Option<Vec<ScalarFn>>,
    /// Sampled diagonal coefficients, `coeff[axis][node]` (LinearTrace only).
    pub coeff: Option<Vec<Vec<f64>>>,
}

/// Variable exponents and the modulating coefficient, both as closures and
/// as node samples, with cached sampled extrema.
#[derive(Clone)]
pub struct ExponentFields {
    pub p_fn: ScalarFn,
    pub q_fn: ScalarFn,
    pub a_fn: ScalarFn,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub a_sup: f64,
}

impl ExponentFields {
    pub fn sample(grid: &Grid, p_fn: ScalarFn, q_fn: ScalarFn, a_fn: ScalarFn) -> Result<Self> {
        let p = sample_field(grid, &p_fn, "exponent p")?;
        let q = sample_field(grid, &q_fn, "exponent q")?;
        let a = sample_field(grid, &a_fn, "coefficient a")?;
        let mut fields = ExponentFields {
            p_fn,
            q_fn,
            a_fn,
            p,
            q,
            a,
            p_min: f64::INFINITY,
            p_max: f64::NEG_INFINITY,
            q_min: f64::INFINITY,
            q_max: f64::NEG_INFINITY,
            a_sup: 0.0,
        };
        for i in 0..grid.n_nodes {
            if grid.class[i] == NodeClass::Exterior {
                continue;
            }
            fields.p_min = fields.p_min.min(fields.p[i]);
            fields.p_max = fields.p_max.max(fields.p[i]);
            fields.q_min = fields.q_min.min(fields.q[i]);
            fields.q_max = fields.q_max.max(fields.q[i]);
            fields.a_sup = fields.a_sup.max(fields.a[i]);
        }
        Ok(fields)
    }
}

/// The gradient degeneracy law. The evaluator is exactly the double-phase
/// kernel `(eps+s)^p(x) + a(x) (eps+s)^q(x)`; the sandwich constants are
/// carried along as inputs to the bound-computing operations only.
#[derive(Clone)]
pub struct DegeneracyLaw {
    pub exponents: ExponentFields,
    pub l1: f64,
    pub l2: f64,
    pub domain: DomainSpec,
}

impl DegeneracyLaw {
    /// Kernel value from the sampled fields at a grid node (hot path; no
    /// domain check).
    #[inline]
    pub fn k_node(&self, i: usize, s: f64, eps: f64) -> f64 {
        let t = eps + s;
        t.powf(self.exponents.p[i]) + self.exponents.a[i] * t.powf(self.exponents.q[i])
    }

    /// Kernel value from the closures at an arbitrary point (no domain
    /// check; used by barrier constructions on off-grid points).
    #[inline]
    pub fn k_point(&self, x: &[f64], s: f64, eps: f64) -> f64 {
        let t = eps + s;
        t.powf((self.exponents.p_fn)(x))
            + (self.exponents.a_fn)(x) * t.powf((self.exponents.q_fn)(x))
    }
}

/// Checked kernel evaluation: `K^eps(x, s) = (eps+s)^p(x) + a(x)(eps+s)^q(x)`.
pub fn degeneracy_eval(law: &DegeneracyLaw, x: &[f64], s: f64, eps: f64) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Validation(format!("degeneracy_eval: need s >= 0, got {s}")));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Validation(format!("degeneracy_eval: need eps >= 0, got {eps}")));
    }
    if x.len() != law.domain.dim() || !law.domain.contains(x) {
        return Err(Error::Geometry(format!("degeneracy_eval: point {x:?} outside domain")));
    }
    Ok(law.k_point(x, s, eps))
}

/// Lipschitz moduli of the exponent and coefficient fields, used by
/// [`continuity_bound`].
#[derive(Clone, Copy, Debug, Default)]
pub struct LipschitzModuli {
    pub grad_p: f64,
    pub grad_q: f64,
    pub grad_a: f64,
}

/// Upper bound for `|H_eps(x, xi) - H_eps(y, xi)|` at `|xi| = s`, valid on
/// the punctured unit ball `0 < s <= 1` for `eps` in (0,1):
///
/// `A1 = ||grad p|| (eps+s)^p_min |ln(eps+s)| |x-y|`
/// `A2 = (||grad q|| ||a|| |ln(eps+s)| + ||grad a||) (eps+s)^q_min |x-y|`
pub fn continuity_bound(
    law: &DegeneracyLaw,
    x: &[f64],
    y: &[f64],
    s: f64,
    eps: f64,
    moduli: LipschitzModuli,
) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Validation(format!(
            "continuity_bound: out of range, the bound holds only for 0 < s <= 1 (got {s})"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!(
            "continuity_bound: eps must lie in (0,1), got {eps}"
        )));
    }
    if x.len() != y.len() {
        return Err(Error::Validation("continuity_bound: point dimension mismatch".into()));
    }
    if moduli.grad_p < 0.0 || moduli.grad_q < 0.0 || moduli.grad_a < 0.0 {
        return Err(Error::Validation("continuity_bound: moduli must be nonnegative".into()));
    }
    let dist = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let t = eps + s;
    let log_t = t.ln().abs();
    let e = &law.exponents;
    let a1 = moduli.grad_p * t.powf(e.p_min) * log_t * dist;
    let a2 = (moduli.grad_q * e.a_sup * log_t + moduli.grad_a) * t.powf(e.q_min) * dist;
    Ok(a1 + a2)
}

/// Problem variants layered on the base Dirichlet problem.
#[derive(Clone)]
pub enum VariantData {
    Plain,
    /// Absorption `f0(x) * (u^+)^sigma` on `{u > 0}` replaces the source.
    DeadCore { sigma: f64, f0: ScalarFn },
    /// Unilateral constraint `u >= phi`.
    Obstacle { phi: ScalarFn },
}

/// Sampled counterpart of [`VariantData`].
#[derive(Clone)]
pub enum Variant {
    Plain,
    DeadCore { sigma: f64, f0: Vec<f64> },
    Obstacle { phi: Vec<f64> },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::DeadCore { .. } => "deadcore",
            Variant::Obstacle { .. } => "obstacle",
        }
    }
}

/// Closure-level description of a problem, before any grid is involved.
#[derive(Clone)]
pub struct ProblemData {
    pub domain: DomainSpec,
    pub operator_kind: OperatorKind,
    pub ellipticity: EllipticityPair,
    /// Diagonal coefficient fields for LinearTrace, one per axis.
    pub coeff_fns: Option<Vec<ScalarFn>>,
    pub p: ScalarFn,
    pub q: ScalarFn,
    pub a: ScalarFn,
    pub l1: f64,
    pub l2: f64,
    pub f: ScalarFn,
    pub g: ScalarFn,
    /// Declared Hölder grade of g (metadata; not certified here).
    pub beta_g: f64,
    /// Offset added to the gradient inside the degeneracy factor.
    pub shift: Vec<f64>,
    pub variant: VariantData,
}

impl ProblemData {
    /// A plain problem with unit ellipticity and law constants, zero shift.
    pub fn base(domain: DomainSpec, kind: OperatorKind, ell: EllipticityPair) -> Self {
        ProblemData {
            domain,
            operator_kind: kind,
            ellipticity: ell,
            coeff_fns: None,
            p: Arc::new(|_: &[f64]| 2.0),
            q: Arc::new(|_: &[f64]| 2.0),
            a: Arc::new(|_: &[f64]| 0.0),
            l1: 1.0,
            l2: 1.0,
            f: Arc::new(|_: &[f64]| 0.0),
            g: Arc::new(|_: &[f64]| 0.0),
            beta_g: 1.0,
            shift: Vec::new(),
            variant: VariantData::Plain,
        }
    }
}

/// A problem sampled onto a grid: closures retained for re-sampling (e.g.
/// by the zoom rescaling), node arrays used by the solver.
#[derive(Clone)]
pub struct ProblemSpec {
    pub grid: Arc<Grid>,
    pub data: ProblemData,
    pub operator: Operator,
    pub law: DegeneracyLaw,
    /// Source sampled at non-Exterior nodes.
    pub f: Vec<f64>,
    /// Boundary data at Dirichlet nodes, evaluated at their trace points.
    pub g: Vec<f64>,
    pub beta_g: f64,
    pub shift: Vec<f64>,
    pub variant: Variant,
}

impl ProblemSpec {
    /// Sample a problem onto a grid of spacing `h`, with the stencil radius
    /// implied by the dimension's direction bases.
    pub fn build(data: ProblemData, h: f64) -> Result<ProblemSpec> {
        let radius = crate::pucci::default_stencil_radius(data.domain.dim());
        ProblemSpec::build_with_radius(data, h, radius)
    }

    pub fn build_with_radius(data: ProblemData, h: f64, radius: usize) -> Result<ProblemSpec> {
        data.domain.validate()?;
        let n = data.domain.dim();
        let grid = Arc::new(build_grid(&data.domain, h, radius)?);

        let exponents =
            ExponentFields::sample(&grid, data.p.clone(), data.q.clone(), data.a.clone())?;
        let law = DegeneracyLaw {
            exponents,
            l1: data.l1,
            l2: data.l2,
            domain: data.domain.clone(),
        };

        let f = sample_field(&grid, &data.f, "source f")?;
        let mut g = vec![0.0; grid.n_nodes];
        for &i in &grid.dirichlet {
            let t = grid.trace[i].as_ref().expect("dirichlet node has a trace");
            let v = (data.g)(t);
            if !v.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "boundary data: non-finite sample at trace of node {i}"
                )));
            }
            g[i] = v;
        }

        let coeff = match (&data.operator_kind, &data.coeff_fns) {
            (OperatorKind::LinearTrace, Some(fns)) => {
                if fns.len() != n {
                    return Err(Error::Validation(format!(
                        "operator: need {n} diagonal coefficient fields, got {}",
                        fns.len()
                    )));
                }
                let mut cols = Vec::with_capacity(n);
                for (k, cf) in fns.iter().enumerate() {
                    cols.push(sample_field(&grid, cf, &format!("coefficient A[{k}]"))?);
                }
                Some(cols)
            }
            (OperatorKind::LinearTrace, None) => {
                return Err(Error::Validation(
                    "operator: LinearTrace requires diagonal coefficient fields".into(),
                ));
            }
            _ => None,
        };
        let operator = Operator {
            kind: data.operator_kind,
            ellipticity: data.ellipticity,
            coeff_fns: data.coeff_fns.clone(),
            coeff,
        };

        let shift = if data.shift.is_empty() {
            vec![0.0; n]
        } else if data.shift.len() == n {
            data.shift.clone()
        } else {
            return Err(Error::Validation(format!(
                "shift: expected length {n}, got {}",
                data.shift.len()
            )));
        };

        let variant = match &data.variant {
            VariantData::Plain => Variant::Plain,
            VariantData::DeadCore { sigma, f0 } => Variant::DeadCore {
                sigma: *sigma,
                f0: sample_field(&grid, f0, "reaction f0")?,
            },
            VariantData::Obstacle { phi } => Variant::Obstacle {
                phi: sample_field(&grid, phi, "obstacle")?,
            },
        };

        let beta_g = data.beta_g;
        Ok(ProblemSpec { grid, data, operator, law, f, g, beta_g, shift, variant })
    }

    /// Sup of |f| over interior nodes.
    pub fn f_sup(&self) -> f64 {
        self.grid
            .interior
            .iter()
            .map(|&i| self.f[i].abs())
            .fold(0.0, f64::max)
    }

    /// Sup of |g| over Dirichlet nodes.
    pub fn g_sup(&self) -> f64 {
        self.grid
            .dirichlet
            .iter()
            .map(|&i| self.g[i].abs())
            .fold(0.0, f64::max)
    }
}

fn sample_field(grid: &Grid, f: &ScalarFn, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.n_nodes];
    for i in 0..grid.n_nodes {
        if grid.class[i] != NodeClass::Exterior {
            let v = f(&grid.node_point(i));
            if !v.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "{what}: non-finite sample {v} at node {i}"
                )));
            }
            out[i] = v;
        }
    }
    Ok(out)
}

/// Check every structural assumption and report violations as diagnostics.
/// An empty list means the spec is admissible. Codes: A0 (domain geometry),
/// A1 (ellipticity), A3 (data regularity), A4 (degeneracy sandwich),
/// A5 (exponent ranges); variant checks use `deadcore:` / `obstacle:`.
pub fn validate_problem(spec: &ProblemSpec) -> Vec<String> {
    let mut out = Vec::new();
    let n = spec.grid.dim();

    if spec.data.domain.validate().is_err() {
        out.push("A0: domain box must be nondegenerate (finite lo < hi per axis)".into());
    }
    if let Some(phi) = &spec.data.domain.graph {
        let origin = vec![0.0; n - 1];
        let at0 = phi(&origin);
        if at0.abs() > 1e-10 {
            out.push(format!("A0: boundary graph must satisfy phi(0) = 0, got {at0:.3e}"));
        }
        let h = spec.grid.h;
        for k in 0..n - 1 {
            let mut xp = origin.clone();
            let mut xm = origin.clone();
            xp[k] += h;
            xm[k] -= h;
            let slope = (phi(&xp) - phi(&xm)) / (2.0 * h);
            if slope.abs() > 1e-10 {
                out.push(format!(
                    "A0: boundary graph must be critical at 0; axis {k} slope {slope:.3e}"
                ));
            }
        }
    }

    let ell = spec.operator.ellipticity;
    if !ell.is_valid() {
        out.push(format!(
            "A1: ellipticity must satisfy 0 < lambda <= Lambda, got ({}, {})",
            ell.lambda, ell.big_lambda
        ));
    }
    if let Some(coeff) = &spec.operator.coeff {
        'outer: for (k, col) in coeff.iter().enumerate() {
            for &i in spec.grid.interior.iter() {
                if col[i] < ell.lambda - 1e-14 || col[i] > ell.big_lambda + 1e-14 {
                    out.push(format!(
                        "A1: diagonal coefficient A[{k}] leaves [lambda, Lambda] at node {i} \
                         (value {})",
                        col[i]
                    ));
                    continue 'outer;
                }
            }
        }
    }

    if !(spec.beta_g > 0.0 && spec.beta_g <= 1.0) {
        out.push(format!(
            "A3: boundary grade beta_g must lie in (0, 1], got {}",
            spec.beta_g
        ));
    }

    if !(spec.law.l1 > 0.0 && spec.law.l1 <= spec.law.l2) {
        out.push(format!(
            "A4: sandwich constants must satisfy 0 < L1 <= L2, got ({}, {})",
            spec.law.l1, spec.law.l2
        ));
    } else if spec.law.l1 > 1.0 || spec.law.l2 < 1.0 {
        out.push(format!(
            "A4: the implemented law is the double-phase kernel itself, so the sandwich \
             requires L1 <= 1 <= L2, got ({}, {})",
            spec.law.l1, spec.law.l2
        ));
    }

    let e = &spec.law.exponents;
    if !(e.p_min > 0.0) {
        out.push(format!("A5: p_min must be > 0, got {}", e.p_min));
    }
    if e.p_max > e.q_min + 1e-14 {
        out.push(format!(
            "A5: exponents must be ordered p(x) <= p_max <= q(x), got p_max={} > q_min={}",
            e.p_max, e.q_min
        ));
    }
    if !e.q_max.is_finite() {
        out.push("A5: q_max must be finite".into());
    }
    let neg_a = spec
        .grid
        .interior
        .iter()
        .chain(spec.grid.dirichlet.iter())
        .find(|&&i| e.a[i] < 0.0);
    if let Some(&i) = neg_a {
        out.push(format!(
            "A5: modulating coefficient must be >= 0, got {} at node {i}",
            e.a[i]
        ));
    }

    match &spec.variant {
        Variant::Plain => {}
        Variant::DeadCore { sigma, f0 } => {
            let hi = e.p_max + 1.0;
            if !(*sigma >= 0.0 && *sigma < hi) {
                out.push(format!(
                    "deadcore: sigma out of range [0, p_max+1) = [0, {hi}), got {sigma}"
                ));
            }
            if let Some(&i) = spec.grid.interior.iter().find(|&&i| f0[i] < 0.0) {
                out.push(format!(
                    "deadcore: reaction coefficient f0 must be >= 0, got {} at node {i}",
                    f0[i]
                ));
            }
            if let Some(&i) = spec.grid.dirichlet.iter().find(|&&i| spec.g[i] < 0.0) {
                out.push(format!(
                    "deadcore: boundary data must be >= 0, got {} at node {i}",
                    spec.g[i]
                ));
            }
        }
        Variant::Obstacle { phi } => {
            if let Some(&i) = spec
                .grid
                .dirichlet
                .iter()
                .find(|&&i| phi[i] > spec.g[i] + 1e-12)
            {
                out.push(format!(
                    "obstacle: obstacle exceeds boundary data at node {i} ({} > {})",
                    phi[i], spec.g[i]
                ));
            }
        }
    }

    out
}

/// Result of the balancing-condition estimate.
#[derive(Clone, Copy, Debug)]
pub struct LogHolderReport {
    /// max over admitted pairs of (|p(x)-p(y)| + |q(x)-q(y)|) ln(1/|x-y|)
    pub statistic: f64,
    pub pass: bool,
    /// Coincident sample pairs that had to be skipped.
    pub skipped_pairs: usize,
}

/// Estimate the balancing statistic from point samples of p and q.
///
/// `samples` holds `(point, p(point), q(point))` triples; `scales` is the
/// set of admissible pair distances (each in (0,1)); pairs farther apart
/// than the largest scale are ignored. Coincident pairs are skipped and
/// counted. `pass` compares the statistic against `threshold`.
pub fn log_holder_check(
    samples: &[(Vec<f64>, f64, f64)],
    scales: &[f64],
    threshold: f64,
) -> Result<LogHolderReport> {
    if samples.len() < 2 {
        return Err(Error::Validation("log_holder_check: need at least two samples".into()));
    }
    if scales.is_empty() {
        return Err(Error::Validation("log_holder_check: need at least one scale".into()));
    }
    for &s in scales {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Validation(format!(
                "log_holder_check: scales must lie in (0,1), got {s}"
            )));
        }
    }
    let cutoff = scales.iter().cloned().fold(0.0, f64::max);
    let mut statistic = 0.0f64;
    let mut skipped = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (xi, pi, qi) = &samples[i];
            let (xj, pj, qj) = &samples[j];
            if xi.len() != xj.len() {
                return Err(Error::Validation(
                    "log_holder_check: sample dimension mismatch".into(),
                ));
            }
            let d = xi
                .iter()
                .zip(xj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d <= 1e-14 {
                skipped += 1;
                continue;
            }
            if d > cutoff {
                continue;
            }
            let stat = ((pi - pj).abs() + (qi - qj).abs()) * (1.0 / d).ln();
            statistic = statistic.max(stat);
        }
    }
    Ok(LogHolderReport {
        statistic,
        pass: statistic <= threshold,
        skipped_pairs: skipped,
    })
}
