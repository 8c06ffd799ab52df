//! Regularity measurements: oscillation profiles over shrinking balls,
//! log-log exponent fits, closed-form sharp exponents, non-degeneracy
//! verdicts, the zoom rescaling of a problem, boundary growth envelopes,
//! Lipschitz quotients, and exact radial solutions used as oracles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashSet;
use std::sync::Arc;

use crate::barriers::{distance_to_boundary, surface_distance};
use crate::error::{Error, Result};
use crate::grid::{ball_nodes, gradient, scalar_fn, DomainSpec, Grid, GridFunction, NodeClass};
use crate::model::{ProblemData, ProblemSpec, VariantData};
use crate::solver::{solve_any, SolveOptions, SolveReport};

/// Fixed seed for the sampled far pairs of [`lipschitz_quotient`].
pub const LIPSCHITZ_SEED: u64 = 0x5EED;

/// Oscillation of a grid function around a center at a ladder of radii:
/// `osc0(r) = sup_{B_r} |u - u(x0)|` and two surrogates for the affine
/// infimum `osc1(r) = inf_l sup_{B_r} |u - l|`: one anchored at the value
/// and discrete gradient at the center, one a least-squares affine fit.
#[derive(Clone, Debug, Serialize)]
pub struct OscillationProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub osc0: Vec<f64>,
    pub osc1_grad: Vec<f64>,
    pub osc1_lsq: Vec<f64>,
    /// Magnitude of the discrete gradient at the center (reported next
    /// to the radii so callers can judge the degenerate-slope regime).
    pub grad_norm: f64,
}

/// Result of a least-squares power-law fit `osc ~ C r^slope` in log-log
/// coordinates.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExponentEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Smallest and largest radius that entered the fit.
    pub radii_range: (f64, f64),
    /// Number of (radius, oscillation) pairs used.
    pub used: usize,
}

impl ExponentEstimate {
    /// For first-order fits `osc1 ~ r^{1+alpha}` this is the implied
    /// Hölder-gradient exponent.
    pub fn holder_alpha(&self) -> f64 {
        self.slope - 1.0
    }
}

/// Which oscillation order an exponent fit consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OscOrder {
    Zeroth,
    First,
}

/// Locate the grid node sitting at `x0`, to within an absolute snap of
/// `1e-9 (1 + |x0|)` per coordinate.
pub(crate) fn node_at(grid: &Grid, x0: &[f64]) -> Result<usize> {
    if x0.len() != grid.dim() {
        return Err(Error::Validation(format!(
            "point has {} coordinates, grid has {}",
            x0.len(),
            grid.dim()
        )));
    }
    let mut lin = 0usize;
    for k in 0..grid.dim() {
        let t = (x0[k] - grid.domain.lo[k]) / grid.h;
        let idx = t.round();
        if (t - idx).abs() > 1e-9 * (1.0 + x0[k].abs()) / grid.h || idx < 0.0 {
            return Err(Error::Validation(format!(
                "point {x0:?} is not aligned with the grid in axis {k}"
            )));
        }
        let idx = idx as usize;
        if idx >= grid.dims[k] {
            return Err(Error::Validation(format!(
                "point {x0:?} lies outside the grid in axis {k}"
            )));
        }
        lin += idx * grid.strides[k];
    }
    Ok(lin)
}

/// Solve the small normal equations of an affine least-squares fit
/// `u ~ a0 + sum_k b_k (x_k - x0_k)` over the given nodes and return the
/// sup of the residual. Partial-pivot Gauss on an (n+1) x (n+1) system.
fn affine_lsq_sup(u: &GridFunction, nodes: &[usize], x0: &[f64]) -> Result<f64> {
    let n = x0.len();
    let m = n + 1;
    let mut ata = vec![0.0f64; m * m];
    let mut atb = vec![0.0f64; m];
    for &i in nodes {
        let x = u.grid.node_point(i);
        let mut row = vec![0.0f64; m];
        row[0] = 1.0;
        for k in 0..n {
            row[k + 1] = x[k] - x0[k];
        }
        for a in 0..m {
            for b in 0..m {
                ata[a * m + b] += row[a] * row[b];
            }
            atb[a] += row[a] * u.values[i];
        }
    }
    // Gauss elimination with partial pivoting.
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if ata[r * m + col].abs() > ata[piv * m + col].abs() {
                piv = r;
            }
        }
        if ata[piv * m + col].abs() < 1e-300 {
            return Err(Error::NumericFailure(
                "affine fit: normal equations are singular (degenerate node set)".into(),
            ));
        }
        if piv != col {
            for c in 0..m {
                ata.swap(col * m + c, piv * m + c);
            }
            atb.swap(col, piv);
        }
        for r in col + 1..m {
            let factor = ata[r * m + col] / ata[col * m + col];
            for c in col..m {
                ata[r * m + c] -= factor * ata[col * m + c];
            }
            atb[r] -= factor * atb[col];
        }
    }
    let mut coef = vec![0.0f64; m];
    for row in (0..m).rev() {
        let mut acc = atb[row];
        for c in row + 1..m {
            acc -= ata[row * m + c] * coef[c];
        }
        coef[row] = acc / ata[row * m + row];
    }
    let mut sup = 0.0f64;
    for &i in nodes {
        let x = u.grid.node_point(i);
        let mut ell = coef[0];
        for k in 0..n {
            ell += coef[k + 1] * (x[k] - x0[k]);
        }
        sup = sup.max((u.values[i] - ell).abs());
    }
    Ok(sup)
}

/// Measure zeroth- and first-order oscillations of `u` around the grid
/// node at `x0` over the given radii. Radii must be at least `2h`; node
/// sets come from [`ball_nodes`], so the measurement is deterministic.
pub fn oscillation_profile(
    u: &GridFunction,
    x0: &[f64],
    radii: &[f64],
) -> Result<OscillationProfile> {
    let grid = &u.grid;
    let node = node_at(grid, x0)?;
    if grid.class[node] != NodeClass::Interior {
        return Err(Error::Validation(
            "oscillation_profile: the center must be an interior node".into(),
        ));
    }
    if radii.is_empty() {
        return Err(Error::EmptySet("oscillation_profile: no radii given".into()));
    }
    for &r in radii {
        if !(r.is_finite() && r >= 2.0 * grid.h - 1e-12) {
            return Err(Error::Validation(format!(
                "oscillation_profile: radius {r} is below 2h = {}",
                2.0 * grid.h
            )));
        }
    }
    u.ensure_finite("oscillation_profile: input")?;
    let u0 = u.values[node];
    let grad = gradient(u, node)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    let rows: Vec<Result<(f64, f64, f64)>> = radii
        .par_iter()
        .map(|&r| {
            let nodes = ball_nodes(grid, x0, r, false)?;
            let mut osc0 = 0.0f64;
            let mut osc1g = 0.0f64;
            for &i in &nodes {
                let x = grid.node_point(i);
                let diff = u.values[i] - u0;
                osc0 = osc0.max(diff.abs());
                let mut ell = 0.0;
                for k in 0..x.len() {
                    ell += grad[k] * (x[k] - x0[k]);
                }
                osc1g = osc1g.max((diff - ell).abs());
            }
            let osc1l = affine_lsq_sup(u, &nodes, x0)?;
            Ok((osc0, osc1g, osc1l))
        })
        .collect();
    let mut osc0 = Vec::with_capacity(radii.len());
    let mut osc1_grad = Vec::with_capacity(radii.len());
    let mut osc1_lsq = Vec::with_capacity(radii.len());
    for row in rows {
        let (a, b, c) = row?;
        osc0.push(a);
        osc1_grad.push(b);
        osc1_lsq.push(c);
    }
    Ok(OscillationProfile {
        center: x0.to_vec(),
        radii: radii.to_vec(),
        osc0,
        osc1_grad,
        osc1_lsq,
        grad_norm,
    })
}

/// Default geometric radii ladder for a probe center: start at a quarter
/// of the distance to the boundary and halve while staying above `4h`.
pub fn default_radii(spec: &ProblemSpec, x0: &[f64]) -> Result<Vec<f64>> {
    let dist = distance_to_boundary(spec, x0);
    if !(dist > 0.0) {
        return Err(Error::Validation(format!(
            "default_radii: probe center {x0:?} is not inside the domain"
        )));
    }
    let floor = 4.0 * spec.grid.h;
    let mut r = dist / 4.0;
    let mut out = Vec::new();
    while r >= floor - 1e-12 {
        out.push(r);
        r *= 0.5;
    }
    if out.is_empty() {
        return Err(Error::EmptySet(format!(
            "default_radii: dist/4 = {} is below 4h = {floor}; refine the grid",
            dist / 4.0
        )));
    }
    Ok(out)
}

/// Least-squares fit of `ln osc` against `ln r`, using only radii whose
/// oscillation exceeds 1e-14. Exact on pure power laws.
pub fn fit_exponent(profile: &OscillationProfile, order: OscOrder) -> Result<ExponentEstimate> {
    let osc = match order {
        OscOrder::Zeroth => &profile.osc0,
        OscOrder::First => &profile.osc1_lsq,
    };
    let mut pts = Vec::new();
    for (&r, &o) in profile.radii.iter().zip(osc) {
        if o > 1e-14 {
            pts.push((r.ln(), o.ln(), r));
        }
    }
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "exponent fit needs at least 3 radii with oscillation above 1e-14, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit(
            "exponent fit: radii are not distinct".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum();
    let r_squared = if ss_tot < 1e-30 {
        if ss_res < 1e-30 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let mut rmin = f64::INFINITY;
    let mut rmax = 0.0f64;
    for p in &pts {
        rmin = rmin.min(p.2);
        rmax = rmax.max(p.2);
    }
    Ok(ExponentEstimate {
        slope,
        intercept,
        r_squared,
        radii_range: (rmin, rmax),
        used: pts.len(),
    })
}

/// Sharp Hölder-gradient exponent `min{alpha_F (minus a hair when not
/// attained), 1/(p_max+1), beta_g}`. The hair is 1e-6 and stands in for
/// an open-ended supremum; for extremal and linear-trace operators the
/// interior exponent is attained and enters exactly.
pub fn sharp_alpha(
    alpha_f: f64,
    p_max: f64,
    beta_g: f64,
    alpha_f_attained: bool,
) -> Result<f64> {
    if !(alpha_f > 0.0 && alpha_f <= 1.0) {
        return Err(Error::Validation(format!(
            "sharp_alpha: interior exponent must lie in (0,1], got {alpha_f}"
        )));
    }
    if !(beta_g > 0.0 && beta_g <= 1.0) {
        return Err(Error::Validation(format!(
            "sharp_alpha: boundary grade must lie in (0,1], got {beta_g}"
        )));
    }
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(Error::Validation(format!(
            "sharp_alpha: p_max must be positive, got {p_max}"
        )));
    }
    let interior = if alpha_f_attained { alpha_f } else { alpha_f - 1e-6 };
    Ok(interior.min(1.0 / (p_max + 1.0)).min(beta_g))
}

/// Pointwise gradient-Hölder exponent `1/(1 + p(x0))` at a critical
/// point with local degeneracy grade `p(x0)`.
pub fn pointwise_alpha(p_at_x0: f64) -> Result<f64> {
    if !(p_at_x0 > 0.0 && p_at_x0.is_finite()) {
        return Err(Error::Validation(format!(
            "pointwise_alpha: degeneracy grade must be positive, got {p_at_x0}"
        )));
    }
    Ok(1.0 / (1.0 + p_at_x0))
}

/// Growth exponent of a dead-core solution along its free boundary:
/// `(p_max + 2) / (p_max + 1 - sigma)`, finite and above one on the
/// admissible range `0 <= sigma < p_max + 1`.
pub fn deadcore_exponent(p_max: f64, sigma: f64) -> Result<f64> {
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(Error::Validation(format!(
            "deadcore_exponent: p_max must be positive, got {p_max}"
        )));
    }
    if !(sigma >= 0.0 && sigma < p_max + 1.0) {
        return Err(Error::Validation(format!(
            "deadcore_exponent: absorption grade must lie in [0, p_max+1) = [0, {}), got {sigma}",
            p_max + 1.0
        )));
    }
    Ok((p_max + 2.0) / (p_max + 1.0 - sigma))
}

/// Per-radius verdict of the shell non-degeneracy quotient.
#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyVerdict {
    pub r: f64,
    /// `sup_shell (u - u(x0)) / r^{1 + 1/(p_min+1)}`; zero when skipped.
    pub quotient: f64,
    pub pass: bool,
    /// Shell had no nodes; the radius was skipped rather than judged.
    pub skipped: bool,
}

/// Check the shell growth `sup_{|x-x0| in (r-h, r]} (u - u(x0)) >=
/// c0 r^{1+1/(p_min+1)}` at each radius. Radii whose shell contains no
/// grid node are skipped with a flag instead of failing.
pub fn nondegeneracy_check(
    u: &GridFunction,
    x0: &[f64],
    radii: &[f64],
    c0: f64,
    p_min: f64,
) -> Result<Vec<NondegeneracyVerdict>> {
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(Error::Validation(format!(
            "nondegeneracy_check: threshold must be positive, got {c0}"
        )));
    }
    if !(p_min > 0.0 && p_min.is_finite()) {
        return Err(Error::Validation(format!(
            "nondegeneracy_check: p_min must be positive, got {p_min}"
        )));
    }
    let grid = &u.grid;
    let node = node_at(grid, x0)?;
    if grid.class[node] == NodeClass::Exterior {
        return Err(Error::Validation(
            "nondegeneracy_check: the center must be a domain node".into(),
        ));
    }
    u.ensure_finite("nondegeneracy_check: input")?;
    let u0 = u.values[node];
    let beta = 1.0 + 1.0 / (p_min + 1.0);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Validation(format!(
                "nondegeneracy_check: radius must be positive, got {r}"
            )));
        }
        match ball_nodes(grid, x0, r, true) {
            Ok(shell) => {
                let mut sup = f64::NEG_INFINITY;
                for &i in &shell {
                    sup = sup.max(u.values[i] - u0);
                }
                let quotient = sup / r.powf(beta);
                out.push(NondegeneracyVerdict {
                    r,
                    quotient,
                    pass: quotient >= c0,
                    skipped: false,
                });
            }
            Err(Error::EmptySet(_)) | Err(Error::Validation(_)) => {
                out.push(NondegeneracyVerdict {
                    r,
                    quotient: 0.0,
                    pass: false,
                    skipped: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// The zoom transform at data level: fields of the problem seen in the
/// frame `y = x0 + tau x` with amplitude `kappa`, so that
/// `v(x) = u(x0 + tau x)/kappa` solves the returned problem whenever `u`
/// solves the original. The scaled domain is the standard box
/// `[-1,1]^n`.
pub fn scaled_problem_data(
    spec: &ProblemSpec,
    kappa: f64,
    tau: f64,
    x0: &[f64],
) -> Result<ProblemData> {
    if !(kappa.is_finite() && kappa > 0.0 && tau.is_finite() && tau > 0.0) {
        return Err(Error::Validation(format!(
            "scale_problem: kappa and tau must be positive, got kappa={kappa}, tau={tau}"
        )));
    }
    let n = spec.grid.dim();
    if x0.len() != n {
        return Err(Error::Validation(
            "scale_problem: center dimension mismatch".into(),
        ));
    }
    if spec.grid.domain.graph.is_some() {
        return Err(Error::Validation(
            "scale_problem: only box domains support the zoom transform".into(),
        ));
    }
    if !matches!(spec.data.variant, VariantData::Plain) {
        return Err(Error::Validation(
            "scale_problem: only the plain variant scales".into(),
        ));
    }
    for k in 0..n {
        if x0[k] - tau < spec.grid.domain.lo[k] - 1e-12
            || x0[k] + tau > spec.grid.domain.hi[k] + 1e-12
        {
            return Err(Error::Geometry(format!(
                "scale_problem: the image of [-1,1]^n under x -> x0 + tau x leaves the \
                 domain in axis {k} (x0={x0:?}, tau={tau})"
            )));
        }
    }

    let map = {
        let x0 = x0.to_vec();
        move |x: &[f64]| -> Vec<f64> {
            x.iter().zip(&x0).map(|(xi, ci)| ci + tau * xi).collect()
        }
    };
    let d = &spec.data;
    let (pf, qf, af, ff, gf) =
        (d.p.clone(), d.q.clone(), d.a.clone(), d.f.clone(), d.g.clone());

    let mut out = d.clone();
    out.domain = DomainSpec::cube(vec![-1.0; n], vec![1.0; n]);
    {
        let map = map.clone();
        let pf = pf.clone();
        out.p = scalar_fn(move |x: &[f64]| pf(&map(x)));
    }
    {
        let map = map.clone();
        let qf = qf.clone();
        out.q = scalar_fn(move |x: &[f64]| qf(&map(x)));
    }
    {
        let map = map.clone();
        let pf = pf.clone();
        let qf = qf.clone();
        out.a = scalar_fn(move |x: &[f64]| {
            let y = map(x);
            (tau / kappa).powf(pf(&y) - qf(&y)) * af(&y)
        });
    }
    {
        let map = map.clone();
        let pf = pf.clone();
        out.f = scalar_fn(move |x: &[f64]| {
            let y = map(x);
            let p = pf(&y);
            tau.powf(p + 2.0) / kappa.powf(p + 1.0) * ff(&y)
        });
    }
    {
        let map = map.clone();
        out.g = scalar_fn(move |x: &[f64]| gf(&map(x)) / kappa);
    }
    if let Some(coeffs) = &d.coeff_fns {
        let mut scaled = Vec::with_capacity(coeffs.len());
        for c in coeffs {
            let map = map.clone();
            let c = c.clone();
            scaled.push(scalar_fn(move |x: &[f64]| c(&map(x))));
        }
        out.coeff_fns = Some(scaled);
    }
    out.shift = d.shift.iter().map(|z| z * tau / kappa).collect();
    Ok(out)
}

/// [`scaled_problem_data`] sampled back onto a grid with the original
/// spacing.
pub fn scale_problem(
    spec: &ProblemSpec,
    kappa: f64,
    tau: f64,
    x0: &[f64],
) -> Result<ProblemSpec> {
    let data = scaled_problem_data(spec, kappa, tau, x0)?;
    ProblemSpec::build(data, spec.grid.h)
}

/// Solve a problem and its zoom at a node-aligned center, then compare
/// the zoomed solution against the rescaled restriction of the original
/// at shared nodes. The zoomed grid uses spacing `h/tau`, so every one
/// of its nodes maps onto an original node and the two discrete problems
/// are exact rescalings of each other; the returned mismatch measures
/// solver tolerance, not discretization error. The zoomed problem's
/// boundary data is overridden with the restricted original solution.
pub fn scale_equivariance_test(
    spec: &ProblemSpec,
    kappa: f64,
    tau: f64,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<(f64, SolveReport)> {
    const TAUS: [f64; 3] = [1.0, 0.5, 0.25];
    if !TAUS.iter().any(|t| (t - tau).abs() <= 1e-12) {
        return Err(Error::Validation(format!(
            "scale_equivariance_test: tau must be one of {TAUS:?} for node alignment, got {tau}"
        )));
    }
    let grid = &spec.grid;
    node_at(grid, x0)?;

    let (u, _) = solve_any(spec, opts)?;

    let data = scaled_problem_data(spec, kappa, tau, x0)?;
    let h_scaled = grid.h / tau;
    let mut scaled = ProblemSpec::build(data, h_scaled)?;

    // Restriction of the original solution to the zoomed frame, sampled
    // by exact node lookup.
    let pull = |x: &[f64]| -> Result<f64> {
        let y: Vec<f64> = x.iter().zip(x0).map(|(xi, ci)| ci + tau * xi).collect();
        Ok(u.values[node_at(grid, &y)?] / kappa)
    };
    for i in 0..scaled.grid.n_nodes {
        if scaled.grid.class[i] == NodeClass::Dirichlet {
            scaled.g[i] = pull(&scaled.grid.node_point(i))?;
        }
    }

    let (v, report) = solve_any(&scaled, opts)?;
    let mut mismatch = 0.0f64;
    for i in 0..scaled.grid.n_nodes {
        if scaled.grid.class[i] == NodeClass::Exterior {
            continue;
        }
        let want = pull(&scaled.grid.node_point(i))?;
        mismatch = mismatch.max((v.values[i] - want).abs());
    }
    Ok((mismatch, report))
}

/// Per-node verdict of the boundary growth envelope.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthVerdict {
    pub node: usize,
    pub point: Vec<f64>,
    /// Distance to the designated boundary surface.
    pub d: f64,
    /// `|u - g(foot point)|`.
    pub lhs: f64,
    /// `(2/delta) d / (1 + d^gamma)`.
    pub envelope: f64,
    pub pass: bool,
}

/// Summary of a boundary growth check over the collar `{0 < d < delta}`.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthCheck {
    pub verdicts: Vec<GrowthVerdict>,
    pub pass: bool,
    pub checked: usize,
    /// Largest `lhs - envelope - tolerance` seen (negative when all pass).
    pub worst_excess: f64,
    pub tolerance: f64,
}

/// Verify `|u - g| <= (2/delta) d/(1 + d^gamma)` at every node in the
/// boundary collar `{0 < d < delta}`, with an additive tolerance of
/// `10 h`. The reference boundary value is `g` at the vertical foot of
/// the node on the designated surface.
pub fn boundary_growth_check(
    u: &GridFunction,
    spec: &ProblemSpec,
    delta: f64,
    gamma: f64,
) -> Result<GrowthCheck> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Validation(format!(
            "boundary_growth_check: delta must be positive, got {delta}"
        )));
    }
    if !(gamma >= 0.0 && gamma < 1.0) {
        return Err(Error::Validation(format!(
            "boundary_growth_check: gamma must lie in [0,1), got {gamma}"
        )));
    }
    if u.grid.dims != spec.grid.dims || u.grid.h != spec.grid.h {
        return Err(Error::Validation(
            "boundary_growth_check: grid mismatch".into(),
        ));
    }
    u.ensure_finite("boundary_growth_check: input")?;
    let grid = &spec.grid;
    let n = grid.dim();
    let tolerance = 10.0 * grid.h;
    let mut verdicts = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..grid.n_nodes {
        if grid.class[i] == NodeClass::Exterior {
            continue;
        }
        let x = grid.node_point(i);
        let d = surface_distance(spec, &x);
        if !(d > 0.0 && d < delta) {
            continue;
        }
        let mut foot = x.clone();
        foot[n - 1] = match &grid.domain.graph {
            None => grid.domain.lo[n - 1],
            Some(graph) => graph(&x[..n - 1]),
        };
        let g_ref = (spec.data.g)(&foot);
        let lhs = (u.values[i] - g_ref).abs();
        let envelope = (2.0 / delta) * d / (1.0 + d.powf(gamma));
        let excess = lhs - envelope - tolerance;
        worst = worst.max(excess);
        verdicts.push(GrowthVerdict {
            node: i,
            point: x,
            d,
            lhs,
            envelope,
            pass: excess <= 0.0,
        });
    }
    let checked = verdicts.len();
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(GrowthCheck {
        verdicts,
        pass,
        checked,
        worst_excess: if checked == 0 { f64::NEG_INFINITY } else { worst },
        tolerance,
    })
}

/// Largest sampled difference quotient of `u` over a node region.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    /// Seed of the far-pair sampler, recorded for reproducibility.
    pub seed: u64,
    pub near_pairs: usize,
    pub far_pairs: usize,
    pub warning: Option<String>,
}

/// Max of `|u(x) - u(y)| / |x - y|` over all region pairs within `4h` of
/// each other plus 1000 seeded random far pairs.
pub fn lipschitz_quotient(u: &GridFunction, region: &[usize]) -> Result<LipschitzEstimate> {
    let grid = &u.grid;
    if region.is_empty() {
        return Err(Error::EmptySet("lipschitz_quotient: empty region".into()));
    }
    for &i in region {
        if i >= grid.n_nodes || grid.class[i] == NodeClass::Exterior {
            return Err(Error::Validation(format!(
                "lipschitz_quotient: node {i} is not a domain node"
            )));
        }
    }
    u.ensure_finite("lipschitz_quotient: input")?;
    if region.len() == 1 {
        return Ok(LipschitzEstimate {
            value: 0.0,
            seed: LIPSCHITZ_SEED,
            near_pairs: 0,
            far_pairs: 0,
            warning: Some("region has a single node; quotient is trivially 0".into()),
        });
    }
    let n = grid.dim();
    let members: HashSet<usize> = region.iter().copied().collect();
    let quotient = |i: usize, j: usize| -> f64 {
        let a = grid.node_point(i);
        let b = grid.node_point(j);
        let d: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        (u.values[i] - u.values[j]).abs() / d
    };
    let mut value = 0.0f64;
    let mut near_pairs = 0usize;
    // All pairs within 4h: scan an index window of half-width 4 around
    // each region node.
    let reach = 4i64;
    for &i in region {
        let mut idx = vec![0i64; n];
        let mut rem = i;
        for k in 0..n {
            idx[k] = (rem / grid.strides[k]) as i64;
            rem %= grid.strides[k];
        }
        let mut off = vec![-reach; n];
        'windows: loop {
            let mut j = 0usize;
            let mut ok = true;
            let mut d2cells = 0i64;
            for k in 0..n {
                let t = idx[k] + off[k];
                if t < 0 || t >= grid.dims[k] as i64 {
                    ok = false;
                    break;
                }
                d2cells += off[k] * off[k];
                j += t as usize * grid.strides[k];
            }
            if ok && d2cells > 0 && d2cells <= (reach * reach) && j > i && members.contains(&j) {
                value = value.max(quotient(i, j));
                near_pairs += 1;
            }
            for k in (0..n).rev() {
                off[k] += 1;
                if off[k] <= reach {
                    continue 'windows;
                }
                off[k] = -reach;
                if k == 0 {
                    break 'windows;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(LIPSCHITZ_SEED);
    let mut far_pairs = 0usize;
    for _ in 0..1000 {
        let i = region[rng.gen_range(0..region.len())];
        let j = region[rng.gen_range(0..region.len())];
        if i == j {
            continue;
        }
        value = value.max(quotient(i, j));
        far_pairs += 1;
    }
    Ok(LipschitzEstimate {
        value,
        seed: LIPSCHITZ_SEED,
        near_pairs,
        far_pairs,
        warning: None,
    })
}

/// Exact radial solution `u = c |x - x_center|^beta` of the model
/// equation: without absorption, `|Du|^p Laplace(u) = 1` with
/// `beta = (p+2)/(p+1)`; with absorption grade `sigma`,
/// `|Du|^p Laplace(u) = u^sigma` with `beta = (p+2)/(p+1-sigma)`. In
/// both cases `c = [beta^{p+1} (beta + n - 2)]^{-1/denominator}` with
/// the denominator `p+1` resp. `p+1-sigma`.
pub fn exact_radial_solution(
    p: f64,
    sigma: Option<f64>,
    grid: Arc<Grid>,
    x_center: &[f64],
) -> Result<(GridFunction, f64, f64)> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Validation(format!(
            "exact_radial_solution: p must be positive, got {p}"
        )));
    }
    if x_center.len() != grid.dim() {
        return Err(Error::Validation(
            "exact_radial_solution: center dimension mismatch".into(),
        ));
    }
    let n = grid.dim() as f64;
    let (beta, denom) = match sigma {
        None => ((p + 2.0) / (p + 1.0), p + 1.0),
        Some(s) => {
            if !(s >= 0.0 && s < p + 1.0) {
                return Err(Error::Validation(format!(
                    "exact_radial_solution: absorption grade must lie in [0, p+1), got {s}"
                )));
            }
            ((p + 2.0) / (p + 1.0 - s), p + 1.0 - s)
        }
    };
    if !(beta + n - 2.0 > 0.0) {
        return Err(Error::Validation(format!(
            "exact_radial_solution: beta + n - 2 = {} must be positive",
            beta + n - 2.0
        )));
    }
    let c = (beta.powf(p + 1.0) * (beta + n - 2.0)).powf(-1.0 / denom);
    let center = x_center.to_vec();
    let u = GridFunction::from_fn(grid, move |x| {
        let r: f64 = x
            .iter()
            .zip(&center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        c * r.powf(beta)
    })?;
    Ok((u, c, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, scalar_fn, DomainSpec};
    use crate::model::{EllipticityPair, OperatorKind, ProblemData};
    use crate::pucci::default_stencil_radius;
    use crate::solver::residual;

    fn box2(lo: f64, hi: f64, h: f64) -> Arc<Grid> {
        let dom = DomainSpec::cube(vec![lo, lo], vec![hi, hi]);
        Arc::new(build_grid(&dom, h, default_stencil_radius(2)).unwrap())
    }

    fn radial_data() -> ProblemData {
        let mut data = ProblemData::base(
            DomainSpec::cube(vec![-1.0, -1.0], vec![1.0, 1.0]),
            OperatorKind::PucciPlus,
            EllipticityPair::new(1.0, 1.0),
        );
        data.p = scalar_fn(|_| 2.0);
        data.q = scalar_fn(|_| 4.0);
        data.f = scalar_fn(|_| 1.0);
        data
    }

    #[test]
    fn profile_constant_and_affine() {
        let grid = box2(-1.0, 1.0, 0.125);
        let c = GridFunction::from_fn(grid.clone(), |_| 3.25).unwrap();
        let prof = oscillation_profile(&c, &[0.0, 0.0], &[0.25, 0.5]).unwrap();
        assert!(prof.osc0.iter().all(|&o| o == 0.0));
        assert!(prof.osc1_grad.iter().all(|&o| o == 0.0));
        assert!(prof.osc1_lsq.iter().all(|&o| o == 0.0));

        let aff = GridFunction::from_fn(grid, |x| 0.7 * x[0] - 0.2 * x[1] + 0.1).unwrap();
        let prof = oscillation_profile(&aff, &[0.0, 0.0], &[0.25, 0.5]).unwrap();
        for k in 0..2 {
            assert!(prof.osc1_grad[k] <= 1e-12, "grad-anchored {}", prof.osc1_grad[k]);
            assert!(prof.osc1_lsq[k] <= 1e-12, "lsq {}", prof.osc1_lsq[k]);
            assert!(prof.osc0[k] > 0.0);
        }
        assert!(prof.osc0[1] >= prof.osc0[0]);
    }

    #[test]
    fn profile_power_law_exact_on_shell() {
        let h = 1.0 / 16.0;
        let grid = box2(-1.0, 1.0, h);
        let u = GridFunction::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2.powf(2.0 / 3.0)
        })
        .unwrap();
        // Radii that are axis-attained: the ball max of |x|^{4/3} sits at
        // the axis node at distance exactly r.
        for &r in &[4.0 * h, 8.0 * h] {
            let prof = oscillation_profile(&u, &[0.0, 0.0], &[r]).unwrap();
            assert!(
                (prof.osc0[0] - r.powf(4.0 / 3.0)).abs() <= 1e-12,
                "osc0 {} vs {}",
                prof.osc0[0],
                r.powf(4.0 / 3.0)
            );
        }
    }

    #[test]
    fn profile_invariants_on_power_law() {
        let h = 1.0 / 16.0;
        let grid = box2(-1.0, 1.0, h);
        let u = GridFunction::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2.powf(2.0 / 3.0)
        })
        .unwrap();
        let radii = [0.5, 0.25, 0.125];
        let prof = oscillation_profile(&u, &[0.0, 0.0], &radii).unwrap();
        for k in 0..radii.len() {
            assert!(prof.osc0[k] >= 0.0 && prof.osc1_lsq[k] >= 0.0);
            // The least-squares affine never does worse than the
            // gradient-anchored one on these profiles.
            assert!(prof.osc1_lsq[k] <= prof.osc1_grad[k] + 1e-12);
            assert!(prof.osc1_grad[k] <= prof.osc0[k] + prof.grad_norm * radii[k] + 1e-12);
        }
        // Decreasing radii list: oscillations decrease along it.
        assert!(prof.osc0[0] >= prof.osc0[1] && prof.osc0[1] >= prof.osc0[2]);
    }

    #[test]
    fn profile_rejects_bad_input() {
        let grid = box2(-1.0, 1.0, 0.125);
        let u = GridFunction::zeros(grid);
        // Radius below 2h.
        assert!(oscillation_profile(&u, &[0.0, 0.0], &[0.1]).is_err());
        // Center off the lattice.
        assert!(oscillation_profile(&u, &[0.01, 0.0], &[0.5]).is_err());
        // Center on a Dirichlet node.
        assert!(oscillation_profile(&u, &[1.0, 0.0], &[0.5]).is_err());
        // No radii.
        assert!(oscillation_profile(&u, &[0.0, 0.0], &[]).is_err());
    }

    #[test]
    fn default_radii_ladder() {
        let data = radial_data();
        let spec = ProblemSpec::build(data, 1.0 / 16.0).unwrap();
        let radii = default_radii(&spec, &[0.0, 0.0]).unwrap();
        // dist = 1, r0 = 1/4, floor 4h = 1/4: exactly one rung.
        assert_eq!(radii.len(), 1);
        assert!((radii[0] - 0.25).abs() <= 1e-12);
        let fine = ProblemSpec::build(radial_data(), 1.0 / 64.0).unwrap();
        let radii = default_radii(&fine, &[0.0, 0.0]).unwrap();
        assert_eq!(radii.len(), 3); // 1/4, 1/8, 1/16 >= 4/64
        assert!(default_radii(&fine, &[2.0, 0.0]).is_err());
    }

    #[test]
    fn fit_recovers_power_laws() {
        let prof = OscillationProfile {
            center: vec![0.0],
            radii: vec![0.4, 0.2, 0.1],
            osc0: vec![0.4f64.powf(1.5), 0.2f64.powf(1.5), 0.1f64.powf(1.5)],
            osc1_grad: vec![0.0; 3],
            osc1_lsq: vec![0.8, 0.4, 0.2],
            grad_norm: 0.0,
        };
        let fit = fit_exponent(&prof, OscOrder::Zeroth).unwrap();
        assert!((fit.slope - 1.5).abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.used, 3);
        assert_eq!(fit.radii_range, (0.1, 0.4));
        // osc = 2 r: slope 1, intercept ln 2.
        let fit = fit_exponent(&prof, OscOrder::First).unwrap();
        assert!((fit.slope - 1.0).abs() <= 1e-12);
        assert!((fit.intercept - 2.0f64.ln()).abs() <= 1e-12);
        assert!((fit.holder_alpha() - 0.0).abs() <= 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_profiles() {
        let flat = OscillationProfile {
            center: vec![0.0],
            radii: vec![0.4, 0.2, 0.1],
            osc0: vec![0.0, 0.0, 0.0],
            osc1_grad: vec![0.0; 3],
            osc1_lsq: vec![1e-15, 1e-16, 0.0],
            grad_norm: 0.0,
        };
        assert!(matches!(
            fit_exponent(&flat, OscOrder::Zeroth),
            Err(Error::DegenerateFit(_))
        ));
        assert!(matches!(
            fit_exponent(&flat, OscOrder::First),
            Err(Error::DegenerateFit(_))
        ));
        let two = OscillationProfile {
            center: vec![0.0],
            radii: vec![0.4, 0.2, 0.1],
            osc0: vec![0.1, 0.05, 1e-15],
            osc1_grad: vec![0.0; 3],
            osc1_lsq: vec![0.0; 3],
            grad_norm: 0.0,
        };
        assert!(fit_exponent(&two, OscOrder::Zeroth).is_err());
    }

    #[test]
    fn fit_on_sampled_radial_oracle() {
        // The sampled exact solution carries the 4/3 growth; a first-order
        // fit at the origin returns alpha near 1/3 without solving
        // anything.
        let grid = box2(-1.0, 1.0, 1.0 / 32.0);
        let (u, _, _) = exact_radial_solution(2.0, None, grid, &[0.0, 0.0]).unwrap();
        let prof = oscillation_profile(&u, &[0.0, 0.0], &[0.25, 0.125, 0.0625]).unwrap();
        let fit = fit_exponent(&prof, OscOrder::First).unwrap();
        assert!(
            (fit.holder_alpha() - 1.0 / 3.0).abs() <= 0.05,
            "alpha {}",
            fit.holder_alpha()
        );
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn sharp_alpha_formula() {
        assert!((sharp_alpha(1.0, 2.0, 1.0, true).unwrap() - 1.0 / 3.0).abs() <= 1e-15);
        assert!((sharp_alpha(0.5, 9.0, 1.0, false).unwrap() - 0.1).abs() <= 1e-15);
        assert!((sharp_alpha(1.0, 2.0, 0.05, false).unwrap() - 0.05).abs() <= 1e-15);
        // The hair matters only when the interior exponent is the
        // bottleneck.
        let v = sharp_alpha(0.2, 2.0, 1.0, false).unwrap();
        assert!((v - (0.2 - 1e-6)).abs() <= 1e-15);
        assert!(sharp_alpha(0.0, 2.0, 1.0, true).is_err());
        assert!(sharp_alpha(1.0, 2.0, 1.5, true).is_err());
        assert!(sharp_alpha(1.0, -1.0, 1.0, true).is_err());
    }

    #[test]
    fn pointwise_alpha_formula() {
        assert!((pointwise_alpha(2.0).unwrap() - 1.0 / 3.0).abs() <= 1e-15);
        assert!(pointwise_alpha(1e-9).unwrap() > 0.999);
        assert!(pointwise_alpha(0.0).is_err());
        // Agreement with the global formula when p is constant, the
        // interior exponent attained, and the boundary data smooth.
        let p = 2.5;
        let global = sharp_alpha(1.0, p, 1.0, true).unwrap();
        assert!((global - pointwise_alpha(p).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn deadcore_exponent_formula() {
        assert_eq!(deadcore_exponent(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(deadcore_exponent(1.0, 0.0).unwrap(), 1.5);
        assert!(deadcore_exponent(2.0, 3.0).is_err());
        assert!(deadcore_exponent(2.0, -0.1).is_err());
        let near_pole = deadcore_exponent(2.0, 3.0 - 1e-9).unwrap();
        assert!(near_pole > 1e8 && near_pole.is_finite());
    }

    #[test]
    fn nondegeneracy_by_construction_and_constant() {
        let h = 1.0 / 16.0;
        let grid = box2(-1.0, 1.0, h);
        let c0 = 0.7;
        let p_min = 2.0;
        let beta = 1.0 + 1.0 / (p_min + 1.0);
        let u = GridFunction::from_fn(grid.clone(), move |x| {
            let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            c0 * r.powf(beta)
        })
        .unwrap();
        // Axis-attained radii: the shell sup equals c0 r^beta exactly.
        let verdicts =
            nondegeneracy_check(&u, &[0.0, 0.0], &[4.0 * h, 8.0 * h], c0, p_min).unwrap();
        for v in &verdicts {
            assert!(!v.skipped);
            assert!(v.pass, "quotient {} below {c0}", v.quotient);
            assert!((v.quotient - c0).abs() <= 1e-12);
        }
        let flat = GridFunction::from_fn(grid, |_| 1.0).unwrap();
        let verdicts =
            nondegeneracy_check(&flat, &[0.0, 0.0], &[4.0 * h, 8.0 * h], c0, p_min).unwrap();
        assert!(verdicts.iter().all(|v| !v.pass && !v.skipped));
    }

    #[test]
    fn nondegeneracy_radial_with_computed_constant() {
        // Exact radial solution vs the computed non-degeneracy constant:
        // c = (3/4)^{4/3} dominates T0/2 = c/2, so the check passes.
        let grid = box2(-1.0, 1.0, 1.0 / 16.0);
        let (u, _, _) = exact_radial_solution(2.0, None, grid, &[0.0, 0.0]).unwrap();
        let spec = ProblemSpec::build(radial_data(), 0.125).unwrap();
        let root = crate::barriers::nondegeneracy_constant(&spec, 1.0).unwrap();
        let verdicts =
            nondegeneracy_check(&u, &[0.0, 0.0], &[0.125, 0.25], root.c_frak, 2.0).unwrap();
        assert!(verdicts.iter().all(|v| v.pass && !v.skipped));
    }

    #[test]
    fn scale_identity_and_formulas() {
        let spec = ProblemSpec::build(radial_data(), 0.25).unwrap();
        let same = scale_problem(&spec, 1.0, 1.0, &[0.0, 0.0]).unwrap();
        for i in 0..spec.grid.n_nodes {
            assert!((spec.f[i] - same.f[i]).abs() <= 1e-15);
            assert!((spec.g[i] - same.g[i]).abs() <= 1e-15);
            assert!((spec.law.exponents.a[i] - same.law.exponents.a[i]).abs() <= 1e-15);
            assert!((spec.law.exponents.p[i] - same.law.exponents.p[i]).abs() <= 1e-15);
        }

        // p = 1, kappa = 2, tau = 1/2, f = 8: f_scaled = (1/2)^3/2^2 * 8.
        let mut data = radial_data();
        data.p = scalar_fn(|_| 1.0);
        data.q = scalar_fn(|_| 1.0);
        data.f = scalar_fn(|_| 8.0);
        let spec = ProblemSpec::build(data, 0.25).unwrap();
        let scaled = scale_problem(&spec, 2.0, 0.5, &[0.0, 0.0]).unwrap();
        for &i in &scaled.grid.interior {
            assert!((scaled.f[i] - 0.25).abs() <= 1e-14, "f {}", scaled.f[i]);
            assert_eq!(scaled.law.exponents.a[i], 0.0);
        }
    }

    #[test]
    fn scale_round_trip_at_unit_tau() {
        let mut data = radial_data();
        data.a = scalar_fn(|x: &[f64]| 0.5 + 0.25 * x[0]);
        data.g = scalar_fn(|x: &[f64]| 0.3 * x[0] - 0.1 * x[1]);
        data.shift = vec![0.2, -0.1];
        let spec = ProblemSpec::build(data, 0.25).unwrap();
        let fwd = scale_problem(&spec, 3.0, 1.0, &[0.0, 0.0]).unwrap();
        let back = scale_problem(&fwd, 1.0 / 3.0, 1.0, &[0.0, 0.0]).unwrap();
        for i in 0..spec.grid.n_nodes {
            assert!((spec.f[i] - back.f[i]).abs() <= 1e-12);
            assert!((spec.g[i] - back.g[i]).abs() <= 1e-12);
            assert!((spec.law.exponents.a[i] - back.law.exponents.a[i]).abs() <= 1e-12);
        }
        for k in 0..2 {
            assert!((spec.shift[k] - back.shift[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn scale_rejects_escaping_image() {
        let spec = ProblemSpec::build(radial_data(), 0.25).unwrap();
        let res = scale_problem(&spec, 1.0, 0.5, &[0.8, 0.0]);
        assert!(matches!(res, Err(Error::Geometry(_))));
        assert!(scale_problem(&spec, -1.0, 0.5, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn equivariance_identity_and_affine() {
        // Identity parameters: the two runs are the same problem.
        let mut data = radial_data();
        data.f = scalar_fn(|_| 0.0);
        data.g = scalar_fn(|x: &[f64]| 0.4 * x[0] + 0.1 * x[1]);
        let spec = ProblemSpec::build(data, 0.25).unwrap();
        let opts = SolveOptions::default();
        let (mismatch, _) =
            scale_equivariance_test(&spec, 1.0, 1.0, &[0.0, 0.0], &opts).unwrap();
        assert!(mismatch <= 1e-12, "identity mismatch {mismatch}");

        // Affine solutions map to affine solutions exactly.
        let mut data = radial_data();
        data.f = scalar_fn(|_| 0.0);
        data.g = scalar_fn(|x: &[f64]| 0.4 * x[0] + 0.1 * x[1]);
        let spec = ProblemSpec::build(data, 0.125).unwrap();
        let (mismatch, _) =
            scale_equivariance_test(&spec, 2.0, 0.5, &[0.0, 0.0], &opts).unwrap();
        assert!(mismatch <= 1e-12, "affine mismatch {mismatch}");

        assert!(scale_equivariance_test(&spec, 1.0, 0.3, &[0.0, 0.0], &opts).is_err());
    }

    #[test]
    fn growth_check_constant_and_violation() {
        let mut data = radial_data();
        data.g = scalar_fn(|_| 2.0);
        let spec = ProblemSpec::build(data, 0.125).unwrap();
        let u = GridFunction::from_fn(spec.grid.clone(), |_| 2.0).unwrap();
        let chk = boundary_growth_check(&u, &spec, 0.3, 0.5).unwrap();
        assert!(chk.pass);
        assert!(chk.checked > 0);

        // Poke a collar node far above the envelope.
        let mut bad = u.clone();
        let victim = chk.verdicts[0].node;
        bad.values[victim] = 100.0;
        let chk = boundary_growth_check(&bad, &spec, 0.3, 0.5).unwrap();
        assert!(!chk.pass);
        let v = chk.verdicts.iter().find(|v| v.node == victim).unwrap();
        assert!(!v.pass);
        assert!(chk.worst_excess > 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let grid = box2(-1.0, 1.0, 0.125);
        let flat = GridFunction::from_fn(grid.clone(), |_| 5.0).unwrap();
        let region: Vec<usize> = grid.interior.clone();
        let est = lipschitz_quotient(&flat, &region).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.seed, LIPSCHITZ_SEED);

        let aff = GridFunction::from_fn(grid.clone(), |x| 0.7 * x[0]).unwrap();
        let est = lipschitz_quotient(&aff, &region).unwrap();
        assert!((est.value - 0.7).abs() <= 1e-12, "affine slope {}", est.value);

        // |x| in one dimension: quotient exactly 1 across the kink.
        let dom = DomainSpec::cube(vec![-1.0], vec![1.0]);
        let g1 = Arc::new(build_grid(&dom, 0.1, default_stencil_radius(1)).unwrap());
        let absu = GridFunction::from_fn(g1.clone(), |x| x[0].abs()).unwrap();
        let all: Vec<usize> = (0..g1.n_nodes)
            .filter(|&i| g1.class[i] != NodeClass::Exterior)
            .collect();
        let est = lipschitz_quotient(&absu, &all).unwrap();
        assert!((est.value - 1.0).abs() <= 1e-12);

        let single = [region[0]];
        let est = lipschitz_quotient(&flat, &single).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.warning.is_some());
        assert!(lipschitz_quotient(&flat, &[]).is_err());
    }

    #[test]
    fn radial_oracle_constants() {
        let grid = box2(-1.0, 1.0, 0.25);
        let (_, c, beta) = exact_radial_solution(2.0, None, grid.clone(), &[0.0, 0.0]).unwrap();
        assert!((beta - 4.0 / 3.0).abs() <= 1e-15);
        assert!((c - 0.75f64.powf(4.0 / 3.0)).abs() <= 1e-15);

        let dom = DomainSpec::cube(vec![-1.0], vec![1.0]);
        let g1 = Arc::new(build_grid(&dom, 0.05, default_stencil_radius(1)).unwrap());
        let (_, c, beta) = exact_radial_solution(1.0, Some(0.5), g1.clone(), &[0.0]).unwrap();
        assert!((beta - 2.0).abs() <= 1e-15);
        assert!((c - 4.0f64.powf(-2.0 / 3.0)).abs() <= 1e-15);
        let (_, c, beta) = exact_radial_solution(2.0, Some(1.0), g1.clone(), &[0.0]).unwrap();
        assert!((beta - 2.0).abs() <= 1e-15);
        assert!((c - 8.0f64.powf(-0.5)).abs() <= 1e-15);

        assert!(exact_radial_solution(-1.0, None, grid.clone(), &[0.0, 0.0]).is_err());
        assert!(exact_radial_solution(1.0, Some(2.5), g1, &[0.0]).is_err());
        assert!(exact_radial_solution(1.0, None, grid, &[0.0]).is_err());
    }

    #[test]
    fn radial_oracle_consistent_with_discrete_operator() {
        // Away from the center the sampled oracle satisfies the discrete
        // equation to truncation accuracy.
        let h = 1.0 / 16.0;
        let mut data = radial_data();
        data.g = scalar_fn(|x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            0.75f64.powf(4.0 / 3.0) * r2.powf(2.0 / 3.0)
        });
        let spec = ProblemSpec::build(data, h).unwrap();
        let (u, _, _) =
            exact_radial_solution(2.0, None, spec.grid.clone(), &[0.0, 0.0]).unwrap();
        let res = residual(&spec, &u, 0.0).unwrap();
        let mut worst = 0.0f64;
        for &i in &spec.grid.interior {
            let x = spec.grid.node_point(i);
            let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r >= 0.3 {
                worst = worst.max(res.values[i].abs());
            }
        }
        assert!(worst <= 0.05, "annulus residual {worst}");
    }
}
