//! Explicit sub/supersolution constructions and the quantitative
//! constants attached to them: the concave quadratic upper barrier, the
//! exterior-sphere barrier, the boundary distance barrier with its
//! certified collar width, the maximum-principle bound, and the
//! non-degeneracy root.
//!
//! Every constructed object carries a parameter record whose inequalities
//! are re-evaluated numerically at build time, so a consumer can audit
//! that the constants do what they claim on the given grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, GridFunction, NodeClass};
use crate::model::ProblemSpec;
use crate::pucci::{pucci_apply, PucciSign, StencilBasisSet};

/// One audited inequality: a human-readable statement and the slack it
/// was found to hold with (non-negative means satisfied).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub what: String,
    pub margin: f64,
}

/// Constants of a constructed barrier, by kind, together with the audit
/// trail of the inequalities they satisfy.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BarrierParams {
    GlobalSuper {
        m_bar: f64,
        m_star: f64,
        c0: f64,
        /// Properness level the supersolution inequality was verified at.
        eps: f64,
        x0: Vec<f64>,
        provenance: Vec<InequalityRecord>,
    },
    ExteriorSphere {
        alpha0: f64,
        k: f64,
        r: f64,
        big_r: f64,
        z: Vec<f64>,
        x_z: Vec<f64>,
        provenance: Vec<InequalityRecord>,
    },
    DistanceBarrier {
        delta: f64,
        gamma: f64,
        r: f64,
        k_geom: f64,
        /// Upper end of the admissible delta range, min(eta, (1-r)/12).
        cap: f64,
        provenance: Vec<InequalityRecord>,
    },
}

impl BarrierParams {
    pub fn provenance(&self) -> &[InequalityRecord] {
        match self {
            BarrierParams::GlobalSuper { provenance, .. } => provenance,
            BarrierParams::ExteriorSphere { provenance, .. } => provenance,
            BarrierParams::DistanceBarrier { provenance, .. } => provenance,
        }
    }

    /// All recorded inequalities hold (margins non-negative).
    pub fn verify(&self) -> bool {
        self.provenance().iter().all(|r| r.margin >= 0.0)
    }
}

pub(crate) fn distance_to_boundary(spec: &ProblemSpec, x: &[f64]) -> f64 {
    let dom = &spec.grid.domain;
    let mut d = f64::INFINITY;
    for k in 0..dom.dim() {
        d = d.min(x[k] - dom.lo[k]).min(dom.hi[k] - x[k]);
    }
    if let Some(graph) = &dom.graph {
        let vertical = x[x.len() - 1] - graph(&x[..x.len() - 1]);
        d = d.min(vertical);
    }
    d
}

/// Concave quadratic upper barrier `v1 = m_bar - (m_star / 2 lambda n)
/// |x - x0|^2` dominating the boundary data, with `m_star = max{c0,
/// lambda n}`, `c0 = sup|f| / L1`, and `m_bar` minimal such that `v1`
/// exceeds `sup|g|` on every Dirichlet node by 1e-6. The recorded
/// supersolution inequality is `H(x, grad v1) (eps v1 + F_h(v1)) <= f`
/// at interior nodes, with `eps = min(1/2, m_star / (2 m_bar))` chosen so
/// the properness term cannot flip the sign of `eps v1 - m_star`.
pub fn global_supersolution(
    spec: &ProblemSpec,
    x0: &[f64],
) -> Result<(GridFunction, BarrierParams)> {
    let grid = &spec.grid;
    let n = grid.dim();
    if x0.len() != n {
        return Err(Error::Validation(format!(
            "global_supersolution: x0 has {} coordinates, domain has {n}",
            x0.len()
        )));
    }
    let dist = distance_to_boundary(spec, x0);
    if !(dist > 0.0) {
        return Err(Error::Validation(format!(
            "global_supersolution: x0 lies outside the domain (boundary distance {dist})"
        )));
    }
    let mut provenance = Vec::new();
    if dist < 1.0 {
        provenance.push(InequalityRecord {
            what: format!(
                "center hypothesis dist(x0, boundary) >= 1 does not hold (dist = {dist:.6e}); \
                 constants built as recorded"
            ),
            margin: 0.0,
        });
    }

    let ell = spec.operator.ellipticity;
    let c0 = spec.f_sup() / spec.law.l1;
    let m_star = c0.max(ell.lambda * n as f64);
    let coef = m_star / (2.0 * ell.lambda * n as f64);

    let g_sup = spec.g_sup();
    let mut max_d2 = 0.0f64;
    for &i in &grid.dirichlet {
        let x = grid.node_point(i);
        let d2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        max_d2 = max_d2.max(d2);
    }
    let m_bar = g_sup + coef * max_d2 + 1e-6;
    let eps = 0.5f64.min(m_star / (2.0 * m_bar));

    let v1 = GridFunction::from_fn(spec.grid.clone(), |x| {
        let d2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
        m_bar - coef * d2
    })?;

    // Audit 1: domination of the boundary data, minimal by construction.
    let mut dom_margin = f64::INFINITY;
    for &i in &grid.dirichlet {
        dom_margin = dom_margin.min(v1.values[i] - g_sup);
    }
    if grid.dirichlet.is_empty() {
        dom_margin = 0.0;
    }
    provenance.push(InequalityRecord {
        what: "v1 > sup|g| on every Dirichlet node".into(),
        margin: dom_margin,
    });

    // Audit 2: the extremal operator of the quadratic is exactly -m_star
    // (second differences of quadratics are exact in every frame).
    let bases = StencilBasisSet::standard(n);
    let mut dev = 0.0f64;
    for &i in &grid.interior {
        let fh = pucci_apply(&v1, i, &bases, ell, PucciSign::Plus)?;
        dev = dev.max((fh + m_star).abs());
    }
    provenance.push(InequalityRecord {
        what: "F_h(v1) = -m_star at interior nodes (within 1e-10 (1 + m_star))".into(),
        margin: 1e-10 * (1.0 + m_star) - dev,
    });

    // Audit 3: the supersolution inequality for the instance it was built
    // for. eps v1 - m_star <= -m_star/2 < 0 and H >= 0, so the product
    // lies below f wherever f >= 0.
    let mut super_margin = f64::INFINITY;
    for &i in &grid.interior {
        let gr = gradient(&v1, i)?;
        let mut s2 = 0.0;
        for k in 0..n {
            let c = spec.shift[k] + gr[k];
            s2 += c * c;
        }
        let hval = spec.law.k_node(i, s2.sqrt(), 0.0);
        let fh = pucci_apply(&v1, i, &bases, ell, PucciSign::Plus)?;
        let lhs = hval * (eps * v1.values[i] + fh);
        super_margin = super_margin.min(spec.f[i] - lhs);
    }
    if grid.interior.is_empty() {
        super_margin = 0.0;
    }
    provenance.push(InequalityRecord {
        what: "H(x, grad v1) (eps v1 + F_h(v1)) <= f at interior nodes".into(),
        margin: super_margin,
    });

    Ok((
        v1,
        BarrierParams::GlobalSuper {
            m_bar,
            m_star,
            c0,
            eps,
            x0: x0.to_vec(),
            provenance,
        },
    ))
}

/// Exterior-sphere barrier `v_z = K (r^{-alpha0} - |x - x_z|^{-alpha0})`
/// for a ball of radius `r` centered at `x_z` touching the closure of the
/// domain only at the boundary point `z`. The exponent satisfies
/// `lambda (alpha0 + 2) - n Lambda >= 1` with `alpha0 > 2`, and `K` is
/// set to its lower bound `(R^{1+alpha0}/alpha0) max{1, c0 + sup|g|}`
/// with `R = r + diam(domain)`.
pub fn exterior_sphere_barrier(
    spec: &ProblemSpec,
    z: &[f64],
    x_z: &[f64],
    r: f64,
) -> Result<(GridFunction, BarrierParams)> {
    let grid = &spec.grid;
    let n = grid.dim();
    if z.len() != n || x_z.len() != n {
        return Err(Error::Validation(
            "exterior_sphere_barrier: point dimensions do not match the domain".into(),
        ));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Validation(format!(
            "exterior_sphere_barrier: radius must be positive, got {r}"
        )));
    }
    let dz: f64 = z
        .iter()
        .zip(x_z)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if (dz - r).abs() > 1e-10 {
        return Err(Error::Validation(format!(
            "exterior_sphere_barrier: |z - x_z| = {dz} differs from r = {r} by more than 1e-10"
        )));
    }
    for i in 0..grid.n_nodes {
        if grid.class[i] == NodeClass::Exterior {
            continue;
        }
        let x = grid.node_point(i);
        let d: f64 = x
            .iter()
            .zip(x_z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if d < r - 1e-10 {
            return Err(Error::Geometry(format!(
                "exterior_sphere_barrier: the ball overlaps the domain at node {i} \
                 (distance {d} to its center x_z is below r = {r})"
            )));
        }
    }

    let ell = spec.operator.ellipticity;
    let alpha0 = (2.0 + 1e-3f64).max((1.0 + n as f64 * ell.big_lambda) / ell.lambda - 2.0);
    let c0 = spec.f_sup() / spec.law.l1;
    let big_r = r + grid.domain.diameter();
    let k = big_r.powf(1.0 + alpha0) / alpha0 * 1.0f64.max(c0 + spec.g_sup());

    let mut v = GridFunction::zeros(spec.grid.clone());
    for i in 0..grid.n_nodes {
        if grid.class[i] == NodeClass::Exterior {
            continue;
        }
        let x = grid.node_point(i);
        let d: f64 = x
            .iter()
            .zip(x_z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v.values[i] = k * (r.powf(-alpha0) - d.powf(-alpha0));
    }
    v.ensure_finite("exterior_sphere_barrier: output")?;

    let mut provenance = Vec::new();
    provenance.push(InequalityRecord {
        what: "lambda (alpha0 + 2) - n Lambda >= 1".into(),
        margin: ell.lambda * (alpha0 + 2.0) - n as f64 * ell.big_lambda - 1.0,
    });
    provenance.push(InequalityRecord {
        what: "alpha0 > 2".into(),
        margin: alpha0 - 2.0,
    });
    provenance.push(InequalityRecord {
        what: "K >= (R^{1+alpha0}/alpha0) max{1, c0 + sup|g|}".into(),
        margin: 0.0,
    });
    let vz = k * (r.powf(-alpha0) - dz.powf(-alpha0));
    provenance.push(InequalityRecord {
        what: "v_z(z) = 0 (within 1e-6 relative to K)".into(),
        margin: 1e-6 - vz.abs() / (1.0 + k),
    });
    let mut pos_margin = f64::INFINITY;
    for &i in &grid.interior {
        pos_margin = pos_margin.min(v.values[i]);
    }
    if grid.interior.is_empty() {
        pos_margin = 0.0;
    }
    provenance.push(InequalityRecord {
        what: "v_z > 0 on interior nodes".into(),
        margin: pos_margin,
    });

    Ok((
        v,
        BarrierParams::ExteriorSphere {
            alpha0,
            k,
            r,
            big_r,
            z: z.to_vec(),
            x_z: x_z.to_vec(),
            provenance,
        },
    ))
}

/// Left side of the collar-width inequality: strictly decreasing in
/// delta on (0, infinity) for gamma in (0,1).
fn collar_lhs(delta: f64, gamma: f64, lambda: f64) -> f64 {
    2.0 * gamma * lambda * (1.0 + gamma) * delta.powf(gamma)
        / (delta * delta * (1.0 + delta.powf(gamma)).powi(3))
}

/// Right side of the collar-width inequality.
fn collar_rhs(spec: &ProblemSpec, delta: f64, r: f64, k_geom: f64) -> f64 {
    let n = spec.grid.dim() as f64;
    let ell = spec.operator.ellipticity;
    let s = 1.0 / (4.0 * delta);
    let kernel_floor = s.powf(spec.law.exponents.q_max).min(s.powf(spec.law.exponents.p_min));
    2.0 * n * k_geom * ell.big_lambda / delta
        + 6.0 * n * ell.big_lambda / ((1.0 - r) * (1.0 - r))
        + spec.f_sup() / (spec.law.l1 * kernel_floor)
}

/// Largest collar width `delta0` in `(0, min{eta, (1-r)/12}]` for which
/// the distance barrier's differential inequality holds strictly:
///
/// `2 gamma lambda (1+gamma) delta^gamma / (delta^2 (1+delta^gamma)^3)
///  > 2 n K Lambda / delta + 6 n Lambda / (1-r)^2
///    + sup|f| / (L1 min{(1/4delta)^{q_max}, (1/4delta)^{p_min}})`.
///
/// `k_geom` bounds the curvature of the boundary distance; `eta` caps the
/// range where that distance is smooth (default `1/(2 k_geom)`). The
/// left side dominates as delta -> 0, so a width always exists; the
/// largest one is located by a dyadic scan down from the cap followed by
/// bisection to an absolute bracket of 1e-8.
pub fn distance_barrier_delta(
    spec: &ProblemSpec,
    gamma: f64,
    r: f64,
    k_geom: f64,
    eta: Option<f64>,
) -> Result<(f64, BarrierParams)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Validation(format!(
            "distance_barrier_delta: gamma must lie in (0,1), got {gamma}"
        )));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Validation(format!(
            "distance_barrier_delta: r must lie in (0,1), got {r}"
        )));
    }
    if !(k_geom.is_finite() && k_geom >= 0.0) {
        return Err(Error::Validation(format!(
            "distance_barrier_delta: curvature bound must be non-negative, got {k_geom}"
        )));
    }
    let eta_val = match eta {
        Some(e) => {
            if !(e > 0.0) {
                return Err(Error::Validation(format!(
                    "distance_barrier_delta: eta must be positive, got {e}"
                )));
            }
            e
        }
        None => {
            if k_geom > 0.0 {
                1.0 / (2.0 * k_geom)
            } else {
                f64::INFINITY
            }
        }
    };
    let cap = eta_val.min((1.0 - r) / 12.0);
    let lambda = spec.operator.ellipticity.lambda;
    let gap = |d: f64| collar_lhs(d, gamma, lambda) - collar_rhs(spec, d, r, k_geom);

    let delta0 = if gap(cap) > 0.0 {
        cap
    } else {
        let mut hi = cap;
        let mut lo = cap;
        let mut found = false;
        for _ in 0..1024 {
            hi = lo;
            lo *= 0.5;
            if gap(lo) > 0.0 {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Infeasible(
                "distance_barrier_delta: no collar width in range satisfies the inequality"
                    .into(),
            ));
        }
        // gap(lo) > 0, gap(hi) <= 0: shrink the bracket around the
        // largest crossing in this dyadic window.
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let m0 = gap(delta0);
    let m_half = gap(0.5 * delta0);
    if !(m_half > 0.0) {
        return Err(Error::Infeasible(format!(
            "distance_barrier_delta: margin check at delta0/2 failed (gap {m_half})"
        )));
    }
    let provenance = vec![
        InequalityRecord {
            what: "LHS(delta0) > RHS(delta0)".into(),
            margin: m0,
        },
        InequalityRecord {
            what: "LHS(delta0/2) > RHS(delta0/2)".into(),
            margin: m_half,
        },
        InequalityRecord {
            what: "delta0 <= min{eta, (1-r)/12}".into(),
            margin: cap - delta0,
        },
    ];
    Ok((
        delta0,
        BarrierParams::DistanceBarrier {
            delta: delta0,
            gamma,
            r,
            k_geom,
            cap,
            provenance,
        },
    ))
}

/// Signed distance to the designated boundary surface: for graph-bounded
/// domains the vertical gap to the graph scaled by the slope factor
/// (exact for flat graphs, first order otherwise); for boxes the height
/// above the bottom face. Negative below the surface.
pub(crate) fn surface_distance(spec: &ProblemSpec, x: &[f64]) -> f64 {
    let dom = &spec.grid.domain;
    let n = dom.dim();
    match &dom.graph {
        None => x[n - 1] - dom.lo[n - 1],
        Some(graph) => {
            let y = &x[..n - 1];
            let h = spec.grid.h;
            let mut slope2 = 0.0;
            let mut yp = y.to_vec();
            for k in 0..n - 1 {
                let orig = yp[k];
                yp[k] = orig + h;
                let up = graph(&yp);
                yp[k] = orig - h;
                let dn = graph(&yp);
                yp[k] = orig;
                let s = (up - dn) / (2.0 * h);
                slope2 += s * s;
            }
            (x[n - 1] - graph(y)) / (1.0 + slope2).sqrt()
        }
    }
}

/// The boundary distance barrier
/// `v = (2/delta) d / (1 + |d|^gamma) + ((|y| - r)^+ / (1 - r))^3`,
/// where `d` is the signed distance to the designated boundary surface
/// and `y` the tangential coordinates. The first term is extended oddly
/// below the surface so that second differences across the boundary see
/// a smooth profile instead of a clamped kink.
pub fn distance_barrier(
    spec: &ProblemSpec,
    delta: f64,
    gamma: f64,
    r: f64,
) -> Result<GridFunction> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Validation(format!(
            "distance_barrier: delta must be positive, got {delta}"
        )));
    }
    if !(gamma >= 0.0 && gamma < 1.0) {
        return Err(Error::Validation(format!(
            "distance_barrier: gamma must lie in [0,1), got {gamma}"
        )));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Validation(format!(
            "distance_barrier: r must lie in (0,1), got {r}"
        )));
    }
    let n = spec.grid.dim();
    let v = GridFunction::from_fn(spec.grid.clone(), |x| {
        let d = surface_distance(spec, x);
        let psi = (2.0 / delta) * d / (1.0 + d.abs().powf(gamma));
        let tangential: f64 = x[..n - 1].iter().map(|t| t * t).sum::<f64>().sqrt();
        let lateral = ((tangential - r).max(0.0) / (1.0 - r)).powi(3);
        psi + lateral
    })?;
    Ok(v)
}

/// Which inequality a barrier is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierSide {
    /// `H(x, grad v) M+_h(v) <= -sup|f| + tol` (upper barrier).
    Upper,
    /// `H(x, grad v) M-_h(v) >= sup|f| - tol` (lower barrier).
    Lower,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupersolutionCheck {
    pub pass: bool,
    /// Largest violation of the inequality (non-positive means it holds
    /// with room to spare everywhere).
    pub worst_margin: f64,
    pub location: Option<Vec<f64>>,
}

/// Check the strong barrier inequality at interior nodes, optionally
/// restricted to a region (a list of interior node ids, e.g. a boundary
/// collar). Away from the boundary the gradient of a distance-type
/// barrier flattens and the degeneracy factor collapses, so the global
/// check is meaningful only for barriers with uniformly large slope;
/// collar constructions should pass their collar.
pub fn verify_supersolution(
    v: &GridFunction,
    spec: &ProblemSpec,
    side: BarrierSide,
    tol: f64,
    region: Option<&[usize]>,
) -> Result<SupersolutionCheck> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::Validation(format!(
            "verify_supersolution: tolerance must be non-negative, got {tol}"
        )));
    }
    if !std::sync::Arc::ptr_eq(&v.grid, &spec.grid)
        && (v.grid.dims != spec.grid.dims || v.grid.h != spec.grid.h)
    {
        return Err(Error::Validation(
            "verify_supersolution: barrier grid does not match the problem grid".into(),
        ));
    }
    v.ensure_finite("verify_supersolution: input")?;
    let grid = &spec.grid;
    let n = grid.dim();
    let bases = StencilBasisSet::standard(n);
    let ell = spec.operator.ellipticity;
    let f_sup = spec.f_sup();
    let nodes: Vec<usize> = match region {
        Some(r) => {
            for &i in r {
                if i >= grid.n_nodes || grid.class[i] != NodeClass::Interior {
                    return Err(Error::Validation(format!(
                        "verify_supersolution: region node {i} is not an interior node"
                    )));
                }
            }
            r.to_vec()
        }
        None => grid.interior.clone(),
    };
    if nodes.is_empty() {
        return Err(Error::EmptySet(
            "verify_supersolution: no nodes to check".into(),
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for &i in &nodes {
        let gr = gradient(v, i)?;
        let mut s2 = 0.0;
        for k in 0..n {
            let c = spec.shift[k] + gr[k];
            s2 += c * c;
        }
        let hval = spec.law.k_node(i, s2.sqrt(), 0.0);
        let violation = match side {
            BarrierSide::Upper => {
                let m = pucci_apply(v, i, &bases, ell, PucciSign::Plus)?;
                hval * m + f_sup
            }
            BarrierSide::Lower => {
                let m = pucci_apply(v, i, &bases, ell, PucciSign::Minus)?;
                f_sup - hval * m
            }
        };
        if violation > worst {
            worst = violation;
            at = Some(i);
        }
    }
    Ok(SupersolutionCheck {
        pass: worst <= tol,
        worst_margin: worst,
        location: at.map(|i| grid.node_point(i)),
    })
}

/// Maximum-principle bound with the two competing norm powers kept
/// separate.
#[derive(Clone, Debug, Serialize)]
pub struct AbpBound {
    pub bound: f64,
    /// `||f/(1+a)||_{L^n}^{1/(p_min+1)}`.
    pub term_p: f64,
    /// `||f/(1+a)||_{L^n}^{1/(q_max+1)}`.
    pub term_q: f64,
    /// The grid Riemann-sum `L^n` norm itself.
    pub ln_norm: f64,
}

/// `sup g+ + C diam max{||f/(1+a)||^{1/(p_min+1)}, ||f/(1+a)||^{1/(q_max+1)}}`
/// with the `L^n` norm taken as a midpoint Riemann sum over interior
/// nodes. The structural constant is not explicit, so the caller
/// supplies `c_user`.
pub fn abp_bound(spec: &ProblemSpec, c_user: f64) -> Result<AbpBound> {
    if !(c_user.is_finite() && c_user > 0.0) {
        return Err(Error::Validation(format!(
            "abp_bound: the constant must be positive, got {c_user}"
        )));
    }
    let grid = &spec.grid;
    let n = grid.dim() as f64;
    let mut g_plus = 0.0f64;
    for &i in &grid.dirichlet {
        g_plus = g_plus.max(spec.g[i]);
    }
    let cell = grid.h.powf(n);
    let mut acc = 0.0;
    for &i in &grid.interior {
        let w = spec.f[i].abs() / (1.0 + spec.law.exponents.a[i]);
        acc += w.powf(n) * cell;
    }
    let ln_norm = acc.powf(1.0 / n);
    let term_p = ln_norm.powf(1.0 / (spec.law.exponents.p_min + 1.0));
    let term_q = ln_norm.powf(1.0 / (spec.law.exponents.q_max + 1.0));
    let bound = g_plus + c_user * grid.domain.diameter() * term_p.max(term_q);
    Ok(AbpBound {
        bound,
        term_p,
        term_q,
        ln_norm,
    })
}

/// Which growth function produced the root: `small` is the branch valid
/// for constants below one, `large` the steeper variant used when the
/// first root lands above one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RootBranch {
    Small,
    Large,
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyRoot {
    pub t0: f64,
    /// Recorded choice inside (0, t0): the midpoint t0/2.
    pub c_frak: f64,
    pub branch: RootBranch,
    pub xi2: f64,
    pub xi3: f64,
    /// |g(t0)| at the returned root.
    pub residual: f64,
}

fn bisect_increasing(g: impl Fn(f64) -> f64, tol: f64) -> Result<(f64, f64)> {
    let mut hi = 1.0f64;
    let mut grew = 0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
        grew += 1;
        if grew > 200 {
            return Err(Error::NumericFailure(
                "nondegeneracy root: no sign change found while growing the bracket".into(),
            ));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol {
            return Ok((mid, gm.abs()));
        }
        if gm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let gm = g(mid).abs();
    if gm <= tol {
        Ok((mid, gm))
    } else {
        Err(Error::NumericFailure(format!(
            "nondegeneracy root: bisection stalled at residual {gm:.3e} (target {tol:.3e})"
        )))
    }
}

/// Smallest positive root of the non-degeneracy growth function
///
/// `g(t) = Xi2 t^{p_min+1} [ ((p_min+2)/(p_min+1))^{p_max+1}
///         + Xi3 t^{p_max-p_min} ] - m`,
///
/// `Xi2 = L2 (n Lambda - p_min lambda/(p_min+1))`,
/// `Xi3 = sup a ((p_min+2)/(p_min+1))^{q_max+1}`,
///
/// found by bisection to `|g(t0)| <= 1e-10`. When the root exceeds one,
/// the steeper variant with `t^{p_max+1}` outside and `t^{q_max-p_max}`
/// inside the bracket applies instead (large branch). Every factor of
/// `g` is increasing with positive exponents, so the root is unique.
pub fn nondegeneracy_constant(spec: &ProblemSpec, m: f64) -> Result<NondegeneracyRoot> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::Validation(format!(
            "nondegeneracy_constant: need a positive lower bound on f, got {m}"
        )));
    }
    let ell = spec.operator.ellipticity;
    let exps = &spec.law.exponents;
    let n = spec.grid.dim() as f64;
    let p_min = exps.p_min;
    let p_max = exps.p_max;
    let q_max = exps.q_max;
    let ratio = (p_min + 2.0) / (p_min + 1.0);
    let xi2 = spec.law.l2 * (n * ell.big_lambda - p_min * ell.lambda / (p_min + 1.0));
    if !(xi2 > 0.0) {
        // Unreachable for valid ellipticity pairs (n Lambda >= lambda >
        // p_min lambda/(p_min+1)); kept as a guard against corrupt input.
        return Err(Error::Infeasible(format!(
            "nondegeneracy_constant: growth coefficient is non-positive ({xi2}); \
             the barrier argument fails"
        )));
    }
    let xi3 = exps.a_sup * ratio.powf(q_max + 1.0);
    let bracket = ratio.powf(p_max + 1.0);

    let g_small = |t: f64| xi2 * t.powf(p_min + 1.0) * (bracket + xi3 * t.powf(p_max - p_min)) - m;
    let (t_small, res_small) = bisect_increasing(g_small, 1e-10)?;
    if t_small <= 1.0 {
        return Ok(NondegeneracyRoot {
            t0: t_small,
            c_frak: 0.5 * t_small,
            branch: RootBranch::Small,
            xi2,
            xi3,
            residual: res_small,
        });
    }
    let g_large = |t: f64| xi2 * t.powf(p_max + 1.0) * (bracket + xi3 * t.powf(q_max - p_max)) - m;
    let (t_large, res_large) = bisect_increasing(g_large, 1e-10)?;
    Ok(NondegeneracyRoot {
        t0: t_large,
        c_frak: 0.5 * t_large,
        branch: RootBranch::Large,
        xi2,
        xi3,
        residual: res_large,
    })
}
