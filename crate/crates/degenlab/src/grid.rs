//! Structured lattices over box or graph-bounded domains, node
//! classification, and the discrete differential primitives the wide-stencil
//! scheme is assembled from.
//!
//! A node is `Interior` when its full stencil box stays inside the domain
//! box and, for graph-bounded domains, the node lies strictly above the
//! graph. Every non-interior node within Chebyshev distance `stencil_radius`
//! (in index space) of an interior node becomes `Dirichlet` and carries a
//! boundary trace point where boundary data is evaluated. Everything else is
//! `Exterior` and never read.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar field evaluated at points of the domain. Shared by coefficients,
/// data, obstacles and boundary graphs; `Send + Sync` so solves can fan out.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Convenience: wrap a plain closure as a [`ScalarFn`].
pub fn scalar_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// Axis-aligned box `[lo, hi]`, optionally cut by a graph constraint
/// `{ y_n > phi(y') }` on the last coordinate.
#[derive(Clone)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Graph constraint on the last axis; `None` means the plain box.
    pub graph: Option<ScalarFn>,
}

impl DomainSpec {
    pub fn cube(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        DomainSpec { lo, hi, graph: None }
    }

    pub fn graph_bounded(lo: Vec<f64>, hi: Vec<f64>, phi: ScalarFn) -> Self {
        DomainSpec { lo, hi, graph: Some(phi) }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::Validation(
                "domain: lo/hi must be non-empty and of equal length".into(),
            ));
        }
        for k in 0..self.lo.len() {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] < self.hi[k]) {
                return Err(Error::Validation(format!(
                    "domain: need finite lo < hi on axis {k} (got [{}, {}])",
                    self.lo[k], self.hi[k]
                )));
            }
        }
        Ok(())
    }

    /// Closed-box membership, strict above-graph membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        for k in 0..self.lo.len() {
            if x[k] < self.lo[k] || x[k] > self.hi[k] {
                return false;
            }
        }
        match &self.graph {
            Some(phi) => {
                let n = x.len();
                x[n - 1] > phi(&x[..n - 1])
            }
            None => true,
        }
    }

    /// Euclidean diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DomainSpec {{ lo: {:?}, hi: {:?}, graph: {} }}",
            self.lo,
            self.hi,
            if self.graph.is_some() { "yes" } else { "no" }
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeClass {
    Interior,
    Dirichlet,
    Exterior,
}

/// Immutable structured grid. Values attached to it live in [`GridFunction`]s.
pub struct Grid {
    pub h: f64,
    pub domain: DomainSpec,
    /// Nodes per axis.
    pub dims: Vec<usize>,
    /// Row-major strides (last axis contiguous).
    pub strides: Vec<usize>,
    pub n_nodes: usize,
    pub stencil_radius: usize,
    pub class: Vec<NodeClass>,
    /// Linear indices of interior nodes, ascending.
    pub interior: Vec<usize>,
    /// Linear indices of Dirichlet nodes, ascending.
    pub dirichlet: Vec<usize>,
    /// Boundary point represented by each Dirichlet node (`None` elsewhere).
    pub trace: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Grid {{ h: {}, dims: {:?}, interior: {}, dirichlet: {}, radius: {} }}",
            self.h,
            self.dims,
            self.interior.len(),
            self.dirichlet.len(),
            self.stencil_radius
        )
    }
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// Multi-index of a linear node index.
    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        (0..self.dim()).map(|k| (i / self.strides[k]) % self.dims[k]).collect()
    }

    /// Linear index of a multi-index, checked against the extents.
    pub fn node_at(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dim() {
            return Err(Error::Validation(format!(
                "node_at: index has {} axes, grid has {}",
                idx.len(),
                self.dim()
            )));
        }
        let mut lin = 0usize;
        for k in 0..idx.len() {
            if idx[k] >= self.dims[k] {
                return Err(Error::Geometry(format!(
                    "node_at: index {} out of range on axis {k} (extent {})",
                    idx[k], self.dims[k]
                )));
            }
            lin += idx[k] * self.strides[k];
        }
        Ok(lin)
    }

    /// Coordinates of a node.
    pub fn node_point(&self, i: usize) -> Vec<f64> {
        let idx = self.multi_index(i);
        (0..self.dim()).map(|k| self.domain.lo[k] + idx[k] as f64 * self.h).collect()
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.class[i] == NodeClass::Interior
    }

    /// Linear index of the grid node nearest to `x`, if `x` is within half a
    /// cell of a lattice point on every axis.
    pub fn nearest_node(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::Validation("nearest_node: dimension mismatch".into()));
        }
        let mut idx = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let t = (x[k] - self.domain.lo[k]) / self.h;
            let r = t.round();
            if r < 0.0 || r as usize >= self.dims[k] {
                return Err(Error::Geometry(format!(
                    "nearest_node: coordinate {} off-grid on axis {k}",
                    x[k]
                )));
            }
            idx.push(r as usize);
        }
        self.node_at(&idx)
    }
}

/// Classify nodes and compute boundary traces.
///
/// Interior: index in `[r, dims-1-r]` on every axis and, when a graph is
/// present, strictly above it. Dirichlet: within Chebyshev radius `r` (index
/// space) of an interior node. The trace of a Dirichlet node at or below the
/// graph is its vertical foot `(y', phi(y'))`; otherwise the nearest box
/// face (ties: lowest axis, low side; a node already on a face is its own
/// trace).
pub fn build_grid(domain: &DomainSpec, h: f64, stencil_radius: usize) -> Result<Grid> {
    domain.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Validation(format!("build_grid: spacing must be positive, got {h}")));
    }
    if stencil_radius == 0 {
        return Err(Error::Validation("build_grid: stencil radius must be >= 1".into()));
    }
    let n = domain.dim();
    let mut dims = Vec::with_capacity(n);
    for k in 0..n {
        let ext = domain.hi[k] - domain.lo[k];
        let m = ext / h;
        let cells = m.round();
        if (m - cells).abs() > 1e-12 * m.max(1.0) || cells < 1.0 {
            return Err(Error::Validation(format!(
                "build_grid: h={h} does not divide extent {ext} on axis {k}"
            )));
        }
        dims.push(cells as usize + 1);
    }
    let mut strides = vec![1usize; n];
    for k in (0..n - 1).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let n_nodes = strides[0] * dims[0];

    let r = stencil_radius;
    let point = |idx: &[usize]| -> Vec<f64> {
        (0..n).map(|k| domain.lo[k] + idx[k] as f64 * h).collect()
    };

    // Pass 1: interior nodes.
    let mut class = vec![NodeClass::Exterior; n_nodes];
    let mut idx = vec![0usize; n];
    for i in 0..n_nodes {
        let in_core = (0..n).all(|k| idx[k] >= r && idx[k] + r <= dims[k] - 1);
        if in_core {
            let above = match &domain.graph {
                Some(phi) => {
                    let x = point(&idx);
                    x[n - 1] > phi(&x[..n - 1])
                }
                None => true,
            };
            if above {
                class[i] = NodeClass::Interior;
            }
        }
        // odometer increment (last axis fastest, matching linear order)
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }

    // Pass 2: mark the Chebyshev-r halo of the interior set as Dirichlet.
    let offsets = chebyshev_offsets(n, r);
    let interior: Vec<usize> = (0..n_nodes).filter(|&i| class[i] == NodeClass::Interior).collect();
    if interior.is_empty() {
        return Err(Error::Validation(
            "build_grid: no interior nodes; the spacing is too coarse for this domain".into(),
        ));
    }
    for &i in &interior {
        let base = decode(i, &strides, &dims);
        for off in &offsets {
            let mut ok = true;
            let mut j = 0usize;
            for k in 0..n {
                let t = base[k] as isize + off[k];
                if t < 0 || t as usize >= dims[k] {
                    ok = false;
                    break;
                }
                j += t as usize * strides[k];
            }
            if ok && class[j] == NodeClass::Exterior {
                class[j] = NodeClass::Dirichlet;
            }
        }
    }
    let dirichlet: Vec<usize> = (0..n_nodes).filter(|&i| class[i] == NodeClass::Dirichlet).collect();

    // Pass 3: boundary traces.
    let mut trace: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
    for &i in &dirichlet {
        let x = point(&decode(i, &strides, &dims));
        let t = match &domain.graph {
            Some(phi) => {
                let g = phi(&x[..n - 1]);
                if x[n - 1] <= g + 1e-12 * g.abs().max(1.0) {
                    let mut foot = x.clone();
                    foot[n - 1] = g;
                    foot
                } else {
                    project_to_box_face(&x, domain)
                }
            }
            None => project_to_box_face(&x, domain),
        };
        trace[i] = Some(t);
    }

    Ok(Grid {
        h,
        domain: domain.clone(),
        dims,
        strides,
        n_nodes,
        stencil_radius,
        class,
        interior,
        dirichlet,
        trace,
    })
}

fn decode(i: usize, strides: &[usize], dims: &[usize]) -> Vec<usize> {
    (0..dims.len()).map(|k| (i / strides[k]) % dims[k]).collect()
}

/// All index offsets in the Chebyshev ball of radius `r`, excluding zero.
fn chebyshev_offsets(n: usize, r: usize) -> Vec<Vec<isize>> {
    let side = 2 * r as isize + 1;
    let total = (side as usize).pow(n as u32);
    let mut out = Vec::with_capacity(total - 1);
    for code in 0..total {
        let mut c = code;
        let mut off = Vec::with_capacity(n);
        for _ in 0..n {
            off.push((c % side as usize) as isize - r as isize);
            c /= side as usize;
        }
        if off.iter().any(|&o| o != 0) {
            out.push(off);
        }
    }
    out
}

/// Project a point inside the box onto its nearest face; ties go to the
/// lowest axis and the low side. Points already on a face are fixed.
fn project_to_box_face(x: &[f64], domain: &DomainSpec) -> Vec<f64> {
    let mut best_axis = 0usize;
    let mut best_low = true;
    let mut best_d = f64::INFINITY;
    for k in 0..x.len() {
        let dl = x[k] - domain.lo[k];
        let dh = domain.hi[k] - x[k];
        if dl < best_d {
            best_d = dl;
            best_axis = k;
            best_low = true;
        }
        if dh < best_d {
            best_d = dh;
            best_axis = k;
            best_low = false;
        }
    }
    let mut out = x.to_vec();
    out[best_axis] = if best_low { domain.lo[best_axis] } else { domain.hi[best_axis] };
    out
}

/// Values attached to a grid: one real per node, with Exterior slots pinned
/// to zero and never read. Cloning snapshots the values (the grid is shared).
#[derive(Clone)]
pub struct GridFunction {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl fmt::Debug for GridFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridFunction {{ grid: {:?}, sup: {:.6e} }}", self.grid, self.sup_norm())
    }
}

impl GridFunction {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.n_nodes;
        GridFunction { grid, values: vec![0.0; n] }
    }

    /// Sample `f` at every non-Exterior node. Any non-finite sample aborts.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut values = vec![0.0; grid.n_nodes];
        for i in 0..grid.n_nodes {
            if grid.class[i] != NodeClass::Exterior {
                let v = f(&grid.node_point(i));
                if !v.is_finite() {
                    return Err(Error::NumericFailure(format!(
                        "from_fn: non-finite sample {v} at node {i}"
                    )));
                }
                values[i] = v;
            }
        }
        Ok(GridFunction { grid, values })
    }

    /// Max of |u| over non-Exterior nodes.
    pub fn sup_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.grid.n_nodes {
            if self.grid.class[i] != NodeClass::Exterior {
                m = m.max(self.values[i].abs());
            }
        }
        m
    }

    /// Max of |u - w| over non-Exterior nodes.
    pub fn sup_diff(&self, other: &GridFunction) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.grid.n_nodes {
            if self.grid.class[i] != NodeClass::Exterior {
                m = m.max((self.values[i] - other.values[i]).abs());
            }
        }
        m
    }

    /// Error out if any non-Exterior value went non-finite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for i in 0..self.grid.n_nodes {
            if self.grid.class[i] != NodeClass::Exterior && !self.values[i].is_finite() {
                return Err(Error::NumericFailure(format!(
                    "{what}: non-finite value at node {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Centered gradient at an interior node: `(u(x+h e_k) - u(x-h e_k)) / 2h`.
pub fn gradient(u: &GridFunction, node: usize) -> Result<Vec<f64>> {
    let g = &u.grid;
    if node >= g.n_nodes || g.class[node] != NodeClass::Interior {
        return Err(Error::Geometry(format!("gradient: node {node} is not interior")));
    }
    let mut out = Vec::with_capacity(g.dim());
    for k in 0..g.dim() {
        let s = g.strides[k];
        out.push((u.values[node + s] - u.values[node - s]) / (2.0 * g.h));
    }
    Ok(out)
}

/// Backward and forward difference quotients along one axis at an interior
/// node. Used to floor the degeneracy factor at symmetric critical points,
/// where the centered gradient cancels but the scheme still sees slopes.
pub(crate) fn one_sided_slopes(u: &GridFunction, node: usize, axis: usize) -> (f64, f64) {
    let g = &u.grid;
    let s = g.strides[axis];
    let back = (u.values[node] - u.values[node - s]) / g.h;
    let fwd = (u.values[node + s] - u.values[node]) / g.h;
    (back, fwd)
}

/// Directional second difference `(u(x+hv) - 2u(x) + u(x-hv)) / (h^2 |v|^2)`.
pub fn second_difference(u: &GridFunction, node: usize, v: &[i64]) -> Result<f64> {
    let g = &u.grid;
    if v.len() != g.dim() {
        return Err(Error::Validation("second_difference: direction dimension mismatch".into()));
    }
    if v.iter().all(|&c| c == 0) {
        return Err(Error::Validation("second_difference: zero direction".into()));
    }
    if node >= g.n_nodes || g.class[node] != NodeClass::Interior {
        return Err(Error::Geometry(format!("second_difference: node {node} is not interior")));
    }
    let idx = g.multi_index(node);
    let mut off = 0isize;
    for k in 0..g.dim() {
        let p = idx[k] as i64 + v[k];
        let m = idx[k] as i64 - v[k];
        if p < 0 || p as usize >= g.dims[k] || m < 0 || m as usize >= g.dims[k] {
            return Err(Error::Geometry(format!(
                "second_difference: stencil {v:?} leaves the grid at node {node}"
            )));
        }
        off += v[k] as isize * g.strides[k] as isize;
    }
    let plus = (node as isize + off) as usize;
    let minus = (node as isize - off) as usize;
    if g.class[plus] == NodeClass::Exterior || g.class[minus] == NodeClass::Exterior {
        return Err(Error::Geometry(format!(
            "second_difference: stencil {v:?} hits an exterior node at node {node}"
        )));
    }
    let norm2: f64 = v.iter().map(|&c| (c * c) as f64).sum();
    Ok((u.values[plus] - 2.0 * u.values[node] + u.values[minus]) / (g.h * g.h * norm2))
}

/// Non-Exterior nodes inside the ball `|x - x0| <= r`, or, with
/// `shell_only`, inside the shell `r - h < |x - x0| <= r`.
pub fn ball_nodes(grid: &Grid, x0: &[f64], r: f64, shell_only: bool) -> Result<Vec<usize>> {
    if x0.len() != grid.dim() {
        return Err(Error::Validation("ball_nodes: center dimension mismatch".into()));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Validation(format!("ball_nodes: radius must be positive, got {r}")));
    }
    if shell_only && r < 2.0 * grid.h - 1e-12 {
        return Err(Error::Validation(format!(
            "ball_nodes: shell of thickness h needs r >= 2h (r={r}, h={})",
            grid.h
        )));
    }
    let n = grid.dim();
    let tol = 1e-10 * (1.0 + r);
    // Index window covering the ball, clamped to the grid.
    let mut lo_idx = Vec::with_capacity(n);
    let mut hi_idx = Vec::with_capacity(n);
    for k in 0..n {
        let a = ((x0[k] - r - grid.domain.lo[k]) / grid.h).floor().max(0.0) as usize;
        let b = ((x0[k] + r - grid.domain.lo[k]) / grid.h).ceil().min((grid.dims[k] - 1) as f64);
        if b < 0.0 {
            return Err(Error::EmptySet("ball_nodes: ball misses the grid".into()));
        }
        lo_idx.push(a.min(grid.dims[k] - 1));
        hi_idx.push(b as usize);
    }
    let mut out = Vec::new();
    let mut idx = lo_idx.clone();
    'scan: loop {
        let lin: usize = (0..n).map(|k| idx[k] * grid.strides[k]).sum();
        if grid.class[lin] != NodeClass::Exterior {
            let d = (0..n)
                .map(|k| {
                    let c = grid.domain.lo[k] + idx[k] as f64 * grid.h - x0[k];
                    c * c
                })
                .sum::<f64>()
                .sqrt();
            if d <= r + tol && (!shell_only || d > r - grid.h + tol) {
                out.push(lin);
            }
        }
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] <= hi_idx[k] {
                continue 'scan;
            }
            idx[k] = lo_idx[k];
            if k == 0 {
                break 'scan;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySet(format!(
            "ball_nodes: no nodes in the {} at x0={x0:?}, r={r}",
            if shell_only { "shell" } else { "ball" }
        )));
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(h: f64, r: usize) -> Arc<Grid> {
        let d = DomainSpec::cube(vec![0.0, 0.0], vec![1.0, 1.0]);
        Arc::new(build_grid(&d, h, r).unwrap())
    }

    #[test]
    fn unit_square_coarse_classification() {
        let g = unit_square(0.5, 1);
        assert_eq!(g.dims, vec![3, 3]);
        assert_eq!(g.interior.len(), 1);
        assert_eq!(g.dirichlet.len(), 8);
        let c = g.node_at(&[1, 1]).unwrap();
        assert!(g.is_interior(c));
        assert_eq!(g.node_point(c), vec![0.5, 0.5]);
        // Nodes on faces are their own trace.
        let e = g.node_at(&[0, 1]).unwrap();
        assert_eq!(g.trace[e].as_deref(), Some(&[0.0, 0.5][..]));
    }

    #[test]
    fn unit_square_finer_counts() {
        let g = unit_square(0.25, 1);
        assert_eq!(g.interior.len(), 9);
        assert_eq!(g.dirichlet.len(), 16);
    }

    #[test]
    fn radius_two_needs_wider_halo() {
        let g = unit_square(0.125, 2);
        // In-core indices 2..=6 per axis -> 5x5 interior.
        assert_eq!(g.interior.len(), 25);
        // Halo is two nodes thick: all remaining 9x9 - 25 nodes.
        assert_eq!(g.dirichlet.len(), 81 - 25);
    }

    #[test]
    fn graph_half_plane_interior_rows() {
        let d = DomainSpec::graph_bounded(
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            scalar_fn(|_| 0.0),
        );
        let g = build_grid(&d, 0.5, 1).unwrap();
        // Interior requires y2 > 0 strictly, so only the y2 = 0.5 row.
        let pts: Vec<Vec<f64>> = g.interior.iter().map(|&i| g.node_point(i)).collect();
        assert_eq!(pts.len(), 3);
        for p in &pts {
            assert_eq!(p[1], 0.5);
        }
        // On-graph nodes trace to themselves (vertical foot at height 0).
        let og = g.node_at(&[2, 2]).unwrap(); // (0, 0)
        assert_eq!(g.class[og], NodeClass::Dirichlet);
        assert_eq!(g.trace[og].as_deref(), Some(&[0.0, 0.0][..]));
        // Rows two or more below the interior band are exterior.
        let ex = g.node_at(&[2, 1]).unwrap(); // (0, -0.5)
        assert_eq!(g.class[ex], NodeClass::Exterior);
    }

    #[test]
    fn graph_trace_uses_vertical_foot() {
        let d = DomainSpec::graph_bounded(
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            scalar_fn(|_| 0.1),
        );
        let g = build_grid(&d, 0.5, 1).unwrap();
        // (-1, 0) sits below the graph: its trace is the foot (-1, 0.1).
        let i = g.node_at(&[0, 2]).unwrap();
        assert_eq!(g.class[i], NodeClass::Dirichlet);
        let t = g.trace[i].as_ref().unwrap();
        assert_eq!(t[0], -1.0);
        assert!((t[1] - 0.1).abs() < 1e-15);
        // (-1, 0.5) is above the graph and on the left face: own trace.
        let j = g.node_at(&[0, 3]).unwrap();
        assert_eq!(g.trace[j].as_deref(), Some(&[-1.0, 0.5][..]));
    }

    #[test]
    fn spacing_must_divide_and_resolve() {
        let d = DomainSpec::cube(vec![0.0], vec![1.0]);
        assert!(matches!(build_grid(&d, 0.3, 1), Err(Error::Validation(_))));
        // dims = 2 leaves no in-core index at radius 1.
        assert!(matches!(build_grid(&d, 1.0, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn classification_is_deterministic() {
        let d = DomainSpec::graph_bounded(
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            scalar_fn(|y| 0.05 * y[0]),
        );
        let a = build_grid(&d, 0.25, 2).unwrap();
        let b = build_grid(&d, 0.25, 2).unwrap();
        assert_eq!(a.class, b.class);
        assert_eq!(a.interior, b.interior);
    }

    #[test]
    fn gradient_is_exact_on_affines_and_symmetric_wells() {
        let g = unit_square(0.25, 1);
        let u = GridFunction::from_fn(g.clone(), |x| 3.0 + 2.0 * x[0] - 5.0 * x[1]).unwrap();
        let c = g.node_at(&[2, 2]).unwrap();
        let d = gradient(&u, c).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-13);
        assert!((d[1] + 5.0).abs() < 1e-13);

        let w = GridFunction::from_fn(g.clone(), |x| {
            (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)
        })
        .unwrap();
        let dw = gradient(&w, c).unwrap();
        assert_eq!(dw, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_cubic_reference_value() {
        let d = DomainSpec::cube(vec![0.0], vec![2.0]);
        let g = Arc::new(build_grid(&d, 0.1, 1).unwrap());
        let u = GridFunction::from_fn(g.clone(), |x| x[0].powi(3)).unwrap();
        let i = g.node_at(&[10]).unwrap();
        let dv = gradient(&u, i).unwrap()[0];
        // ((1.1)^3 - (0.9)^3) / 0.2
        assert!((dv - 3.01).abs() < 1e-12, "got {dv}");
    }

    #[test]
    fn gradient_rejects_boundary_nodes() {
        let g = unit_square(0.5, 1);
        let u = GridFunction::zeros(g.clone());
        let e = g.node_at(&[0, 1]).unwrap();
        assert!(matches!(gradient(&u, e), Err(Error::Geometry(_))));
    }

    #[test]
    fn second_difference_reference_values() {
        let g = unit_square(0.125, 2);
        let c = g.node_at(&[4, 4]).unwrap();
        let aff = GridFunction::from_fn(g.clone(), |x| 1.0 - 7.0 * x[0] + 2.0 * x[1]).unwrap();
        assert!(second_difference(&aff, c, &[1, 0]).unwrap().abs() < 1e-12);
        assert!(second_difference(&aff, c, &[2, 1]).unwrap().abs() < 1e-11);

        let sq = GridFunction::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        assert!((second_difference(&sq, c, &[1, 0]).unwrap() - 2.0).abs() < 1e-10);

        let xy = GridFunction::from_fn(g.clone(), |x| x[0] * x[1]).unwrap();
        assert!((second_difference(&xy, c, &[1, 1]).unwrap() - 1.0).abs() < 1e-10);
        assert!((second_difference(&xy, c, &[1, -1]).unwrap() + 1.0).abs() < 1e-10);
    }

    #[test]
    fn second_difference_linearity_and_affine_invariance() {
        let g = unit_square(0.125, 2);
        let u = GridFunction::from_fn(g.clone(), |x| (3.0 * x[0] + x[1]).sin()).unwrap();
        let w = GridFunction::from_fn(g.clone(), |x| (x[0] - 2.0 * x[1]).cos()).unwrap();
        let mut combo = GridFunction::zeros(g.clone());
        for i in 0..g.n_nodes {
            combo.values[i] = 0.7 * u.values[i] - 1.3 * w.values[i];
        }
        let mut shifted = u.clone();
        for i in 0..g.n_nodes {
            let x = g.node_point(i);
            shifted.values[i] += 4.0 - 2.5 * x[0] + 0.75 * x[1];
        }
        for v in [[1i64, 0], [0, 1], [1, 1], [2, 1], [-1, 2]] {
            for &i in g.interior.iter() {
                if second_difference(&u, i, &v).is_err() {
                    continue; // knight moves can leave the grid near the halo edge
                }
                let du = second_difference(&u, i, &v).unwrap();
                let dw = second_difference(&w, i, &v).unwrap();
                let dc = second_difference(&combo, i, &v).unwrap();
                assert!((dc - (0.7 * du - 1.3 * dw)).abs() < 1e-12);
                let ds = second_difference(&shifted, i, &v).unwrap();
                assert!((ds - du).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn second_difference_rejects_bad_stencils() {
        let g = unit_square(0.25, 1);
        let u = GridFunction::zeros(g.clone());
        let c = g.node_at(&[2, 2]).unwrap();
        assert!(matches!(second_difference(&u, c, &[0, 0]), Err(Error::Validation(_))));
        assert!(matches!(second_difference(&u, c, &[0, 3]), Err(Error::Geometry(_))));

        // Reaching past the Dirichlet halo into exterior territory fails.
        let d = DomainSpec::graph_bounded(
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            scalar_fn(|_| 0.0),
        );
        let gg = Arc::new(build_grid(&d, 0.25, 1).unwrap());
        let w = GridFunction::zeros(gg.clone());
        let i = gg.node_at(&[4, 5]).unwrap(); // (0, 0.25), first row above graph
        assert_eq!(gg.class[i], NodeClass::Interior);
        assert!(matches!(second_difference(&w, i, &[0, 2]), Err(Error::Geometry(_))));
    }

    #[test]
    fn ball_nodes_lattice_counts() {
        let g = unit_square(0.25, 1);
        let c = [0.5, 0.5];
        // Tiny radius captures just the center node.
        assert_eq!(ball_nodes(&g, &c, 0.1, false).unwrap().len(), 1);
        // r = 1.5h: axis neighbors at h and diagonals at h*sqrt(2) ~ 1.414h
        // are both inside, so the ball holds 9 nodes.
        assert_eq!(ball_nodes(&g, &c, 0.375, false).unwrap().len(), 9);
        // Shell (h, 2h]: 4 diagonals + 4 axis nodes at distance 2h.
        assert_eq!(ball_nodes(&g, &c, 0.5, true).unwrap().len(), 8);
        // Radius beyond the domain returns every non-exterior node.
        assert_eq!(ball_nodes(&g, &c, 10.0, false).unwrap().len(), 25);
    }

    #[test]
    fn ball_nodes_validation_and_empty() {
        let g = unit_square(0.25, 1);
        assert!(matches!(
            ball_nodes(&g, &[0.5, 0.5], 0.3, true),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            ball_nodes(&g, &[50.0, 50.0], 0.5, false),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn from_fn_rejects_non_finite_samples() {
        let g = unit_square(0.5, 1);
        let r = GridFunction::from_fn(g, |x| if x[0] == 0.5 && x[1] == 0.5 { f64::NAN } else { 0.0 });
        assert!(matches!(r, Err(Error::NumericFailure(_))));
    }

    #[test]
    fn nearest_node_roundtrip() {
        let g = unit_square(0.25, 1);
        for &i in g.interior.iter().chain(g.dirichlet.iter()) {
            let p = g.node_point(i);
            assert_eq!(g.nearest_node(&p).unwrap(), i);
        }
        assert!(g.nearest_node(&[5.0, 5.0]).is_err());
    }
}
