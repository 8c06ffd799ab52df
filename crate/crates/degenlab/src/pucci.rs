//! Extremal (Pucci) operators: the exact eigenvalue formulas on matrices and
//! their monotone wide-stencil surrogates on grid functions, plus the
//! diagonal linear-trace operator and a diagnostic for how well a stencil
//! basis set resolves directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{second_difference, GridFunction};
use crate::model::EllipticityPair;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PucciSign {
    Plus,
    Minus,
}

/// A family of orthogonal integer frames used by the wide stencil. The sup
/// (resp. inf) in the extremal operator is taken over these frames only,
/// which is what makes the discretization monotone; the price is an angular
/// consistency gap measured by [`directional_resolution`].
#[derive(Clone, Debug)]
pub struct StencilBasisSet {
    /// Each basis is a full orthogonal frame of n integer vectors.
    pub bases: Vec<Vec<Vec<i64>>>,
    /// Max Chebyshev norm over all directions (the halo width grids need).
    pub max_radius: usize,
}

impl StencilBasisSet {
    /// Validated construction: every basis must be a full orthogonal frame
    /// of nonzero integer vectors, and the axis frame must be present.
    pub fn new(bases: Vec<Vec<Vec<i64>>>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::Validation("stencil basis set must be nonempty".into()));
        }
        let n = bases[0].len();
        let mut has_axis = false;
        let mut max_radius = 0usize;
        for (b, basis) in bases.iter().enumerate() {
            if basis.len() != n {
                return Err(Error::Validation(format!(
                    "basis {b}: expected {n} directions, got {}",
                    basis.len()
                )));
            }
            for (i, v) in basis.iter().enumerate() {
                if v.len() != n || v.iter().all(|&c| c == 0) {
                    return Err(Error::Validation(format!(
                        "basis {b}: direction {i} must be a nonzero {n}-vector"
                    )));
                }
                max_radius =
                    max_radius.max(v.iter().map(|&c| c.unsigned_abs() as usize).max().unwrap());
                for w in basis.iter().skip(i + 1) {
                    let dot: i64 = v.iter().zip(w).map(|(a, c)| a * c).sum();
                    if dot != 0 {
                        return Err(Error::Validation(format!(
                            "basis {b}: directions must be pairwise orthogonal"
                        )));
                    }
                }
            }
            let is_axis = basis.iter().enumerate().all(|(i, v)| {
                v.iter().enumerate().all(|(k, &c)| if k == i { c == 1 } else { c == 0 })
            });
            has_axis = has_axis || is_axis;
        }
        if !has_axis {
            return Err(Error::Validation(
                "stencil basis set must contain the axis frame e_1..e_n".into(),
            ));
        }
        Ok(StencilBasisSet { bases, max_radius })
    }

    /// Default frames per dimension: 1D axis; 2D axis, diagonal, and the two
    /// knight-move frames; 3D axis and the three face-diagonal frames;
    /// higher dimensions fall back to the axis frame.
    pub fn standard(n: usize) -> Self {
        let bases: Vec<Vec<Vec<i64>>> = match n {
            1 => vec![vec![vec![1]]],
            2 => vec![
                vec![vec![1, 0], vec![0, 1]],
                vec![vec![1, 1], vec![1, -1]],
                vec![vec![2, 1], vec![-1, 2]],
                vec![vec![1, 2], vec![-2, 1]],
            ],
            3 => vec![
                vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
                vec![vec![1, 1, 0], vec![1, -1, 0], vec![0, 0, 1]],
                vec![vec![1, 0, 1], vec![1, 0, -1], vec![0, 1, 0]],
                vec![vec![0, 1, 1], vec![0, 1, -1], vec![1, 0, 0]],
            ],
            _ => vec![(0..n)
                .map(|i| (0..n).map(|k| i64::from(k == i)).collect())
                .collect()],
        };
        StencilBasisSet::new(bases).expect("standard basis sets are valid")
    }
}

/// Stencil halo width needed by the standard basis set in dimension `n`.
pub fn default_stencil_radius(n: usize) -> usize {
    StencilBasisSet::standard(n).max_radius
}

/// Exact extremal operator on a symmetric matrix:
/// `M+ = Lambda * sum(e > 0) + lambda * sum(e < 0)` over eigenvalues `e`,
/// and symmetrically for `M-`.
pub fn pucci_matrix(x: &[Vec<f64>], ell: EllipticityPair, sign: PucciSign) -> Result<f64> {
    let n = x.len();
    if n == 0 || x.iter().any(|row| row.len() != n) {
        return Err(Error::Validation("pucci_matrix: matrix must be square".into()));
    }
    let mut scale = 1.0f64;
    for row in x {
        for &v in row {
            if !v.is_finite() {
                return Err(Error::Validation("pucci_matrix: non-finite entry".into()));
            }
            scale = scale.max(v.abs());
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if (x[i][j] - x[j][i]).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!(
                    "pucci_matrix: asymmetric input at ({i},{j}): {} vs {}",
                    x[i][j], x[j][i]
                )));
            }
        }
    }
    let eigs = symmetric_eigenvalues(x);
    let (up, down) = match sign {
        PucciSign::Plus => (ell.big_lambda, ell.lambda),
        PucciSign::Minus => (ell.lambda, ell.big_lambda),
    };
    Ok(eigs.iter().map(|&e| if e > 0.0 { up * e } else { down * e }).sum())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. The sizes
/// here are tiny (spatial dimension), so a dense two-sided sweep is plenty.
fn symmetric_eigenvalues(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut a: Vec<f64> = x.iter().flatten().copied().collect();
    let at = |a: &Vec<f64>, i: usize, j: usize| a[i * n + j];
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += at(&a, i, j) * at(&a, i, j);
            }
        }
        let diag: f64 = (0..n).map(|i| at(&a, i, i).abs()).fold(0.0, f64::max);
        if off.sqrt() <= 1e-15 * (1.0 + diag) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = at(&a, p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (at(&a, q, q) - at(&a, p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = at(&a, k, p);
                    let akq = at(&a, k, q);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = at(&a, p, k);
                    let aqk = at(&a, q, k);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eigs.sort_by(|l, r| l.partial_cmp(r).unwrap());
    eigs
}

/// Monotone wide-stencil extremal operator at an interior node:
/// for `Plus`, the max over frames of `sum_i Lambda (d2_i)^+ - lambda (d2_i)^-`;
/// for `Minus`, the min over frames of `sum_i lambda (d2_i)^+ - Lambda (d2_i)^-`.
/// Ties between frames go to the lowest frame index. When `lambda == Lambda`
/// both collapse to `lambda` times the axis Laplacian, computed exactly that
/// way so the collapse holds bit-for-bit.
pub fn pucci_apply(
    u: &GridFunction,
    node: usize,
    s: &StencilBasisSet,
    ell: EllipticityPair,
    sign: PucciSign,
) -> Result<f64> {
    if ell.lambda == ell.big_lambda {
        return axis_laplacian(u, node).map(|l| ell.lambda * l);
    }
    let mut best = f64::NAN;
    for basis in &s.bases {
        let mut sum = 0.0;
        for v in basis {
            let d2 = second_difference(u, node, v)?;
            sum += match sign {
                PucciSign::Plus => {
                    if d2 > 0.0 {
                        ell.big_lambda * d2
                    } else {
                        ell.lambda * d2
                    }
                }
                PucciSign::Minus => {
                    if d2 > 0.0 {
                        ell.lambda * d2
                    } else {
                        ell.big_lambda * d2
                    }
                }
            };
        }
        let better = match sign {
            PucciSign::Plus => !(sum <= best),
            PucciSign::Minus => !(sum >= best),
        };
        if best.is_nan() || better {
            best = sum;
        }
    }
    Ok(best)
}

/// Axis discrete Laplacian (sum of axis second differences).
pub fn axis_laplacian(u: &GridFunction, node: usize) -> Result<f64> {
    let n = u.grid.dim();
    let mut sum = 0.0;
    for k in 0..n {
        let mut e = vec![0i64; n];
        e[k] = 1;
        sum += second_difference(u, node, &e)?;
    }
    Ok(sum)
}

/// Diagonal trace operator `sum_k A_kk(x) d2_{e_k} u` with coefficients
/// sampled per axis (`a_diag[axis][node]`). Off-diagonal coefficients are
/// not representable here by construction; configurations carrying them are
/// rejected upstream.
pub fn linear_trace_apply(u: &GridFunction, node: usize, a_diag: &[Vec<f64>]) -> Result<f64> {
    let n = u.grid.dim();
    if a_diag.len() != n {
        return Err(Error::Validation(format!(
            "linear_trace_apply: expected {n} diagonal coefficient columns, got {}",
            a_diag.len()
        )));
    }
    let mut sum = 0.0;
    for (k, col) in a_diag.iter().enumerate() {
        let mut e = vec![0i64; n];
        e[k] = 1;
        sum += col[node] * second_difference(u, node, &e)?;
    }
    Ok(sum)
}

/// Worst-case angular distance from an arbitrary orthogonal frame to the
/// nearest frame of the set: `max_F min_B max_i min_j arccos |w_i . v_j|`.
///
/// In 2D this is computed exactly from the circular gaps of the frame
/// angles modulo pi/2. In higher dimensions it is estimated by a seeded
/// Monte Carlo scan over random orthogonal frames (deterministic across
/// runs), which overestimates resolution improvements never and is only
/// used as a diagnostic.
pub fn directional_resolution(s: &StencilBasisSet) -> Result<f64> {
    if s.bases.is_empty() {
        return Err(Error::Validation("directional_resolution: empty basis set".into()));
    }
    let n = s.bases[0].len();
    if n == 1 {
        return Ok(0.0);
    }
    if n == 2 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut angles: Vec<f64> = s
            .bases
            .iter()
            .map(|b| (b[0][1] as f64).atan2(b[0][0] as f64).rem_euclid(half_pi))
            .collect();
        angles.sort_by(|l, r| l.partial_cmp(r).unwrap());
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut max_gap = angles[0] + half_pi - angles[angles.len() - 1];
        for w in angles.windows(2) {
            max_gap = max_gap.max(w[1] - w[0]);
        }
        return Ok(max_gap / 2.0);
    }

    // Normalized directions per basis.
    let unit_bases: Vec<Vec<Vec<f64>>> = s
        .bases
        .iter()
        .map(|b| {
            b.iter()
                .map(|v| {
                    let norm = v.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
                    v.iter().map(|&c| c as f64 / norm).collect()
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut worst = 0.0f64;
    let mut frames = 0usize;
    while frames < 2048 {
        let Some(frame) = random_orthogonal_frame(&mut rng, n) else { continue };
        frames += 1;
        let mut nearest = f64::INFINITY;
        for basis in &unit_bases {
            let mut frame_dist = 0.0f64;
            for w in &frame {
                let mut best = f64::INFINITY;
                for v in basis {
                    let dot: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                    best = best.min(dot.abs().min(1.0).acos());
                }
                frame_dist = frame_dist.max(best);
            }
            nearest = nearest.min(frame_dist);
        }
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Random orthonormal frame via Gram-Schmidt on Gaussian vectors.
fn random_orthogonal_frame(rng: &mut ChaCha8Rng, n: usize) -> Option<Vec<Vec<f64>>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        for w in &frame {
            let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
            for k in 0..n {
                v[k] -= dot * w[k];
            }
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return None;
        }
        for c in &mut v {
            *c /= norm;
        }
        frame.push(v);
    }
    Some(frame)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 bounded away from 0.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
