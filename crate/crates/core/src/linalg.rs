//! Dense linear-algebra helpers shared by the spectral, estimator and bounds
//! modules. Thin wrappers over nalgebra plus the mixed operator norms that
//! show up in the finite-time constants.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SysIdError};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type Vector = DVector<f64>;

/// Above this many columns the exact `inf -> 2` norm (vertex enumeration)
/// is replaced by an upper bound.
const EXACT_INF_TO_2_MAX_COLS: usize = 20;

pub fn to_complex(a: &Mat) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

pub fn is_effectively_real(a: &CMat, tol: f64) -> bool {
    let scale = a.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    a.iter().all(|z| z.im.abs() <= tol * scale)
}

pub fn real_part(a: &CMat) -> Mat {
    a.map(|z| z.re)
}

pub fn check_square(a: &Mat, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(SysIdError::InvalidInput(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SysIdError::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(a.nrows())
}

/// Singular values in descending order.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn complex_singular_values(a: &CMat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Spectral norm `‖A‖₂`.
pub fn norm2(a: &Mat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn cnorm2(a: &CMat) -> f64 {
    complex_singular_values(a).first().copied().unwrap_or(0.0)
}

/// Maximum absolute row sum, `‖A‖∞`.
pub fn norm_inf(a: &Mat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn cnorm_inf(a: &CMat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖A‖_{2→∞}`: the largest Euclidean row norm.
pub fn cnorm_2_to_inf(a: &CMat) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// `‖A‖_{∞→2}` for a real matrix. The supremum of a convex function over the
/// unit `∞`-ball is attained at a sign vector, so small inputs are handled
/// exactly by enumeration.
pub fn norm_inf_to_2(a: &Mat) -> f64 {
    let q = a.ncols();
    if q == 0 {
        return 0.0;
    }
    if q > EXACT_INF_TO_2_MAX_COLS {
        return inf_to_2_upper_bound(&to_complex(a));
    }
    let mut best = 0.0_f64;
    let mut v = Vector::zeros(q);
    // First sign fixed: ‖Av‖ = ‖A(-v)‖.
    for mask in 0u64..(1u64 << (q - 1)) {
        v[0] = 1.0;
        for j in 1..q {
            v[j] = if mask & (1 << (j - 1)) != 0 { -1.0 } else { 1.0 };
        }
        best = best.max((a * &v).norm());
    }
    best
}

/// `‖A‖_{∞→2}` for a complex matrix. Exact when the matrix is real; otherwise
/// the smaller of `√q‖A‖₂` and the Euclidean norm of the row `ℓ₁` norms,
/// both valid upper bounds.
pub fn cnorm_inf_to_2(a: &CMat) -> f64 {
    if is_effectively_real(a, 1e-14) {
        return norm_inf_to_2(&real_part(a));
    }
    inf_to_2_upper_bound(a)
}

fn inf_to_2_upper_bound(a: &CMat) -> f64 {
    let q = a.ncols() as f64;
    let rows = a
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    (q.sqrt() * cnorm2(a)).min(rows)
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_extremes(a: &Mat) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    check_square(a, "matrix")?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let ev = a.clone().complex_eigenvalues();
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SysIdError::Numeric("eigenvalue solver failed to converge".into()));
    }
    Ok(ev.iter().copied().collect())
}

pub fn is_symmetric(a: &Mat, tol: f64) -> bool {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= tol * scale
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| SysIdError::Numeric("matrix is singular".into()))
}

pub fn cinverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| SysIdError::Numeric("complex matrix is singular".into()))
}

/// 2-norm condition number.
pub fn cond2(a: &CMat) -> f64 {
    let s = complex_singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Orthonormal basis of the null space of `a`; singular values at or below
/// `cutoff` count as zero. Returns the basis and the sorted singular values.
pub fn null_space(a: &CMat, cutoff: f64) -> (CMat, Vec<f64>) {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    // Rows of v_t beyond the numerical rank, plus any missing dimensions when
    // a has fewer rows than columns.
    let mut cols: Vec<DVector<Complex64>> = Vec::new();
    for &i in order.iter().skip(rank) {
        cols.push(vt.row(i).adjoint());
    }
    if vt.nrows() < n {
        // Complete the basis against the row space.
        let rowspace: Vec<DVector<Complex64>> =
            order.iter().take(rank).map(|&i| vt.row(i).adjoint()).collect();
        let mut basis: Vec<DVector<Complex64>> = rowspace.clone();
        basis.extend(cols.iter().cloned());
        for e in 0..n {
            if basis.len() >= n {
                break;
            }
            let mut v = DVector::<Complex64>::zeros(n);
            v[e] = Complex64::new(1.0, 0.0);
            for b in &basis {
                let c = b.dotc(&v);
                v -= b * c;
            }
            let nv = v.norm();
            if nv > 1e-8 {
                v /= Complex64::new(nv, 0.0);
                basis.push(v.clone());
                cols.push(v);
            }
        }
    }
    let basis = if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    };
    (basis, sv)
}

/// Numerical rank with singular-value cutoff `rel_tol · σ_max`; also returns the
/// sorted singular values for ambiguity diagnostics.
pub fn crank(a: &CMat, rel_tol: f64) -> (usize, Vec<f64>) {
    let sv = complex_singular_values(a);
    let smax = sv.first().copied().unwrap_or(0.0);
    let cutoff = rel_tol * smax;
    (sv.iter().filter(|&&s| s > cutoff).count(), sv)
}

pub fn identity(p: usize) -> Mat {
    Mat::identity(p, p)
}

/// Row-major nested vectors to a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(SysIdError::InvalidInput("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
