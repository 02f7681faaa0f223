//! Spectral machinery: eigenvalue extremes, Jordan forms, regularity and
//! reachability checks, the stable/explosive block split and the VAR(k)
//! companion embedding.

mod jordan;
mod split;

pub use jordan::{jordan_infer, jordan_infer_default, JordanBlock, JordanForm};
pub use split::{stable_explosive_split, SpectralSplit};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::linalg::{self, CMat, Mat};

/// Default distance from the unit circle below which an eigenvalue is treated
/// as a unit root.
pub const DEFAULT_UNIT_GAP: f64 = 1e-6;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Relative cutoff for structural zeros in [`mincoor`].
pub const MINCOOR_REL_TOL: f64 = 1e-12;
/// `λmin(K(C))` must exceed this multiple of `max(λmax(K(C)), 1)` for the
/// pair to count as reachable.
pub const REACHABILITY_REL_TOL: f64 = 1e-10;

/// Smallest and largest eigenvalue magnitudes.
pub fn eig_extremes(a: &Mat) -> Result<(f64, f64)> {
    let ev = linalg::eigenvalues(a)?;
    if ev.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mags = ev.iter().map(|z| z.norm());
    let lo = mags.clone().fold(f64::INFINITY, f64::min);
    let hi = mags.fold(0.0, f64::max);
    Ok((lo, hi))
}

pub fn check_unit_gap(eigs: &[Complex64], unit_gap: f64) -> Result<()> {
    for z in eigs {
        let m = z.norm();
        if (m - 1.0).abs() <= unit_gap {
            return Err(SysIdError::UnitRoot {
                magnitude: m,
                gap: unit_gap,
            });
        }
    }
    Ok(())
}

/// Regularity: every eigenvalue outside the unit circle has geometric
/// multiplicity one, tested as `rank(A − λI) ≥ p − 1`.
pub fn regularity_check(a: &Mat, unit_gap: f64) -> Result<bool> {
    let p = linalg::check_square(a, "A")?;
    let eigs = linalg::eigenvalues(a)?;
    check_unit_gap(&eigs, unit_gap)?;
    let ac = linalg::to_complex(a);
    let scale = linalg::norm2(a);
    for lam in eigs.iter().filter(|z| z.norm() > 1.0) {
        let shifted = &ac - CMat::identity(p, p) * *lam;
        let sv = linalg::complex_singular_values(&shifted);
        let cutoff = RANK_REL_TOL * scale.max(lam.norm());
        let rank = sv.iter().filter(|&&s| s > cutoff).count();
        if rank + 1 < p {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Reachability Gramian `K(C) = Σ_{i<p} AⁱCA′ⁱ` and its smallest eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reachability {
    pub k: Mat,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Reachability {
    pub fn is_reachable(&self) -> bool {
        self.lambda_min > REACHABILITY_REL_TOL * self.lambda_max.max(1.0)
    }
}

pub fn reachability_gramian(a: &Mat, c: &Mat) -> Result<Reachability> {
    let p = linalg::check_square(a, "A")?;
    if c.nrows() != p || c.ncols() != p {
        return Err(SysIdError::InvalidInput(format!(
            "C must be {p}x{p}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    if !linalg::is_symmetric(c, 1e-10) {
        return Err(SysIdError::InvalidInput("C is not symmetric".into()));
    }
    let mut k = Mat::zeros(p, p);
    let mut term = c.clone();
    for _ in 0..p {
        k += &term;
        term = a * term * a.transpose();
    }
    let k = (&k + k.transpose()) * 0.5;
    let (lo, hi) = linalg::sym_eig_extremes(&k);
    Ok(Reachability {
        k,
        lambda_min: lo.max(0.0),
        lambda_max: hi,
    })
}

/// Companion matrix `[[A₁ … A_k], [I_{(k−1)m}, 0]]` of a VAR(k) process.
pub fn companion_embed(coeffs: &[Mat]) -> Result<Mat> {
    let k = coeffs.len();
    if k == 0 {
        return Err(SysIdError::InvalidInput("at least one lag matrix required".into()));
    }
    let m = coeffs[0].nrows();
    for (j, c) in coeffs.iter().enumerate() {
        if c.nrows() != m || c.ncols() != m {
            return Err(SysIdError::InvalidInput(format!(
                "lag {} is {}x{}, expected {m}x{m}",
                j + 1,
                c.nrows(),
                c.ncols()
            )));
        }
    }
    if coeffs[k - 1].iter().all(|&x| x == 0.0) {
        return Err(SysIdError::InvalidInput("last lag matrix must be nonzero".into()));
    }
    if k == 1 {
        return Ok(coeffs[0].clone());
    }
    let mut out = Mat::zeros(k * m, k * m);
    for (j, c) in coeffs.iter().enumerate() {
        out.view_mut((0, j * m), (m, m)).copy_from(c);
    }
    for i in 0..(k - 1) * m {
        out[(m + i, i)] = 1.0;
    }
    Ok(out)
}

/// Smallest magnitude among the nonzero entries. Entries below
/// `MINCOOR_REL_TOL` times the largest magnitude are structural zeros; an
/// all-zero input yields `+∞`.
pub fn mincoor(m: &CMat) -> f64 {
    let largest = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if largest == 0.0 {
        return f64::INFINITY;
    }
    let tol = MINCOOR_REL_TOL * largest;
    m.iter()
        .map(|z| z.norm())
        .filter(|&v| v > tol)
        .fold(f64::INFINITY, f64::min)
}

pub fn mincoor_real(m: &Mat) -> f64 {
    mincoor(&linalg::to_complex(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;

    #[test]
    fn eig_extremes_examples() {
        assert_eq!(eig_extremes(&identity(2)).unwrap(), (1.0, 1.0));
        let (lo, hi) = eig_extremes(&Mat::from_diagonal(&nalgebra::dvector![0.5, 2.0])).unwrap();
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
        let (lo, hi) = eig_extremes(&Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0])).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_vacuous_for_stable() {
        let a = Mat::from_diagonal(&nalgebra::dvector![0.5, 0.9]);
        assert!(regularity_check(&a, DEFAULT_UNIT_GAP).unwrap());
    }

    #[test]
    fn regularity_jordan_vs_scalar_block() {
        let j = Mat::from_row_slice(2, 2, &[1.5, 1.0, 0.0, 1.5]);
        let d = Mat::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 1.5]);
        assert!(regularity_check(&j, DEFAULT_UNIT_GAP).unwrap());
        assert!(!regularity_check(&d, DEFAULT_UNIT_GAP).unwrap());
    }

    #[test]
    fn regularity_rejects_unit_root() {
        let a = Mat::from_diagonal(&nalgebra::dvector![1.0, 2.0]);
        assert!(matches!(
            regularity_check(&a, DEFAULT_UNIT_GAP),
            Err(SysIdError::UnitRoot { .. })
        ));
    }

    #[test]
    fn reachability_examples() {
        let r = reachability_gramian(&Mat::zeros(2, 2), &identity(2)).unwrap();
        assert!((r.k.clone() - identity(2)).amax() < 1e-15);
        assert!((r.lambda_min - 1.0).abs() < 1e-12);

        let a = Mat::from_diagonal(&nalgebra::dvector![2.0, 0.5]);
        let r = reachability_gramian(&a, &identity(2)).unwrap();
        assert!((r.k[(0, 0)] - 5.0).abs() < 1e-12);
        assert!((r.k[(1, 1)] - 1.25).abs() < 1e-12);
        assert!((r.lambda_min - 1.25).abs() < 1e-12);

        // Direct two-term sum: C + ACA' = e1e1' + 0.
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = reachability_gramian(&a, &c).unwrap();
        assert!(r.lambda_min.abs() < 1e-15);
        assert!(!r.is_reachable());
    }

    #[test]
    fn reachability_rejects_asymmetric_c() {
        let c = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            reachability_gramian(&identity(2), &c),
            Err(SysIdError::InvalidInput(_))
        ));
    }

    #[test]
    fn companion_examples() {
        let a1 = Mat::from_element(1, 1, 0.5);
        let a2 = Mat::from_element(1, 1, 0.2);
        let c = companion_embed(&[a1.clone(), a2]).unwrap();
        assert_eq!(c, Mat::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]));
        assert_eq!(companion_embed(&[a1]).unwrap(), Mat::from_element(1, 1, 0.5));
        assert!(companion_embed(&[identity(2), identity(3)]).is_err());
        assert!(companion_embed(&[identity(2), Mat::zeros(2, 2)]).is_err());
    }

    #[test]
    fn mincoor_examples() {
        let m = linalg::to_complex(&Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]));
        assert_eq!(mincoor(&m), 2.0);
        assert_eq!(mincoor(&CMat::zeros(2, 3)), f64::INFINITY);
        let m = linalg::to_complex(&Mat::from_row_slice(1, 2, &[1e-14, 5.0]));
        assert_eq!(mincoor(&m), 5.0);
    }
}
