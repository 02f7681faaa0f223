use serde::{Deserialize, Serialize};

use super::check_unit_gap;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};

/// `M A M⁻¹ = diag(A1, A2)` with `A1` stable and `A2` explosive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSplit {
    pub m: Mat,
    pub m_inv: Mat,
    pub a1: Mat,
    pub a2: Mat,
    pub p1: usize,
    pub p2: usize,
}

impl SpectralSplit {
    pub fn is_degenerate(&self) -> bool {
        self.p1 == 0 || self.p2 == 0
    }

    /// `‖M A M⁻¹ − diag(A1, A2)‖₂`.
    pub fn residual(&self, a: &Mat) -> f64 {
        let blocks = linalg::block_diag(&[&self.a1, &self.a2]);
        linalg::norm2(&(&self.m * a * &self.m_inv - blocks))
    }

    /// Partition of `M C M′` into the diagonal blocks `(C₁₁, C₂₂)`.
    pub fn split_covariance(&self, c: &Mat) -> (Mat, Mat) {
        let ct = &self.m * c * self.m.transpose();
        let c11 = ct.view((0, 0), (self.p1, self.p1)).into_owned();
        let c22 = ct.view((self.p1, self.p1), (self.p2, self.p2)).into_owned();
        (sym(c11), sym(c22))
    }
}

fn sym(a: Mat) -> Mat {
    (&a + a.transpose()) * 0.5
}

const SIGN_MAX_ITER: usize = 200;

/// Splits `A` into stable and explosive blocks. The stable invariant
/// subspace is the range of the spectral projector obtained from the matrix
/// sign function of the Cayley transform `(A − I)⁻¹(A + I)`, which maps the
/// open unit disc onto the open left half-plane.
pub fn stable_explosive_split(a: &Mat, unit_gap: f64) -> Result<SpectralSplit> {
    let p = linalg::check_square(a, "A")?;
    let eigs = linalg::eigenvalues(a)?;
    check_unit_gap(&eigs, unit_gap)?;
    let p1 = eigs.iter().filter(|z| z.norm() < 1.0).count();
    let p2 = p - p1;

    if p1 == 0 || p2 == 0 {
        let empty = Mat::zeros(0, 0);
        let (a1, a2) = if p2 == 0 { (a.clone(), empty) } else { (empty, a.clone()) };
        return Ok(SpectralSplit {
            m: linalg::identity(p),
            m_inv: linalg::identity(p),
            a1,
            a2,
            p1,
            p2,
        });
    }

    let eye = linalg::identity(p);
    let cayley = linalg::inverse(&(a - &eye))? * (a + &eye);
    let sign = matrix_sign(cayley)?;
    let proj_stable = (&eye - &sign) * 0.5;
    let proj_explosive = (&eye + &sign) * 0.5;

    let q1 = range_basis(&proj_stable, p1);
    let q2 = range_basis(&proj_explosive, p2);
    let mut m_inv = Mat::zeros(p, p);
    m_inv.view_mut((0, 0), (p, p1)).copy_from(&q1);
    m_inv.view_mut((0, p1), (p, p2)).copy_from(&q2);
    let m = linalg::inverse(&m_inv)?;
    let at = &m * a * &m_inv;
    let a1 = at.view((0, 0), (p1, p1)).into_owned();
    let a2 = at.view((p1, p1), (p2, p2)).into_owned();

    let split = SpectralSplit { m, m_inv, a1, a2, p1, p2 };
    let (_, max1) = super::eig_extremes(&split.a1)?;
    let (min2, _) = super::eig_extremes(&split.a2)?;
    if max1 >= 1.0 || min2 <= 1.0 {
        return Err(SysIdError::Numeric(format!(
            "spectral split failed: blocks have max |eig(A1)| = {max1}, min |eig(A2)| = {min2}"
        )));
    }
    Ok(split)
}

/// Newton iteration for the matrix sign function with determinant scaling.
fn matrix_sign(mut s: Mat) -> Result<Mat> {
    let p = s.nrows() as f64;
    for it in 0..SIGN_MAX_ITER {
        let inv = linalg::inverse(&s)?;
        let scale = if it < 20 {
            let d = s.determinant().abs();
            if d > 0.0 && d.is_finite() {
                d.powf(-1.0 / p)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&s * scale + inv / scale) * 0.5;
        let diff = (&next - &s).norm();
        let size = next.norm();
        s = next;
        if diff <= 1e-13 * size && it >= 1 {
            return Ok(s);
        }
    }
    Err(SysIdError::Numeric("matrix sign iteration did not converge".into()))
}

/// Orthonormal basis of the dominant `k`-dimensional range of `a`, from the
/// leading eigenvectors of the symmetric `a a′`.
fn range_basis(a: &Mat, k: usize) -> Mat {
    let eig = (a * a.transpose()).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let cols: Vec<_> = order.iter().take(k).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Mat::from_columns(&cols)
}
