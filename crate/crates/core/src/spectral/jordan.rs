use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::RANK_REL_TOL;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, CMat, Mat};

/// One Jordan block: eigenvalue and block size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JordanBlock {
    pub eigenvalue: Complex64,
    pub size: usize,
}

impl JordanBlock {
    pub fn new(eigenvalue: Complex64, size: usize) -> Self {
        Self { eigenvalue, size }
    }

    pub fn real(eigenvalue: f64, size: usize) -> Self {
        Self::new(Complex64::new(eigenvalue, 0.0), size)
    }
}

/// Jordan decomposition `A = P⁻¹ΛP`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JordanForm {
    pub blocks: Vec<JordanBlock>,
    pub p: CMat,
    pub p_inv: CMat,
    /// True when the form was specified by construction rather than inferred.
    pub exact: bool,
    /// 2-norm condition number of `P`.
    pub condition: f64,
    /// `‖P⁻¹ΛP − A‖₂` for inferred forms; zero for constructed ones.
    pub residual: f64,
}

impl JordanForm {
    /// Builds an exact form from blocks and the similarity `P`.
    pub fn from_similarity(blocks: Vec<JordanBlock>, p: CMat) -> Result<Self> {
        let dim: usize = blocks.iter().map(|b| b.size).sum();
        if blocks.iter().any(|b| b.size == 0) {
            return Err(SysIdError::InvalidInput("Jordan block sizes must be positive".into()));
        }
        if p.nrows() != dim || p.ncols() != dim {
            return Err(SysIdError::InvalidInput(format!(
                "similarity is {}x{}, block sizes sum to {dim}",
                p.nrows(),
                p.ncols()
            )));
        }
        let p_inv = linalg::cinverse(&p)?;
        let condition = linalg::cond2(&p);
        Ok(Self {
            blocks,
            p,
            p_inv,
            exact: true,
            condition,
            residual: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    /// Largest block size, `μ(A)`.
    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(|b| b.size).max().unwrap_or(0)
    }

    pub fn min_eig_mag(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.eigenvalue.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eig_mag(&self) -> f64 {
        self.blocks.iter().map(|b| b.eigenvalue.norm()).fold(0.0, f64::max)
    }

    /// Block-diagonal Jordan matrix `Λ`.
    pub fn lambda(&self) -> CMat {
        let n = self.dim();
        let mut out = CMat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            for i in 0..b.size {
                out[(off + i, off + i)] = b.eigenvalue;
                if i + 1 < b.size {
                    out[(off + i, off + i + 1)] = Complex64::new(1.0, 0.0);
                }
            }
            off += b.size;
        }
        out
    }

    /// `P⁻¹ΛP`.
    pub fn assemble(&self) -> CMat {
        &self.p_inv * self.lambda() * &self.p
    }

    /// Blocks with inverted eigenvalues and the same sizes, as used for the
    /// power bounds of `Λ⁻¹`.
    pub fn inverse_blocks(&self) -> Vec<JordanBlock> {
        self.blocks
            .iter()
            .map(|b| JordanBlock::new(b.eigenvalue.inv(), b.size))
            .collect()
    }

    /// `‖P⁻¹‖_{∞→2} ‖P‖_∞`, the prefactor that transfers block power bounds
    /// back to `A`.
    pub fn transfer_factor(&self) -> f64 {
        linalg::cnorm_inf_to_2(&self.p_inv) * linalg::cnorm_inf(&self.p)
    }

    /// Prefactor for `A′`: `‖P′‖_{∞→2} ‖P′⁻¹‖_∞`.
    pub fn transpose_transfer_factor(&self) -> f64 {
        linalg::cnorm_inf_to_2(&self.p.transpose()) * linalg::cnorm_inf(&self.p_inv.transpose())
    }
}

fn ambiguous(sv: &[f64], cutoff: f64) -> bool {
    sv.iter().any(|&s| s > cutoff / 10.0 && s < cutoff * 10.0 && s > 0.0)
}

/// Numerical Jordan decomposition. Eigenvalues within `cluster_tol` of each
/// other are merged; block sizes come from the rank staircase of `(A − λI)^k`.
pub fn jordan_infer(a: &Mat, cluster_tol: f64) -> Result<JordanForm> {
    let p = linalg::check_square(a, "A")?;
    if !(cluster_tol > 0.0) {
        return Err(SysIdError::InvalidInput("cluster_tol must be positive".into()));
    }
    let eigs = linalg::eigenvalues(a)?;
    let clusters = cluster_eigenvalues(&eigs, cluster_tol);
    let ac = linalg::to_complex(a);
    let scale = linalg::norm2(a).max(f64::MIN_POSITIVE);

    let mut blocks = Vec::new();
    let mut columns: Vec<DVector<Complex64>> = Vec::new();

    for (center, mult) in clusters {
        let n = &ac - CMat::identity(p, p) * center;
        // Powers N^0..N^m and their ranks.
        let mut powers = vec![CMat::identity(p, p)];
        let mut ranks = vec![p];
        for k in 1..=mult + 1 {
            let next = &n * &powers[k - 1];
            let sv = linalg::complex_singular_values(&next);
            let cutoff = RANK_REL_TOL * scale.powi(k as i32).max(f64::MIN_POSITIVE);
            if ambiguous(&sv, cutoff) {
                return Err(SysIdError::IllConditionedJordan(format!(
                    "rank of (A - λI)^{k} undecidable near cutoff {cutoff:e} for λ = {center}"
                )));
            }
            ranks.push(sv.iter().filter(|&&s| s > cutoff).count());
            powers.push(next);
        }
        if p - ranks[mult] != mult {
            return Err(SysIdError::IllConditionedJordan(format!(
                "nullity of (A - λI)^{mult} is {}, expected algebraic multiplicity {mult} (λ = {center})",
                p - ranks[mult]
            )));
        }
        // at_least[k] = number of blocks of size ≥ k
        let at_least: Vec<usize> = (0..=mult + 1)
            .map(|k| if k == 0 { 0 } else { ranks[k - 1] - ranks[k] })
            .collect();
        let kernels: Vec<CMat> = (0..=mult)
            .map(|k| {
                if k == 0 {
                    CMat::zeros(p, 0)
                } else {
                    let cutoff = RANK_REL_TOL * scale.powi(k as i32).max(f64::MIN_POSITIVE);
                    linalg::null_space(&powers[k], cutoff).0
                }
            })
            .collect();

        // Chain heads chosen so far: (head, length).
        let mut heads: Vec<(DVector<Complex64>, usize)> = Vec::new();
        for s in (1..=mult).rev() {
            let exactly = at_least[s] - at_least.get(s + 1).copied().unwrap_or(0);
            if exactly == 0 {
                continue;
            }
            let mut span: Vec<DVector<Complex64>> = Vec::new();
            for j in 0..kernels[s - 1].ncols() {
                push_orthonormal(&mut span, kernels[s - 1].column(j).into_owned());
            }
            for (h, len) in &heads {
                let mut v = h.clone();
                for _ in 0..(len - s) {
                    v = &n * v;
                }
                push_orthonormal(&mut span, v);
            }
            for _ in 0..exactly {
                let mut best: Option<(f64, DVector<Complex64>)> = None;
                for j in 0..kernels[s].ncols() {
                    let r = residual(&span, kernels[s].column(j).into_owned());
                    let nr = r.norm();
                    if best.as_ref().is_none_or(|(b, _)| nr > *b) {
                        best = Some((nr, r));
                    }
                }
                let (nr, r) = best.ok_or_else(|| {
                    SysIdError::IllConditionedJordan("empty generalized eigenspace".into())
                })?;
                if nr < 1e-8 {
                    return Err(SysIdError::IllConditionedJordan(format!(
                        "could not extend Jordan chain of length {s} for λ = {center}"
                    )));
                }
                let head = r / Complex64::new(nr, 0.0);
                push_orthonormal(&mut span, head.clone());
                heads.push((head, s));
            }
        }
        heads.sort_by_key(|h| std::cmp::Reverse(h.1));
        for (head, len) in heads {
            let mut chain = vec![head];
            for _ in 1..len {
                let prev = chain.last().unwrap();
                chain.push(&n * prev);
            }
            chain.reverse();
            columns.extend(chain);
            blocks.push(JordanBlock::new(center, len));
        }
    }

    let v = CMat::from_columns(&columns);
    let p_mat = linalg::cinverse(&v).map_err(|_| {
        SysIdError::IllConditionedJordan("Jordan basis is singular".into())
    })?;
    let condition = linalg::cond2(&v);
    let mut form = JordanForm {
        blocks,
        p: p_mat,
        p_inv: v,
        exact: false,
        condition,
        residual: 0.0,
    };
    form.residual = linalg::cnorm2(&(form.assemble() - ac));
    Ok(form)
}

/// `jordan_infer` with the default clustering tolerance `1e−8·‖A‖₂`.
pub fn jordan_infer_default(a: &Mat) -> Result<JordanForm> {
    let tol = 1e-8 * linalg::norm2(a);
    jordan_infer(a, if tol > 0.0 { tol } else { 1e-8 })
}

fn residual(span: &[DVector<Complex64>], mut v: DVector<Complex64>) -> DVector<Complex64> {
    for _ in 0..2 {
        for b in span {
            let c = b.dotc(&v);
            v -= b * c;
        }
    }
    v
}

fn push_orthonormal(span: &mut Vec<DVector<Complex64>>, v: DVector<Complex64>) {
    let scale = v.norm();
    let r = residual(span, v);
    let nr = r.norm();
    if nr > 1e-10 * scale.max(1e-300) {
        span.push(r / Complex64::new(nr, 0.0));
    }
}

/// Single-linkage clustering; returns (mean, multiplicity) sorted by modulus
/// then argument.
fn cluster_eigenvalues(eigs: &[Complex64], tol: f64) -> Vec<(Complex64, usize)> {
    let n = eigs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Complex64>> = Default::default();
    for (i, &z) in eigs.iter().enumerate().take(n) {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(z);
    }
    let mut out: Vec<(Complex64, usize)> = groups
        .into_values()
        .map(|g| {
            let mean = g.iter().sum::<Complex64>() / g.len() as f64;
            (mean, g.len())
        })
        .collect();
    out.sort_by(|x, y| {
        x.0.norm()
            .total_cmp(&y.0.norm())
            .then(x.0.arg().total_cmp(&y.0.arg()))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_complex;

    fn sizes(form: &JordanForm) -> Vec<(f64, usize)> {
        let mut v: Vec<(f64, usize)> = form.blocks.iter().map(|b| (b.eigenvalue.re, b.size)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    #[test]
    fn diagonal_input() {
        let a = Mat::from_diagonal(&nalgebra::dvector![0.3, 0.7]);
        let f = jordan_infer_default(&a).unwrap();
        assert!(!f.exact);
        let s = sizes(&f);
        assert_eq!(s.len(), 2);
        assert!((s[0].0 - 0.3).abs() < 1e-12 && s[0].1 == 1);
        assert!((s[1].0 - 0.7).abs() < 1e-12 && s[1].1 == 1);
    }

    #[test]
    fn canonical_block() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let f = jordan_infer_default(&a).unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].size, 2);
        assert!((f.blocks[0].eigenvalue.re - 2.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn similarity_transformed_diagonal() {
        // Q = [[1, 0.3], [-0.2, 1]], well conditioned.
        let q = Mat::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.0]);
        let qi = q.clone().try_inverse().unwrap();
        let a = &q * Mat::from_diagonal(&nalgebra::dvector![0.5, 0.9]) * qi;
        let f = jordan_infer_default(&a).unwrap();
        let s = sizes(&f);
        assert!((s[0].0 - 0.5).abs() < 1e-10 && (s[1].0 - 0.9).abs() < 1e-10);
        assert!(f.residual < 1e-8);
        let eye = &f.p * &f.p_inv;
        assert!((eye - CMat::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn derogatory_explosive_block_structure() {
        // Two blocks for the same eigenvalue plus a size-2 block.
        let a = Mat::from_row_slice(
            3,
            3,
            &[1.5, 0.0, 0.0, 0.0, 1.5, 1.0, 0.0, 0.0, 1.5],
        );
        let f = jordan_infer_default(&a).unwrap();
        let mut s: Vec<usize> = f.blocks.iter().map(|b| b.size).collect();
        s.sort();
        assert_eq!(s, vec![1, 2]);
        assert!((f.assemble() - to_complex(&a)).norm() < 1e-10);
    }

    #[test]
    fn complex_pair() {
        let a = Mat::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        let f = jordan_infer_default(&a).unwrap();
        assert_eq!(f.blocks.len(), 2);
        assert!(f.blocks.iter().all(|b| (b.eigenvalue.norm() - 0.5).abs() < 1e-12));
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn constructed_form_reproduces_matrix() {
        let p = to_complex(&Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        let f = JordanForm::from_similarity(vec![JordanBlock::real(2.0, 2)], p).unwrap();
        assert!(f.exact);
        assert_eq!(f.max_block_size(), 2);
        let a = f.assemble();
        assert!(linalg::is_effectively_real(&a, 1e-14));
    }
}
