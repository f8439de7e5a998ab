//! Dense complex linear algebra used by the equalizer solvers.
//!
//! Matrices are `nalgebra` dense matrices over `Complex<f64>`. On top of the
//! generic dense routines this module provides a block-tridiagonal Hermitian
//! type with a block Cholesky factorization and a subspace inverse iteration
//! for its lowest eigenpairs. The mutually-referenced-equalizer quadratic
//! form has exactly this shape, which keeps the per-frame cost linear in the
//! number of equalizer delays.

use nalgebra::{Cholesky, DMatrix, DMatrixView, DVector, Dyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative ridge applied when a Hermitian factorization fails.
pub const RIDGE_FACTOR: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-9;

// A Cholesky pivot this small relative to the largest diagonal entry means
// the factorization went through on a numerically singular matrix.
const PIVOT_FLOOR: f64 = 1e-14;

pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn ensure_finite(m: &CMatrix, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `(m + mᴴ) / 2`.
pub fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

fn split(m: &DMatrixView<'_, Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

/// `a·bᴴ`. Runs as four real products, which go through an optimized real
/// kernel; the generic complex product is several times slower.
pub fn mul_adjoint(a: DMatrixView<'_, Complex64>, b: DMatrixView<'_, Complex64>) -> CMatrix {
    let (ar, ai) = split(&a);
    let (br, bi) = split(&b);
    let (brt, bit) = (br.transpose(), bi.transpose());
    let re = &ar * &brt + &ai * &bit;
    let im = &ai * &brt - &ar * &bit;
    re.zip_map(&im, c64)
}

/// `a·aᴴ`, Hermitian to the last bit.
pub fn gram(a: DMatrixView<'_, Complex64>) -> CMatrix {
    let (ar, ai) = split(&a);
    let (art, ait) = (ar.transpose(), ai.transpose());
    let re = &ar * &art + &ai * &ait;
    let cross = &ai * &art;
    CMatrix::from_fn(a.nrows(), a.nrows(), |i, j| {
        c64(0.5 * (re[(i, j)] + re[(j, i)]), cross[(i, j)] - cross[(j, i)])
    })
}

fn check_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Validates a Hermitian input and returns its symmetrized copy.
fn hermitian_input(m: &CMatrix, what: &str) -> Result<CMatrix> {
    check_square(m, what)?;
    ensure_finite(m, what)?;
    let scale = max_abs(m);
    let skew = max_abs(&(m - m.adjoint()));
    if skew > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "{what} is not Hermitian (max |m - mᴴ| = {skew:.3e}, max |m| = {scale:.3e})"
        )));
    }
    Ok(symmetrize(m))
}

fn real_trace(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    /// Unit-norm eigenvector. Its phase is arbitrary.
    pub vector: CVector,
}

/// Full eigendecomposition of a Hermitian matrix, eigenvalues ascending and
/// eigenvectors as the matching columns.
pub fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let h = hermitian_input(m, "eigen input")?;
    let n = h.nrows();
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite values".into()));
    }
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a Hermitian matrix and a unit eigenvector for it.
pub fn hermitian_smallest_eigpair(m: &CMatrix) -> Result<EigPair> {
    let (values, vectors) = hermitian_eigen(m)?;
    let mut vector = vectors.column(0).into_owned();
    let norm = vector.norm();
    vector.unscale_mut(norm);
    Ok(EigPair {
        value: values[0],
        vector,
    })
}

/// Solution of a Hermitian positive (semi)definite system.
#[derive(Debug, Clone)]
pub struct HpdSolution<T> {
    pub x: T,
    /// Total diagonal shift actually used, including the caller's ridge.
    pub ridge: f64,
    /// True when the automatic ridge had to be added to factorize.
    pub regularized: bool,
}

fn try_cholesky(m: &CMatrix) -> Option<Cholesky<Complex64, Dyn>> {
    let max_diag = (0..m.nrows()).map(|i| m[(i, i)].re).fold(0.0, f64::max);
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..m.nrows()).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
    if !(min_pivot * min_pivot > PIVOT_FLOOR * max_diag) {
        return None;
    }
    Some(chol)
}

fn add_ridge(m: &mut CMatrix, ridge: f64) {
    if ridge != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)].re += ridge;
        }
    }
}

fn factor_with_ridge(m: &CMatrix, ridge: f64) -> Result<(Cholesky<Complex64, Dyn>, f64, bool)> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let mut shifted = m.clone();
    add_ridge(&mut shifted, ridge);
    if let Some(chol) = try_cholesky(&shifted) {
        return Ok((chol, ridge, false));
    }
    let n = m.nrows() as f64;
    let auto = RIDGE_FACTOR * real_trace(m).abs() / n;
    add_ridge(&mut shifted, auto.max(f64::MIN_POSITIVE));
    match try_cholesky(&shifted) {
        Some(chol) => Ok((chol, ridge + auto, true)),
        None => Err(Error::Numerical(
            "matrix is indefinite even after ridge regularization".into(),
        )),
    }
}

/// Solves `(m + ridge·I) X = B` for Hermitian positive definite `m`.
///
/// If the factorization fails, retries once with an extra ridge of
/// `1e-10·trace(m)/dim` and flags the result as regularized.
pub fn solve_hpd_many(m: &CMatrix, b: &CMatrix, ridge: f64) -> Result<HpdSolution<CMatrix>> {
    let h = hermitian_input(m, "system matrix")?;
    ensure_finite(b, "right-hand side")?;
    if b.nrows() != h.nrows() {
        return Err(Error::Dimension(format!(
            "system is {}x{} but right-hand side has {} rows",
            h.nrows(),
            h.ncols(),
            b.nrows()
        )));
    }
    let (chol, ridge, regularized) = factor_with_ridge(&h, ridge)?;
    let x = chol.solve(b);
    ensure_finite(&x, "solution")?;
    Ok(HpdSolution { x, ridge, regularized })
}

pub fn solve_hpd(m: &CMatrix, b: &CVector, ridge: f64) -> Result<HpdSolution<CVector>> {
    let rhs = CMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let sol = solve_hpd_many(m, &rhs, ridge)?;
    Ok(HpdSolution {
        x: sol.x.column(0).into_owned(),
        ridge: sol.ridge,
        regularized: sol.regularized,
    })
}

/// Minimizes `‖a·X − b‖_F` through the normal equations.
pub fn least_squares(a: &CMatrix, b: &CMatrix) -> Result<HpdSolution<CMatrix>> {
    ensure_finite(a, "least-squares matrix")?;
    ensure_finite(b, "least-squares target")?;
    if a.nrows() < a.ncols() || a.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "least squares needs a tall matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "least squares row mismatch: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let ah = a.adjoint();
    solve_hpd_many(&(&ah * a), &(&ah * b), 0.0)
}

/// Orthonormalizes the columns of `m` in place (two passes of modified
/// Gram-Schmidt). Columns that collapse are replaced by fresh random ones.
fn orthonormalize(m: &mut CMatrix, rng: &mut ChaCha8Rng) {
    let (n, p) = m.shape();
    for j in 0..p {
        for attempt in 0..4 {
            let before = m.column(j).norm();
            for _ in 0..2 {
                for k in 0..j {
                    let proj = m.column(k).dotc(&m.column(j));
                    let qk = m.column(k).into_owned();
                    m.column_mut(j).axpy(-proj, &qk, Complex64::new(1.0, 0.0));
                }
            }
            let norm = m.column(j).norm();
            if norm > 1e-10 * before.max(f64::MIN_POSITIVE) && norm > 0.0 {
                m.column_mut(j).unscale_mut(norm);
                break;
            }
            if attempt == 3 {
                break;
            }
            for i in 0..n {
                m[(i, j)] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
    }
}

/// Hermitian block-tridiagonal matrix with equally sized square blocks.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    diag: Vec<CMatrix>,
    /// `upper[i]` is block `(i, i+1)`; block `(i+1, i)` is its adjoint.
    upper: Vec<CMatrix>,
}

impl BlockTridiagonal {
    pub fn new(diag: Vec<CMatrix>, upper: Vec<CMatrix>) -> Result<Self> {
        let Some(first) = diag.first() else {
            return Err(Error::Dimension(
                "block-tridiagonal matrix needs at least one block".into(),
            ));
        };
        let b = first.nrows();
        if upper.len() + 1 != diag.len() {
            return Err(Error::Dimension(format!(
                "{} diagonal blocks need {} off-diagonal blocks, got {}",
                diag.len(),
                diag.len() - 1,
                upper.len()
            )));
        }
        if diag.iter().chain(upper.iter()).any(|m| m.shape() != (b, b)) || b == 0 {
            return Err(Error::Dimension("all blocks must share one square shape".into()));
        }
        Ok(Self { diag, upper })
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.num_blocks() * self.block_size()
    }

    pub fn diag_block(&self, i: usize) -> &CMatrix {
        &self.diag[i]
    }

    pub fn upper_block(&self, i: usize) -> &CMatrix {
        &self.upper[i]
    }

    pub fn to_dense(&self) -> CMatrix {
        let b = self.block_size();
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for (i, d) in self.diag.iter().enumerate() {
            out.view_mut((i * b, i * b), (b, b)).copy_from(d);
        }
        for (i, u) in self.upper.iter().enumerate() {
            out.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(u);
            out.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(&u.adjoint());
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().map(real_trace).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let d: f64 = self.diag.iter().map(|m| m.norm_squared()).sum();
        let u: f64 = self.upper.iter().map(|m| m.norm_squared()).sum();
        (d + 2.0 * u).sqrt()
    }

    /// `self · x` for a dense `x` with `dim()` rows.
    pub fn mul(&self, x: &CMatrix) -> CMatrix {
        let b = self.block_size();
        let nb = self.num_blocks();
        let mut out = CMatrix::zeros(self.dim(), x.ncols());
        for i in 0..nb {
            let mut acc = &self.diag[i] * x.rows(i * b, b);
            if i + 1 < nb {
                acc += &self.upper[i] * x.rows((i + 1) * b, b);
            }
            if i > 0 {
                acc += self.upper[i - 1].adjoint() * x.rows((i - 1) * b, b);
            }
            out.rows_mut(i * b, b).copy_from(&acc);
        }
        out
    }

    /// `alpha·self + I_blocks ⊗ shift`: scales every block and adds `shift`
    /// to each diagonal block.
    pub fn scaled_plus_block_diag(&self, alpha: f64, shift: &CMatrix) -> Result<Self> {
        if shift.shape() != (self.block_size(), self.block_size()) {
            return Err(Error::Dimension("diagonal shift block has the wrong shape".into()));
        }
        Ok(Self {
            diag: self.diag.iter().map(|d| d.scale(alpha) + shift).collect(),
            upper: self.upper.iter().map(|u| u.scale(alpha)).collect(),
        })
    }

    fn factor_shifted(&self, shift: f64) -> Option<BlockCholesky> {
        let nb = self.num_blocks();
        let max_diag = self
            .diag
            .iter()
            .flat_map(|d| (0..d.nrows()).map(move |i| d[(i, i)].re))
            .fold(0.0, f64::max)
            + shift;
        let mut diag_l = Vec::with_capacity(nb);
        let mut sub_l: Vec<CMatrix> = Vec::with_capacity(nb - 1);
        for i in 0..nb {
            let mut s = symmetrize(&self.diag[i]);
            add_ridge(&mut s, shift);
            if i > 0 {
                let c = &sub_l[i - 1];
                s -= c * c.adjoint();
                s = symmetrize(&s);
            }
            let l = Cholesky::new(s)?.l();
            let min_pivot = (0..l.nrows()).map(|k| l[(k, k)].re).fold(f64::INFINITY, f64::min);
            if !(min_pivot * min_pivot > PIVOT_FLOOR * max_diag) {
                return None;
            }
            if i + 1 < nb {
                // L_{i+1,i} = (L_ii⁻¹ B_i)ᴴ
                let w = l.solve_lower_triangular(&self.upper[i])?;
                sub_l.push(w.adjoint());
            }
            diag_l.push(l);
        }
        Some(BlockCholesky {
            diag_l,
            sub_l,
            ridge: shift,
            regularized: false,
        })
    }

    /// Block Cholesky factorization of `self + ridge·I`, with the same
    /// automatic ridge fallback as [`solve_hpd_many`].
    pub fn factor(&self, ridge: f64) -> Result<BlockCholesky> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::Domain(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        if let Some(f) = self.factor_shifted(ridge) {
            return Ok(f);
        }
        let auto = RIDGE_FACTOR * self.trace().abs() / self.dim() as f64;
        match self.factor_shifted(ridge + auto.max(f64::MIN_POSITIVE)) {
            Some(mut f) => {
                f.regularized = true;
                Ok(f)
            }
            None => Err(Error::Numerical(
                "block-tridiagonal matrix is indefinite even after ridge regularization".into(),
            )),
        }
    }

    /// The `count` smallest eigenpairs by subspace inverse iteration with
    /// Rayleigh-Ritz extraction. The matrix must be positive semidefinite.
    ///
    /// Returns eigenvalues ascending and unit eigenvectors as columns.
    pub fn lowest_eigenpairs(&self, count: usize) -> Result<(Vec<f64>, CMatrix)> {
        const MAX_ITER: usize = 5000;
        const TOL: f64 = 1e-10;
        let n = self.dim();
        if count == 0 || count > n {
            return Err(Error::Dimension(format!(
                "cannot extract {count} eigenpairs of a {n}x{n} matrix"
            )));
        }
        for d in self.diag.iter().chain(self.upper.iter()) {
            ensure_finite(d, "eigen input")?;
        }
        let p = (2 * count + 4).min(n);
        let chol = self.factor(0.0)?;
        let norm = self.frobenius_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d72_655f_6569_6773);
        let mut v = CMatrix::from_fn(n, p, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        orthonormalize(&mut v, &mut rng);
        for _ in 0..MAX_ITER {
            let mut q = chol.solve(&v);
            orthonormalize(&mut q, &mut rng);
            let aq = self.mul(&q);
            let (theta, y) = hermitian_eigen(&symmetrize(&(q.adjoint() * &aq)))?;
            v = &q * &y;
            let av = aq * &y;
            let converged = (0..count).all(|j| {
                let r = av.column(j) - v.column(j).scale(theta[j]);
                r.norm() <= TOL * norm
            });
            if converged {
                return Ok((theta[..count].to_vec(), v.columns(0, count).into_owned()));
            }
        }
        Err(Error::Numerical(format!(
            "subspace iteration did not converge in {MAX_ITER} iterations"
        )))
    }
}

/// Factor `L` of a block-tridiagonal Hermitian matrix: block lower
/// bidiagonal with Cholesky factors on the diagonal.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    diag_l: Vec<CMatrix>,
    sub_l: Vec<CMatrix>,
    ridge: f64,
    regularized: bool,
}

impl BlockCholesky {
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn solve(&self, rhs: &CMatrix) -> CMatrix {
        let nb = self.diag_l.len();
        let b = self.diag_l[0].nrows();
        assert_eq!(rhs.nrows(), nb * b, "right-hand side has the wrong length");
        let mut y: Vec<CMatrix> = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut r = rhs.rows(i * b, b).into_owned();
            if i > 0 {
                r -= &self.sub_l[i - 1] * &y[i - 1];
            }
            self.diag_l[i].solve_lower_triangular_unchecked_mut(&mut r);
            y.push(r);
        }
        let mut out = CMatrix::zeros(nb * b, rhs.ncols());
        for i in (0..nb).rev() {
            let mut r = std::mem::replace(&mut y[i], CMatrix::zeros(0, 0));
            if i + 1 < nb {
                r -= self.sub_l[i].adjoint() * out.rows((i + 1) * b, b);
            }
            self.diag_l[i].ad_solve_lower_triangular_unchecked_mut(&mut r);
            out.rows_mut(i * b, b).copy_from(&r);
        }
        out
    }
}
