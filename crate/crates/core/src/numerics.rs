//! Dense linear algebra kernel shared by every other module.
//!
//! Factorizations come from `nalgebra`; this module adds the conventions the
//! rest of the crate relies on: rank decisions by relative `rcond`, eigenpairs
//! with a deterministic ordering and phase, and left eigenvectors paired with
//! right eigenvectors by eigenvalue.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Relative singular-value cutoff for pseudoinverses and least squares.
pub const DEFAULT_RCOND: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;
const SCHUR_MAX_ITER: usize = 10_000;

/// Builds a matrix from row slices, rejecting ragged or non-finite input.
pub fn mat_from_rows(rows: &[&[f64]]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged rows".into()));
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn ensure_square(m: &Mat) -> Result<usize> {
    if m.nrows() == m.ncols() {
        Ok(m.nrows())
    } else {
        Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: DVector<f64>,
    pub v: Mat,
}

impl Svd {
    /// Number of singular values above `rcond * s_max`.
    pub fn rank(&self, rcond: f64) -> usize {
        let smax = self.singular_values.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rcond * smax)
            .count()
    }

    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

pub fn svd(a: &Mat) -> Result<Svd> {
    ensure_finite(a, "svd input")?;
    let (r, c) = a.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok(Svd {
            u: Mat::zeros(r, 0),
            singular_values: DVector::zeros(0),
            v: Mat::zeros(c, 0),
        });
    }
    let raw = a
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::NoConvergence("svd"))?;
    let (u, vt) = match (raw.u, raw.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::NoConvergence("svd")),
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| raw.singular_values[j].total_cmp(&raw.singular_values[i]));
    Ok(Svd {
        u: Mat::from_fn(r, k, |i, j| u[(i, order[j])]),
        singular_values: DVector::from_fn(k, |j, _| raw.singular_values[order[j]].max(0.0)),
        v: Mat::from_fn(c, k, |i, j| vt[(order[j], i)]),
    })
}

/// Moore–Penrose pseudoinverse with singular values below `rcond * s_max` dropped.
pub fn pinv(a: &Mat, rcond: f64) -> Result<Mat> {
    let f = svd(a)?;
    let rank = f.rank(rcond);
    let mut out = Mat::zeros(a.ncols(), a.nrows());
    for j in 0..rank {
        let s = f.singular_values[j];
        let v = f.v.column(j);
        let u = f.u.column(j);
        out += (v * u.transpose()) / s;
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `A X ≈ B`.
pub fn lstsq(a: &Mat, b: &Mat) -> Result<Mat> {
    lstsq_rcond(a, b, DEFAULT_RCOND)
}

pub fn lstsq_rcond(a: &Mat, b: &Mat, rcond: f64) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "lstsq: A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(b, "lstsq rhs")?;
    let f = svd(a)?;
    let rank = f.rank(rcond);
    let mut x = Mat::zeros(a.ncols(), b.ncols());
    for j in 0..rank {
        let coef = f.u.column(j).transpose() * b / f.singular_values[j];
        x += f.v.column(j) * coef;
    }
    Ok(x)
}

pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    a.clone().lu().solve(b).ok_or(Error::Singular("linear solve"))
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    a.clone().try_inverse().ok_or(Error::Singular("inverse"))
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues with matching right (columns) and left (rows) eigenvectors.
///
/// Ordering: descending real part, ties broken by descending imaginary part,
/// which places conjugate pairs next to each other. Every vector has unit
/// 2-norm and its largest-magnitude entry is real and positive.
#[derive(Debug, Clone)]
pub struct EigenPairSet {
    pub eigenvalues: Vec<Complex64>,
    pub right: CMat,
    pub left: CMat,
}

impl EigenPairSet {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Left vectors rescaled so that `left_i · right_i = 1`.
    pub fn biorthonormal_left(&self) -> Result<CMat> {
        let mut out = self.left.clone();
        for i in 0..self.len() {
            let d = (self.left.row(i) * self.right.column(i))[(0, 0)];
            if d.norm() < 1e-14 {
                return Err(Error::DegenerateSpectrum(format_c(self.eigenvalues[i])));
            }
            let row = self.left.row(i) / d;
            out.set_row(i, &row);
        }
        Ok(out)
    }

    /// Index of the eigenvalue closest to `target`, provided it is within
    /// `rel_tol * max(1, |target|)` and no other eigenvalue is.
    pub fn match_eigenvalue(&self, target: Complex64, rel_tol: f64) -> Result<usize> {
        let tol = rel_tol * target.norm().max(1.0);
        let hits: Vec<usize> = (0..self.len())
            .filter(|&i| (self.eigenvalues[i] - target).norm() <= tol)
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::InvalidArgument(format!(
                "no eigenvalue near {}",
                format_c(target)
            ))),
            _ => Err(Error::DegenerateSpectrum(format_c(target))),
        }
    }

    pub fn is_real(&self, i: usize) -> bool {
        self.eigenvalues[i].im == 0.0
    }
}

pub(crate) fn format_c(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

/// Eigenvalues of a real square matrix from its real Schur form.
pub fn eigenvalues(k: &Mat) -> Result<Vec<Complex64>> {
    let n = ensure_square(k)?;
    ensure_finite(k, "eig input")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur =
        Schur::try_new(k.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::NoConvergence("eig"))?;
    let scale = k.norm().max(1.0);
    let mut vals: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| {
            if z.im.abs() <= 1e-14 * scale {
                Complex64::new(z.re, 0.0)
            } else {
                *z
            }
        })
        .collect();
    sort_eigenvalues(&mut vals, scale);
    Ok(vals)
}

fn sort_eigenvalues(vals: &mut [Complex64], scale: f64) {
    let tie = 1e-12 * scale;
    vals.sort_by(|a, b| {
        if (a.re - b.re).abs() <= tie {
            b.im.total_cmp(&a.im)
        } else {
            b.re.total_cmp(&a.re)
        }
    });
}

pub fn eig(k: &Mat) -> Result<EigenPairSet> {
    let vals = eigenvalues(k)?;
    let n = vals.len();
    let scale = k.norm().max(1.0);
    let right = eigenvectors_for(k, &vals, scale)?;
    let left = eigenvectors_for(&k.transpose(), &vals, scale)?.transpose();
    debug_assert_eq!(right.ncols(), n);
    Ok(EigenPairSet {
        eigenvalues: vals,
        right,
        left,
    })
}

/// Columns are null vectors of `(m - λ I)` for each `λ` in `vals` (already
/// sorted). Repeated eigenvalues take successive null-space directions; a
/// defective eigenvalue reuses its last available direction.
fn eigenvectors_for(m: &Mat, vals: &[Complex64], scale: f64) -> Result<CMat> {
    let n = vals.len();
    let mut out = CMat::zeros(n, n);
    let cluster_tol = 1e-8 * scale;
    let mut i = 0;
    while i < n {
        let lam = vals[i];
        let mut j = i + 1;
        while j < n && (vals[j] - lam).norm() <= cluster_tol {
            j += 1;
        }
        let mult = j - i;
        let basis = if lam.im < 0.0 && i > 0 && (vals[i - 1].conj() - lam).norm() <= cluster_tol {
            // conjugate partner: reuse the previous column conjugated
            let prev = out.column(i - 1).map(|z| z.conj());
            vec![DVector::from_iterator(n, prev.iter().copied())]
        } else {
            null_directions(m, lam, mult, scale)?
        };
        for (off, col) in (i..j).enumerate() {
            let v = &basis[off.min(basis.len() - 1)];
            out.set_column(col, &normalize_phase(v.clone()));
        }
        i = j;
    }
    Ok(out)
}

fn null_directions(
    m: &Mat,
    lam: Complex64,
    mult: usize,
    scale: f64,
) -> Result<Vec<DVector<Complex64>>> {
    let n = m.nrows();
    let shifted = CMat::from_fn(n, n, |i, j| {
        let d = if i == j { lam } else { Complex64::new(0.0, 0.0) };
        Complex64::new(m[(i, j)], 0.0) - d
    });
    let f = shifted
        .try_svd(false, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(Error::NoConvergence("eigenvector svd"))?;
    let vt = f.v_t.ok_or(Error::NoConvergence("eigenvector svd"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| f.singular_values[a].total_cmp(&f.singular_values[b]));
    let accept = 1e-6 * scale;
    let mut out = Vec::with_capacity(mult);
    for (rank, &idx) in order.iter().take(mult).enumerate() {
        if rank > 0 && f.singular_values[idx] > accept {
            break;
        }
        let v = DVector::from_fn(n, |r, _| vt[(idx, r)].conj());
        out.push(v);
    }
    Ok(out)
}

pub(crate) fn normalize_phase(mut v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // strict comparison up to rounding keeps the first of near-equal entries
        if z.norm() > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = z.norm();
        }
    }
    let pivot = v[best];
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = *z * phase / norm;
        if z.im.abs() < 1e-15 {
            z.im = 0.0;
        }
    }
    v[best] = Complex64::new(v[best].norm(), 0.0);
    v
}
