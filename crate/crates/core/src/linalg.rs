//! Dense linear-algebra helpers.
//!
//! Matrices are `nalgebra::DMatrix` (column-major). Small symmetric
//! factorizations (the active-set blocks of the samplers) use a plain
//! Cholesky written here; anything larger than [`SMALL_DIM`] is handed to
//! faer, which is blocked and considerably faster at p in the thousands.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Accum, MatMut, MatRef, Par, Side};
use nalgebra::DMatrix;

/// Largest dimension factored by the in-crate Cholesky.
pub const SMALL_DIM: usize = 64;

fn as_faer(a: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

enum Factor {
    Small(DMatrix<f64>),
    Large(faer::linalg::solvers::Llt<f64>),
}

/// Cholesky factorization `A = L L'` of a symmetric positive definite matrix.
pub struct SpdFactor {
    dim: usize,
    factor: Factor,
}

impl SpdFactor {
    /// Returns `None` when `a` is not numerically positive definite.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let dim = a.nrows();
        debug_assert_eq!(dim, a.ncols());
        if dim <= SMALL_DIM {
            small_cholesky(a).map(|l| SpdFactor {
                dim,
                factor: Factor::Small(l),
            })
        } else {
            let llt = as_faer(a).llt(Side::Lower).ok()?;
            let l = llt.L();
            if (0..dim).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
                return None;
            }
            Some(SpdFactor {
                dim,
                factor: Factor::Large(llt),
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn diag(&self, i: usize) -> f64 {
        match &self.factor {
            Factor::Small(l) => l[(i, i)],
            Factor::Large(llt) => llt.L()[(i, i)],
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim);
        let mut x = b.to_vec();
        match &self.factor {
            Factor::Small(l) => {
                forward_sub(l, &mut x);
                backward_sub_t(l, &mut x);
            }
            Factor::Large(llt) => {
                llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, self.dim, 1));
            }
        }
        x
    }

    /// Solves `L' x = z`; if `z` is standard normal then `x ~ N(0, A^{-1})`.
    pub fn solve_upper_t(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        match &self.factor {
            Factor::Small(l) => backward_sub_t(l, &mut x),
            Factor::Large(llt) => faer::linalg::triangular_solve::solve_upper_triangular_in_place(
                llt.L().transpose(),
                MatMut::from_column_major_slice_mut(&mut x, self.dim, 1),
                Par::Seq,
            ),
        }
        x
    }

    /// Computes `x' A^{-1} x`.
    pub fn inv_quad(&self, x: &[f64]) -> f64 {
        let mut w = x.to_vec();
        match &self.factor {
            Factor::Small(l) => forward_sub(l, &mut w),
            Factor::Large(llt) => faer::linalg::triangular_solve::solve_lower_triangular_in_place(
                llt.L(),
                MatMut::from_column_major_slice_mut(&mut w, self.dim, 1),
                Par::Seq,
            ),
        }
        w.iter().map(|v| v * v).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Small(l) => {
                let n = self.dim;
                let mut inv = DMatrix::zeros(n, n);
                let mut e = vec![0.0; n];
                for j in 0..n {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[j] = 1.0;
                    forward_sub(l, &mut e);
                    backward_sub_t(l, &mut e);
                    inv.column_mut(j).copy_from_slice(&e);
                }
                symmetrize(&mut inv);
                inv
            }
            Factor::Large(llt) => {
                let mut inv = from_faer(llt.inverse().as_ref());
                symmetrize(&mut inv);
                inv
            }
        }
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

fn small_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn forward_sub(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = x.len();
    for j in 0..n {
        let v = x[j] / l[(j, j)];
        x[j] = v;
        for i in (j + 1)..n {
            x[i] -= l[(i, j)] * v;
        }
    }
}

fn backward_sub_t(l: &DMatrix<f64>, x: &mut [f64]) {
    let n = x.len();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
}

/// `X'X` for a column-major design.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    let xr = as_faer(x);
    faer::linalg::matmul::matmul(
        MatMut::from_column_major_slice_mut(g.as_mut_slice(), p, p),
        Accum::Replace,
        xr.transpose(),
        xr,
        1.0,
        Par::Seq,
    );
    symmetrize(&mut g);
    g
}

/// Leading singular triplet of `x` together with the runner-up singular value.
pub struct LeadingSvd {
    pub sigma1: f64,
    pub sigma2: f64,
    pub u1: Vec<f64>,
    pub v1: Vec<f64>,
}

pub fn leading_svd(x: &DMatrix<f64>) -> Option<LeadingSvd> {
    let svd = as_faer(x).thin_svd().ok()?;
    let s = svd.S();
    let k = s.dim();
    if k == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let top = order[0];
    let sigma2 = if k > 1 { s[order[1]] } else { 0.0 };
    let u = svd.U();
    let v = svd.V();
    Some(LeadingSvd {
        sigma1: s[top],
        sigma2,
        u1: (0..u.nrows()).map(|i| u[(i, top)]).collect(),
        v1: (0..v.nrows()).map(|i| v[(i, top)]).collect(),
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
