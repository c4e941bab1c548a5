//! Tensor polynomial regression basis with ridge-regularized least
//! squares. Coordinates are affinely mapped to `[-1, 1]` over the
//! training cloud's bounding box for conditioning.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct PolyBasis {
    pub dim: usize,
    pub degree: usize,
    pub center: Vec<f64>,
    pub halfwidth: Vec<f64>,
    exponents: Vec<Vec<u32>>,
}

fn multi_indices(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(out, cur, pos + 1, left - k);
        }
        cur[pos] = 0;
    }
    rec(&mut out, &mut cur, 0, degree as u32);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));
    out
}

impl PolyBasis {
    /// Basis scaled to the bounding box of `points` (`points` is row
    /// major, `n x dim`).
    pub fn from_cloud(dim: usize, degree: usize, points: &[f64]) -> Self {
        let n = points.len() / dim;
        let mut lo = vec![f64::MAX; dim];
        let mut hi = vec![f64::MIN; dim];
        for i in 0..n {
            for j in 0..dim {
                let v = points[i * dim + j];
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let halfwidth: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (0.5 * (b - a)).max(1e-9))
            .collect();
        PolyBasis {
            dim,
            degree,
            center,
            halfwidth,
            exponents: multi_indices(dim, degree),
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn id(&self) -> String {
        format!("poly[dim={},deg={}]", self.dim, self.degree)
    }

    #[inline]
    fn scaled(&self, x: &[f64], j: usize) -> f64 {
        (x[j] - self.center[j]) / self.halfwidth[j]
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        // powers of each scaled coordinate up to degree
        for (m, expo) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for j in 0..self.dim {
                let s = self.scaled(x, j);
                for _ in 0..expo[j] {
                    v *= s;
                }
            }
            out[m] = v;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Gradient of basis function `m` with respect to the unscaled `x`.
    pub fn grad(&self, x: &[f64], m: usize) -> Vec<f64> {
        let expo = &self.exponents[m];
        let mut g = vec![0.0; self.dim];
        for j in 0..self.dim {
            if expo[j] == 0 {
                continue;
            }
            let mut v = f64::from(expo[j]) / self.halfwidth[j];
            for jj in 0..self.dim {
                let s = self.scaled(x, jj);
                let p = if jj == j { expo[jj] - 1 } else { expo[jj] };
                for _ in 0..p {
                    v *= s;
                }
            }
            g[j] = v;
        }
        g
    }

    /// Design matrix over a row-major point cloud.
    pub fn design(&self, points: &[f64]) -> DMatrix<f64> {
        let n = points.len() / self.dim;
        let m = self.len();
        let mut a = DMatrix::zeros(n, m);
        let mut row = vec![0.0; m];
        for i in 0..n {
            self.eval_into(&points[i * self.dim..(i + 1) * self.dim], &mut row);
            for j in 0..m {
                a[(i, j)] = row[j];
            }
        }
        a
    }
}

/// Ridge least-squares with a cached normal-equation factorization, so
/// repeated solves against the same cloud only cost a matrix-vector
/// product and a triangular solve.
pub struct Regressor {
    design: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl Regressor {
    pub fn new(basis: &PolyBasis, points: &[f64], ridge: f64) -> Result<Self> {
        let a = basis.design(points);
        let n = a.nrows() as f64;
        let mut gram = a.transpose() * &a;
        // the constant direction stays unpenalized so that level shifts
        // of the target are reproduced exactly
        for i in 1..gram.nrows() {
            gram[(i, i)] += ridge * n;
        }
        let chol = gram.clone().cholesky().ok_or_else(|| Error::RankDeficient {
            basis: basis.id(),
            slice: 0,
        })?;
        Ok(Regressor { design: a, chol })
    }

    pub fn n_points(&self) -> usize {
        self.design.nrows()
    }

    pub fn solve(&self, targets: &DVector<f64>) -> DVector<f64> {
        let rhs = self.design.transpose() * targets;
        self.chol.solve(&rhs)
    }

    /// Column-wise `solve`: regression coefficients for every column of
    /// a target matrix with one row per cloud point.
    pub fn solve_matrix(&self, targets: &DMatrix<f64>) -> DMatrix<f64> {
        let mut rhs = self.design.transpose() * targets;
        self.chol.solve_mut(&mut rhs);
        rhs
    }

    /// Fitted values on the training cloud for the given coefficients.
    pub fn predict(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.design * coeffs
    }

    /// Column-wise `predict` for several coefficient vectors at once.
    pub fn predict_matrix(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.design * coeffs
    }
}
