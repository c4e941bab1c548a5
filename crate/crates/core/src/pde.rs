//! 1D finite-difference oracle on an interval with homogeneous Neumann
//! boundaries: ergodic problems `1/2 sigma^2 v'' + f v' + psi(x, sigma v') = lambda`
//! (solved for the pair `(v, lambda)` with `v(x_ref) = 0`) and their
//! discounted counterparts `... = alpha v`.
//!
//! The Neumann condition enters through second-order ghost nodes, which
//! keeps the Jacobian tridiagonal; the ergodic `lambda` column and the
//! normalization row are handled by a bordered (Schur-complement) solve.

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::model::{DriverSpec, ModelSpec};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarDriver = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Ergodic,
    Discounted(f64),
}

#[derive(Clone)]
pub struct GridProblem {
    pub a: f64,
    pub b: f64,
    pub n_cells: usize,
    pub drift: ScalarFn,
    pub sigma: ScalarFn,
    /// `psi(x, z)` with `z = v'(x) sigma(x)`.
    pub psi: ScalarDriver,
    pub mode: Mode,
    pub x_ref: f64,
}

#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl PdeSolution {
    /// Linear interpolation of `v`; clamped to the interval.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.x.len();
        let h = self.x[1] - self.x[0];
        let s = ((x - self.x[0]) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        self.v[i] * (1.0 - w) + self.v[i + 1] * w
    }

    /// Central-difference derivative at interior nodes, one-sided
    /// second-order at the ends.
    pub fn derivative_at_node(&self, i: usize) -> f64 {
        let n = self.x.len();
        let h = self.x[1] - self.x[0];
        if i == 0 {
            (-3.0 * self.v[0] + 4.0 * self.v[1] - self.v[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * self.v[n - 1] - 4.0 * self.v[n - 2] + self.v[n - 3]) / (2.0 * h)
        } else {
            (self.v[i + 1] - self.v[i - 1]) / (2.0 * h)
        }
    }

    /// One-sided third-order Neumann fluxes `(v'(a), v'(b))`; a higher
    /// reconstruction order than the scheme, so the result measures the
    /// enforced boundary condition rather than stencil error.
    pub fn neumann_flux(&self) -> (f64, f64) {
        let n = self.x.len();
        let h = self.x[1] - self.x[0];
        let left = (-11.0 * self.v[0] + 18.0 * self.v[1] - 9.0 * self.v[2] + 2.0 * self.v[3])
            / (6.0 * h);
        let right = (11.0 * self.v[n - 1] - 18.0 * self.v[n - 2] + 9.0 * self.v[n - 3]
            - 2.0 * self.v[n - 4])
            / (6.0 * h);
        (left, right)
    }
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 60;
const ELLIPTICITY_FLOOR: f64 = 1e-8;

struct Discretization {
    x: Vec<f64>,
    h: f64,
    half_s2: Vec<f64>, // sigma^2 / 2 per node
    sig: Vec<f64>,
    f: Vec<f64>,
}

impl GridProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > self.a) {
            return Err(Error::Config("require a < b".into()));
        }
        if self.n_cells < 16 {
            return Err(Error::Config("n_cells must be >= 16".into()));
        }
        if !(self.a..=self.b).contains(&self.x_ref) {
            return Err(Error::Config("x_ref must lie in [a, b]".into()));
        }
        if let Mode::Discounted(alpha) = self.mode {
            if !(alpha > 0.0) {
                return Err(Error::Config("alpha must be positive".into()));
            }
        }
        Ok(())
    }

    fn discretize(&self) -> Result<Discretization> {
        let n = self.n_cells;
        let h = (self.b - self.a) / n as f64;
        let x: Vec<f64> = (0..=n).map(|i| self.a + i as f64 * h).collect();
        let sig: Vec<f64> = x.iter().map(|&xi| (self.sigma)(xi)).collect();
        for (&xi, &s) in x.iter().zip(&sig) {
            if s * s < ELLIPTICITY_FLOOR {
                return Err(Error::Ellipticity { x: xi, value: s * s });
            }
        }
        let half_s2 = sig.iter().map(|s| 0.5 * s * s).collect();
        let f = x.iter().map(|&xi| (self.drift)(xi)).collect();
        Ok(Discretization { x, h, half_s2, sig, f })
    }

    /// Spatial operator `1/2 sigma^2 v'' + f v' + psi(x, sigma v')` at
    /// every node, with ghost-node Neumann closure at the ends.
    fn apply(&self, d: &Discretization, v: &[f64], out: &mut [f64]) {
        let n = v.len() - 1;
        let h = d.h;
        let h2 = h * h;
        // boundary nodes: v' = 0, ghost value v_{-1} = v_1
        out[0] = d.half_s2[0] * 2.0 * (v[1] - v[0]) / h2 + (self.psi)(d.x[0], 0.0);
        out[n] = d.half_s2[n] * 2.0 * (v[n - 1] - v[n]) / h2 + (self.psi)(d.x[n], 0.0);
        for i in 1..n {
            let vp = (v[i + 1] - v[i - 1]) / (2.0 * h);
            let vpp = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
            out[i] = d.half_s2[i] * vpp + d.f[i] * vp + (self.psi)(d.x[i], d.sig[i] * vp);
        }
    }

    /// Tridiagonal Jacobian of `apply` (lower, diag, upper); the psi
    /// z-derivative is taken by finite differences.
    fn jacobian(&self, d: &Discretization, v: &[f64], lo: &mut [f64], di: &mut [f64], up: &mut [f64]) {
        let n = v.len() - 1;
        let h = d.h;
        let h2 = h * h;
        di[0] = -2.0 * d.half_s2[0] / h2;
        up[0] = 2.0 * d.half_s2[0] / h2;
        di[n] = -2.0 * d.half_s2[n] / h2;
        lo[n - 1] = 2.0 * d.half_s2[n] / h2;
        let eps = 1e-7;
        for i in 1..n {
            let vp = (v[i + 1] - v[i - 1]) / (2.0 * h);
            let z = d.sig[i] * vp;
            let psi_z =
                ((self.psi)(d.x[i], z + eps) - (self.psi)(d.x[i], z - eps)) / (2.0 * eps);
            let dvp = (d.f[i] + psi_z * d.sig[i]) / (2.0 * h);
            lo[i - 1] = d.half_s2[i] / h2 - dvp;
            di[i] = -2.0 * d.half_s2[i] / h2;
            up[i] = d.half_s2[i] / h2 + dvp;
        }
    }
}

/// Thomas solve of a tridiagonal system; `lo` has length `n-1` aligned so
/// that row `i > 0` uses `lo[i-1]`.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = di[0];
    if piv.abs() < 1e-300 {
        return Err(Error::NewtonFailed { residual: f64::INFINITY });
    }
    c[0] = up.first().copied().unwrap_or(0.0) / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = di[i] - lo[i - 1] * c[i - 1];
        if piv.abs() < 1e-300 {
            return Err(Error::NewtonFailed { residual: f64::INFINITY });
        }
        if i < n - 1 {
            c[i] = up[i] / piv;
        }
        d[i] = (rhs[i] - lo[i - 1] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let xi = x[i] - c[i] * x[i + 1];
        x[i] = xi;
    }
    Ok(x)
}

fn ref_weights(x: &[f64], x_ref: f64) -> (usize, f64) {
    let h = x[1] - x[0];
    let s = ((x_ref - x[0]) / h).clamp(0.0, (x.len() - 1) as f64);
    let i = (s.floor() as usize).min(x.len() - 2);
    (i, s - i as f64)
}

/// Newton solve of the ergodic problem for the pair `(v, lambda)`.
///
/// The tridiagonal block `T` has exact zero row sums (the spatial
/// operator only sees differences of `v`), so `T 1 = 0` and the system
/// is only invertible as the full bordered matrix
/// `[[T, -1], [r, 0]]`; it is factored densely.
pub fn solve_ergodic_pde(problem: &GridProblem) -> Result<PdeSolution> {
    problem.validate()?;
    if problem.mode != Mode::Ergodic {
        return Err(Error::Config("problem mode is not Ergodic".into()));
    }
    let d = problem.discretize()?;
    let n = problem.n_cells;
    let m = n + 1;
    let mut v = vec![0.0; m];
    let mut lambda = 0.0;
    let mut op = vec![0.0; m];
    let mut lo = vec![0.0; m - 1];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m - 1];
    let (ri, rw) = ref_weights(&d.x, problem.x_ref);

    let mut last_res = f64::INFINITY;
    for iter in 1..=NEWTON_MAX_ITER {
        problem.apply(&d, &v, &mut op);
        let norm_res = v[ri] * (1.0 - rw) + v[ri + 1] * rw;
        let res_norm = op
            .iter()
            .map(|o| (o - lambda).abs())
            .fold(0.0_f64, f64::max)
            .max(norm_res.abs());
        if res_norm < NEWTON_TOL {
            return Ok(PdeSolution {
                x: d.x,
                v,
                lambda,
                iterations: iter - 1,
                residual: res_norm,
            });
        }
        problem.jacobian(&d, &v, &mut lo, &mut di, &mut up);
        let mut jac = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            jac[(i, i)] = di[i];
            if i > 0 {
                jac[(i, i - 1)] = lo[i - 1];
            }
            if i + 1 < m {
                jac[(i, i + 1)] = up[i];
            }
            jac[(i, m)] = -1.0;
        }
        jac[(m, ri)] = 1.0 - rw;
        jac[(m, ri + 1)] = rw;
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            rhs[i] = -(op[i] - lambda);
        }
        rhs[m] = -norm_res;
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::NewtonFailed { residual: res_norm })?;
        // damped update when the residual stalls
        let step = if res_norm < last_res { 1.0 } else { 0.5 };
        for i in 0..m {
            v[i] += step * delta[i];
        }
        lambda += step * delta[m];
        last_res = res_norm;
    }
    Err(Error::NewtonFailed { residual: last_res })
}

/// Newton solve of the discounted problem; `lambda` in the returned
/// solution is `alpha * v(x_ref)`.
pub fn solve_discounted_pde(problem: &GridProblem) -> Result<PdeSolution> {
    problem.validate()?;
    let alpha = match problem.mode {
        Mode::Discounted(a) => a,
        Mode::Ergodic => return Err(Error::Config("problem mode is not Discounted".into())),
    };
    let d = problem.discretize()?;
    let n = problem.n_cells;
    let m = n + 1;
    let mut v = vec![0.0; m];
    let mut op = vec![0.0; m];
    let mut lo = vec![0.0; m - 1];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m - 1];
    let (ri, rw) = ref_weights(&d.x, problem.x_ref);

    let mut last_res = f64::INFINITY;
    for iter in 1..=NEWTON_MAX_ITER {
        problem.apply(&d, &v, &mut op);
        let res: Vec<f64> = op.iter().zip(&v).map(|(o, vi)| o - alpha * vi).collect();
        let res_norm = res.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
        if res_norm < NEWTON_TOL {
            let v_ref = v[ri] * (1.0 - rw) + v[ri + 1] * rw;
            return Ok(PdeSolution {
                x: d.x,
                v,
                lambda: alpha * v_ref,
                iterations: iter - 1,
                residual: res_norm,
            });
        }
        problem.jacobian(&d, &v, &mut lo, &mut di, &mut up);
        for dii in di.iter_mut() {
            *dii -= alpha;
        }
        let dv = thomas(&lo, &di, &up, &res)?;
        let step = if res_norm < last_res { 1.0 } else { 0.5 };
        for i in 0..m {
            v[i] -= step * dv[i];
        }
        last_res = res_norm;
    }
    Err(Error::NewtonFailed { residual: last_res })
}

/// Builds the grid problem from a 1D model and driver over a box domain
/// (or an explicit interval for unreflected comparisons).
pub fn from_model(
    model: &ModelSpec,
    driver: &DriverSpec,
    domain: Option<&ConvexDomain>,
    interval: Option<(f64, f64)>,
    n_cells: usize,
    mode: Mode,
    x_ref: f64,
) -> Result<GridProblem> {
    if model.dim != 1 {
        return Err(Error::Config("the oracle is one-dimensional".into()));
    }
    let (a, b) = match (interval, domain) {
        (Some(iv), _) => iv,
        (None, Some(g)) => {
            // recover the interval from the projection map
            let lo = {
                let mut out = [0.0];
                g.project_into(&[-1e12], &mut out);
                out[0]
            };
            let hi = {
                let mut out = [0.0];
                g.project_into(&[1e12], &mut out);
                out[0]
            };
            (lo, hi)
        }
        (None, None) => return Err(Error::Config("need a domain or an interval".into())),
    };
    let m = model.clone();
    let m2 = model.clone();
    let psi = driver.psi.clone();
    Ok(GridProblem {
        a,
        b,
        n_cells,
        drift: Arc::new(move |x: f64| {
            let mut out = [0.0];
            let mut tmp = [0.0];
            m.drift_into(&[x], &mut out, &mut tmp);
            out[0]
        }),
        sigma: Arc::new(move |x: f64| {
            let mut out = [0.0];
            m2.sigma_into(&[x], &mut out);
            out[0]
        }),
        psi: Arc::new(move |x: f64, z: f64| psi(&[x], &[z])),
        mode,
        x_ref,
    })
}
