//! Problem data: drift decomposition, diffusion, driver and control
//! ingredients, plus sampling-based checkers for the standing hypotheses.

use crate::error::{Error, Result};
use crate::rng::Stream;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Vector field `R^d -> R^d`, written into `out` to keep hot loops
/// allocation free.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Matrix field `R^d -> R^{d x d}` (row major).
pub type MatFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Driver `psi(x, z)` with `z` a row vector.
pub type DriverFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// The forward model `dV = (d(V) + b(V)) dt + sigma(V) dW` together with
/// the constants the theory quantifies over.
#[derive(Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub dissipative_drift: FieldFn,
    pub bounded_drift: FieldFn,
    pub diffusion: MatFn,
    /// Dissipativity constant of `d`.
    pub eta: f64,
    /// Bound on `|b|`.
    pub b_bound: f64,
    /// Bound on `|sigma|` and `|sigma^{-1}|` (operator norm).
    pub sigma_bound: f64,
    /// Structural constant of the diffusion increment condition.
    pub lambda_structure: f64,
    /// The positive constant of the structural condition
    /// `2(l - l^2 L^2) > |||sigma^{-1}|||^2` (distinct from the ergodic
    /// constant).
    pub hyp_lambda: f64,
    /// Polynomial growth exponent of `d`.
    pub poly_growth_nu: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.sigma_bound <= 0.0 {
            return Err(Error::Config("sigma_bound must be positive".into()));
        }
        Ok(())
    }

    /// Full drift `f = d + b`; `tmp` must have length `dim`.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        (self.dissipative_drift)(x, out);
        (self.bounded_drift)(x, tmp);
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o += *t;
        }
    }

    #[inline]
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out);
    }

    /// True when the dissipative part grows superlinearly, in which case
    /// the simulator uses the tamed Euler step.
    pub fn superlinear(&self) -> bool {
        self.poly_growth_nu > 1.0
    }
}

/// Driver of the backward equation.
#[derive(Clone)]
pub struct DriverSpec {
    pub psi: DriverFn,
    pub m_psi: f64,
}

impl DriverSpec {
    pub fn constant(c: f64) -> Self {
        DriverSpec {
            psi: Arc::new(move |_x, _z| c),
            m_psi: c.abs(),
        }
    }

    /// Driver with a constant added; used by the shift-equivariance checks.
    pub fn shifted(&self, kappa: f64) -> Self {
        let psi = self.psi.clone();
        DriverSpec {
            psi: Arc::new(move |x, z| psi(x, z) + kappa),
            m_psi: self.m_psi + kappa.abs(),
        }
    }
}

/// Control set: a finite list of points or a box with a grid resolution
/// for the Hamiltonian minimization.
#[derive(Clone)]
pub enum ControlSet {
    Finite(Vec<Vec<f64>>),
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        grid: usize,
    },
}

/// Control ingredients `R : U -> R^d` and running cost `L(x, u)`.
#[derive(Clone)]
pub struct ControlSpec {
    pub control_set: ControlSet,
    pub r: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub l: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    pub m_r: f64,
    pub m_l: f64,
}

/// Point cloud used by the hypothesis checkers: uniform on a ball plus a
/// fraction of far tail samples.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub seed: u64,
    pub radius: f64,
    pub tail_radius: f64,
    pub tail_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            radius: 10.0,
            tail_radius: 50.0,
            tail_fraction: 0.1,
        }
    }
}

impl SamplerConfig {
    fn draw(&self, rng: &mut Stream, dim: usize) -> Vec<f64> {
        let r = if rng.uniform() < self.tail_fraction {
            self.tail_radius
        } else {
            self.radius
        };
        rng.point_in_ball(dim, r)
    }
}

/// Relative tolerance on sampled suprema; sampling under-estimates a
/// supremum so the check leaves this much headroom.
pub const SAMPLED_SUP_TOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct DissipativityReport {
    pub pass: bool,
    pub worst_ratio: f64,
    pub n_used: usize,
}

/// Checks `(d(x) - d(y), x - y) <= -eta |x - y|^2` on sampled pairs.
pub fn check_dissipativity(
    spec: &ModelSpec,
    sampler: &SamplerConfig,
    n_pairs: usize,
) -> Result<DissipativityReport> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be >= 1".into()));
    }
    let d = spec.dim;
    let mut rng = Stream::new(sampler.seed, 0x6d55);
    let mut dx = vec![0.0; d];
    let mut dy = vec![0.0; d];
    let mut worst = f64::NEG_INFINITY;
    let mut used = 0;
    for _ in 0..n_pairs {
        let x = sampler.draw(&mut rng, d);
        let y = sampler.draw(&mut rng, d);
        let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 < 1e-24 {
            continue; // coincident pair, skipped
        }
        (spec.dissipative_drift)(&x, &mut dx);
        (spec.dissipative_drift)(&y, &mut dy);
        let inner: f64 = (0..d).map(|i| (dx[i] - dy[i]) * (x[i] - y[i])).sum();
        worst = worst.max(inner / dist2);
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptySample);
    }
    Ok(DissipativityReport {
        pass: worst <= -spec.eta + SAMPLED_SUP_TOL * spec.eta.max(1.0),
        worst_ratio: worst,
        n_used: used,
    })
}

#[derive(Debug, Clone)]
pub struct SigmaStructureReport {
    pub lambda_est: f64,
    pub sigma_inv_norm: f64,
    pub condition_value: f64,
    pub pass: bool,
}

/// Verifies the structural diffusion condition: estimates the increment
/// constant `Lambda`, the operator norm of `sigma^{-1}` (by SVD), and
/// evaluates `2(l - l^2 Lambda^2) - |||sigma^{-1}|||^2`.
pub fn check_sigma_structure(
    spec: &ModelSpec,
    sampler: &SamplerConfig,
    n_pairs: usize,
) -> Result<SigmaStructureReport> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be >= 1".into()));
    }
    let d = spec.dim;
    let mut rng = Stream::new(sampler.seed, 0x519a);
    let mut s_x = vec![0.0; d * d];
    let mut s_xy = vec![0.0; d * d];
    let mut lambda_est: f64 = 0.0;
    let mut inv_norm: f64 = 0.0;
    for _ in 0..n_pairs {
        let x = sampler.draw(&mut rng, d);
        let y = sampler.draw(&mut rng, d);
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ynorm < 1e-12 {
            continue;
        }
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        spec.sigma_into(&x, &mut s_x);
        spec.sigma_into(&xy, &mut s_xy);
        // |(sigma(x+y) - sigma(x))^T y| / |y| <= Lambda
        let mut acc = 0.0;
        for j in 0..d {
            let mut col = 0.0;
            for i in 0..d {
                col += (s_xy[i * d + j] - s_x[i * d + j]) * y[i];
            }
            acc += col * col;
        }
        lambda_est = lambda_est.max(acc.sqrt() / ynorm);

        let m = DMatrix::from_row_slice(d, d, &s_x);
        let svd = m.svd(false, false);
        let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        if smin < 1e-12 {
            return Err(Error::SingularSigma { point: x });
        }
        inv_norm = inv_norm.max(1.0 / smin);
    }
    let l = spec.hyp_lambda;
    let condition_value = 2.0 * (l - l * l * lambda_est * lambda_est) - inv_norm * inv_norm;
    Ok(SigmaStructureReport {
        lambda_est,
        sigma_inv_norm: inv_norm,
        condition_value,
        pass: condition_value > 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct DriverReport {
    pub pass: bool,
    /// Larger of the sampled Lipschitz ratio in `z` and the sampled
    /// `sup |psi(x, 0)|`.
    pub worst_violation: f64,
    pub worst_slope: f64,
    pub worst_at_zero: f64,
}

/// Samples `(x, z, z')` triples and checks the Lipschitz-in-`z` and
/// bounded-at-`z = 0` conditions against `M_psi`.
pub fn check_driver(
    driver: &DriverSpec,
    dim: usize,
    sampler: &SamplerConfig,
    n_samples: usize,
) -> Result<DriverReport> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let mut rng = Stream::new(sampler.seed, 0xd21f);
    let z_radius = 5.0;
    let zero = vec![0.0; dim];
    let mut worst_slope: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for _ in 0..n_samples {
        let x = sampler.draw(&mut rng, dim);
        let z = rng.point_in_ball(dim, z_radius);
        let z2 = rng.point_in_ball(dim, z_radius);
        let dz = z
            .iter()
            .zip(&z2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dz > 1e-12 {
            let slope = ((driver.psi)(&x, &z) - (driver.psi)(&x, &z2)).abs() / dz;
            worst_slope = worst_slope.max(slope);
        }
        worst_zero = worst_zero.max((driver.psi)(&x, &zero).abs());
    }
    let bound = driver.m_psi * (1.0 + SAMPLED_SUP_TOL);
    Ok(DriverReport {
        pass: worst_slope <= bound && worst_zero <= bound,
        worst_violation: worst_slope.max(worst_zero),
        worst_slope,
        worst_at_zero: worst_zero,
    })
}
