//! Vanishing-discount extraction of the ergodic constant, uniqueness
//! diagnostics, the Neumann boundary-cost transforms, and a pathwise
//! residual check of the ergodic backward equation.

use crate::bsde::{self, DiscountedSolution, SolverConfig, SolverWorkspace};
use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::model::{DriverSpec, ModelSpec};
use crate::sim::{self, PathBundle, Scheme, SimConfig};
use std::sync::Arc;

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ZFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone)]
pub struct AlphaRow {
    pub alpha: f64,
    pub lambda_alpha: f64,
    pub sup_value: f64,
    pub truncation_bound: f64,
    /// `sup` over the regression cloud of the change in the normalized
    /// potential `v^alpha - v^alpha(x_ref)` from the previous alpha.
    pub sup_vbar_change: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RichardsonFit {
    pub lambda: f64,
    pub prefactor: f64,
    pub rate: f64,
    pub rms_residual: f64,
}

/// Least-squares fit of `lambda_alpha = lambda + c alpha^r` with `r`
/// located by golden-section search.
pub fn richardson_fit(rows: &[(f64, f64)]) -> Result<RichardsonFit> {
    if rows.len() < 3 {
        return Err(Error::Config("richardson fit needs >= 3 points".into()));
    }
    let sse = |r: f64| -> (f64, f64, f64) {
        // linear LS in (lambda, c) for fixed r
        let n = rows.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(a, l) in rows {
            let x = a.powf(r);
            sx += x;
            sy += l;
            sxx += x * x;
            sxy += x * l;
        }
        let det = n * sxx - sx * sx;
        let c = (n * sxy - sx * sy) / det;
        let lam = (sy - c * sx) / n;
        let err: f64 = rows
            .iter()
            .map(|&(a, l)| (lam + c * a.powf(r) - l).powi(2))
            .sum();
        (err, lam, c)
    };
    let (mut lo, mut hi) = (0.3, 2.5);
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if sse(m1).0 < sse(m2).0 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let rate = 0.5 * (lo + hi);
    let (err, lambda, prefactor) = sse(rate);
    Ok(RichardsonFit {
        lambda,
        prefactor,
        rate,
        rms_residual: (err / rows.len() as f64).sqrt(),
    })
}

#[derive(Clone)]
pub struct VanishingDiscountReport {
    pub rows: Vec<AlphaRow>,
    /// Raw estimate at the smallest alpha.
    pub lambda_raw: f64,
    pub fit: RichardsonFit,
    /// Solution retained at the smallest alpha (potential and Z-field).
    pub final_solution: DiscountedSolution,
}

/// Runs the discounted solver over a decreasing alpha schedule on one
/// shared workspace (common cloud and noise) and extrapolates
/// `lambda = lim alpha v^alpha(x_ref)`.
pub fn vanishing_discount(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    driver: &DriverSpec,
    alphas: &[f64],
    cfg: &SolverConfig,
) -> Result<VanishingDiscountReport> {
    if alphas.len() < 3 {
        return Err(Error::Config("need >= 3 discount factors".into()));
    }
    let mut sched = alphas.to_vec();
    sched.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let ws = bsde::build_workspace(model, domain, cfg)?;
    let n_pts = ws.points.len() / ws.basis.dim;
    let mut rows = Vec::with_capacity(sched.len());
    let mut prev_vbar: Option<Vec<f64>> = None;
    let mut last: Option<DiscountedSolution> = None;
    for &alpha in &sched {
        let sol = bsde::solve_on_workspace(&ws, driver, alpha, cfg.trunc_tol_factor)?;
        let v_ref = sol.evaluate_value(&ws.x_ref).value;
        let vbar: Vec<f64> = (0..n_pts)
            .map(|i| {
                let x = &ws.points[i * ws.basis.dim..(i + 1) * ws.basis.dim];
                sol.evaluate_value(x).value - v_ref
            })
            .collect();
        let sup_change = prev_vbar.as_ref().map(|prev| {
            vbar.iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max)
        });
        rows.push(AlphaRow {
            alpha,
            lambda_alpha: sol.lambda_alpha,
            sup_value: sol.diagnostics.sup_value,
            truncation_bound: sol.diagnostics.truncation_bound,
            sup_vbar_change: sup_change,
        });
        prev_vbar = Some(vbar);
        last = Some(sol);
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.alpha, r.lambda_alpha)).collect();
    let fit = richardson_fit(&pairs)?;
    Ok(VanishingDiscountReport {
        lambda_raw: rows.last().unwrap().lambda_alpha,
        rows,
        fit,
        final_solution: last.unwrap(),
    })
}

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    /// Long-run average of `psi(X, Z(X))` per start.
    pub averages: Vec<f64>,
    pub max_spread: f64,
}

/// Independence of the ergodic constant from the start: time-averages
/// `psi(X_t, Z(X_t))` over the second half of a long horizon from several
/// initial conditions; all averages should agree (and match `lambda`).
pub fn check_lambda_uniqueness(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    driver: &DriverSpec,
    z_fn: &ZFn,
    starts: &[Vec<f64>],
    horizon_t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    if starts.is_empty() {
        return Err(Error::EmptySample);
    }
    let scheme = if domain.is_some() {
        Scheme::Projected
    } else {
        Scheme::Unreflected
    };
    let mut averages = Vec::with_capacity(starts.len());
    for (s, x0) in starts.iter().enumerate() {
        let cfg = SimConfig::new(dt, horizon_t, n_paths, seed.wrapping_add(s as u64), scheme);
        let bundle = sim::simulate_with(model, domain, x0, &cfg, false)?;
        let n_sl = bundle.n_slices();
        let burn = n_sl / 2;
        let mut acc = 0.0;
        let mut count = 0usize;
        for p in 0..bundle.n_paths {
            for k in burn..n_sl {
                let x = bundle.state(p, k);
                let z = z_fn(x);
                acc += (driver.psi)(x, &z);
                count += 1;
            }
        }
        averages.push(acc / count as f64);
    }
    let lo = averages.iter().cloned().fold(f64::MAX, f64::min);
    let hi = averages.iter().cloned().fold(f64::MIN, f64::max);
    Ok(UniquenessReport {
        averages,
        max_spread: hi - lo,
    })
}

/// `Y_t - int_0^t (g(X_s) - mu) dK_s` along every stored path, with the
/// Stieltjes integral taken as a left-endpoint sum against the discrete
/// local time. Row-major `[n_paths x n_slices]`.
pub fn neumann_transform_fixed_mu(
    bundle: &PathBundle,
    y_fn: &ValueFn,
    g_fn: &ValueFn,
    mu: f64,
) -> Result<Vec<f64>> {
    let lt = bundle.local_time.as_ref().ok_or(Error::MissingLocalTime)?;
    let n_sl = bundle.n_slices();
    let mut out = Vec::with_capacity(bundle.n_paths * n_sl);
    for p in 0..bundle.n_paths {
        let mut integral = 0.0;
        for k in 0..n_sl {
            let y = y_fn(bundle.state(p, k));
            out.push(y - integral);
            if k + 1 < n_sl {
                let dk = lt[p * n_sl + k + 1] - lt[p * n_sl + k];
                integral += (g_fn(bundle.state(p, k)) - mu) * dk;
            }
        }
    }
    Ok(out)
}

/// `Y^0_t + (lambda - lambda0) t - int_0^t (g(X_s) - mu) dK_s`: the
/// fixed-lambda change of boundary cost applied to a base solution.
pub fn neumann_transform_fixed_lambda(
    bundle: &PathBundle,
    y0_fn: &ValueFn,
    g_fn: &ValueFn,
    mu: f64,
    lambda: f64,
    lambda0: f64,
) -> Result<Vec<f64>> {
    let base = neumann_transform_fixed_mu(bundle, y0_fn, g_fn, mu)?;
    let n_sl = bundle.n_slices();
    let mut out = base;
    for p in 0..bundle.n_paths {
        for k in 0..n_sl {
            out[p * n_sl + k] += (lambda - lambda0) * bundle.times[k];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Absolute value of the signed mean one-step defect (martingale
    /// noise cancels; scales with the step size).
    pub mean_defect: f64,
    /// Mean absolute one-step defect (dominated by the `O(sqrt(dt))`
    /// Brownian term; reported for context).
    pub mean_abs_defect: f64,
    pub n_increments: usize,
    pub dt: f64,
}

/// One-step defect of the candidate `(Y, Z, lambda)` along simulated
/// paths:
/// `D_k = Y(X_{k+1}) - Y(X_k) + (psi(X_k, Z_k) - lambda) dt
///        + (g(X_k) - mu) dK_k - Z_k . dW_k`.
#[allow(clippy::too_many_arguments)]
pub fn ebsde_residual(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    driver: &DriverSpec,
    y_fn: &ValueFn,
    z_fn: &ZFn,
    lambda: f64,
    boundary: Option<(&ValueFn, f64)>,
    x0: &[f64],
    horizon_t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ResidualReport> {
    let scheme = if domain.is_some() {
        Scheme::Projected
    } else {
        Scheme::Unreflected
    };
    let mut cfg = SimConfig::new(dt, horizon_t, n_paths, seed, scheme);
    cfg.store_increments = true;
    let bundle = sim::simulate_with(model, domain, x0, &cfg, false)?;
    let lt = bundle.local_time.as_ref();
    let n_sl = bundle.n_slices();
    let d = bundle.dim;
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut count = 0usize;
    for p in 0..bundle.n_paths {
        for k in 0..n_sl - 1 {
            let x = bundle.state(p, k);
            let x_next = bundle.state(p, k + 1);
            let z = z_fn(x);
            let dw = bundle.increment(p, k);
            let mut defect = y_fn(x_next) - y_fn(x)
                + ((driver.psi)(x, &z) - lambda) * bundle.dt
                - z.iter().zip(dw).take(d).map(|(a, b)| a * b).sum::<f64>();
            if let (Some((g_fn, mu)), Some(lt)) = (boundary, lt) {
                let dk = lt[p * n_sl + k + 1] - lt[p * n_sl + k];
                defect += (g_fn(x) - mu) * dk;
            }
            sum += defect;
            sum_abs += defect.abs();
            count += 1;
        }
    }
    Ok(ResidualReport {
        mean_defect: (sum / count as f64).abs(),
        mean_abs_defect: sum_abs / count as f64,
        n_increments: count,
        dt: bundle.dt,
    })
}

/// Re-exported convenience: builds value / Z closures from a discounted
/// solution so it can feed the residual and uniqueness checks.
pub fn solution_fields(sol: &DiscountedSolution) -> (ValueFn, ZFn) {
    let s1 = sol.clone();
    let s2 = sol.clone();
    (
        Arc::new(move |x: &[f64]| s1.evaluate_value(x).value),
        Arc::new(move |x: &[f64]| s2.evaluate_z(x).value),
    )
}

/// Shared workspace re-export for callers that sweep alphas themselves.
pub fn shared_workspace(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    cfg: &SolverConfig,
) -> Result<SolverWorkspace> {
    bsde::build_workspace(model, domain, cfg)
}
