//! Mixing-rate estimation: two ensembles driven by common random
//! numbers, a bounded test-function battery, and a weighted log-linear
//! fit of the semigroup gap `sup_Phi |E Phi(X^x_t) - E Phi(X^y_t)|`.

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sim::{self, Scheme, SimConfig};
use std::sync::Arc;

pub type TestFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Bounded (`|Phi| <= 1`) battery used when the caller has no preference.
pub fn default_battery(dim: usize) -> Vec<(String, TestFn)> {
    let mut out: Vec<(String, TestFn)> = Vec::new();
    for j in 0..dim {
        out.push((
            format!("tanh_x{j}"),
            Arc::new(move |x: &[f64]| x[j].tanh()),
        ));
        out.push((
            format!("sin_x{j}"),
            Arc::new(move |x: &[f64]| x[j].sin()),
        ));
    }
    out.push((
        "bump".into(),
        Arc::new(|x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp()),
    ));
    out
}

#[derive(Debug, Clone)]
pub struct MixingConfig {
    pub dt: f64,
    pub horizon_t: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Time-slice thinning for the gap curve.
    pub store_every: usize,
    /// A gap point enters the fit only when it exceeds this many paired
    /// standard errors.
    pub snr_cut: f64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            dt: 0.01,
            horizon_t: 6.0,
            n_paths: 4000,
            seed: 0,
            store_every: 20,
            snr_cut: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GapPoint {
    pub t: f64,
    pub gap: f64,
    pub stderr: f64,
    /// Name of the maximizing test function at this time.
    pub witness: String,
    pub used_in_fit: bool,
}

#[derive(Debug, Clone)]
pub struct MixingReport {
    /// Fitted decay rate of the gap, `gap(t) ~ C e^{-mu t}`.
    pub mu: f64,
    /// 95% confidence interval for `mu` from the weighted fit.
    pub mu_ci: (f64, f64),
    pub prefactor_c: f64,
    pub points: Vec<GapPoint>,
    pub n_fit_points: usize,
}

/// Estimates the semigroup gap between starts `x0` and `y0` with
/// synchronously coupled ensembles (identical Brownian increments), and
/// fits `log gap = log C - mu t` by weighted least squares over the
/// points that clear the signal-to-noise cut.
pub fn estimate_semigroup_gap(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    x0: &[f64],
    y0: &[f64],
    battery: &[(String, TestFn)],
    cfg: &MixingConfig,
) -> Result<MixingReport> {
    if battery.is_empty() {
        return Err(Error::Config("empty test battery".into()));
    }
    let scheme = if domain.is_some() {
        Scheme::Projected
    } else {
        Scheme::Unreflected
    };
    let mut sim_cfg = SimConfig::new(cfg.dt, cfg.horizon_t, cfg.n_paths, cfg.seed, scheme);
    sim_cfg.store_every = cfg.store_every;
    // same seed for both ensembles: common random numbers
    let bx = sim::simulate_with(model, domain, x0, &sim_cfg, false)?;
    let by = sim::simulate_with(model, domain, y0, &sim_cfg, false)?;

    let n = cfg.n_paths as f64;
    let mut points = Vec::with_capacity(bx.n_slices());
    for k in 0..bx.n_slices() {
        let mut best_gap = 0.0;
        let mut best_se = f64::INFINITY;
        let mut witness = String::new();
        for (name, phi) in battery {
            // paired differences, one per coupled path
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for p in 0..bx.n_paths {
                let d = phi(bx.state(p, k)) - phi(by.state(p, k));
                sum += d;
                sum2 += d * d;
            }
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            if mean.abs() > best_gap {
                best_gap = mean.abs();
                best_se = se;
                witness = name.clone();
            }
        }
        points.push(GapPoint {
            t: bx.times[k],
            gap: best_gap,
            stderr: best_se,
            witness,
            used_in_fit: false,
        });
    }

    // weighted fit of log gap against t; delta-method weights
    let mut sw = 0.0;
    let mut st = 0.0;
    let mut sy = 0.0;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut n_fit = 0;
    for p in points.iter_mut() {
        if p.t <= 0.0 || p.gap <= 0.0 || !(p.gap > cfg.snr_cut * p.stderr) {
            continue;
        }
        p.used_in_fit = true;
        n_fit += 1;
        let w = (p.gap / p.stderr.max(1e-300)).powi(2).min(1e12);
        let y = p.gap.ln();
        sw += w;
        st += w * p.t;
        sy += w * y;
        stt += w * p.t * p.t;
        sty += w * p.t * y;
    }
    if n_fit < 3 {
        return Err(Error::EmptySample);
    }
    let det = sw * stt - st * st;
    if det.abs() < 1e-30 {
        return Err(Error::EmptySample);
    }
    let slope = (sw * sty - st * sy) / det;
    let intercept = (stt * sy - st * sty) / det;
    let mu = -slope;
    // slope variance under the delta-method weights
    let var_slope = sw / det;
    let half = 1.96 * var_slope.sqrt();
    Ok(MixingReport {
        mu,
        mu_ci: (mu - half, mu + half),
        prefactor_c: intercept.exp(),
        points,
        n_fit_points: n_fit,
    })
}
