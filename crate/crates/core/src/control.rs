//! Hamiltonian construction from control ingredients and evaluation of
//! long-run average costs under a policy, either by direct controlled
//! simulation or by reweighting uncontrolled paths.

use crate::domain::ConvexDomain;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{ControlSet, ControlSpec, DriverSpec, ModelSpec};
use crate::rng::Stream;
use std::sync::Arc;

pub type FeedbackFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Control policy used by the cost estimators.
#[derive(Clone)]
pub enum Policy {
    Constant(Vec<f64>),
    /// `u = rho(x)`.
    Feedback(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
    /// `u = rho(t, x)`.
    TimeState(Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>),
}

impl Policy {
    #[inline]
    pub fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match self {
            Policy::Constant(u) => u.clone(),
            Policy::Feedback(f) => f(x),
            Policy::TimeState(f) => f(t, x),
        }
    }
}

fn control_dim(set: &ControlSet) -> usize {
    match set {
        ControlSet::Finite(pts) => pts.first().map_or(0, |p| p.len()),
        ControlSet::Box { lo, .. } => lo.len(),
    }
}

/// Ties broken toward the lexicographically smallest control so the
/// argmin is deterministic.
fn better(cand_val: f64, cand: &[f64], best_val: f64, best: &[f64]) -> bool {
    if cand_val < best_val - 1e-14 {
        return true;
    }
    if cand_val > best_val + 1e-14 {
        return false;
    }
    cand.iter().zip(best).find(|(a, b)| a != b).map_or(false, |(a, b)| a < b)
}

fn grid_min<F: Fn(&[f64]) -> f64>(
    lo: &[f64],
    hi: &[f64],
    grid: usize,
    f: &F,
) -> (Vec<f64>, f64) {
    let du = lo.len();
    let n = grid.max(2);
    let mut idx = vec![0usize; du];
    let mut u = vec![0.0; du];
    let mut best = Vec::new();
    let mut best_val = f64::INFINITY;
    loop {
        for j in 0..du {
            u[j] = lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (n - 1) as f64;
        }
        let v = f(&u);
        if best.is_empty() || better(v, &u, best_val, &best) {
            best = u.clone();
            best_val = v;
        }
        // odometer increment over the tensor grid
        let mut j = 0;
        loop {
            if j == du {
                return (best, best_val);
            }
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Minimizes `f` over the control set: enumeration for finite sets, a
/// tensor grid with three shrinking refinement passes for boxes.
pub fn minimize_over(set: &ControlSet, f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    match set {
        ControlSet::Finite(pts) => {
            let mut best = Vec::new();
            let mut best_val = f64::INFINITY;
            for u in pts {
                let v = f(u);
                if best.is_empty() || better(v, u, best_val, &best) {
                    best = u.clone();
                    best_val = v;
                }
            }
            (best, best_val)
        }
        ControlSet::Box { lo, hi, grid } => {
            let du = lo.len();
            let n = (*grid).max(2);
            let (mut best, mut best_val) = grid_min(lo, hi, n, &f);
            let mut span: Vec<f64> = lo
                .iter()
                .zip(hi)
                .map(|(a, b)| (b - a) / (n - 1) as f64)
                .collect();
            for _ in 0..3 {
                let llo: Vec<f64> = (0..du)
                    .map(|j| (best[j] - span[j]).max(lo[j]))
                    .collect();
                let lhi: Vec<f64> = (0..du)
                    .map(|j| (best[j] + span[j]).min(hi[j]))
                    .collect();
                let (b, v) = grid_min(&llo, &lhi, n, &f);
                if better(v, &b, best_val, &best) {
                    best = b;
                    best_val = v;
                }
                for s in span.iter_mut() {
                    *s *= 2.0 / (n - 1) as f64;
                }
            }
            (best, best_val)
        }
    }
}

/// Builds `psi(x, z) = inf_u { L(x, u) + z R(u) }` together with the
/// minimizing feedback `(x, z) -> u`.
pub fn build_hamiltonian(spec: &ControlSpec) -> Result<(DriverSpec, FeedbackFn)> {
    if control_dim(&spec.control_set) == 0 {
        return Err(Error::Config("empty control set".into()));
    }
    let set = spec.control_set.clone();
    let r = spec.r.clone();
    let l = spec.l.clone();
    let objective = move |x: &[f64], z: &[f64], u: &[f64]| -> f64 {
        let rv = r(u);
        l(x, u) + z.iter().zip(&rv).map(|(a, b)| a * b).sum::<f64>()
    };
    let obj = Arc::new(objective);

    let psi = {
        let set = set.clone();
        let obj = obj.clone();
        Arc::new(move |x: &[f64], z: &[f64]| minimize_over(&set, |u| obj(x, z, u)).1)
    };
    let feedback: FeedbackFn =
        Arc::new(move |x: &[f64], z: &[f64]| minimize_over(&set, |u| obj(x, z, u)).0);

    // |psi(x, 0)| <= M_L and the z-slope is at most sup |R| = M_R.
    let m_psi = spec.m_l.max(spec.m_r);
    Ok((DriverSpec { psi, m_psi }, feedback))
}

#[derive(Debug, Clone)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Time window the average was taken over.
    pub window: (f64, f64),
    /// Self-normalized effective sample size (equals `n_paths` for the
    /// direct estimator).
    pub ess: f64,
}

#[derive(Debug, Clone)]
pub struct CostConfig {
    pub dt: f64,
    pub horizon_t: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            dt: 0.01,
            horizon_t: 40.0,
            n_paths: 256,
            seed: 0,
        }
    }
}

/// Long-run average cost of a policy by direct simulation of the
/// controlled dynamics `dX = (f(X) + sigma(X) R(u)) dt + sigma(X) dW`,
/// averaging `L(X, u)` over the second half of the horizon.
pub fn ergodic_cost(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    spec: &ControlSpec,
    policy: &Policy,
    x0: &[f64],
    cfg: &CostConfig,
) -> Result<CostEstimate> {
    run_cost(model, domain, spec, policy, x0, cfg, false)
}

/// Same long-run average, but estimated on uncontrolled paths through
/// Girsanov reweighting with `Gamma_T = exp(int R(u) dW - 1/2 int |R(u)|^2 dt)`.
/// A consistency cross-check for `ergodic_cost`, not a low-variance
/// estimator: the weights degenerate as the horizon grows.
pub fn girsanov_cost(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    spec: &ControlSpec,
    policy: &Policy,
    x0: &[f64],
    cfg: &CostConfig,
) -> Result<CostEstimate> {
    run_cost(model, domain, spec, policy, x0, cfg, true)
}

fn run_cost(
    model: &ModelSpec,
    domain: Option<&ConvexDomain>,
    spec: &ControlSpec,
    policy: &Policy,
    x0: &[f64],
    cfg: &CostConfig,
    reweight: bool,
) -> Result<CostEstimate> {
    model.validate()?;
    if !(cfg.dt > 0.0) || cfg.dt >= cfg.horizon_t || cfg.n_paths == 0 {
        return Err(Error::Config("require 0 < dt < horizon_T, n_paths >= 1".into()));
    }
    if let Some(g) = domain {
        if !g.contains(x0) {
            return Err(Error::Config("x0 must lie in the closure of G".into()));
        }
    }
    let d = model.dim;
    let n_steps = (cfg.horizon_t / cfg.dt).round().max(2.0) as usize;
    let dt = cfg.horizon_t / n_steps as f64;
    let burn = n_steps / 2;
    let sqdt = dt.sqrt();
    let tame = model.superlinear();

    // per path: (window-averaged cost, log weight at horizon)
    let per_path: Vec<(f64, f64)> = exec::map_indexed(cfg.n_paths, false, |path| {
        let mut rng = Stream::new(cfg.seed, path as u64);
        let mut x = x0.to_vec();
        let mut f = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        let mut dw = vec![0.0; d];
        let mut tentative = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut acc = 0.0;
        let mut log_w = 0.0;
        for step in 0..n_steps {
            let t = step as f64 * dt;
            let u = policy.control(t, &x);
            let rv = (spec.r)(&u);
            if step >= burn {
                acc += (spec.l)(&x, &u) * dt;
            }
            for w in dw.iter_mut() {
                *w = rng.normal() * sqdt;
            }
            model.drift_into(&x, &mut f, &mut tmp);
            if tame {
                let fn2: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                let factor = 1.0 / (1.0 + dt * fn2);
                for v in f.iter_mut() {
                    *v *= factor;
                }
            }
            model.sigma_into(&x, &mut sigma);
            if reweight {
                // uncontrolled dynamics; the measure change carries the control
                let r2: f64 = rv.iter().map(|v| v * v).sum();
                log_w += rv.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>() - 0.5 * r2 * dt;
                for i in 0..d {
                    let mut s = x[i] + f[i] * dt;
                    for j in 0..d {
                        s += sigma[i * d + j] * dw[j];
                    }
                    tentative[i] = s;
                }
            } else {
                for i in 0..d {
                    let mut s = x[i] + f[i] * dt;
                    for j in 0..d {
                        s += sigma[i * d + j] * (dw[j] + rv[j] * dt);
                    }
                    tentative[i] = s;
                }
            }
            if let Some(g) = domain {
                g.project_into(&tentative, &mut proj);
                x.copy_from_slice(&proj);
            } else {
                x.copy_from_slice(&tentative);
            }
        }
        (acc / ((n_steps - burn) as f64 * dt), log_w)
    });

    for (i, (c, w)) in per_path.iter().enumerate() {
        if !c.is_finite() || !w.is_finite() {
            return Err(Error::NonFinite { path: i, step: n_steps });
        }
    }

    let n = cfg.n_paths as f64;
    let (mean, stderr, ess) = if reweight {
        let max_lw = per_path.iter().map(|(_, w)| *w).fold(f64::MIN, f64::max);
        let weights: Vec<f64> = per_path.iter().map(|(_, w)| (w - max_lw).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let mean = per_path
            .iter()
            .zip(&weights)
            .map(|((c, _), w)| c * w)
            .sum::<f64>()
            / wsum;
        let var = per_path
            .iter()
            .zip(&weights)
            .map(|((c, _), w)| w * (c - mean) * (c - mean))
            .sum::<f64>()
            / wsum;
        let ess = wsum * wsum / weights.iter().map(|w| w * w).sum::<f64>();
        (mean, (var / ess).sqrt(), ess)
    } else {
        let mean = per_path.iter().map(|(c, _)| c).sum::<f64>() / n;
        let var = per_path
            .iter()
            .map(|(c, _)| (c - mean) * (c - mean))
            .sum::<f64>()
            / n;
        (mean, (var / n).sqrt(), n)
    };

    Ok(CostEstimate {
        mean,
        stderr,
        n_paths: cfg.n_paths,
        window: (burn as f64 * dt, cfg.horizon_t),
        ess,
    })
}
