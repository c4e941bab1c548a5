//! End-to-end acceptance gate: one test per criterion, each printing a
//! single pass/fail line (run with `--nocapture` to see them all).

use ergodic_lab::bsde::{self, SolverConfig};
use ergodic_lab::catalog;
use ergodic_lab::control::{self, Policy};
use ergodic_lab::domain;
use ergodic_lab::ergodic;
use ergodic_lab::mixing::{self, MixingConfig};
use ergodic_lab::model::{self, DriverSpec, SamplerConfig};
use ergodic_lab::pde::{self, Mode};
use ergodic_lab::sim::{self, Scheme, SimConfig};
use std::sync::Arc;

fn report(num: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num:02} ({name}): {verdict} — {detail}");
    assert!(pass, "criterion {num:02} ({name}) failed: {detail}");
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn solver_cfg() -> SolverConfig {
    SolverConfig {
        n_cloud: 3000,
        dt: 0.02,
        substeps: 4,
        cloud_horizon: 8.0,
        seed: 11,
        basis_degree: 4,
        ridge: 1e-8,
        trunc_tol_factor: 1e-4,
        n_endpoints: 8,
    }
}

#[test]
fn criterion_01_moment_decay() {
    // 1D linear model: E|X_t|^2 has the closed form
    // x0^2 e^{-2t} + (1 - e^{-2t}) / 2.
    let model = catalog::linear_ou();
    let x0 = [1.5];
    let mut cfg = SimConfig::new(1e-3, 2.0, 100_000, 7, Scheme::Unreflected);
    cfg.store_every = 500; // slices at t = 0, 0.5, 1.0, 1.5, 2.0
    let bundle = sim::simulate_unreflected(&model, &x0, &cfg).unwrap();
    let rows = sim::estimate_moments(&bundle, &[2.0]);
    let mut pass = true;
    let mut detail = String::new();
    for row in rows.iter().filter(|r| [0.5, 1.0, 2.0].iter().any(|t| (r.t - t).abs() < 1e-9)) {
        let exact = x0[0] * x0[0] * (-2.0 * row.t).exp() + 0.5 * (1.0 - (-2.0 * row.t).exp());
        let ok = (row.estimate - exact).abs() <= 3.0 * row.stderr;
        pass &= ok;
        detail.push_str(&format!(
            "t={}: |{:.5}-{:.5}|<=3*{:.5} {} ",
            row.t, row.estimate, exact, row.stderr, ok
        ));
    }
    report(1, "moment decay", pass, &detail);
}

#[test]
fn criterion_02_penalization_rate() {
    // E sup_{t<=1} |X^n - X|^4 against the penalization index, matched
    // Brownian increments; the log-log slope must be at most -0.8.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let ns: Vec<u32> = (4..=12).map(|k| 1u32 << k).collect();
    let gaps = sim::penalization_gap(&model, &g, &[0.5], &ns, 4.0, 10_000, 1.0, 21).unwrap();
    let pts: Vec<(f64, f64)> = gaps.iter().map(|&(n, e)| (f64::from(n), e)).collect();
    let slope = loglog_slope(&pts);
    let detail = format!(
        "slope {slope:.3} (gaps {:?})",
        gaps.iter().map(|&(n, e)| (n, format!("{e:.2e}"))).collect::<Vec<_>>()
    );
    report(2, "penalization rate", slope <= -0.8, &detail);
}

#[test]
fn criterion_03_semigroup_decay() {
    // Weakly dissipative: fitted decay rate positive with positive 95%
    // lower confidence bound. Linear: rate within [0.8, 1.2].
    let battery = mixing::default_battery(1);
    let cfg = MixingConfig::default();
    let weak = catalog::weak_dissipative();
    let rep_w = mixing::estimate_semigroup_gap(&weak, None, &[-1.5], &[1.5], &battery, &cfg).unwrap();
    let ou = catalog::linear_ou();
    let rep_l = mixing::estimate_semigroup_gap(&ou, None, &[0.0], &[1.0], &battery, &cfg).unwrap();
    let pass = rep_w.mu > 0.0
        && rep_w.mu_ci.0 > 0.0
        && rep_l.mu >= 0.8
        && rep_l.mu <= 1.2;
    let detail = format!(
        "weak mu {:.3} (ci low {:.3}), linear mu {:.3}",
        rep_w.mu, rep_w.mu_ci.0, rep_l.mu
    );
    report(3, "semigroup decay", pass, &detail);
}

#[test]
fn criterion_04_discounted_bound() {
    // sup |v^alpha| <= M_psi / alpha on a dense grid, for every alpha in
    // the schedule; zero tolerance beyond regression round-off.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let ws = ergodic::shared_workspace(&model, Some(&g), &solver_cfg()).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for &alpha in &[0.5, 0.25, 0.1, 0.05, 0.02] {
        let sol = bsde::solve_on_workspace(&ws, &driver, alpha, 1e-4).unwrap();
        let bound = driver.m_psi / alpha;
        let mut sup = sol.diagnostics.sup_value;
        for k in 0..=200 {
            let x = -1.0 + 2.0 * k as f64 / 200.0;
            sup = sup.max(sol.evaluate_value(&[x]).value.abs());
        }
        let ok = sup <= bound * (1.0 + 1e-9);
        pass &= ok;
        detail.push_str(&format!("a={alpha}: sup {sup:.4} <= {bound:.1} {ok} "));
    }
    report(4, "discounted bound", pass, &detail);
}

#[test]
fn criterion_05_increment_growth() {
    // The constant C fitted at alpha = 0.1 in
    // |v(x) - v(y)| <= C (1 + |x|^2 + |y|^2) |x - y|
    // bounds the sampled ratios at smaller alphas within a factor 2.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let ws = ergodic::shared_workspace(&model, Some(&g), &solver_cfg()).unwrap();
    let xs: Vec<f64> = (0..=40).map(|k| -1.0 + 2.0 * k as f64 / 40.0).collect();
    let max_ratio = |alpha: f64| -> f64 {
        let sol = bsde::solve_on_workspace(&ws, &driver, alpha, 1e-4).unwrap();
        let vals: Vec<f64> = xs.iter().map(|&x| sol.evaluate_value(&[x]).value).collect();
        let mut worst = 0.0_f64;
        for i in 0..xs.len() {
            for j in 0..i {
                let weight = (1.0 + xs[i] * xs[i] + xs[j] * xs[j]) * (xs[i] - xs[j]).abs();
                worst = worst.max((vals[i] - vals[j]).abs() / weight);
            }
        }
        worst
    };
    let c_ref = max_ratio(0.1);
    let mut pass = true;
    let mut detail = format!("C(0.1) = {c_ref:.4}; ");
    for &alpha in &[0.05, 0.02, 0.01] {
        let r = max_ratio(alpha);
        let ok = r <= 2.0 * c_ref;
        pass &= ok;
        detail.push_str(&format!("a={alpha}: {r:.4} {ok} "));
    }
    report(5, "increment growth uniformity", pass, &detail);
}

#[test]
fn criterion_06_lambda_agreement() {
    // Vanishing-discount lambda vs the finite-difference oracle on the
    // reflected linear model with cosine driver, plus the long-run
    // average estimate and the exact constant-driver case.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let alphas = [0.5, 0.25, 0.1, 0.05, 0.02];

    let prob = pde::from_model(&model, &driver, Some(&g), None, 800, Mode::Ergodic, 0.0).unwrap();
    let oracle = pde::solve_ergodic_pde(&prob).unwrap();

    let rep = ergodic::vanishing_discount(&model, Some(&g), &driver, &alphas, &solver_cfg()).unwrap();
    let gap_vd = (rep.fit.lambda - oracle.lambda).abs();

    let (_y, z_fn) = ergodic::solution_fields(&rep.final_solution);
    let uniq = ergodic::check_lambda_uniqueness(
        &model,
        Some(&g),
        &driver,
        &z_fn,
        &[vec![0.0]],
        20.0,
        0.01,
        2000,
        31,
    )
    .unwrap();
    let gap_avg = (uniq.averages[0] - oracle.lambda).abs();

    let const_rep =
        ergodic::vanishing_discount(&model, Some(&g), &DriverSpec::constant(0.7), &alphas, &solver_cfg())
            .unwrap();
    let gap_const = (const_rep.fit.lambda - 0.7).abs();

    let pass = gap_vd <= 2e-2 && gap_avg <= 5e-2 && gap_const <= 1e-6;
    let detail = format!(
        "lambda_mc {:.5} vs lambda_pde {:.5} (gap {:.2e}); long-run gap {:.2e}; constant gap {:.2e}",
        rep.fit.lambda, oracle.lambda, gap_vd, gap_avg, gap_const
    );
    report(6, "ergodic constant agreement", pass, &detail);
}

#[test]
fn criterion_07_lambda_uniqueness() {
    // Start-point spread of the long-run lambda estimate at most 5%
    // relative across five starts.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let sol = bsde::solve_discounted(&model, Some(&g), &driver, 0.02, &solver_cfg()).unwrap();
    let (_y, z_fn) = ergodic::solution_fields(&sol);
    let starts: Vec<Vec<f64>> = [-0.9, -0.5, 0.0, 0.5, 0.9].iter().map(|&x| vec![x]).collect();
    let uniq = ergodic::check_lambda_uniqueness(
        &model, Some(&g), &driver, &z_fn, &starts, 20.0, 0.01, 2000, 13,
    )
    .unwrap();
    let mean = uniq.averages.iter().sum::<f64>() / uniq.averages.len() as f64;
    let rel = uniq.max_spread / mean.abs();
    let detail = format!("averages {:?}, relative spread {:.3}", uniq.averages, rel);
    report(7, "lambda uniqueness", rel <= 0.05, &detail);
}

/// Oracle solution of the reflected linear / cosine problem as closures.
fn pde_fields(n_cells: usize) -> (pde::PdeSolution, ergodic::ValueFn, ergodic::ZFn, f64) {
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let prob = pde::from_model(&model, &driver, Some(&g), None, n_cells, Mode::Ergodic, 0.0).unwrap();
    let sol = pde::solve_ergodic_pde(&prob).unwrap();
    let lambda = sol.lambda;
    let s1 = sol.clone();
    let s2 = sol.clone();
    let y_fn: ergodic::ValueFn = Arc::new(move |x: &[f64]| s1.value_at(x[0]));
    // sigma = 1, so Z is just the derivative of the value
    let z_fn: ergodic::ZFn = Arc::new(move |x: &[f64]| {
        let h = 1e-5;
        vec![(s2.value_at(x[0] + h) - s2.value_at(x[0] - h)) / (2.0 * h)]
    });
    (sol, y_fn, z_fn, lambda)
}

#[test]
fn criterion_08_residual_order() {
    // One-step defect of the oracle solution along simulated paths:
    // small at dt = 1e-3 and halving with the step (order-one slope).
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let (_sol, y_fn, z_fn, lambda) = pde_fields(1600);
    let run = |dt: f64| {
        ergodic::ebsde_residual(
            &model, Some(&g), &driver, &y_fn, &z_fn, lambda, None, &[0.3], 2.0, dt, 400, 17,
        )
        .unwrap()
    };
    let coarse = run(1e-3);
    let fine = run(5e-4);
    let slope = (coarse.mean_abs_defect / fine.mean_abs_defect).log2();
    let pass = coarse.mean_abs_defect <= 1e-2 && (slope - 1.0).abs() <= 0.3;
    let detail = format!(
        "mean abs defect {:.2e} at dt 1e-3, {:.2e} at dt 5e-4 (slope {:.2})",
        coarse.mean_abs_defect, fine.mean_abs_defect, slope
    );
    report(8, "one-step residual", pass, &detail);
}

#[test]
fn criterion_09_neumann_transforms() {
    // g identically mu leaves the trajectory untouched; a generic g with
    // the local-time term included still passes the residual tolerance.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let driver = catalog::driver_cosine();
    let (_sol, y_fn, z_fn, lambda) = pde_fields(1600);

    let dt = 1e-3;
    let mut cfg = SimConfig::new(dt, 2.0, 200, 19, Scheme::Projected);
    cfg.store_increments = true;
    let bundle = sim::simulate_with(&model, Some(&g), &[0.3], &cfg, false).unwrap();
    let n_sl = bundle.n_slices();
    let lt = bundle.local_time.clone().unwrap();

    // identity case: g == mu
    let mu = 0.4;
    let g_const: ergodic::ValueFn = Arc::new(move |_x: &[f64]| mu);
    let same = ergodic::neumann_transform_fixed_mu(&bundle, &y_fn, &g_const, mu).unwrap();
    let mut worst_id = 0.0_f64;
    for p in 0..bundle.n_paths {
        for k in 0..n_sl {
            worst_id = worst_id.max((same[p * n_sl + k] - y_fn(bundle.state(p, k))).abs());
        }
    }

    // generic boundary cost: transformed trajectory satisfies the
    // dynamics with the dK term restored
    let g_gen: ergodic::ValueFn = Arc::new(|x: &[f64]| x[0] * x[0]);
    let mu_gen = 0.25;
    let traj = ergodic::neumann_transform_fixed_mu(&bundle, &y_fn, &g_gen, mu_gen).unwrap();
    let mut sum_abs = 0.0;
    let mut count = 0usize;
    for p in 0..bundle.n_paths {
        for k in 0..n_sl - 1 {
            let x = bundle.state(p, k);
            let z = z_fn(x);
            let dw = bundle.increment(p, k)[0];
            let dk = lt[p * n_sl + k + 1] - lt[p * n_sl + k];
            let defect = traj[p * n_sl + k + 1] - traj[p * n_sl + k]
                + ((driver.psi)(x, &z) - lambda) * dt
                + (g_gen(x) - mu_gen) * dk
                - z[0] * dw;
            sum_abs += defect.abs();
            count += 1;
        }
    }
    let mean_abs = sum_abs / count as f64;
    let pass = worst_id <= 1e-12 && mean_abs <= 1e-2;
    let detail = format!("identity deviation {worst_id:.2e}, generic-g defect {mean_abs:.2e}");
    report(9, "boundary-cost transforms", pass, &detail);
}

#[test]
fn criterion_10_pde_order() {
    // Manufactured solution v0 = cos(pi x), lambda0 = 0.7 on [-1, 1]:
    // sup-error refinement slope 2 +/- 0.3, tiny boundary flux, lambda
    // recovered at second order.
    let lambda0 = 0.7;
    let v0 = |x: f64| (std::f64::consts::PI * x).cos();
    let pi = std::f64::consts::PI;
    let psi = move |x: f64, _z: f64| {
        // lambda0 - (1/2) v0'' - f v0' with f = -x, sigma = 1
        lambda0 + 0.5 * pi * pi * (pi * x).cos() - x * pi * (pi * x).sin()
    };
    let mut errs = Vec::new();
    let mut last = None;
    for k in 0..6 {
        let n = 32 << k;
        let prob = pde::GridProblem {
            a: -1.0,
            b: 1.0,
            n_cells: n,
            drift: Arc::new(|x| -x),
            sigma: Arc::new(|_| 1.0),
            psi: Arc::new(psi),
            mode: Mode::Ergodic,
            x_ref: 0.0,
        };
        let sol = pde::solve_ergodic_pde(&prob).unwrap();
        let sup = sol
            .x
            .iter()
            .zip(&sol.v)
            .map(|(&x, &v)| (v - (v0(x) - v0(0.0))).abs())
            .fold(0.0_f64, f64::max);
        errs.push((2.0 / n as f64, sup));
        last = Some(sol);
    }
    let slope = loglog_slope(&errs);
    let last = last.unwrap();
    let (fa, fb) = last.neumann_flux();
    let flux = fa.abs().max(fb.abs());
    let lam_gap = (last.lambda - lambda0).abs();
    let h2 = errs.last().unwrap().0 * errs.last().unwrap().0;
    let pass = (slope - 2.0).abs() <= 0.3 && flux <= 1e-6 && lam_gap <= 10.0 * h2;
    let detail = format!(
        "slope {slope:.2}, flux {flux:.1e}, |lambda-0.7| {lam_gap:.2e} (h^2 {h2:.1e})"
    );
    report(10, "oracle refinement order", pass, &detail);
}

#[test]
fn criterion_11_control_optimality() {
    // The feedback policy extracted from the Hamiltonian achieves the
    // ergodic constant; constant controls never beat it; the reweighted
    // and direct estimators agree.
    let model = catalog::linear_ou();
    let g = domain::box_domain(&[-1.0], &[1.0]).unwrap();
    let spec = catalog::control_quadratic_1d();
    let (driver, feedback) = control::build_hamiltonian(&spec).unwrap();

    let prob = pde::from_model(&model, &driver, Some(&g), None, 800, Mode::Ergodic, 0.0).unwrap();
    let oracle = pde::solve_ergodic_pde(&prob).unwrap();
    let lambda = oracle.lambda;

    let sol = oracle.clone();
    let policy = Policy::Feedback(Arc::new(move |x: &[f64]| {
        let h = 1e-5;
        let z = (sol.value_at(x[0] + h) - sol.value_at(x[0] - h)) / (2.0 * h);
        feedback(x, &[z])
    }));
    let cfg = control::CostConfig {
        dt: 0.01,
        horizon_t: 60.0,
        n_paths: 512,
        seed: 23,
    };
    let opt = control::ergodic_cost(&model, Some(&g), &spec, &policy, &[0.0], &cfg).unwrap();
    let mut pass = (opt.mean - lambda).abs() <= 5e-2;
    let mut detail = format!("lambda {lambda:.4}, I(feedback) {:.4}; ", opt.mean);

    for k in 0..9 {
        let u = -1.0 + 2.0 * k as f64 / 8.0;
        let est =
            control::ergodic_cost(&model, Some(&g), &spec, &Policy::Constant(vec![u]), &[0.0], &cfg)
                .unwrap();
        let ok = est.mean >= lambda - 5e-2;
        pass &= ok;
        if !ok {
            detail.push_str(&format!("I({u:.2}) = {:.4} below lambda; ", est.mean));
        }
    }

    let short = control::CostConfig {
        dt: 0.01,
        horizon_t: 2.0,
        n_paths: 4000,
        seed: 29,
    };
    let u_bench = Policy::Constant(vec![0.5]);
    let direct = control::ergodic_cost(&model, Some(&g), &spec, &u_bench, &[0.0], &short).unwrap();
    let weighted = control::girsanov_cost(&model, Some(&g), &spec, &u_bench, &[0.0], &short).unwrap();
    let se = (direct.stderr * direct.stderr + weighted.stderr * weighted.stderr).sqrt();
    let ok = (direct.mean - weighted.mean).abs() <= 3.0 * se;
    pass &= ok;
    detail.push_str(&format!(
        "estimators {:.4} vs {:.4} (3se {:.4}, ess {:.0})",
        direct.mean,
        weighted.mean,
        3.0 * se,
        weighted.ess
    ));
    report(11, "control optimality", pass, &detail);
}

#[test]
fn criterion_12_hypothesis_checker() {
    // The piecewise-diffusion preset: increment constant 0.1 and a
    // structural condition value of at least 1.97.
    let model = catalog::piecewise_sigma();
    let sampler = SamplerConfig::default();
    let rep = model::check_sigma_structure(&model, &sampler, 4000).unwrap();
    let pass = (rep.lambda_est - 0.1).abs() <= 1e-2 && rep.condition_value >= 1.97 && rep.pass;
    let detail = format!(
        "Lambda {:.4}, condition value {:.4}",
        rep.lambda_est, rep.condition_value
    );
    report(12, "hypothesis checker", pass, &detail);
}
