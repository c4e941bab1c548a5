//! Command line front end: loads a TOML experiment file, applies
//! `--set` overrides, dispatches to the library and writes CSV / JSON
//! artifacts plus a manifest with the configuration digest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 hypothesis check failed.

use crate::config::ExperimentConfig;
use crate::control::Policy;
use crate::error::Error;
use crate::model::SamplerConfig;
use crate::sim::{Scheme, SimConfig};
use crate::{bsde, catalog, control, ergodic, mixing, model, pde, sim};
use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;

#[derive(Parser)]
#[command(name = "ergodic-lab", version, about = "ergodic BSDE laboratory")]
struct Cli {
    /// Experiment file (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set sim.n_paths=5000`; repeatable.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Verify the standing assumptions on sampled points.
    CheckHypotheses,
    /// Simulate the forward dynamics and report moments.
    Simulate,
    /// Estimate the semigroup mixing rate from coupled ensembles.
    Mixing,
    /// Solve one discounted backward equation.
    SolveDiscounted,
    /// Vanishing-discount sweep with Richardson extrapolation.
    EstimateLambda,
    /// Finite-difference reference solve (1D, Neumann).
    SolvePde,
    /// Evaluate the ergodic control policy against a benchmark.
    ControlEval,
    /// Hypotheses, mixing, lambda sweep, reference solve, control.
    FullPipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::CheckHypotheses => "check-hypotheses",
            Command::Simulate => "simulate",
            Command::Mixing => "mixing",
            Command::SolveDiscounted => "solve-discounted",
            Command::EstimateLambda => "estimate-lambda",
            Command::SolvePde => "solve-pde",
            Command::ControlEval => "control-eval",
            Command::FullPipeline => "full-pipeline",
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help / --version through this path too
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let text = match &cli.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => "[model]\npreset = \"linear_ou\"\n".into(),
    };
    let mut cfg = match ExperimentConfig::from_toml_str(&text, &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match execute(cli.cmd, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownPreset(_) | Error::Io(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            }
        }
    }
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(cfg: &ExperimentConfig, cmd: Command) -> crate::Result<Self> {
        let dir = PathBuf::from(&cfg.out_dir).join(cmd.name());
        fs::create_dir_all(&dir)?;
        let resolved = cfg.to_toml_string();
        let digest = Sha256::digest(resolved.as_bytes());
        let manifest = json!({
            "command": cmd.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": format!("{digest:x}"),
            "seeds": {
                "sim": cfg.sim.seed,
                "bsde": cfg.bsde.seed,
                "mixing": cfg.mixing.seed,
                "control": cfg.control.seed,
            },
        });
        let out = Outputs { dir };
        out.write_json("manifest.json", &manifest)?;
        fs::write(out.dir.join("config.resolved.toml"), resolved)?;
        Ok(out)
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> crate::Result<()> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value).unwrap())?;
        Ok(())
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[Vec<String>]) -> crate::Result<()> {
        let mut text = String::from(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }
}

struct Resolved {
    model: crate::model::ModelSpec,
    domain: Option<crate::domain::ConvexDomain>,
    driver: crate::model::DriverSpec,
}

fn resolve(cfg: &ExperimentConfig) -> crate::Result<Resolved> {
    let model = catalog::model_preset(&cfg.model.preset, &cfg.model.params)?;
    let domain = cfg
        .domain
        .as_ref()
        .map(|d| catalog::domain_preset(&d.preset, &d.params))
        .transpose()?;
    let driver = match &cfg.driver {
        Some(d) => catalog::driver_preset(&d.preset, &d.params)?,
        None => catalog::driver_cosine(),
    };
    Ok(Resolved { model, domain, driver })
}

fn scheme_of(cfg: &ExperimentConfig) -> crate::Result<Scheme> {
    match cfg.sim.scheme.as_str() {
        "unreflected" => Ok(Scheme::Unreflected),
        "projected" => Ok(Scheme::Projected),
        "penalized" => Ok(Scheme::Penalized(cfg.sim.penalization_n.max(1))),
        other => Err(Error::Config(format!("unknown scheme '{other}'"))),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn execute(cmd: Command, cfg: &ExperimentConfig) -> crate::Result<i32> {
    let out = Outputs::new(cfg, cmd)?;
    match cmd {
        Command::CheckHypotheses => check_hypotheses(cfg, &out),
        Command::Simulate => simulate(cfg, &out),
        Command::Mixing => run_mixing(cfg, &out),
        Command::SolveDiscounted => solve_discounted(cfg, &out),
        Command::EstimateLambda => estimate_lambda(cfg, &out).map(|_| EXIT_OK),
        Command::SolvePde => solve_pde_cmd(cfg, &out).map(|_| EXIT_OK),
        Command::ControlEval => control_eval(cfg, &out).map(|_| EXIT_OK),
        Command::FullPipeline => full_pipeline(cfg, &out),
    }
}

fn check_hypotheses(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<i32> {
    let r = resolve(cfg)?;
    let sampler = SamplerConfig {
        seed: cfg.sim.seed,
        ..SamplerConfig::default()
    };
    let diss = model::check_dissipativity(&r.model, &sampler, 5000)?;
    let sigma = model::check_sigma_structure(&r.model, &sampler, 2000)?;
    let driver = model::check_driver(&r.driver, r.model.dim, &sampler, 5000)?;
    let all_pass = diss.pass && sigma.pass && driver.pass;
    out.write_json(
        "hypotheses.json",
        &json!({
            "dissipativity": {
                "pass": diss.pass,
                "worst_ratio": diss.worst_ratio,
                "eta": r.model.eta,
                "n_used": diss.n_used,
            },
            "sigma_structure": {
                "pass": sigma.pass,
                "lambda_est": sigma.lambda_est,
                "sigma_inv_norm": sigma.sigma_inv_norm,
                "condition_value": sigma.condition_value,
            },
            "driver": {
                "pass": driver.pass,
                "worst_slope": driver.worst_slope,
                "worst_at_zero": driver.worst_at_zero,
                "m_psi": r.driver.m_psi,
            },
            "all_pass": all_pass,
        }),
    )?;
    for (name, pass) in [
        ("dissipativity", diss.pass),
        ("sigma_structure", sigma.pass),
        ("driver", driver.pass),
    ] {
        println!("{name}: {}", if pass { "pass" } else { "FAIL" });
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_HYPOTHESIS })
}

fn simulate(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<i32> {
    let r = resolve(cfg)?;
    let scheme = scheme_of(cfg)?;
    let mut sim_cfg = SimConfig::new(
        cfg.sim.dt,
        cfg.sim.horizon_t,
        cfg.sim.n_paths,
        cfg.sim.seed,
        scheme,
    );
    // thin the stored slices to roughly one hundred
    sim_cfg.store_every = (sim_cfg.n_steps() / 100).max(1);
    let bundle = sim::simulate_with(&r.model, r.domain.as_ref(), &cfg.sim.x0, &sim_cfg, false)?;
    let rows: Vec<Vec<String>> = sim::estimate_moments(&bundle, &cfg.sim.moment_powers)
        .iter()
        .map(|m| vec![fmt(m.t), fmt(m.p), fmt(m.estimate), fmt(m.stderr)])
        .collect();
    out.write_csv("moments.csv", "t,p,estimate,stderr", &rows)?;
    if bundle.local_time.is_some() {
        let n_sl = bundle.n_slices();
        let mean_k: f64 = (0..bundle.n_paths)
            .map(|p| bundle.local_time_at(p, n_sl - 1).unwrap())
            .sum::<f64>()
            / bundle.n_paths as f64;
        out.write_json("local_time.json", &json!({ "mean_k_final": mean_k }))?;
    }
    println!(
        "simulated {} paths, {} steps, dt {}",
        bundle.n_paths, bundle.n_steps, bundle.dt
    );
    Ok(EXIT_OK)
}

fn run_mixing(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<i32> {
    let r = resolve(cfg)?;
    let mix_cfg = mixing::MixingConfig {
        dt: cfg.mixing.dt,
        horizon_t: cfg.mixing.horizon_t,
        n_paths: cfg.mixing.n_paths,
        seed: cfg.mixing.seed,
        ..mixing::MixingConfig::default()
    };
    let battery = mixing::default_battery(r.model.dim);
    let rep = mixing::estimate_semigroup_gap(
        &r.model,
        r.domain.as_ref(),
        &cfg.mixing.x0,
        &cfg.mixing.y0,
        &battery,
        &mix_cfg,
    )?;
    let rows: Vec<Vec<String>> = rep
        .points
        .iter()
        .map(|p| {
            vec![
                fmt(p.t),
                fmt(p.gap),
                fmt(p.stderr),
                p.witness.clone(),
                p.used_in_fit.to_string(),
            ]
        })
        .collect();
    out.write_csv("gap.csv", "t,gap,stderr,witness,used_in_fit", &rows)?;
    out.write_json(
        "mixing.json",
        &json!({
            "mu": rep.mu,
            "mu_ci": [rep.mu_ci.0, rep.mu_ci.1],
            "prefactor_c": rep.prefactor_c,
            "n_fit_points": rep.n_fit_points,
        }),
    )?;
    println!("mu = {:.4}  (95% CI {:.4} .. {:.4})", rep.mu, rep.mu_ci.0, rep.mu_ci.1);
    Ok(EXIT_OK)
}

fn solve_discounted(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<i32> {
    let r = resolve(cfg)?;
    let sol = bsde::solve_discounted(
        &r.model,
        r.domain.as_ref(),
        &r.driver,
        cfg.bsde.alpha,
        &cfg.bsde.solver_config(),
    )?;
    write_value_grid(&sol, out, "value.csv")?;
    out.write_json(
        "discounted.json",
        &json!({
            "alpha": sol.alpha,
            "lambda_alpha": sol.lambda_alpha,
            "truncation_t": sol.truncation_t,
            "iterations": sol.diagnostics.iterations,
            "reached_fixed_point": sol.diagnostics.reached_fixed_point,
            "sup_value": sol.diagnostics.sup_value,
            "bound_ok": sol.diagnostics.bound_ok,
        }),
    )?;
    println!(
        "alpha {} -> lambda_alpha {:.6} ({} iterations)",
        sol.alpha, sol.lambda_alpha, sol.diagnostics.iterations
    );
    Ok(EXIT_OK)
}

fn write_value_grid(
    sol: &bsde::DiscountedSolution,
    out: &Outputs,
    name: &str,
) -> crate::Result<()> {
    if sol.dim != 1 {
        return Ok(());
    }
    let n = 200;
    let (lo, hi) = (sol.hull_lo[0], sol.hull_hi[0]);
    let rows: Vec<Vec<String>> = (0..=n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = sol.evaluate_value(&[x]);
            let z = sol.evaluate_z(&[x]);
            vec![fmt(x), fmt(v.value), fmt(z.value[0])]
        })
        .collect();
    out.write_csv(name, "x,value,z", &rows)
}

fn estimate_lambda(
    cfg: &ExperimentConfig,
    out: &Outputs,
) -> crate::Result<ergodic::VanishingDiscountReport> {
    let r = resolve(cfg)?;
    let rep = ergodic::vanishing_discount(
        &r.model,
        r.domain.as_ref(),
        &r.driver,
        &cfg.ergodic.alphas,
        &cfg.bsde.solver_config(),
    )?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|row| {
            vec![
                fmt(row.alpha),
                fmt(row.lambda_alpha),
                fmt(row.sup_value),
                fmt(row.truncation_bound),
                row.sup_vbar_change.map_or(String::new(), fmt),
            ]
        })
        .collect();
    out.write_csv(
        "lambda_trace.csv",
        "alpha,lambda_alpha,sup_value,truncation_bound,sup_vbar_change",
        &rows,
    )?;
    out.write_json(
        "lambda.json",
        &json!({
            "lambda": rep.fit.lambda,
            "lambda_raw": rep.lambda_raw,
            "rate": rep.fit.rate,
            "prefactor": rep.fit.prefactor,
            "rms_residual": rep.fit.rms_residual,
        }),
    )?;
    write_value_grid(&rep.final_solution, out, "potential.csv")?;
    println!(
        "lambda = {:.6} (raw {:.6}, fitted rate {:.3})",
        rep.fit.lambda, rep.lambda_raw, rep.fit.rate
    );
    Ok(rep)
}

fn pde_interval(cfg: &ExperimentConfig, r: &Resolved) -> crate::Result<Option<(f64, f64)>> {
    match (cfg.pde.a, cfg.pde.b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) if r.domain.is_some() => Ok(None),
        _ => Err(Error::Config(
            "solve-pde needs pde.a and pde.b, or a domain".into(),
        )),
    }
}

fn solve_pde_cmd(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<pde::PdeSolution> {
    let r = resolve(cfg)?;
    let interval = pde_interval(cfg, &r)?;
    let problem = pde::from_model(
        &r.model,
        &r.driver,
        r.domain.as_ref(),
        interval,
        cfg.pde.n_cells,
        pde::Mode::Ergodic,
        cfg.pde.x_ref,
    )?;
    let sol = pde::solve_ergodic_pde(&problem)?;
    let rows: Vec<Vec<String>> = sol
        .x
        .iter()
        .zip(&sol.v)
        .map(|(&x, &v)| vec![fmt(x), fmt(v)])
        .collect();
    out.write_csv("pde.csv", "x,v", &rows)?;
    let (fa, fb) = sol.neumann_flux();
    out.write_json(
        "pde.json",
        &json!({
            "lambda": sol.lambda,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "neumann_flux": [fa, fb],
            "n_cells": cfg.pde.n_cells,
        }),
    )?;
    println!("pde lambda = {:.6} ({} Newton iterations)", sol.lambda, sol.iterations);
    Ok(sol)
}

fn control_eval(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<serde_json::Value> {
    let r = resolve(cfg)?;
    let spec = catalog::control_preset(&cfg.control.preset, &cfg.control.params)?;
    let (driver, feedback) = control::build_hamiltonian(&spec)?;
    // Z-field of the discounted solution at the smallest alpha drives
    // the candidate optimal feedback.
    let alphas = &cfg.ergodic.alphas;
    let alpha_min = alphas.iter().cloned().fold(f64::MAX, f64::min);
    let sol = bsde::solve_discounted(
        &r.model,
        r.domain.as_ref(),
        &driver,
        alpha_min,
        &cfg.bsde.solver_config(),
    )?;
    let lambda_est = sol.lambda_alpha;
    let sol_z = sol.clone();
    let policy = Policy::Feedback(Arc::new(move |x: &[f64]| {
        let z = sol_z.evaluate_z(x).value;
        feedback(x, &z)
    }));
    let cost_cfg = control::CostConfig {
        dt: cfg.control.dt,
        horizon_t: cfg.control.horizon_t,
        n_paths: cfg.control.n_paths,
        seed: cfg.control.seed,
    };
    let fb_cost = control::ergodic_cost(
        &r.model,
        r.domain.as_ref(),
        &spec,
        &policy,
        &cfg.sim.x0,
        &cost_cfg,
    )?;
    let dim_u = match &spec.control_set {
        crate::model::ControlSet::Finite(p) => p[0].len(),
        crate::model::ControlSet::Box { lo, .. } => lo.len(),
    };
    let bench_u = if cfg.control.benchmark_u.is_empty() {
        vec![0.0; dim_u]
    } else {
        cfg.control.benchmark_u.clone()
    };
    let bench_cost = control::ergodic_cost(
        &r.model,
        r.domain.as_ref(),
        &spec,
        &Policy::Constant(bench_u.clone()),
        &cfg.sim.x0,
        &cost_cfg,
    )?;
    // short-horizon reweighted cross-check of the direct estimator
    let short_cfg = control::CostConfig {
        horizon_t: (cfg.control.horizon_t / 8.0).max(2.0 * cfg.control.dt),
        ..cost_cfg.clone()
    };
    let girsanov = control::girsanov_cost(
        &r.model,
        r.domain.as_ref(),
        &spec,
        &Policy::Constant(bench_u.clone()),
        &cfg.sim.x0,
        &short_cfg,
    )?;
    let direct_short = control::ergodic_cost(
        &r.model,
        r.domain.as_ref(),
        &spec,
        &Policy::Constant(bench_u),
        &cfg.sim.x0,
        &short_cfg,
    )?;
    let report = json!({
        "lambda_estimate": lambda_est,
        "feedback_cost": { "mean": fb_cost.mean, "stderr": fb_cost.stderr },
        "benchmark_cost": { "mean": bench_cost.mean, "stderr": bench_cost.stderr },
        "girsanov_check": {
            "weighted_mean": girsanov.mean,
            "weighted_stderr": girsanov.stderr,
            "direct_mean": direct_short.mean,
            "ess": girsanov.ess,
        },
    });
    out.write_json("control.json", &report)?;
    println!(
        "feedback cost {:.5} +- {:.5}, benchmark {:.5} +- {:.5}, lambda {:.5}",
        fb_cost.mean, fb_cost.stderr, bench_cost.mean, bench_cost.stderr, lambda_est
    );
    Ok(report)
}

fn full_pipeline(cfg: &ExperimentConfig, out: &Outputs) -> crate::Result<i32> {
    let hyp_code = check_hypotheses(cfg, out)?;
    let lambda = estimate_lambda(cfg, out)?;
    let mix = run_mixing(cfg, out);
    let r = resolve(cfg)?;
    let pde_lambda = if r.model.dim == 1 && pde_interval(cfg, &r).is_ok() {
        solve_pde_cmd(cfg, out).ok().map(|s| s.lambda)
    } else {
        None
    };
    let summary = json!({
        "hypotheses_pass": hyp_code == EXIT_OK,
        "lambda": lambda.fit.lambda,
        "lambda_raw": lambda.lambda_raw,
        "pde_lambda": pde_lambda,
        "mixing_ok": mix.is_ok(),
    });
    out.write_json("summary.json", &summary)?;
    Ok(hyp_code)
}

/// Entry point for the binary.
pub fn main_entry() -> i32 {
    run(std::env::args_os())
}
