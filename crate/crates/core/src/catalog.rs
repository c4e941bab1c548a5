//! Built-in model / domain / driver / control presets. Experiments pick
//! entries by name from the config file; arbitrary user code injection is
//! out of scope.

use crate::control;
use crate::domain::{self, ConvexDomain};
use crate::error::{Error, Result};
use crate::model::{ControlSet, ControlSpec, DriverSpec, ModelSpec};
use std::collections::HashMap;
use std::sync::Arc;

fn identity_sigma(dim: usize) -> crate::model::MatFn {
    Arc::new(move |_x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..dim {
            out[i * dim + i] = 1.0;
        }
    })
}

fn zero_field() -> crate::model::FieldFn {
    Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0))
}

/// 1D Ornstein-Uhlenbeck: `d(x) = -x`, `b = 0`, `sigma = 1`.
pub fn linear_ou() -> ModelSpec {
    ModelSpec {
        dim: 1,
        dissipative_drift: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0]),
        bounded_drift: zero_field(),
        diffusion: identity_sigma(1),
        eta: 1.0,
        b_bound: 0.0,
        sigma_bound: 1.0,
        lambda_structure: 0.0,
        hyp_lambda: 1.0,
        poly_growth_nu: 1.0,
    }
}

/// 1D superlinear model: `d(x) = -x^3 - x`, `b(x) = sin x`, `sigma = 1`.
pub fn cubic_sine() -> ModelSpec {
    ModelSpec {
        dim: 1,
        dissipative_drift: Arc::new(|x: &[f64], out: &mut [f64]| {
            out[0] = -x[0] * x[0] * x[0] - x[0]
        }),
        bounded_drift: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0].sin()),
        diffusion: identity_sigma(1),
        eta: 1.0,
        b_bound: 1.0,
        sigma_bound: 1.0,
        lambda_structure: 0.0,
        hyp_lambda: 1.0,
        poly_growth_nu: 3.0,
    }
}

/// Weakly dissipative preset: `d(x) = -x^3 - x`, `b(x) = 2 cos x`.
pub fn weak_dissipative() -> ModelSpec {
    let mut m = cubic_sine();
    m.bounded_drift = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0].cos());
    m.b_bound = 2.0;
    m
}

/// The piecewise diffusion example satisfying the structural condition:
/// `sigma(x) = 10` for `x <= 0`, `10 + x/10` on `(0, 1)`, `10.1` beyond.
pub fn piecewise_sigma() -> ModelSpec {
    let mut m = linear_ou();
    m.diffusion = Arc::new(|x: &[f64], out: &mut [f64]| {
        out[0] = if x[0] <= 0.0 {
            10.0
        } else if x[0] < 1.0 {
            10.0 + x[0] / 10.0
        } else {
            10.1
        };
    });
    m.sigma_bound = 10.1;
    m.lambda_structure = 0.1;
    m.hyp_lambda = 1.0;
    m
}

/// Driftless unit-diffusion model; not dissipative on the whole space,
/// only meaningful reflected in a bounded domain (test preset). The
/// advertised `eta` is deliberately unattainable so the hypothesis
/// checker flags it.
pub fn brownian() -> ModelSpec {
    let mut m = linear_ou();
    m.dissipative_drift = zero_field();
    m.eta = 0.5;
    m
}

/// `psi(x, z) = cos(x_1)`.
pub fn driver_cosine() -> DriverSpec {
    DriverSpec {
        psi: Arc::new(|x: &[f64], _z: &[f64]| x[0].cos()),
        m_psi: 1.0,
    }
}

/// `psi(x, z) = cos(x_1) - slope * |z|`.
pub fn driver_cos_z(slope: f64) -> DriverSpec {
    DriverSpec {
        psi: Arc::new(move |x: &[f64], z: &[f64]| {
            let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            x[0].cos() - slope * zn
        }),
        m_psi: slope.abs().max(1.0),
    }
}

/// 1D control problem: `U = [-1, 1]`, `R(u) = u`,
/// `L(x, u) = cos(x) + u^2 / 2`.
pub fn control_quadratic_1d() -> ControlSpec {
    ControlSpec {
        control_set: ControlSet::Box {
            lo: vec![-1.0],
            hi: vec![1.0],
            grid: 33,
        },
        r: Arc::new(|u: &[f64]| vec![u[0]]),
        l: Arc::new(|x: &[f64], u: &[f64]| x[0].cos() + 0.5 * u[0] * u[0]),
        m_r: 1.0,
        m_l: 1.5,
    }
}

fn get(params: &HashMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

pub fn model_preset(name: &str, _params: &HashMap<String, f64>) -> Result<ModelSpec> {
    match name {
        "linear_ou" => Ok(linear_ou()),
        "cubic_sine" => Ok(cubic_sine()),
        "weak_dissipative" => Ok(weak_dissipative()),
        "piecewise_sigma" => Ok(piecewise_sigma()),
        "brownian" => Ok(brownian()),
        other => Err(Error::UnknownPreset(other.into())),
    }
}

pub fn domain_preset(name: &str, params: &HashMap<String, f64>) -> Result<ConvexDomain> {
    match name {
        "box" => domain::box_domain(
            &[get(params, "lo", -1.0)],
            &[get(params, "hi", 1.0)],
        ),
        "ball" => domain::ball(&[get(params, "center", 0.0)], get(params, "radius", 1.0)),
        "half_space" => domain::half_space(&[1.0], get(params, "offset", 0.0)),
        other => Err(Error::UnknownPreset(other.into())),
    }
}

pub fn driver_preset(name: &str, params: &HashMap<String, f64>) -> Result<DriverSpec> {
    match name {
        "constant" => Ok(DriverSpec::constant(get(params, "c", 1.0))),
        "cosine" => Ok(driver_cosine()),
        "cos_z" => Ok(driver_cos_z(get(params, "slope", 0.3))),
        "hamiltonian_quadratic" => {
            let (driver, _policy) = control::build_hamiltonian(&control_quadratic_1d())?;
            Ok(driver)
        }
        other => Err(Error::UnknownPreset(other.into())),
    }
}

pub fn control_preset(name: &str, _params: &HashMap<String, f64>) -> Result<ControlSpec> {
    match name {
        "quadratic_1d" => Ok(control_quadratic_1d()),
        other => Err(Error::UnknownPreset(other.into())),
    }
}
