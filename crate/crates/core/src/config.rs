//! TOML experiment configuration with dotted-path command line
//! overrides.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

fn default_dt() -> f64 {
    0.01
}
fn default_horizon() -> f64 {
    10.0
}
fn default_n_paths() -> usize {
    1000
}
fn default_scheme() -> String {
    "unreflected".into()
}
fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.25, 0.1, 0.05, 0.02]
}
fn default_n_cells() -> usize {
    400
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_powers() -> Vec<f64> {
    vec![2.0]
}
fn default_x0() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetRef {
    pub preset: String,
    #[serde(default)]
    pub params: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon_t: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// "unreflected", "projected" or "penalized".
    #[serde(default = "default_scheme")]
    pub scheme: String,
    /// Penalization index when `scheme = "penalized"`.
    #[serde(default)]
    pub penalization_n: u32,
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    #[serde(default = "default_powers")]
    pub moment_powers: Vec<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsdeSection {
    #[serde(default = "BsdeSection::default_n_cloud")]
    pub n_cloud: usize,
    #[serde(default = "BsdeSection::default_dt")]
    pub dt: f64,
    #[serde(default = "BsdeSection::default_substeps")]
    pub substeps: usize,
    #[serde(default = "BsdeSection::default_cloud_horizon")]
    pub cloud_horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "BsdeSection::default_degree")]
    pub basis_degree: usize,
    #[serde(default = "BsdeSection::default_ridge")]
    pub ridge: f64,
    #[serde(default = "BsdeSection::default_trunc")]
    pub trunc_tol_factor: f64,
    #[serde(default = "BsdeSection::default_alpha")]
    pub alpha: f64,
    #[serde(default = "BsdeSection::default_n_endpoints")]
    pub n_endpoints: usize,
}

impl BsdeSection {
    fn default_n_cloud() -> usize {
        4000
    }
    fn default_dt() -> f64 {
        0.02
    }
    fn default_substeps() -> usize {
        4
    }
    fn default_cloud_horizon() -> f64 {
        8.0
    }
    fn default_degree() -> usize {
        4
    }
    fn default_ridge() -> f64 {
        1e-8
    }
    fn default_trunc() -> f64 {
        1e-4
    }
    fn default_alpha() -> f64 {
        0.1
    }
    fn default_n_endpoints() -> usize {
        8
    }

    pub fn solver_config(&self) -> crate::bsde::SolverConfig {
        crate::bsde::SolverConfig {
            n_cloud: self.n_cloud,
            dt: self.dt,
            substeps: self.substeps,
            cloud_horizon: self.cloud_horizon,
            seed: self.seed,
            basis_degree: self.basis_degree,
            ridge: self.ridge,
            trunc_tol_factor: self.trunc_tol_factor,
            n_endpoints: self.n_endpoints,
        }
    }
}

impl Default for BsdeSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        ErgodicSection {
            alphas: default_alphas(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeSection {
    #[serde(default = "default_n_cells")]
    pub n_cells: usize,
    /// Interval override; defaults to the domain when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default)]
    pub x_ref: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            n_cells: default_n_cells(),
            a: None,
            b: None,
            x_ref: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "MixingSection::default_horizon")]
    pub horizon_t: f64,
    #[serde(default = "MixingSection::default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    #[serde(default = "MixingSection::default_y0")]
    pub y0: Vec<f64>,
}

impl MixingSection {
    fn default_horizon() -> f64 {
        6.0
    }
    fn default_n_paths() -> usize {
        4000
    }
    fn default_y0() -> Vec<f64> {
        vec![0.5]
    }
}

impl Default for MixingSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSection {
    #[serde(default = "ControlSection::default_preset")]
    pub preset: String,
    #[serde(default)]
    pub params: HashMap<String, f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "ControlSection::default_horizon")]
    pub horizon_t: f64,
    #[serde(default = "ControlSection::default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Constant benchmark control compared against the feedback policy.
    #[serde(default)]
    pub benchmark_u: Vec<f64>,
}

impl ControlSection {
    fn default_preset() -> String {
        "quadratic_1d".into()
    }
    fn default_horizon() -> f64 {
        40.0
    }
    fn default_n_paths() -> usize {
        256
    }
}

impl Default for ControlSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PresetRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<PresetRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub driver: Option<PresetRef>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub bsde: BsdeSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub mixing: MixingSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("toml parse: {e}")))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        value
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

/// Applies one `path.to.key=value` override; values are parsed as TOML
/// scalars (or arrays) so `--set ergodic.alphas=[0.5,0.1]` works.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|t| t["v"].clone())
        .or_else(|_| format!("v = \"{raw}\"").parse::<toml::Table>().map(|t| t["v"].clone()))
        .map_err(|e| Error::Config(format!("override value '{raw}': {e}")))?;
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for key in &keys[..keys.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{key}' is not a table")))?;
        cur = table
            .entry((*key).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{path}' is not settable")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
preset = "linear_ou"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.model.preset, "linear_ou");
        assert!(cfg.domain.is_none());
        assert_eq!(cfg.sim.n_paths, 1000);
        assert_eq!(cfg.bsde.n_cloud, 4000);
        assert_eq!(cfg.ergodic.alphas.len(), 5);
        assert_eq!(cfg.out_dir, "out");
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let cfg = ExperimentConfig::from_toml_str(
            MINIMAL,
            &[
                "sim.n_paths=42".into(),
                "bsde.dt=0.5".into(),
                "model.preset=cubic_sine".into(),
                "ergodic.alphas=[0.4, 0.2, 0.1]".into(),
                "domain.preset=box".into(),
                "domain.params.hi=2.0".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.sim.n_paths, 42);
        assert_eq!(cfg.bsde.dt, 0.5);
        assert_eq!(cfg.model.preset, "cubic_sine");
        assert_eq!(cfg.ergodic.alphas, vec![0.4, 0.2, 0.1]);
        let dom = cfg.domain.unwrap();
        assert_eq!(dom.preset, "box");
        assert_eq!(dom.params["hi"], 2.0);
    }

    #[test]
    fn bad_override_is_a_config_error() {
        assert!(ExperimentConfig::from_toml_str(MINIMAL, &["nonsense".into()]).is_err());
    }

    #[test]
    fn roundtrip_serialization() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &["sim.seed=7".into()]).unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back.sim.seed, 7);
    }
}
