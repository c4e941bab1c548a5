use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample: every drawn pair was skipped")]
    EmptySample,

    #[error("diffusion matrix is numerically singular at x = {point:?}")]
    SingularSigma { point: Vec<f64> },

    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("path bundle has no local-time channel")]
    MissingLocalTime,

    #[error("regression design matrix is rank deficient (basis {basis}, slice {slice})")]
    RankDeficient { basis: String, slice: usize },

    #[error("Newton iteration failed to converge: last residual {residual:.3e}")]
    NewtonFailed { residual: f64 },

    #[error("ellipticity violated: |sigma| = {value:.3e} at x = {x}")]
    Ellipticity { x: f64, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
