use thiserror::Error;

/// Errors produced by the solver kernels, diagnostics and run orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected} values, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("input is not mean-free (mean {mean:e}, L2 norm {norm:e})")]
    NotMeanFree { mean: f64, norm: f64 },

    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),

    #[error("velocity is not divergence-free: ||div u|| / ||u|| = {ratio:e}")]
    NotDivergenceFree { ratio: f64 },

    #[error("time step {dt:e} exceeds the stability cap {cap:e}")]
    StabilityCap { dt: f64, cap: f64 },

    #[error("variable-coefficient pressure solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    PressureNonConvergence { iterations: usize, residual: f64 },

    #[error("density must stay positive, found minimum {0:e}")]
    DensityNotPositive(f64),

    #[error("density left its initial bounds: [{min:e}, {max:e}] vs [{lower:e}, {upper:e}]")]
    DensityBounds { min: f64, max: f64, lower: f64, upper: f64 },

    #[error("invalid initial distribution: {0}")]
    InvalidDistribution(String),

    #[error("velocity history does not cover time {0}")]
    HistoryGap(f64),

    #[error("mass {mass:e} left the oracle velocity box in one step")]
    VelocityBoxLeak { mass: f64 },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("profile accumulator has no samples")]
    EmptyAccumulator,

    #[error("need at least {needed} samples in the fit window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure at t = {t}: {what}")]
    Numerical { t: f64, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
