use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {what} at point {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("spectral backend needs an even point count, axis {axis} has {points}")]
    OddSpectralAxis { axis: usize, points: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("value count {got} does not match grid point count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("wavefunction vanishes everywhere")]
    ZeroWavefunction,

    #[error("negative density {value:e} at point {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("phase increment {increment:.3} rad at point {index} is too large for a central difference; reduce dt")]
    PhaseJump { index: usize, increment: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
