use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit-code contract: configuration problems
/// exit with 2, numerical non-convergence (and exceeded caps/horizons)
/// with 3, failed verification checks with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {0} is outside (0, 1)")]
    RotationRange(f64),

    #[error("rotation angle {value} is exactly {num}/{den}; angles with denominator <= 10^6 are rejected")]
    RotationRational { value: f64, num: u64, den: u64 },

    #[error("transition matrix on cell {cell} has an all-zero {kind}")]
    DegenerateMatrix { cell: usize, kind: &'static str },

    #[error("symbol {symbol} is outside the alphabet 1..={alphabet}")]
    SymbolRange { symbol: u8, alphabet: u8 },

    #[error("word/cylinder operation invalid: {0}")]
    InvalidWord(String),

    #[error("enumeration exceeds the word cap of {cap}")]
    WordCap { cap: usize },

    #[error("cylinder measure did not converge: burn-in {m} reached, Cauchy gap {gap:.3e} > tol {tol:.3e}")]
    NonConvergence { m: usize, gap: f64, tol: f64 },

    #[error("time-change horizon too short: T^{k} = {t:.6} has not passed sup R = {sup_r:.6}")]
    HorizonTooShort { k: usize, t: f64, sup_r: f64 },

    #[error("sampled word of length {len} is shorter than the {needed} symbols required")]
    PathTooShort { len: usize, needed: usize },

    #[error("invalid interval union: {0}")]
    InvalidIntervals(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 2 configuration, 3 numerical, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RotationRange(_)
            | Error::RotationRational { .. }
            | Error::DegenerateMatrix { .. }
            | Error::SymbolRange { .. }
            | Error::InvalidWord(_)
            | Error::InvalidIntervals(_)
            | Error::InvalidPotential(_)
            | Error::InvalidConfig(_)
            | Error::Json(_) => 2,
            Error::NonConvergence { .. }
            | Error::HorizonTooShort { .. }
            | Error::WordCap { .. }
            | Error::PathTooShort { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}
