use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lambda = 0 is excluded from the spectral parameter domain")]
    ZeroLambda,

    #[error("integrator failure at x = {x}: {reason}")]
    IntegratorFailure { x: f64, reason: String },

    #[error("matrix is numerically singular (condition number {condition:.3e})")]
    NearSingular { condition: f64 },

    #[error("u(rho) is numerically singular at rho = {rho} (condition number {condition:.3e})")]
    NearSingularU { rho: num_complex::Complex64, condition: f64 },

    #[error("pole at lambda = {lambda} is not simple (second moment {moment:.3e})")]
    NotSimplePole { lambda: f64, moment: f64 },

    #[error("estimated density tail {estimate:.3e} exceeds quad_tol {quad_tol:.3e}")]
    TailTooHeavy { estimate: f64, quad_tol: f64 },

    #[error("main system is singular at x = {x} (condition {condition:.3e}, log|det| {log_abs_det:.3})")]
    SingularMainSystem { x: f64, condition: f64, log_abs_det: f64 },

    #[error("discrete density-difference sum grows with rho_max (ratio {ratio:.3})")]
    RestVDiverging { ratio: f64 },

    #[error("kernel evaluation failed: {0}")]
    KernelFailure(String),

    #[error("derivative order {requested} exceeds the supported maximum {max}")]
    MaxOrder { requested: usize, max: usize },

    #[error("spectral data is not of class Sp: {0}")]
    NotClassSp(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::ZeroLambda => "ZeroLambda",
            Error::IntegratorFailure { .. } => "IntegratorFailure",
            Error::NearSingular { .. } => "NearSingular",
            Error::NearSingularU { .. } => "NearSingularU",
            Error::NotSimplePole { .. } => "NotSimplePole",
            Error::TailTooHeavy { .. } => "TailTooHeavy",
            Error::SingularMainSystem { .. } => "SingularMainSystem",
            Error::RestVDiverging { .. } => "RestVDiverging",
            Error::KernelFailure(_) => "KernelFailure",
            Error::MaxOrder { .. } => "MaxOrder",
            Error::NotClassSp(_) => "NotClassSp",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
