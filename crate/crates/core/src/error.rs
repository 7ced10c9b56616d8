use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrdError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid multi-index set: {0}")]
    MultiIndex(String),
    #[error("invalid generator: {0}")]
    Generator(String),
    #[error("ellipticity violated at dual point {index}: min eigenvalue {min_eig:e} below {floor:e}")]
    Ellipticity { index: usize, min_eig: f64, floor: f64 },
    #[error("non-Hermitian symbol at dual point {index}: defect {defect:e}")]
    NonHermitian { index: usize, defect: f64 },
    #[error("scale {scale} is not positive semi-definite at dual point {index}: min eigenvalue {min_eig:e}")]
    NotPositive { scale: usize, index: usize, min_eig: f64 },
    #[error("construction routes disagree: {0}")]
    RouteMismatch(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FrdError>;
