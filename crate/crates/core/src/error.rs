use std::io;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geodesic between the points is not unique (distance {distance} >= bound {bound})")]
    AmbiguousGeodesic { distance: f64, bound: f64 },

    #[error("pair sampling acceptance rate below 1e-6 after {trials} trials (epsilon {epsilon})")]
    PathologicalEpsilon { epsilon: f64, trials: u64 },

    #[error("outside the domain of the map: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("encoder collapsed: |delta1| = {norm:e} below 1e-8")]
    CollapsedEncoder { norm: f64 },

    #[error("Gamma is singular: |Bv| = {norm:e} at a quadrature node")]
    SingularGamma { norm: f64 },

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
