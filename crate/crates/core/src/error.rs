use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate mesh resolution: {0}")]
    DegenerateResolution(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geodesic offset {offset} violates the non-tangential bound (|p| < {limit})")]
    NonTangentialViolation { offset: f64, limit: f64 },
    #[error("boundary chart unavailable at x1 = {x1}: {reason}")]
    ChartUnavailable { x1: f64, reason: String },
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("zero is too close to a Dirichlet eigenvalue (margin {margin:e})")]
    EigenvalueProximity { margin: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight overflow: max exponent {exponent} exceeds {limit}")]
    WeightOverflow { exponent: f64, limit: f64 },
    #[error("semiclassical parameter h = {h} outside [{min}, {max}]")]
    ParameterOutOfRange { h: f64, min: f64, max: f64 },
    #[error("kernel cut ambiguous: gap {gap:.3} below required factor {required}")]
    KernelAmbiguous { gap: f64, required: f64, spectrum: Vec<f64> },
    #[error("beam degenerate: Im H = {im_h:e} at t = {t}")]
    BeamDegenerate { t: f64, im_h: f64 },
    #[error("mesh under-resolves the wavelength: {nodes_per_wavelength:.2} nodes per wavelength")]
    UnderResolved { nodes_per_wavelength: f64 },
    #[error("contraction failure at h = {h}: {detail}")]
    ContractionFailure { h: f64, detail: String },
    #[error("boundary integral equation ill-conditioned at h = {h} (margin {margin:e})")]
    EquationIllConditioned { h: f64, margin: f64 },
    #[error("ray grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("attenuation {lambda} too strong for the filter (limit {limit})")]
    AttenuationTooStrong { lambda: f64, limit: f64 },
    #[error("Taylor recursion unstable at order {order}: discrepancy {discrepancy:.3}")]
    TaylorUnstable { order: usize, discrepancy: f64 },
    #[error("boundary limit unstable at x0 = ({x1}, {angle}): {detail}")]
    BoundaryLimitUnstable { x1: f64, angle: f64, detail: String },
    #[error("data recovery noisy for geodesic {geodesic} at lambda = {lambda} (fit residual {residual:e})")]
    DataRecoveryNoisy { geodesic: usize, lambda: f64, residual: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
