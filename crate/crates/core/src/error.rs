use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` requires parameter `{param}`")]
    MissingParam { model: String, param: String },
    #[error("diffusion matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetricDiffusion(f64),
    #[error("diffusion matrix has negative eigenvalue {0:e}")]
    NegativeDiffusionEigenvalue(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("trajectory did not re-cross the section within t = {0}")]
    NoSectionCrossing(f64),
    #[error("return-map Newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("attractor is a fixed point (|b| = {0:e})")]
    DegeneratePeriod(f64),
    #[error("cycle samples do not close: gap {0:e}")]
    ClosureFailure(f64),

    #[error("initial covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NonPsdInitial(f64),
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("covariance is singular (condition number {0:e})")]
    SingularCovariance(f64),
    #[error("model drift is not affine")]
    NotLinearModel,

    #[error("zero velocity on the cycle at sample {0}")]
    ZeroVelocity(usize),
    #[error("moving frame is discontinuous at sample {0}")]
    FrameDiscontinuity(usize),
    #[error("periodic solve did not converge after {0} periods")]
    NoConvergence(usize),
    #[error("transverse covariance lost positive definiteness at sample {0}")]
    LostPositivity(usize),
    #[error("expected exactly one near-zero eigenvalue, found {0}")]
    AmbiguousNullspace(usize),
    #[error("point is {distance:e} from the cycle, trust radius {radius:e}")]
    TooFarFromCycle { distance: f64, radius: f64 },

    #[error("Hessian of the phase function is not positive definite")]
    NonPdHessian,
    #[error("gradient at the expansion point is {0:e}, not a critical point")]
    NotCriticalPoint(f64),
    #[error("weight function is not positive at the expansion point ({0:e})")]
    NonPositiveWeight(f64),
    #[error("operation is only defined in one dimension (got {0})")]
    NotOneDimensional(usize),
    #[error("integration box too small: boundary weight {0:e}")]
    BoxTooSmall(f64),

    #[error("noise factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("time grid mismatch at t = {0}")]
    GridMismatch(f64),
    #[error("bin {bin} holds {count} samples, need at least {required}")]
    InsufficientSamplesPerBin {
        bin: usize,
        count: usize,
        required: usize,
    },

    #[error("scale must be positive (got {0})")]
    NonPositiveScale(f64),
    #[error("value {0} outside the admissible range")]
    OutOfRange(f64),
}
