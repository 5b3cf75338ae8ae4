use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An AR root lies on or outside the unit circle.
    #[error("AR polynomial is not stationary (reflection coefficient {reflection} at order {order})")]
    NonStationary { order: usize, reflection: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("autocovariance needed up to lag {needed}, only {available} available")]
    InsufficientLags { needed: usize, available: usize },

    #[error("model has zero total power; cannot rescale")]
    ZeroPowerModel,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("KKT system is singular even after ridge regularisation")]
    SingularAfterRidge,

    #[error("bad initial sequence: {0}")]
    BadInit(String),

    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,

    #[error("composite phase undefined for target angle {theta_q} (|theta_q| must be <= 4*pi)")]
    PhaseUndefined { theta_q: f64 },

    #[error("every perturbation of base model (a1={a1}, b1={b1}) was non-stationary")]
    AllPerturbationsNonStationary { a1: f64, b1: f64 },

    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
}
