use thiserror::Error;

/// Errors raised by the library layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// `fold_gamma_z` requires M > gamma_z.
    #[error("invalid reparameterization: M = {m} Hz must exceed gamma_z = {gamma_z} Hz")]
    InvalidReparameterization { m: f64, gamma_z: f64 },

    #[error("parameters violate the linear-Gaussian regime: {0}")]
    RegimeViolation(String),

    #[error("integration diverged (non-finite state) at step {step}, t = {t:.6e} s")]
    IntegrationDiverged { step: usize, t: f64 },

    #[error("step budget exhausted in adaptive integrator at t = {t:.6e} s")]
    StepBudgetExhausted { t: f64 },

    #[error("X factor of the covariance linearization is singular at t = {t:.6e} s")]
    LinearizationDegenerate { t: f64 },

    #[error("no measurement channel: eta = 0")]
    NoMeasurement,

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    /// The mixture-of-unitaries construction needs gamma_y > 0.
    #[error("degenerate mixing distribution: gamma_y = 0 makes the channel unitary")]
    DegenerateMixture,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Dicke-space dimension cap exceeded: J = {j} (max J = 50)")]
    DimensionCap { j: f64 },

    #[error("density matrix left the positivity tolerance even after {retries} dt refinements")]
    PositivityViolation { retries: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
