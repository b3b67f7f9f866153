//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure modes of the
/// numerical pipeline; exit-code mapping for the CLI lives in the binary.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A state component left the representable range during integration
    /// (usually a blow-up caused by a bad step size).
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    /// An improper-integral tail estimate exceeded tolerance at the maximum
    /// truncation length.
    #[error("quadrature did not converge: tail estimate {tail:.3e} above tolerance")]
    NonConvergence { tail: f64 },

    /// Closed-form evaluation requested for a perturbation it does not cover.
    #[error("unsupported perturbation: {0}")]
    UnsupportedPerturbation(String),

    /// Newton refinement failed from every seed of a sign-change cell.
    #[error("Newton refinement diverged near (t, theta) = ({t:.4}, {theta:.4})")]
    NewtonDivergence { t: f64, theta: f64 },

    /// The boundary-value matcher failed to hit a grid node.
    #[error("shooting failed at node (t={t:.4}, theta={theta:.4}, q={q:.4}): {reason}")]
    ShootingFailure { t: f64, theta: f64, q: f64, reason: String },

    /// No critical point of a splitting function was found from any seed.
    #[error("no critical point of the splitting function for (a, a') = ({a}, {a_prime})")]
    NoCriticalPoint { a: f64, a_prime: f64 },

    /// A transition-chain link could not be verified even after spacing
    /// refinement.
    #[error("transition chain broken at link {0}")]
    ChainBroken(usize),

    /// A quasi-Newton minimization stalled above tolerance.
    #[error("minimization failed: {reason} (best gradient norm {grad_norm:.3e})")]
    MinimizationFailure { reason: String, grad_norm: f64 },

    /// An iterate of the junction minimization left the open box (-1,1)^2.
    #[error("junction iterate escaped the (-1,1) box at junction {junction}")]
    EscapedBox { junction: usize },

    /// A junction velocity jump exceeded tolerance in the extracted orbit.
    #[error("junction defect {defect:.3e} at junction {junction} exceeds tolerance")]
    JunctionDefect { junction: usize, defect: f64 },

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Filesystem or serialization problem while writing run artifacts.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
