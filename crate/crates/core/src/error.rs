//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TunnelError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared during integration.
    #[error("non-finite integrand at k = {node} nm^-1: {context}")]
    NonFinite { node: f64, context: String },

    /// Phase tracking could not bridge two evaluation points.
    #[error("phase unwrap failed between k = {k_lo} and k = {k_hi} nm^-1; use a finer step")]
    PhaseResolution { k_lo: f64, k_hi: f64 },

    /// A scattering channel carries too little weight to average over.
    #[error("channel {0} is empty (norm below 1e-12)")]
    EmptyChannel(String),

    /// Wavefunction amplitude reached the grid boundary.
    #[error("grid domain too small: boundary amplitude {leak:.3e} of peak")]
    DomainTooSmall { leak: f64 },

    /// Counterpart reconstruction attempted before scattering completed.
    #[error("projection at t = {t} fs is premature: barrier norm {barrier_norm:.3e} > 1e-3")]
    PrematureProjection { t: f64, barrier_norm: f64 },
}

pub type Result<T> = std::result::Result<T, TunnelError>;
