use alloc::string::String;

/// Errors surfaced by schedule construction, sampling, loss evaluation,
/// metric computation, and phantom generation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} out of range [1, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite denoiser output at inference step {step}")]
    NonFiniteDenoiser { step: usize },
    #[error("non-finite loss component: {0}")]
    NonFiniteLoss(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate reference image: {0}")]
    DegenerateReference(String),
}

pub type Result<T> = core::result::Result<T, CoreError>;
