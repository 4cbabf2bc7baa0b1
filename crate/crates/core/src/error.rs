use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unobservable at this truncation/horizon (lambda_min = {lambda_min:e})")]
    Unobservable { lambda_min: f64 },

    #[error("cost exceeds double-precision observability; raise T or lower N (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error(
        "fundamental kernel Gramian too ill-conditioned (condition number {condition:e}); raise T or L, or lower N"
    )]
    KernelIllConditioned { condition: f64 },

    #[error("infeasible moment system: {0}")]
    Infeasible(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel segment too short; need L > L_* of the wave system (kernel L = {kernel}, wave horizon = {wave})")]
    KernelTooShort { kernel: f64, wave: f64 },

    #[error("T below resolvent threshold sqrt(M(pi^2+eps)) = {threshold}")]
    BelowThreshold { threshold: f64 },

    #[error("cost not monotone in T: kappa({t_prev}) = {k_prev:e} < kappa({t_next}) = {k_next:e}")]
    NonMonotoneCost {
        t_prev: f64,
        k_prev: f64,
        t_next: f64,
        k_next: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the failure is a numerical conditioning problem rather than bad input.
    pub fn is_conditioning(&self) -> bool {
        matches!(
            self.root(),
            Error::Unobservable { .. }
                | Error::IllConditioned { .. }
                | Error::KernelIllConditioned { .. }
                | Error::Infeasible(_)
        )
    }
}
