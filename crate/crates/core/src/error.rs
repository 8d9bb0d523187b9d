use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("could not place UE {ue} after {attempts} attempts; minimum-distance region is infeasible")]
    InfeasibleGeometry { ue: usize, attempts: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("UE {0} has a zero-energy channel estimate (tr(Phi) = 0)")]
    InvalidUe(usize),

    #[error("invalid common-precoder weights: {0}")]
    InvalidWeights(String),

    #[error("UE {0} cannot be served with positive common gain: every u_i(k) <= 0")]
    InfeasibleDirection(usize),

    #[error("variance invariant violated for UE {ue}: {detail}")]
    VarianceInvariant { ue: usize, detail: String },

    #[error("water-filling slope is not positive: mu + sigma2 = {0}")]
    InvalidSlope(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("LP solver: {0}")]
    Lp(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<SimError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        SimError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors that stem from user-supplied configuration rather than
    /// numerics.
    pub fn is_config(&self) -> bool {
        match self {
            SimError::Config { .. } | SimError::InfeasibleGeometry { .. } => true,
            SimError::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
