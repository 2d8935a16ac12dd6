//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        context: String,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("svd did not converge after {sweeps} sweeps (relative off-diagonal residual {residual:.3e})")]
    SvdConvergence { sweeps: usize, residual: f64 },

    #[error("zero-energy spectrum: all singular values are zero")]
    ZeroEnergy,

    #[error("columns are not orthonormal (residual {residual:.3e} exceeds tolerance {tolerance:.3e})")]
    NotOrthonormal { residual: f64, tolerance: f64 },

    #[error("bases do not span the singular subspaces (psi = {psi:.12})")]
    SpanMismatch { psi: f64 },

    #[error("insufficient rank: {0}")]
    InsufficientRank(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("layer {label}: {source}")]
    Layer {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("invalid config: {}", issues.join("; "))]
    Config { issues: Vec<String> },

    #[error("invalid checkpoint container: {0}")]
    Container(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a layer label to an error coming out of a per-layer operation.
    pub fn for_layer(self, label: impl Into<String>) -> Error {
        Error::Layer {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-parsable code, one per failure class. The CLI prints
    /// `error[CODE]: message` on stderr so scripts can match on the code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARGS",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::SvdConvergence { .. } => "E_SVD",
            Error::ZeroEnergy => "E_ZERO_ENERGY",
            Error::NotOrthonormal { .. } => "E_ORTHO",
            Error::SpanMismatch { .. } => "E_SPAN",
            Error::InsufficientRank(_) => "E_RANK",
            Error::LengthMismatch(_) => "E_LENGTH",
            Error::Layer { source, .. } => source.code(),
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Config { .. } => "E_CONFIG",
            Error::Container(_) => "E_CONTAINER",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
