use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending input.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("detuning {detuning_hz} Hz is within the singularity window of the {transition} resonance")]
    SingularDetuning {
        detuning_hz: f64,
        transition: &'static str,
    },

    #[error("coupling strength must be positive for a sensitivity estimate")]
    ZeroCoupling,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The shot-noise/electronic-noise subtracted variance is not resolved
    /// above zero, so the squeezing parameter is undefined.
    #[error("projection noise not resolved: Var(Q_B) - SN_B - EN_B = {pn} (standard error {stderr})")]
    NonPositiveProjectionNoise { pn: f64, stderr: f64 },

    #[error("fit did not converge after {iterations} iterations (last residual norm {residual_norm})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("fitted width {width} is not larger than the grid step {step}")]
    DegenerateWidth { width: f64, step: f64 },

    #[error("MORS spectrum unresolved: quadratic splitting {splitting_hz} Hz <= linewidth {linewidth_hz} Hz")]
    UnresolvedSpectrum { splitting_hz: f64, linewidth_hz: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupted archive: {0}")]
    CorruptedArchive(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
    Io,
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. }
            | Error::SingularDetuning { .. }
            | Error::ZeroCoupling
            | Error::Config(_) => ErrorKind::Validation,
            Error::Io { .. } => ErrorKind::Io,
            Error::Degenerate(_)
            | Error::NonPositiveProjectionNoise { .. }
            | Error::NonConvergence { .. }
            | Error::RankDeficient(_)
            | Error::DegenerateWidth { .. }
            | Error::UnresolvedSpectrum { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptedArchive(_)
            | Error::Serialization(_) => ErrorKind::Runtime,
        }
    }

    /// Process exit code: 1 validation, 2 runtime or fit failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Validation => 1,
            ErrorKind::Runtime => 2,
            ErrorKind::Io => 3,
        }
    }
}

/// Checks that `value` is finite and strictly positive.
pub(crate) fn ensure_positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be finite and > 0, got {value}")))
    }
}

/// Checks that `value` is not NaN and is >= 0 (infinity allowed).
pub(crate) fn ensure_non_negative(field: &str, value: f64) -> Result<()> {
    if !value.is_nan() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be >= 0, got {value}")))
    }
}

pub(crate) fn ensure_unit_interval(field: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must lie in [0, 1], got {value}")))
    }
}
