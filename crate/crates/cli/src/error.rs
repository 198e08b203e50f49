use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {reason}")]
    Io { path: String, reason: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] vr3dense_core::Error),

    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    /// Stable category name for the error line.
    pub fn kind(&self) -> &'static str {
        use vr3dense_core::Error as E;
        match self {
            Self::Usage(_) => "usage",
            Self::Io { .. } => "io",
            Self::Config(_) => "config",
            Self::Check(_) => "check",
            Self::Core(e) => match e {
                E::Parameter(_) => "parameter",
                E::ByteOffset { .. } | E::Field { .. } | E::Key(_) | E::Format(_) => "format",
                E::Calibration(_) => "calibration",
                E::Oracle { .. } => "oracle",
                E::Evaluation(_) => "evaluation",
                E::Optimization { .. } => "optimization",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `error[kind]: message` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {}", self.kind(), msg)
    }
}
