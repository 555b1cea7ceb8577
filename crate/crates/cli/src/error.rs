use causal_variety::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Core errors outside any named stage; configuration problems are
    /// reported as such, everything else as a numerical failure.
    pub fn from_core(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => Self::Config(msg),
            other => Self::Stage { stage: "setup", source: other },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { source: Error::InvalidConfig(_) | Error::Json(_), .. } => 2,
            Self::Stage { .. } => 3,
            Self::Io { .. } => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            Self::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Attaches a stage name to core results.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for causal_variety::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        let bad: causal_variety::Result<()> = Err(Error::InvalidConfig("n_pre".into()));
        assert_eq!(bad.stage("generate").unwrap_err().exit_code(), 2);
        let numeric: causal_variety::Result<()> = Err(Error::Numeric("diverged".into()));
        let e = numeric.stage("evolve").unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(e.stage_name(), Some("evolve"));
        assert!(e.to_string().starts_with("evolve: "));
    }
}
