use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: no such file", .0.display())]
    MissingInput(PathBuf),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: ccrank_core::Error,
    },

    #[error("{0}")]
    Failed(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingInput(_) => "missing-file",
            CliError::Core { source, .. } => source.kind(),
            CliError::Failed(_) => "failed",
            CliError::Diverged(_) => "numeric",
        }
    }

    /// 2 for problems detectable before any compute, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingInput(_) => 2,
            CliError::Core { source, .. } => match source {
                ccrank_core::Error::Config(_) => 2,
                _ => 1,
            },
            CliError::Failed(_) | CliError::Diverged(_) => 1,
        }
    }

    /// The single-line form printed to stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.kind())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a context prefix (usually a path) to core errors.
pub trait Context<T> {
    fn context(self, context: impl std::fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for ccrank_core::Result<T> {
    fn context(self, context: impl std::fmt::Display) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: context.to_string(),
            source,
        })
    }
}
