use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input paths.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),

    /// Some inputs failed while others succeeded.
    #[error("{failed} of {total} inputs failed")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Partial { .. } => 2,
        }
    }
}

impl From<ncp_core::Error> for CliError {
    fn from(e: ncp_core::Error) -> Self {
        let hint = match &e {
            ncp_core::Error::Diverged { .. } => "; lower train.lr or raise train.lambda",
            ncp_core::Error::EigenNotConverged { .. } => "; check the mesh for degenerate faces",
            ncp_core::Error::StaleCache(_) => "; rerun `ncp preprocess`",
            _ => "",
        };
        CliError::Runtime(format!("{e}{hint}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
