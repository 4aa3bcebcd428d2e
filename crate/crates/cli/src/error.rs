use std::path::PathBuf;

use phononer::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    Missing(PathBuf),
    #[error("{0}")]
    Config(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 missing file, 3 validation or configuration, 4 non-finite numerics,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::GradCheck(_) => 1,
            CliError::Core(e) => match e {
                Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                Error::Io { .. } => 1,
                Error::NonFinite(_) => 4,
                Error::Dimension { .. }
                | Error::Parse { .. }
                | Error::Catalog(_)
                | Error::Validation { .. }
                | Error::Alignment { .. }
                | Error::Usage(_)
                | Error::Config(_)
                | Error::Checkpoint(_) => 3,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Missing("x".into()).exit_code(), 2);
        let nf = Error::io("x", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(CliError::from(nf).exit_code(), 2);
        assert_eq!(
            CliError::from(Error::NonFinite("loss".into())).exit_code(),
            4
        );
        assert_eq!(
            CliError::from(Error::Parse {
                line: 3,
                message: "bad".into()
            })
            .exit_code(),
            3
        );
    }
}
