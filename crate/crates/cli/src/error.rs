use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },

    #[error(transparent)]
    Core(#[from] nlrm::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// 2 for bad inputs, 3 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Field { .. } | CliError::ConfigFile { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(e) if is_input_error(e) => 2,
            _ => 1,
        }
    }
}

fn is_input_error(e: &nlrm::Error) -> bool {
    use nlrm::Error as E;
    match e {
        E::InvalidGrid(_) | E::InvalidArgument(_) | E::OutOfDomain(_) | E::Parse(_) => true,
        E::InCell { source, .. } => is_input_error(source),
        _ => false,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let numerical = CliError::from(nlrm::Error::Degenerate("singular".into()));
        assert_eq!(numerical.exit_code(), 3);
        let nested = CliError::from(nlrm::Error::InCell {
            cell: 2,
            source: Box::new(nlrm::Error::NotPositiveDefinite(4)),
        });
        assert_eq!(nested.exit_code(), 3);
        assert_eq!(CliError::from(nlrm::Error::InvalidGrid(12)).exit_code(), 2);
        assert_eq!(CliError::field("eps", "must be positive").exit_code(), 2);
        let io = std::io::Error::new(std::io::ErrorKind::PermissionDenied, "no");
        assert_eq!(CliError::from(io).exit_code(), 1);
    }
}
