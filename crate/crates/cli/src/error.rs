use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_PRECONDITION: u8 = 2;
pub const EXIT_CONFIG: u8 = 64;
pub const EXIT_IO: u8 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("malformed input {0}: {1}")]
    Input(PathBuf, String),
    #[error(transparent)]
    Core(#[from] landscape::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use landscape::Error as E;
        match self {
            CliError::Config(_) | CliError::Input(..) => EXIT_CONFIG,
            CliError::Io(..) => EXIT_IO,
            CliError::Core(E::Plan(_)) => EXIT_CONFIG,
            CliError::Core(E::PathCertificate(_)) => EXIT_FAIL,
            CliError::Core(_) => EXIT_PRECONDITION,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_table() {
        let core = |e| CliError::Core(e).exit_code();
        assert_eq!(CliError::Config("x".into()).exit_code(), 64);
        assert_eq!(CliError::Io("f".into(), std::io::Error::other("x")).exit_code(), 74);
        assert_eq!(core(landscape::Error::PreconditionFailed("x".into())), 2);
        assert_eq!(core(landscape::Error::Eligibility("x".into())), 2);
        assert_eq!(core(landscape::Error::Rank("x".into())), 2);
        assert_eq!(core(landscape::Error::DegenerateData("x".into())), 2);
        assert_eq!(core(landscape::Error::PathCertificate("x".into())), 1);
        assert_eq!(core(landscape::Error::Plan("x".into())), 64);
    }
}
