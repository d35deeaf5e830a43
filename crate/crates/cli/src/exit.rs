use std::fmt;
use std::process::ExitCode;

use ppre_core::census::TableError;
use ppre_core::dataset::DatasetError;
use ppre_core::estimators::EstimatorError;
use ppre_core::privatizer::PrivatizerError;
use ppre_core::protocol::ProtocolError;
use ppre_core::session::SessionError;
use ppre_core::transport::TransportError;

/// Process exit status, stable across releases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Usage = 2,
    Io = 3,
    Input = 4,
    Governance = 5,
    Timeout = 6,
    Protocol = 7,
    Crypto = 8,
    EmptyJoin = 9,
    OracleMismatch = 10,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.status as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Status for an abort code received from the peer.
fn abort_status(code: &str) -> Status {
    match code {
        c if c.starts_with("governance.") => Status::Governance,
        "empty_join" => Status::EmptyJoin,
        "crypto" => Status::Crypto,
        _ => Status::Protocol,
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        let status = match &e {
            ProtocolError::Governance(_) => Status::Governance,
            ProtocolError::EmptyJoin => Status::EmptyJoin,
            ProtocolError::Crypto(_) => Status::Crypto,
            ProtocolError::PeerAborted { code, .. } => abort_status(code),
            _ => Status::Protocol,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<TransportError> for Failure {
    fn from(e: TransportError) -> Self {
        let status = match &e {
            TransportError::Timeout { .. } => Status::Timeout,
            TransportError::Io(_) => Status::Io,
            _ => Status::Protocol,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Transport(e) => e.into(),
            SessionError::Protocol(e) => e.into(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let status = match &e {
            DatasetError::Io { .. } | DatasetError::Table { source: TableError::Io(_), .. } => Status::Io,
            _ => Status::Input,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<PrivatizerError> for Failure {
    fn from(e: PrivatizerError) -> Self {
        Failure::new(Status::Input, e.to_string())
    }
}

impl From<EstimatorError> for Failure {
    fn from(e: EstimatorError) -> Self {
        Failure::new(Status::Usage, e.to_string())
    }
}

pub fn io(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::new(Status::Io, format!("{context}: {e}"))
}
