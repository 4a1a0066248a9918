use std::fmt;
use std::process::ExitCode;

use lipauth::authstore::AuthError;
use lipauth::config::ConfigError;
use lipauth::eval::EvalError;
use lipauth::preprocess::PreprocessError;
use lipauth::slowfast::ModelError;
use lipauth::synth::CorpusError;
use lipauth::tensor::TensorError;
use lipauth::triplet::{TrainError, TripletError};

/// Process exit status, one per failure family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    Config = 2,
    Io = 3,
    NonFinite = 4,
    Protocol = 5,
    NotEnrolled = 6,
    Conflict = 7,
    ModelMismatch = 8,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Code,
    pub message: String,
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn err(code: Code, e: &dyn fmt::Display) -> CliError {
    CliError::new(code, e.to_string())
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(_) => err(Code::NonFinite, &e),
            TensorError::Usage(_) => err(Code::Config, &e),
            _ => err(Code::Io, &e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => err(Code::Config, &e),
            ModelError::Tensor(t) => t.into(),
            ModelError::Io { .. } | ModelError::Json { .. } => err(Code::Io, &e),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Config(_) | PreprocessError::Usage(_) => err(Code::Config, &e),
            _ => err(Code::Io, &e),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(_) => err(Code::Config, &e),
            CorpusError::Clip(p) => p.into(),
            _ => err(Code::Io, &e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => err(Code::Io, &e),
            _ => err(Code::Config, &e),
        }
    }
}

impl From<TripletError> for CliError {
    fn from(e: TripletError) -> Self {
        err(Code::Config, &e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => err(Code::NonFinite, &e),
            TrainError::Model(m) => m.into(),
            TrainError::Observer(_) => err(Code::Io, &e),
            TrainError::Config(_) | TrainError::Triplet(_) => err(Code::Config, &e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Protocol { .. } => err(Code::Protocol, &e),
            EvalError::Model(m) => m.into(),
            EvalError::Usage(_) | EvalError::Triplet(_) => err(Code::Config, &e),
            EvalError::Io { .. } | EvalError::Format(_) => err(Code::Io, &e),
        }
    }
}

impl From<AuthError> for CliError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::NotEnrolled { .. } => err(Code::NotEnrolled, &e),
            AuthError::Conflict { .. } => err(Code::Conflict, &e),
            AuthError::ModelMismatch { .. } => err(Code::ModelMismatch, &e),
            AuthError::Usage(_) => err(Code::Config, &e),
            AuthError::Model(m) => m.into(),
            AuthError::Format(_) | AuthError::Io { .. } => err(Code::Io, &e),
        }
    }
}
