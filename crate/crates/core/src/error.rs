//! Top-level error type and the process exit code each failure maps to.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::compile::CompileError;
use crate::jaqal::JaqalError;
use crate::lut::LutError;
use crate::provider::ProviderError;
use crate::sim::SimError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;
pub const EXIT_REMOTE: i32 = 4;
pub const EXIT_SIM: i32 = 5;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Jaqal(#[from] JaqalError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Jaqal(_) | Error::Io { .. } | Error::Invalid(_) => EXIT_INPUT,
            Error::Compile(e) => match e {
                CompileError::Provider(p) => provider_code(p),
                CompileError::Lut(l) => lut_code(l),
                CompileError::BranchSpace { .. } => EXIT_CAPACITY,
                _ => EXIT_INPUT,
            },
            Error::Sim(SimError::Io(_)) => EXIT_INPUT,
            Error::Sim(_) => EXIT_SIM,
            Error::Lut(l) => lut_code(l),
            Error::Provider(p) => provider_code(p),
        }
    }
}

fn provider_code(e: &ProviderError) -> i32 {
    match e {
        ProviderError::RemoteUnavailable { .. } | ProviderError::Protocol { .. } => EXIT_REMOTE,
        _ => EXIT_INPUT,
    }
}

fn lut_code(e: &LutError) -> i32 {
    match e {
        LutError::PlutCapacityExceeded { .. }
        | LutError::MlutCapacityExceeded { .. }
        | LutError::GlutCapacityExceeded { .. } => EXIT_CAPACITY,
        _ => EXIT_INPUT,
    }
}
