//! Crate-wide error with process exit codes.

use std::path::PathBuf;

use thiserror::Error;

use crate::datasets::DatasetError;
use crate::evalcli::EvalError;
use crate::featnet::FeatNetError;
use crate::preprocess::PreprocessError;
use crate::rgbt::RgbtError;
use crate::stacker::StackError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: PreprocessError,
    },
    #[error(transparent)]
    FeatNet(#[from] FeatNetError),
    #[error(transparent)]
    Rgbt(#[from] RgbtError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Exit status classes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

fn rgbt_kind(e: &RgbtError) -> ExitKind {
    match e {
        RgbtError::InvalidParams(_) => ExitKind::Usage,
        RgbtError::DegenerateLeaf { .. } => ExitKind::Numeric,
        _ => ExitKind::Data,
    }
}

fn stack_kind(e: &StackError) -> ExitKind {
    match e {
        StackError::InvalidParams(_) => ExitKind::Usage,
        StackError::Branch(inner) => rgbt_kind(inner),
        _ => ExitKind::Data,
    }
}

impl Error {
    pub fn kind(&self) -> ExitKind {
        match self {
            Error::Config(_) => ExitKind::Usage,
            Error::Dataset(DatasetError::InvalidSplit(_)) => ExitKind::Usage,
            Error::Preprocess(PreprocessError::InvalidConfig(_)) => ExitKind::Usage,
            Error::FeatNet(FeatNetError::InvalidConfig(_) | FeatNetError::InvalidTrainSpec(_)) => {
                ExitKind::Usage
            }
            Error::FeatNet(FeatNetError::NonFinite) => ExitKind::Numeric,
            Error::Rgbt(e) => rgbt_kind(e),
            Error::Stack(e) => stack_kind(e),
            Error::Eval(EvalError::NonFinite(_)) => ExitKind::Numeric,
            Error::Eval(EvalError::Model(e)) => stack_kind(e),
            _ => ExitKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind() as i32
    }
}
