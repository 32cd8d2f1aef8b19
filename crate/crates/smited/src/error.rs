use std::io;
use std::path::{Path, PathBuf};

use smited_core::evalsuite::EvalError;
use smited_core::model::ModelError;
use smited_core::moe::MoeError;
use smited_core::numerics::NumericsError;
use smited_core::tokenizer::TokenizeError;
use smited_core::training::TrainError;

/// Failure classes reported by the command line, with their exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Numerical,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "UsageError",
            Category::Data => "DataError",
            Category::Numerical => "NumericalError",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Data => 3,
            Category::Numerical => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match its config: {0}")]
    ConfigMismatch(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<NumericsError> for Error {
    fn from(e: NumericsError) -> Self {
        Error::Train(e.into())
    }
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl ToString) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Usage(_) => Category::Usage,
            Error::Numerical(_) => Category::Numerical,
            Error::Train(e) => train_category(e),
            Error::Moe(MoeError::Train(e)) => train_category(e),
            Error::Moe(MoeError::KTooLarge { .. }) => Category::Usage,
            Error::Model(ModelError::InvalidConfig(_) | ModelError::OddHeadDim(_)) => {
                Category::Usage
            }
            Error::Eval(EvalError::DegenerateSystem) => Category::Numerical,
            Error::Eval(EvalError::Train(e)) => train_category(e),
            _ => Category::Data,
        }
    }
}

fn train_category(e: &TrainError) -> Category {
    match e {
        TrainError::NonFinite { .. } => Category::Numerical,
        TrainError::InvalidConfig(_) => Category::Usage,
        TrainError::Model(m) => Error::Model(m.clone()).category(),
        _ => Category::Data,
    }
}
