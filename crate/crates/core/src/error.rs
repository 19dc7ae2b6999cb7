use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "non-local attention over {positions} positions exceeds the budget of {budget}; \
         tile the input into smaller pieces (e.g. --tile {suggested_tile}) or raise max_nl_positions"
    )]
    PositionBudget {
        positions: usize,
        budget: usize,
        suggested_tile: usize,
    },

    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },

    #[error("weight file: {0}")]
    Format(String),

    #[error("non-finite loss {loss} at step {step} (epoch {epoch}, lr {lr:e}, samples {samples:?})")]
    NonFiniteLoss {
        loss: f64,
        step: u64,
        epoch: u64,
        lr: f64,
        samples: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
