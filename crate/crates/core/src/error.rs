use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners out of order or non-finite")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("heatmap value {value} at flat index {index} outside [0, 1]")]
    HeatmapRange { index: usize, value: f32 },

    #[error("instance {instance} does not cover clip window starting at frame {window_start}")]
    NotCovering { instance: usize, window_start: usize },

    #[error("loss normaliser n = 0 while the ground truth heatmap has positive cells")]
    ZeroInstances,

    #[error("grid point ({x}, {y}) outside {width}x{height} grid")]
    OffGrid { x: i64, y: i64, width: usize, height: usize },

    #[error("frame {got} presented after frame {last}; frames must strictly increase")]
    OutOfOrder { last: usize, got: usize },

    #[error("invalid tubelet: {0}")]
    InvalidTubelet(String),

    #[error("tensor format: {0}")]
    Format(String),

    #[error("scene cannot be generated: {0}")]
    Unsatisfiable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
