use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate mesh: all vertices coincide")]
    DegenerateMesh,
    #[error("render resolution {0} must be a positive multiple of 16")]
    Resolution(usize),
    #[error("k-means needs at least k={k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at iteration {iteration}: loss {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("training data: {0}")]
    Data(String),
    #[error("unknown query id {0}")]
    UnknownQuery(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Nn(#[from] mvembed_nn::NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
