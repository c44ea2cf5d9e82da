use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FoamError {
    #[error("sites coincide (index {a} and {b}): radical plane is undefined")]
    CoincidentSites { a: usize, b: usize },

    #[error("scene has no cells")]
    EmptyScene,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("pixel ({x}, {y}) is outside the camera's valid image region")]
    InvalidPixel { x: f64, y: f64 },

    #[error("cell walk exceeded its step budget ({budget} steps): diagram traversal diverged")]
    TraversalDiverged { budget: u64 },

    #[error("at pixel ({x}, {y}): {source}")]
    AtPixel {
        x: u32,
        y: u32,
        #[source]
        source: Box<FoamError>,
    },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FoamError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FoamError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        FoamError::Parse { path: path.into(), message: message.into() }
    }
}
