use std::path::PathBuf;

/// Errors produced anywhere in the detection and evaluation chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("alignment error: rgb is {rgb_width}x{rgb_height} but thermal is {thermal_width}x{thermal_height}")]
    Alignment {
        rgb_width: usize,
        rgb_height: usize,
        thermal_width: usize,
        thermal_height: usize,
    },

    #[error("{}: thermal image has distinct colour channels (expected single-channel)", path.display())]
    ThermalChannels { path: PathBuf },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("unknown challenge tag {0:?}")]
    UnknownChallenge(String),

    #[error("record {id}: file not found: {}", path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("ground truth for {0} has no salient pixels")]
    EmptyGroundTruth(String),

    #[error("no saliency map for record {0}")]
    MissingMap(String),

    #[error("{stage} failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
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

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
