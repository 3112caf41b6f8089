use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range ({valid})")]
    OutOfBounds { index: usize, valid: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate signal: residual variance {0:e} is below 1e-12")]
    DegenerateSignal(f64),

    #[error("posterior precision is not positive definite (condition number {condition:e})")]
    NotPositiveDefinite { condition: f64 },

    #[error("horseshoe scale `{name}` left [1e-300, 1e300]: {value:e}")]
    ScaleBreach { name: String, value: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("too few valid draws: {valid} < {required}")]
    TooFewDraws { valid: usize, required: usize },

    #[error("chain fault at iteration {iteration}: {source}")]
    ChainFault {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
