use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("negative probability")]
    NegativeProbability,
    #[error("objective not finite")]
    ObjectiveNotFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("insufficient events")]
    InsufficientEvents,
    #[error("dim mismatch patient {0}")]
    DimMismatch(String),
    #[error("patient {patient} is missing mandatory modality {modality}")]
    MissingModality { patient: String, modality: String },
    #[error("duplicate patient id {0}")]
    DuplicatePatient(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no modalities")]
    NoModalities,
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("hazard outside (0,1): {0}")]
    HazardOutOfRange(f64),
    #[error("invalid interval {index} for {k} intervals")]
    InvalidInterval { index: usize, k: usize },
    #[error("soft label not normalized (sum {0})")]
    SoftLabelNotNormalized(f64),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("no determinable patients")]
    NoDeterminablePatients,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cohort is not binned into intervals")]
    NotBinned,
    #[error("interval edge mismatch between model and cohort")]
    EdgeMismatch,
    #[error("non-finite loss at iteration {iteration}; first non-finite gradient in {param}")]
    NonFiniteLoss { iteration: u64, param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input files, flags or schemas, as opposed to
    /// failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimMismatch(_)
                | Error::MissingModality { .. }
                | Error::DuplicatePatient(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::NotBinned
                | Error::EdgeMismatch
                | Error::Checkpoint(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
