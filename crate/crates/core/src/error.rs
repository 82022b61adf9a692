use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty after tokenization")]
    EmptyText,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("vocabulary of {vocab} tokens cannot support {d_max} semantic axes")]
    AxesRankDeficient { vocab: usize, d_max: usize },
    #[error("angle vector has {got} components, circuit expects {expected}")]
    ThetaDimension { expected: usize, got: usize },
    #[error("{requested} observables requested but the pool only holds {available}")]
    ObservablePoolExhausted { requested: usize, available: usize },
    #[error("cannot normalize an all-zero vector")]
    ZeroVector,
    #[error("feature vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no windows to aggregate")]
    NoWindows,
    #[error("assembled embedding is all zeros")]
    AllZeroEmbedding,
    #[error("normal equations are singular; use a positive ridge penalty")]
    SingularSystem,
    #[error("training diverged: loss {loss} exceeds 10x the initial loss {initial}")]
    TrainingDiverged { initial: f64, loss: f64 },
    #[error("only {shared} ids shared between student and teacher; need at least 2")]
    InsufficientOverlap { shared: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("index holds '{index}' embeddings but the query is '{query}'")]
    ChannelMismatch { index: String, query: String },
    #[error("unit '{0}' has no document mapping")]
    MappingError(String),
    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("both candidate lists are empty")]
    EmptyCandidates,
    #[error("query '{0}' has no ranking")]
    MissingRanking(String),
    #[error("statistic is undefined: {0}")]
    Undefined(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("malformed input at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used in the CLI error envelope.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyText => "empty_text",
            Error::InvalidConfig(_) => "invalid_config",
            Error::AxesRankDeficient { .. } => "axes_rank_deficient",
            Error::ThetaDimension { .. } => "theta_dimension",
            Error::ObservablePoolExhausted { .. } => "observable_pool_exhausted",
            Error::ZeroVector => "zero_vector",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoWindows => "no_windows",
            Error::AllZeroEmbedding => "all_zero_embedding",
            Error::SingularSystem => "singular_system",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::InsufficientOverlap { .. } => "insufficient_overlap",
            Error::EmptyCorpus => "empty_corpus",
            Error::ChannelMismatch { .. } => "channel_mismatch",
            Error::MappingError(_) => "mapping_error",
            Error::AlphaOutOfRange(_) => "alpha_out_of_range",
            Error::EmptyCandidates => "empty_candidates",
            Error::MissingRanking(_) => "missing_ranking",
            Error::Undefined(_) => "undefined",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Parse { .. } => "parse_error",
            Error::DuplicateId(_) => "duplicate_id",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
