use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("unknown group {group} at row {row} ({declared} groups declared)")]
    UnknownGroup {
        row: usize,
        group: usize,
        declared: usize,
    },

    #[error("group {0} has no records")]
    MissingGroup(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0} part")]
    EmptySplit(&'static str),

    #[error("label {value} outside label domain [{min}, {max}]")]
    OutOfDomain { value: f64, min: f64, max: f64 },

    #[error("fewer labels ({labels}) than bins ({bins})")]
    TooFewLabels { labels: usize, bins: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error(
        "empty calibration cell (bin {bin}, group {group}); \
         reduce the number of bins or collect more calibration data"
    )]
    EmptyCell { bin: usize, group: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quantile level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("quantile band is inverted: lower {lo} > upper {hi}")]
    InvertedBand { lo: f64, hi: f64 },

    #[error("record `{0}` carries no quantile predictions")]
    MissingBand(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty score vector")]
    EmptyScores,

    #[error("cell covers no calibration records; coverage cannot decrease")]
    NothingCovered,

    #[error("cell already covers every calibration record")]
    FullyCovered,

    #[error("oracle search space too large: {0}")]
    SearchSpace(String),

    #[error("at least {needed} groups required, got {got}")]
    TooFewGroups { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite(_))
    }

    /// Stable machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "missing_column",
            Error::Parse { .. } => "parse",
            Error::UnknownGroup { .. } => "unknown_group",
            Error::MissingGroup(_) => "missing_group",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptySplit(_) => "empty_split",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::TooFewLabels { .. } => "too_few_labels",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::EmptyCell { .. } => "empty_cell",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidLevel(_) => "invalid_level",
            Error::InvertedBand { .. } => "inverted_band",
            Error::MissingBand(_) => "missing_band",
            Error::Diverged { .. } => "diverged",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyScores => "empty_scores",
            Error::NothingCovered => "nothing_covered",
            Error::FullyCovered => "fully_covered",
            Error::SearchSpace(_) => "search_space",
            Error::TooFewGroups { .. } => "too_few_groups",
            Error::Shape(_) => "shape",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
