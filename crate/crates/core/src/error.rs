use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse quarter from `{token}`: {reason}")]
    QuarterParse { token: String, reason: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("column `{0}` already exists")]
    ColumnExists(String),

    #[error("column `{name}` has {got} cells, expected {expected}")]
    ColumnLength {
        name: String,
        got: usize,
        expected: usize,
    },

    #[error("duplicate row for ({unit}, {quarter}) at line {row}")]
    DuplicateKey {
        unit: String,
        quarter: String,
        row: usize,
    },

    #[error("line {row}, column `{column}`: cannot parse `{value}` as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("{what} at ({unit}, {quarter}): value {value}")]
    Domain {
        what: &'static str,
        unit: String,
        quarter: String,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("empty dataset: {0}")]
    EmptyPanel(String),

    #[error("order condition fails: {instruments} excluded instrument(s) for {endog} endogenous regressor(s)")]
    OrderCondition { instruments: usize, endog: usize },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("estimation sample is empty after listwise deletion")]
    EmptySample,

    #[error("{stage}: rank deficiency, column `{column}` is collinear with preceding columns")]
    RankDeficient { stage: String, column: String },

    #[error("fixed-effect absorption did not converge after {sweeps} sweeps (last change {last_delta:e})")]
    NotConverged { sweeps: usize, last_delta: f64 },

    #[error("cluster covariance needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),

    #[error("Driscoll-Kraay lag length {lags} needs more than {periods} time periods")]
    TooManyLags { lags: usize, periods: usize },

    #[error("covariance sub-block is singular for test on {0}")]
    SingularCovariance(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for problems with the input data or arguments rather than with the
    /// estimation itself.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::QuarterParse { .. }
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::ColumnExists(_)
                | Error::ColumnLength { .. }
                | Error::DuplicateKey { .. }
                | Error::BadCell { .. }
                | Error::Domain { .. }
                | Error::Config { .. }
                | Error::EmptyPanel(_)
        )
    }
}
