use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty codebook")]
    EmptyCodebook,
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("item `{id}` declares {n_levels} levels; at least 2 are required")]
    TooFewLevels { id: String, n_levels: u16 },
    #[error("`{item}` references unknown column `{column}`")]
    UnknownColumn { item: String, column: String },
    #[error("missing source column `{0}`")]
    MissingColumn(String),
    #[error("no observations")]
    NoObservations,
    #[error("value {value} out of range 1..={n_levels} for `{item}`")]
    OutOfRange { item: String, value: i64, n_levels: u16 },
    #[error("item `{item}` has {frac:.3} missing, above the {max:.3} limit")]
    TooMuchMissing { item: String, frac: f64, max: f64 },

    #[error("degenerate item `{0}`: fewer than two observed categories")]
    DegenerateItem(String),
    #[error("polychoric search for pair ({0}, {1}) did not converge: {2}")]
    NonConvergence(String, String, String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model has {df} degrees of freedom; fit indices need df > 0")]
    NonPositiveDf { df: i64 },
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("no score variance")]
    NoScoreVariance,
    #[error("need at least {k} distinct values for k-means, found {found}")]
    TooFewDistinct { k: usize, found: usize },
    #[error("category code {code} outside threshold table for `{item}`")]
    UnknownCategory { item: String, code: u16 },

    #[error("separation detected: {0}")]
    Separation(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
