use std::path::PathBuf;

/// Errors across the planning/simulation pipeline.
///
/// `exit_code` groups them into the CLI's exit classes: 1 for input
/// errors, 2 for infeasibility, 3 for solver/oracle budget aborts.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no profiling data")]
    EmptyTable,
    #[error("config {config}: need at least 3 distinct sequence lengths, found {found}")]
    TooFewLengths { config: String, found: usize },
    #[error("degenerate fit for config {0}")]
    DegenerateFit(String),
    #[error("chunk exceeds memory budget: {batch} seqs x {seq_len} tokens > {max_seq_len}")]
    ChunkExceedsBudget { batch: u64, seq_len: u32, max_seq_len: u32 },
    #[error("sequence length {seq_len} exceeds max supported length {max_seq_len}")]
    SeqLenUnsupported { seq_len: u32, max_seq_len: u32 },
    #[error("bucket exceeds max supported length: boundary {boundary} > {max_seq_len}")]
    UnsupportedBucket { boundary: u32, max_seq_len: u32 },
    #[error("unknown config <{tp},{pp}> (no fitted cost curve)")]
    UnknownConfig { tp: u32, pp: u32 },
    #[error("sequence exceeds grid: {len} > {grid_max}")]
    SequenceExceedsGrid { len: u32, grid_max: u32 },
    #[error("bucket count must be at least 1")]
    ZeroBuckets,
    #[error("histogram has no occupied interval")]
    EmptyHistogram,
    #[error("sequence exceeds last bucket boundary: {len} > {last}")]
    OverflowBucket { len: u32, last: u32 },
    #[error("infeasible: bucket {0} has demand but no supporting group")]
    InfeasibleBucket(usize),
    #[error("re-plan required: bucket {0} unsupported by every deployed group")]
    ReplanRequired(usize),
    #[error("longest bucket uncoverable: no candidate supports bucket {0}")]
    LongestBucketUncoverable(usize),
    #[error("instance too large for oracle: more than {cap} assignments")]
    OracleTooLarge { cap: u64 },
    #[error("oracle cap exceeded: more than {cap} deployment plans")]
    OracleCapExceeded { cap: usize },
    #[error("search budget exceeded with no incumbent")]
    SearchBudgetExceeded,
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleBucket(_)
            | Error::ReplanRequired(_)
            | Error::LongestBucketUncoverable(_) => 2,
            Error::OracleTooLarge { .. }
            | Error::OracleCapExceeded { .. }
            | Error::SearchBudgetExceeded => 3,
            _ => 1,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
