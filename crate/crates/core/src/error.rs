use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cannot normalize a vector with zero total mass")]
    ZeroMass,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid distribution over `{var}`: {reason}")]
    InvalidDistribution { var: String, reason: String },

    #[error("variable name `{0}` is empty or lacks an S_/O_/A_ prefix")]
    BadPrefix(String),
    #[error("`{0}` is already declared")]
    DuplicateName(String),
    #[error("unknown parent `{0}`")]
    UnknownParent(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown observation `{0}`")]
    UnknownObservation(String),
    #[error("preference subsets overlap on `{0}`")]
    OverlappingSubsets(String),
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("model validation failed: {0}")]
    Validation(ValidationError),

    #[error("missing observation for `{0}`")]
    MissingObservation(String),
    #[error("missing prior for `{0}`")]
    MissingPrior(String),
    #[error("index {index} out of range for `{var}` (cardinality {cardinality})")]
    IndexOutOfRange {
        var: String,
        index: usize,
        cardinality: usize,
    },
    #[error("message {from} -> {to} has not been computed")]
    MissingInbound { from: String, to: String },

    #[error("action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("node is already expanded")]
    AlreadyExpanded,
    #[error("root has not been expanded")]
    NotExpanded,
    #[error("root child for action {0} was never expanded")]
    ChildNotExpanded(usize),
    #[error("agent has not been reset")]
    NotReset,

    #[error("episode is finished")]
    EpisodeFinished,
    #[error("episode is not finished")]
    EpisodeNotFinished,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("no planning iteration has been performed")]
    NoPlanningDone,
    #[error("malformed command: {0}")]
    MalformedCommand(String),
}

/// The first rule violated when building a model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("MissingTransition({0})")]
    MissingTransition(String),
    #[error("UnnormalizedCpt({name}): slice {slice} sums to {sum}")]
    UnnormalizedCpt { name: String, slice: usize, sum: f64 },
    #[error("UnnormalizedPreference({name}): sums to {sum}")]
    UnnormalizedPreference { name: String, sum: f64 },
    #[error("CyclicFactorGraph")]
    CyclicFactorGraph,
    #[error("NoParents({0})")]
    NoParents(String),
    #[error("NoActions")]
    NoActions,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
