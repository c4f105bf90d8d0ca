use std::path::PathBuf;

use crate::hierarchy::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // hierarchy
    #[error("hierarchy has more than one root: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("hierarchy has no root")]
    NoRoot,
    #[error("leaf `{label}` sits at level {level}, but leaves must be at level {bottom}")]
    LeafNotAtBottomLevel { label: String, level: usize, bottom: usize },
    #[error("edge {parent} -> {child} skips levels ({parent_level} -> {child_level})")]
    LevelSkip { parent: String, child: String, parent_level: usize, child_level: usize },
    #[error("hierarchy contains a cycle through `{0}`")]
    Cycle(String),
    #[error("node `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("node `{0}` is not reachable from the root")]
    Disconnected(String),
    #[error("unknown node label `{0}`")]
    UnknownLabel(String),
    #[error("root must be at level 1, found level {0}")]
    RootNotAtTop(usize),
    #[error("hierarchy needs at least 2 levels, found {0}")]
    TooFewLevels(usize),
    #[error("invalid node {0}")]
    InvalidNode(NodeId),

    // grids
    #[error("forecast grid is missing leaf {0}")]
    IncompleteLeafCover(NodeId),
    #[error("forecast grid is missing node {0}")]
    MissingNode(NodeId),
    #[error("non-finite value at {node}, t={t}")]
    NonFinite { node: NodeId, t: usize },
    #[error("grid windows or node sets disagree: {0}")]
    WindowMismatch(String),

    // data
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("aggregate `{node}` at t={t} is {value}, but its children sum to {children_sum}")]
    IncoherentInput { node: String, t: usize, value: f64, children_sum: f64 },
    #[error("series have unequal lengths: {0}")]
    RaggedSeries(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("invalid correlation {rho} for sibling group of size {group}")]
    InvalidCorrelation { rho: f64, group: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),

    // forecasters
    #[error("series too short: need {needed} points, have {have}")]
    SeriesTooShort { needed: usize, have: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("unknown forecaster kind `{0}`")]
    UnknownKind(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("linear solve failed: {0}")]
    Singular(String),

    // metrics
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("history is constant, so the naive scale is zero")]
    ConstantHistory,
    #[error("zero variance input")]
    ZeroVariance,

    // hpo
    #[error("proxy set does not cover level {0}")]
    MissingProxyLevel(usize),
    #[error("no series at levels 1..={0}")]
    EmptyLevelSet(usize),
    #[error("trial store is empty or holds no successful trial")]
    EmptyStore,
    #[error("fingerprint mismatch: store has {stored}, data has {actual}")]
    FingerprintMismatch { stored: String, actual: String },
    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    // theory
    #[error("coverage gap: {0}")]
    CoverageGap(String),

    // experiment
    #[error("missing run output: {0}")]
    MissingRun(String),
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
