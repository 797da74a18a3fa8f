use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArwError {
    #[error("malformed graph input at line {line}: {reason}")]
    MalformedGraph { line: usize, reason: String },
    #[error("vertex index {index} out of range for {k} vertices")]
    VertexOutOfRange { index: usize, k: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected: vertex {unreached} not reachable from vertex 0")]
    Disconnected { unreached: usize },
    #[error("graph dimensions must be positive")]
    ZeroDimension,
    #[error("unrecognised graph spec {0:?} (expected complete:K, path:K, grid:RxC or file:PATH)")]
    GraphSpec(String),

    #[error("state space C({n}+{k}-1, {k}-1) = {size} exceeds cap {cap}; use simulation instead")]
    StateSpaceTooLarge { k: usize, n: usize, size: u128, cap: usize },
    #[error("configuration {0:?} is not valid for this state space")]
    InvalidConfiguration(Vec<u32>),

    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("vertex {0} holds no particle to move")]
    EmptyVertex(usize),
    #[error("operation requires a finite beta")]
    InfiniteBeta,
    #[error("state space (k={space_k}, n={space_n}) does not match kernel (k={kernel_k}, n={kernel_n})")]
    SpaceMismatch { space_k: usize, space_n: usize, kernel_k: usize, kernel_n: usize },

    #[error("{what} of size {size} exceeds cap {cap}")]
    CapExceeded { what: &'static str, size: usize, cap: usize },
    #[error("{what} did not converge within {iterations} iterations (last change {last_change:e})")]
    NoConvergence { what: &'static str, iterations: u64, last_change: f64 },
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("mixing time exceeds cap of {0} steps")]
    MixingCapExceeded(u64),
    #[error("upper bound needs a lazy chain, but P({state},{state}) = {holding} < 1/2")]
    NotLazy { state: usize, holding: f64 },

    #[error("cycle breaks between positions {0} and {1}: not a one-step move")]
    BrokenCycle(usize, usize),
    #[error("cycle step {0} -> {1} has zero probability")]
    ZeroProbabilityStep(usize, usize),

    #[error("invalid comparison-chain parameters: {0}")]
    InvalidChainParams(String),

    #[error("marginal masses differ: {0} vs {1}")]
    MarginalMismatch(f64, f64),
    #[error("transport optimality certificate failed: {0}")]
    CertificateFailed(String),
    #[error("configurations hold different particle counts ({0} vs {1})")]
    ParticleCountMismatch(u32, u32),

    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ArwError {
    fn from(e: std::io::Error) -> Self {
        ArwError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ArwError>;
