use thiserror::Error;

/// Everything that can go wrong in the lab, tagged so the CLI can map it to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("integer range exceeded: {0}")]
    Range(String),

    #[error("orbit escaped at t = {escape_time} (partial signature {partial:?})")]
    Escape { escape_time: usize, partial: Vec<usize> },

    #[error("evaluation outside disk: |z - center| / radius = {ratio:.6}")]
    Domain { ratio: f64 },
    #[error("composition left the target disk: max excursion ratio {excursion:.6}")]
    CompositionDomain { excursion: f64 },
    #[error("truncation overflow: tail ratio {tail:.3e} above spill threshold {threshold:.1e}")]
    TruncationOverflow { tail: f64, threshold: f64 },
    #[error("singular rescale: |beta| = {0:.3e}")]
    SingularRescale(f64),

    #[error("no valid beta: {0}")]
    NoValidBeta(String),
    #[error("neutral multiplier: |1 - Df2(beta)| = {0:.3e}")]
    NeutralMultiplier(f64),
    #[error("Newton did not converge: {message}")]
    NonConvergence { message: String, trace: Vec<f64> },
    #[error("ill-conditioned linear system: {0}")]
    Conditioning(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("bracket error: {0}")]
    Bracket(String),
    #[error("combinatorics mismatch: {0}")]
    Combinatorics(String),
    #[error("double precision exhausted: deepest attainable level is n = {max_n}")]
    PrecisionLimit { max_n: usize },
    #[error("degenerate sequence: {0}")]
    Degenerate(String),
    #[error("bootstrap domain: {0}")]
    BootstrapDomain(String),

    #[error("branch tracking failed: {0}")]
    Monodromy(String),
    #[error("nest depth limit reached at level {0}")]
    DepthLimit(usize),
    #[error("nest level {level}: {source}")]
    AtLevel { level: usize, source: Box<Error> },
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("uncovered target {0}")]
    Coverage(String),
    #[error("degenerate map: {0}")]
    DegenerateMap(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 0 ok, 1 usage, 2 precision limit, 3 non-convergence, 4 inconclusive, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Precondition(_) | Error::Malformed(_) => 1,
            Error::PrecisionLimit { .. } => 2,
            Error::Inconclusive(_) => 4,
            Error::Io(_) | Error::Parse(_) => 5,
            Error::AtLevel { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub fn at_level(self, level: usize) -> Error {
        Error::AtLevel { level, source: Box::new(self) }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
