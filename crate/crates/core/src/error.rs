use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {0} unsupported (max 4)")]
    UnsupportedOrder(usize),
    #[error("denominator vanishes at s = {0}")]
    Pole(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fields live on incompatible grids")]
    IncompatibleGrids,
    #[error("no ground state found: {0}")]
    NoGroundState(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("instability detected: {0}")]
    InstabilityDetected(String),
    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),
    #[error("mode has non-positive Krein signature ({0:e})")]
    NegativeKreinSignature(f64),
    #[error("classification ambiguous at index {0}")]
    ClassificationAmbiguous(String),
    #[error("truncation order {0} needs more derivatives of g than available")]
    KTooLarge(usize),
    #[error("coefficient {0} requested before its lower-order data")]
    RecursionOrder(String),
    #[error("near resonance at index {index}: distance {distance:e}")]
    NearResonance { index: String, distance: f64 },
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("limiting absorption did not settle: {0}")]
    FgrUnresolved(String),
    #[error("far-field amplitude unreliable: {0}")]
    UnreliableAmplitude(String),
    #[error("time step failed at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("modulation outside its neighborhood: {0}")]
    OutsideBasin(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
