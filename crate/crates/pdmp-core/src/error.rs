use thiserror::Error;

/// Errors surfaced by geometry and kernel evaluations.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("point not on the boundary (|x| = {radius}, R = {expected})")]
    NotOnBoundary { radius: f64, expected: f64 },
    #[error("relative speed {rel_speed} below kernel support threshold {r0}")]
    DegeneratePair { rel_speed: f64, r0: f64 },
    #[error("rejection sampler exceeded budget of {budget} draws")]
    RejectionBudgetExceeded { budget: usize },
    #[error("evaluation point outside the open support of {which}")]
    OutsideSupport { which: &'static str },
    #[error("impact Jacobian nearly singular: |<e, v - v'>| = {value} < {threshold}")]
    NearSingular { value: f64, threshold: f64 },
}

/// Errors aborting a single simulated or replayed path.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum PathError {
    #[error("{kind} count exceeded cap {cap}")]
    EventCapExceeded { kind: &'static str, cap: usize },
    #[error("two candidate events within tie tolerance at t = {t}")]
    SimultaneousEvents { t: f64 },
    #[error("tangential pair crossing at t = {t} (|d/dt dist| below tolerance)")]
    TangentialCrossing { t: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("replay needs a coordinate for {slot} that is not stored")]
    CoordinateExhausted { slot: String },
    #[error("replayed coordinate for {slot} leaves the velocity set")]
    InvalidCoordinate { slot: String },
}

/// Errors from the reduced-trajectory and calculus layers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CalculusError {
    #[error("trajectory contains a suppressed collision; excluded from calculus")]
    ContainsSuppressedCollision,
    #[error("horizon t = {t} coincides with an event time")]
    HorizonOnEvent { t: f64 },
    #[error("direction has support outside the functional's coordinates")]
    UnsupportedDirection,
    #[error("flow changed the event order (shrink the step)")]
    OrderChanged,
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("component (i={i}, r={r}) has no perturbable event slot before t")]
    NotPerturbable { i: usize, r: usize },
    #[error("horizon too close to the last event (t - rho_m = {gap})")]
    HorizonTooClose { gap: f64 },
    #[error("iterated weight recursion depth {depth} exceeds the configured maximum")]
    DepthExceeded { depth: usize },
    #[error("class {key} has {got} paths, fewer than the required {need}")]
    InsufficientPaths { key: String, got: usize, need: usize },
}

/// Configuration and I/O errors for the batch front-end.
#[derive(Error, Debug)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store: {0}")]
    Store(String),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Path(#[from] PathError),
}
