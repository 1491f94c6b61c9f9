//! Error taxonomy shared by every module of the crate.
//!
//! Variants fall into three groups, which the CLI maps onto exit codes:
//! input/parse problems, model-validity problems (bad topology or
//! parameters), and failed numeric checks (a certificate or identity did
//! not hold at the stated tolerance).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// The bipartite service graph is not a tree (cycle, disconnected
    /// component, or an edge count other than I + J - 1).
    #[error("not a tree: {0}")]
    NotATree(String),

    /// A rate or capacity that must be strictly positive is not.
    #[error("non-positive parameter: {0}")]
    NonPositiveParameter(String),

    /// An edge of the graph has no service rate attached (or a rate is
    /// attached to a non-edge).
    #[error("edge rate missing: {0}")]
    EdgeRateMissing(String),

    /// The fluid equations are inconsistent: the network is not critically
    /// loaded, so no allocation can balance arrivals against capacity.
    #[error("not critically loaded: fluid system residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotCriticallyLoaded { residual: f64, tol: f64 },

    /// The fluid allocation has a non-positive entry, so complete resource
    /// pooling fails and the tree does not act as a single resource.
    #[error("complete resource pooling violated: xi*[class {class}, pool {pool}] = {xi:.6e} <= 0")]
    CrpViolated { class: usize, pool: usize, xi: f64 },

    /// The weight vector p is not a strictly positive probability vector.
    #[error("invalid weight vector p: {0}")]
    InvalidP(String),

    /// A capacity reallocation names the same pool twice.
    #[error("reallocation source and destination pools are the same")]
    SamePool,

    /// A dense linear solve failed; on a valid tree this indicates a bug,
    /// not a property of the input.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// The designated anchor pair is not an edge of the graph.
    #[error("anchor (class {class}, pool {pool}) is not an edge of the graph")]
    AnchorNotEdge { class: usize, pool: usize },

    /// The row/column sums handed to the tree flow map are not balanced.
    #[error("flow balance violated: <e,alpha> - <e,beta> = {imbalance:.3e} exceeds tolerance {tol:.3e}")]
    BalanceViolated { imbalance: f64, tol: f64 },

    /// A control vector is not a point of the probability simplex.
    #[error("not a simplex point: {0}")]
    NotASimplexPoint(String),

    /// Integer staffing synthesis produced a negative server count; the
    /// system order n is too small for the requested second-order plan.
    #[error("n too small: {0}")]
    NTooSmall(String),

    /// A transience certificate was requested for a model that is not in
    /// the transient regime.
    #[error("not in the transient regime: <e, B1^-1 h> = {value:.6e} is not positive")]
    NotTransientRegime { value: f64 },

    /// The transience test function failed to have a positive generator
    /// margin; this contradicts the theory and indicates a bug.
    #[error("transience margin non-positive: {margin:.6e} at grid point {at}")]
    MarginNonPositive { margin: f64, at: String },

    /// A Foster-Lyapunov drift inequality could not be established on the
    /// verification grid for any step of the epsilon bisection.
    #[error("drift inequality failed: {0}")]
    InequalityFailed(String),

    /// The Lyapunov matrix search failed. This is reported as "certificate
    /// unavailable" and never as evidence of instability.
    #[error("no Lyapunov matrix found: {0}")]
    NotFound(String),

    /// An estimator was handed an empty trajectory.
    #[error("empty trajectory")]
    EmptyTrajectory,

    /// Diffusion scaling was requested in a mode whose centering data is
    /// absent (e.g. tilde mode without a staffing plan).
    #[error("scaling mode mismatch: {0}")]
    ModeMismatch(String),

    /// An SDE path left the finite range of f64; reported with the step at
    /// which the blow-up was detected.
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    /// The network spec file could not be parsed against the JSON schema.
    #[error("spec parse error: {0}")]
    SpecParse(String),

    /// File system failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
