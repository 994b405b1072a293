use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("degenerate cell {cell}: jacobian determinant {det:e} at quadrature point {qp}")]
    DegenerateCell { cell: usize, qp: usize, det: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter t = {0} outside [0, 1]")]
    ParameterOutOfRange(f64),

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("zero pivot at row {row} during factorization")]
    ZeroPivot { row: usize },

    #[error("interior vertex {0} is not reachable from the boundary")]
    DisconnectedVertex(usize),

    #[error("ill-posed cotree projection of column {column}: consistency residual {residual:e} exceeds {limit:e}")]
    IllPosedProjection { column: usize, residual: f64, limit: f64 },

    #[error("snapshot at t = {t}, mode {mode}: {source}")]
    Snapshot {
        t: f64,
        mode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver did not converge after {iterations} iterations ({converged} of {wanted} pairs converged)")]
    NoConvergence { iterations: usize, converged: usize, wanted: usize },

    #[error("only {found} eigenvalues above the cutoff {cut:e} were found, {wanted} requested")]
    TooFewEigenvalues { found: usize, wanted: usize, cut: f64 },

    #[error("requested {requested} POD modes but the snapshot matrix has numerical rank {rank}; lower N_init")]
    RankDeficientSnapshots { requested: usize, rank: usize },

    #[error("tracking failed on [{t0}, {t1}]: correlation {correlation:.4} below threshold {threshold} after maximum bisection depth")]
    TrackingFailed { t0: f64, t1: f64, correlation: f64, threshold: f64 },

    #[error("matrix market: {0}")]
    MatrixMarket(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
