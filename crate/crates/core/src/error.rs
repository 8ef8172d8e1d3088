use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Point evaluation of the covariance kernel on its diagonal.
    #[error(
        "kernel is singular on the diagonal (t = s = {0}); use a singularity-aware quadrature"
    )]
    Singularity(f64),

    #[error("quadrature did not converge: successive estimates {coarse} and {fine} differ by more than {tolerance}")]
    QuadratureNonConvergence {
        coarse: f64,
        fine: f64,
        tolerance: f64,
    },

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance factorization failed at pivot {pivot} (value {value:e}) even after adding 1e-12 jitter")]
    Factorization { pivot: usize, value: f64 },

    #[error("circulant embedding has eigenvalue {0:e} below -1e-10")]
    NegativeEigenvalue(f64),

    #[error("PDE coefficient error: {0}")]
    Coefficient(String),

    #[error("Picard iteration did not converge at time step {step} (t = {time}): residual {residual:e} after {iterations} sweeps")]
    PicardNonConvergence {
        step: usize,
        time: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("tridiagonal solver breakdown at row {0}")]
    TridiagonalBreakdown(usize),

    #[error("{clamped} of {total} path-nodes ({:.3}%) fell outside the spatial domain; increase kappa", 100.0 * *clamped as f64 / *total as f64)]
    DomainTooSmall { clamped: usize, total: usize },

    #[error("no admissible alpha0 at epsilon = {epsilon}: requires epsilon^H < min(1, C1) = {min_c1}; maximal feasible epsilon is {max_epsilon}")]
    Infeasible {
        epsilon: f64,
        min_c1: f64,
        max_epsilon: f64,
    },

    #[error("formula input error: {0}")]
    FormulaInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("rate fit needs at least 3 positive points, got {0}")]
    FitTooFewPoints(usize),

    #[error("at epsilon = {epsilon}: {source}")]
    AtEpsilon {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_epsilon(self, epsilon: f64) -> Self {
        Error::AtEpsilon {
            epsilon,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtEpsilon { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for usage/config/I-O problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
