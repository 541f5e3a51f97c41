use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constant polynomial")]
    ConstantPolynomial,

    #[error("Γ undefined for repeated roots (min separation {separation:e})")]
    RepeatedRoots { separation: f64 },

    #[error("polynomial is not monic (leading coefficient {leading})")]
    NotMonic { leading: f64 },

    #[error("unstable system: spectral radius {radius}")]
    Unstable { radius: f64 },

    #[error("divergent idealized risk: spectral radius {radius}")]
    DivergentRisk { radius: f64 },

    #[error("pole at z = {re}{im:+}i")]
    Pole { re: f64, im: f64 },

    #[error("estimate pole on circle at angle {angle}")]
    EstimatePoleOnCircle { angle: f64 },

    #[error("improper rational function: numerator degree {num} >= denominator degree {den}")]
    ImproperRational { num: usize, den: usize },

    #[error("not strict-input passive on grid (angle {angle})")]
    NotPassiveOnGrid { angle: f64 },

    #[error("extension could not be certified inside a cone: {0}")]
    NotCertified(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigenvalue iteration did not converge")]
    EigenFailure,

    #[error("projection polytope is infeasible")]
    Infeasible,

    #[error("projection did not converge after {sweeps} sweeps (residual {residual:e})")]
    ProjectionNotConverged { sweeps: usize, residual: f64 },

    #[error("non-finite loss or gradient at iteration {iter}")]
    Divergence { iter: usize },

    #[error("rejection cap exceeded after {attempts} attempts (acceptance rate {acceptance_rate})")]
    RejectionCapExceeded { attempts: usize, acceptance_rate: f64 },

    #[error("rank-deficient design: {rows} rows for {cols} unknowns")]
    RankDeficient { rows: usize, cols: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from bad input or IO.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Parse(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidArgument(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
