use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Fields on different grids, wrong lengths, non-finite input.
    #[error("structural error: {0}")]
    Structural(String),

    /// Pure-Neumann data violating the solvability condition.
    #[error("incompatible Neumann data: defect {defect:e}")]
    Compatibility { defect: f64 },

    #[error("{solver} did not converge in {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    Solver { solver: &'static str, residuals: Vec<f64> },

    #[error("step rejected: dt {dt:e} exceeds positivity bound {dt_max:e}")]
    StepRejected { dt: f64, dt_max: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {field} at step {step}")]
    NonFinite { step: usize, field: String },

    /// A downstream failure tagged with the step at which it happened.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, with step tagging removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}
