use crate::model::Point;
use crate::pso::PopSet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("singular geometry (FIM condition number {condition:.3e})")]
    SingularGeometry { condition: f64 },

    #[error("estimator did not converge after {iterations} iterations (last iterate {last:?})")]
    NoConvergence { iterations: usize, last: Point },

    #[error("trajectory subproblem infeasible; violated: {}", .violated.join(", "))]
    SubproblemInfeasible { violated: Vec<String> },

    #[error("initial trajectory infeasible: {0}")]
    InitializationInfeasible(String),

    #[error("BCD iteration {iteration}: {source}")]
    Bcd {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no particle satisfied the energy/speed constraints (best average CRLB {:.4} m^2)", .best.average_crlb)]
    NoFeasibleParticle { best: Box<PopSet> },

    #[error("duplicate knot slot {0}")]
    DuplicateKnotSlot(usize),

    #[error("auxiliary trajectory cannot be repaired: {0}")]
    Unrepairable(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that mean "no feasible plan exists" rather than a solver breakdown.
    pub fn is_infeasibility(&self) -> bool {
        match self {
            Error::Infeasible(_)
            | Error::SubproblemInfeasible { .. }
            | Error::InitializationInfeasible(_)
            | Error::NoFeasibleParticle { .. }
            | Error::Unrepairable(_) => true,
            Error::Bcd { source, .. } => source.is_infeasibility(),
            _ => false,
        }
    }
}
