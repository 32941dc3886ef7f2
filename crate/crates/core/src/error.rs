use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A problem definition violates its invariants (ε ≤ 0, target outside
    /// the domain interior, negative running cost, ...).
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// Mismatched vector lengths or otherwise unusable arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A basis fails the partition-of-unity or boundary-adaptation checks.
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    /// A linear system that should be solvable was singular.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// The discrete solution violates a property the continuous problem
    /// guarantees (e.g. φ ≤ 0 somewhere), indicating a discretization fault.
    #[error("discretization fault: {0}")]
    DiscretizationFault(String),

    /// The discrete operator G is not a generator matrix, so the dual
    /// Markov decision problem has no probabilistic interpretation. The
    /// Galerkin solution itself may still exist.
    #[error("generator condition violated: most negative off-diagonal entry {min_off_diagonal}")]
    GeneratorCondition { min_off_diagonal: f64 },

    /// An Euler-Maruyama step left the domain even after one reflection;
    /// the time step is too large for this potential.
    #[error("simulation step left the domain after reflection (dt too large)")]
    StepOutsideDomain,

    /// A trajectory never visited any core set, so milestoning labels are
    /// undefined everywhere.
    #[error("no core set was visited by the trajectory")]
    NoCoreVisited,

    /// An iterative solver did not reach its tolerance.
    #[error("iteration failed to converge: {0}")]
    NoConvergence(String),

    /// An internal consistency check failed; indicates a bug.
    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
