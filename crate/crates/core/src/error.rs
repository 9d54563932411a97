use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("equilibrium solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("chain is unstable along axis {axis}: Hessian eigenvalue {eigenvalue:e}")]
    ChainInstability { axis: crate::chain::Axis, eigenvalue: f64 },

    #[error("invalid pulse schedule: {0}")]
    InvalidSchedule(String),

    #[error("pulse design infeasible: {0}")]
    DesignInfeasible(String),

    #[error("pulse amplitude {amplitude:e} rad/s exceeds the power limit {limit:e} rad/s")]
    PowerLimit { amplitude: f64, limit: f64 },

    #[error("schedules are not time aligned: durations {0:e} s and {1:e} s")]
    Alignment(f64, f64),

    #[error("Fock cutoff too small: mode {mode} top-level population {population:e} exceeds {bound:e} (try a larger cutoff)")]
    FockLeakage { mode: String, population: f64, bound: f64 },

    #[error("integrator did not converge: halving the step changed the result by {0:e}")]
    StepConvergence(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("qubit index {index} out of range for a {count}-qubit register")]
    QubitOutOfRange { index: usize, count: usize },

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("system too large: {0}")]
    SizeLimit(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
