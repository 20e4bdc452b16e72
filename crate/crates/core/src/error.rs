use thiserror::Error;

/// Errors raised by the simulation, training and I/O layers.
#[derive(Debug, Error)]
pub enum QtlError {
    #[error("qubit count {n} outside supported range 1..={max}")]
    QubitCount { n: usize, max: usize },

    #[error("qubit index {index} out of range for {n_qubits}-qubit state")]
    QubitIndex { index: usize, n_qubits: usize },

    #[error("gate arity {arity} does not match {targets} target(s)")]
    Arity { arity: usize, targets: usize },

    #[error("duplicate target qubit {0}")]
    DuplicateTarget(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("probability {name}={value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },

    #[error("invalid calibration: {0}")]
    Calibration(String),

    #[error("channel is not trace preserving (completeness residual {0:e})")]
    Completeness(f64),

    #[error("encoding angle {value} at slot {index} outside [-pi/2, pi/2]")]
    AngleRange { index: usize, value: f64 },

    #[error("imaginary residue {0:e} in expectation value")]
    ImaginaryResidue(f64),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QtlError>;
