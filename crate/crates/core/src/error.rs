use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("tolerance policy requires 0 < eps_validate <= eps_compare < 1 (got {eps_validate}, {eps_compare})")]
    BadTolerance { eps_validate: f64, eps_compare: f64 },
    #[error("rows of a matrix literal must have equal length")]
    RaggedRows,
    #[error("matrix is not Hermitian")]
    NotHermitian,
    #[error("eigenvalue {0} below the PSD tolerance")]
    NegativeEigenvalue(f64),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown state role {0:?}")]
    UnknownRole(String),
    #[error("unknown machine kind {0:?}")]
    UnknownKind(String),
    #[error("machine is not valid: {0}")]
    Invalid(String),
    #[error("validation failed:\n{}", .0.join("\n"))]
    Violations(Vec<String>),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("symbol {0:?} not in the machine alphabet")]
    SymbolNotInAlphabet(char),
    #[error("operation not defined for machine kind {0:?}")]
    KindMismatch(String),
    #[error("zero postselection mass: p_a + p_r = 0")]
    ZeroPostselectionMass,
    #[error("error bound must satisfy 0 <= eps < 1/2")]
    EpsOutOfRange,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("operation not defined for machine kind {0:?}")]
    KindMismatch(String),
    #[error("alphabet mismatch between factors")]
    AlphabetMismatch,
    #[error("materialization would produce {0} states, above the cap of {1}; use the virtual form")]
    MaterializationCap(usize, usize),
    #[error("eps must satisfy 0 < eps < 1/2")]
    EpsOutOfRange,
    #[error("routing map does not cover symbol {0:?}")]
    RoutingIncomplete(char),
    #[error("Kraus operator without an outcome label")]
    UnlabeledKraus,
    #[error("cannot mix exact and floating-point factors in one composite")]
    MixedScalarKinds,
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Numerics(#[from] NumericsError),
}
