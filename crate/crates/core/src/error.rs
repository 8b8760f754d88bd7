use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("state norm {norm:e} exceeded blow-up threshold at t = {t}")]
    BlowUp { t: f64, norm: f64 },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("unknown parameter `{param}` for system `{system}`")]
    UnknownParam { system: String, param: String },

    #[error("system `{system}` requires parameter `{param}`")]
    MissingParam { system: String, param: String },

    #[error("wrong time semantics: {0}")]
    TimeKind(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate exponent {0} in manifold polynomial")]
    DuplicateExponent(u32),

    #[error("observable `{name}` undefined at x = {x}")]
    UndefinedObservable { name: &'static str, x: f64 },

    #[error("eigenvalue {0} is not simple")]
    DegenerateSpectrum(String),

    #[error("every library column eliminated for target row {row}; threshold too large")]
    AllColumnsEliminated { row: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sampling times are not uniform")]
    NonUniformSampling,

    #[error("trajectory is uninformative: eigenfunction vanishes along it")]
    DegenerateTrajectory,

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("(A, B) not stabilizable; uncontrollable modes with Re >= 0: {}", format_modes(.modes))]
    NotStabilizable { modes: Vec<(f64, f64)> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_modes(modes: &[(f64, f64)]) -> String {
    modes
        .iter()
        .map(|(re, im)| {
            if *im == 0.0 {
                format!("{re}")
            } else {
                format!("{re}{im:+}i")
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}
