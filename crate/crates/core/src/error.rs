use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid vertex {coords:?} for side length {side}")]
    InvalidVertex { coords: Vec<usize>, side: usize },

    #[error("lattice too small: side {side} must exceed {bound} (2 * rho * radius)")]
    LatticeTooSmall { side: usize, bound: usize },

    #[error("motif built for {motif} cannot be applied to lattice {lattice}")]
    MismatchedLattice { motif: String, lattice: String },

    #[error("enumeration of {requested} members exceeds the cap of {cap}")]
    FamilyTooLarge { requested: u128, cap: u128 },

    #[error("invalid motif: {0}")]
    InvalidMotif(String),

    #[error("motif parse error at line {line}: {message}")]
    MotifParse { line: usize, message: String },

    #[error("{sites} sites exceeds the exact-enumeration cap of {cap}")]
    TooLargeForExact { sites: usize, cap: usize },

    #[error("missing spin at vertex {0:?}")]
    MissingSpin(Vec<usize>),

    #[error("motif is not clean")]
    NotClean,

    #[error("invalid field schedule: {0}")]
    InvalidSchedule(String),

    #[error("motif has k = {motif_k} positive vertices but the schedule targets k = {schedule_k}")]
    MotifScheduleMismatch { motif_k: usize, schedule_k: usize },

    #[error("perfect sampling requires b >= 0, got b = {0}")]
    AntiferromagneticUnsupported(f64),

    #[error("chains did not coalesce within {0} sweeps")]
    CoalescenceTimeout(u64),

    #[error("distribution is not normalized (total mass {0})")]
    NotNormalized(f64),

    #[error("the Stein-Chen bound requires b >= 0, got b = {0}")]
    FerromagneticOnly(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("config parse error{}: {message}", location(.line, .key))]
    Parse {
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },

    #[error("config validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn location(line: &Option<usize>, key: &Option<String>) -> String {
    match (line, key) {
        (Some(l), Some(k)) => format!(" at line {l}, key `{k}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(k)) => format!(" at key `{k}`"),
        (None, None) => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
