use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schedule rejected: {0}")]
    ScheduleRejected(String),

    #[error("quantile argument must lie in (0,1), got {0}")]
    QuantileRange(f64),

    #[error("truncated normal mass underflow: mean {mean}, halfwidth {halfwidth} (|mean| far outside the window)")]
    MassUnderflow { mean: f64, halfwidth: f64 },

    #[error("uniform draw {0} exceeds the common component mass {1}")]
    AboveCommonMass(f64, f64),

    #[error("band search exceeded n = {0}; uniform draw {1} astronomically close to 1")]
    BandSearchOverflow(u32, f64),

    #[error("tolerance {tolerance} not reachable within n <= {max_terms} terms")]
    ToleranceUnreachable { tolerance: f64, max_terms: u32 },

    #[error("node budget exceeded: {revealed} marks revealed (budget {budget}); {context}")]
    BudgetExceeded {
        revealed: u64,
        budget: u64,
        context: String,
    },

    #[error("dryness certificate unattainable within depth {max_depth}: {context}")]
    CertificateUnattainable { max_depth: u32, context: String },

    #[error(
        "high-noise gate failed: gamma = {gamma} <= {gate}; pass force_below_gate to run anyway"
    )]
    GateFailed { gamma: f64, gate: f64 },

    #[error("window too large for discretized TV: {sites} sites (max 2)")]
    WindowTooLarge { sites: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}
