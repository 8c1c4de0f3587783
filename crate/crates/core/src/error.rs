use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The market admits an arbitrage (no strictly positive pricing measure).
    #[error("market admits arbitrage")]
    Arbitrage,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    /// Expected utility grows without bound along the Newton path.
    #[error("expected utility is unbounded: {0}")]
    UnboundedUtility(String),

    /// No portfolio keeps terminal wealth inside the utility's domain.
    #[error("wealth domain violated: {0}")]
    Domain(String),

    #[error("root not bracketed on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("risk level {eps} exceeds attainable utility gap {max}")]
    RiskTooLarge { eps: f64, max: f64 },

    #[error("value {value} outside support [{lower}, {upper}]")]
    OutOfSupport { value: f64, lower: f64, upper: f64 },

    #[error("value {value} outside range [{lower}, {upper}]")]
    OutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("price curves do not reach a common price: {0}")]
    EmptyFrontier(String),

    #[error("price curve is not monotone: {0}")]
    NonMonotoneCurve(String),

    #[error("no admissible price pair with buyer price above seller price")]
    EmptyInterval,

    #[error("anchor is not a risk-neutral measure (residual {0:e})")]
    AnchorNotRiskNeutral(f64),

    #[error("rejection sampler exhausted after {attempts} attempts ({accepted} accepted)")]
    SamplerExhausted { attempts: u64, accepted: u64 },

    #[error("trajectory diverged at t={t}: |gap|={gap}")]
    Divergence { t: f64, gap: f64 },

    #[error("local error proxy {proxy:e} exceeds 1e-3 at t={t}; reduce dt")]
    StepTooLarge { t: f64, proxy: f64 },

    #[error("barrier singularity floor hit in {hits} of {steps} steps")]
    SingularityStall { hits: usize, steps: usize },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}
