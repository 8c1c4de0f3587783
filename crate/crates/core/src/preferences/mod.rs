//! Utility families, portfolio choice and the price maps built on them.

pub mod curves;
pub mod extremes;
pub mod portfolio;
pub mod pricing;
pub mod utility;

pub use curves::{
    derived_curves, CurveSpec, DerivedCurve, PriceCurve, PriceCurvePair, Provenance,
    SyntheticCurves,
};
pub use extremes::{price_extremes, price_extremes_seeded, PriceExtremes};
pub use portfolio::{optimize_portfolio, PortfolioProblem, PortfolioSolution, Position};
pub use pricing::{indifference_price, price_at_belief, price_at_risk, Pricer, Role};
pub use utility::{AgentSpec, UtilitySpec};
