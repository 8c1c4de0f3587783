//! Indifference prices and the risk-parameterized price maps.
//!
//! With `U*` the agent's optimal expected utility without the claim, the
//! seller's utility gap at price `p` is `U*(W0) - U*(W0 + p, short F)` and the
//! buyer's is `U*(W0) - U*(W0 - p, long F)`. The seller gap falls and the buyer
//! gap rises with `p`; the indifference price is the zero of the gap and the
//! price at risk `eps` is the point where the gap equals `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{price_band, BeliefMeasure, ContingentClaim, MarketModel};
use crate::numeric::roots::brent;
use crate::preferences::portfolio::{indirect_utility, Position};
use crate::preferences::utility::{AgentSpec, UtilitySpec};

const PRICE_XTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Seller,
    Buyer,
}

impl Role {
    /// `+1` if the role's price map rises with risk, `-1` if it falls.
    pub fn risk_direction(self) -> f64 {
        match self {
            Role::Seller => -1.0,
            Role::Buyer => 1.0,
        }
    }
}

/// One agent's pricing problem for one claim, with `U*` computed once.
#[derive(Debug, Clone)]
pub struct Pricer {
    model: MarketModel,
    utility: UtilitySpec,
    wealth: f64,
    beliefs: Vec<f64>,
    claim: ContingentClaim,
    role: Role,
    u_star: f64,
    bracket: (f64, f64),
}

impl Pricer {
    pub fn new(
        model: &MarketModel,
        agent: &AgentSpec,
        claim: &ContingentClaim,
        role: Role,
    ) -> Result<Self> {
        Self::with_beliefs(model, agent, agent.beliefs.weights(), claim, role)
    }

    /// Same agent with `beliefs` substituted; zeros are allowed.
    pub fn with_beliefs(
        model: &MarketModel,
        agent: &AgentSpec,
        beliefs: &[f64],
        claim: &ContingentClaim,
        role: Role,
    ) -> Result<Self> {
        Self::with_bracket(
            model,
            agent,
            beliefs,
            claim,
            role,
            pricing_bracket(model, claim)?,
        )
    }

    /// As [`Pricer::with_beliefs`] with a precomputed root bracket.
    pub fn with_bracket(
        model: &MarketModel,
        agent: &AgentSpec,
        beliefs: &[f64],
        claim: &ContingentClaim,
        role: Role,
        bracket: (f64, f64),
    ) -> Result<Self> {
        let u_star = indirect_utility(
            model,
            agent.utility,
            agent.initial_wealth,
            beliefs,
            Position::None,
        )?;
        Ok(Self {
            model: model.clone(),
            utility: agent.utility,
            wealth: agent.initial_wealth,
            beliefs: beliefs.to_vec(),
            claim: claim.clone(),
            role,
            u_star,
            bracket,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.bracket
    }

    pub fn optimal_utility(&self) -> f64 {
        self.u_star
    }

    /// Utility gap at price `p`; `+inf` when the traded position leaves the
    /// utility domain.
    pub fn utility_gap(&self, p: f64) -> Result<f64> {
        let (wealth, position) = match self.role {
            Role::Seller => (self.wealth + p, Position::Short(&self.claim)),
            Role::Buyer => (self.wealth - p, Position::Long(&self.claim)),
        };
        match indirect_utility(&self.model, self.utility, wealth, &self.beliefs, position) {
            Ok(u) => Ok(self.u_star - u),
            Err(Error::Domain(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Largest utility gap available inside the bracket.
    pub fn max_risk(&self) -> Result<f64> {
        match self.role {
            Role::Seller => self.utility_gap(self.bracket.0),
            Role::Buyer => self.utility_gap(self.bracket.1),
        }
    }

    /// Solves `gap(p) = target` without restricting the sign of `target`.
    pub(crate) fn solve_gap(&self, target: f64) -> Result<f64> {
        let (lo, hi) = self.bracket;
        brent(|p| Ok(self.utility_gap(p)? - target), lo, hi, PRICE_XTOL)
    }

    pub fn indifference_price(&self) -> Result<f64> {
        self.solve_gap(0.0)
    }

    /// `P_S(eps)` or `P_B(eps)` depending on the role.
    pub fn price_at_risk(&self, eps: f64) -> Result<f64> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!(
                "risk level must be finite and >= 0, got {eps}"
            )));
        }
        match self.solve_gap(eps) {
            Err(Error::Bracket { .. }) => {
                let max = self.max_risk()?;
                if eps >= max {
                    Err(Error::RiskTooLarge { eps, max })
                } else {
                    Err(Error::Bracket {
                        lo: self.bracket.0,
                        hi: self.bracket.1,
                        f_lo: self.utility_gap(self.bracket.0)? - eps,
                        f_hi: self.utility_gap(self.bracket.1)? - eps,
                    })
                }
            }
            other => other,
        }
    }
}

pub fn indifference_price(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
) -> Result<f64> {
    Pricer::new(model, agent, claim, role)?.indifference_price()
}

pub fn price_at_risk(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
    eps: f64,
) -> Result<f64> {
    Pricer::new(model, agent, claim, role)?.price_at_risk(eps)
}

/// Indifference price with the agent's beliefs replaced by `q`.
///
/// Boundary measures are admitted. When they make the portfolio problem
/// unbounded (a state where a risky asset loses is given zero weight), the
/// measure is pulled toward the barycenter by `1e-6` and priced there.
pub fn price_at_belief(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
    q: &BeliefMeasure,
) -> Result<f64> {
    price_at_weights(model, agent, claim, role, q.weights())
}

pub(crate) fn price_at_weights(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
    q: &[f64],
) -> Result<f64> {
    let bracket = pricing_bracket(model, claim)?;
    price_at_weights_in(model, agent, claim, role, q, bracket)
}

/// Band padded by `1 + spread`: the root bracket for every pricing equation.
pub fn pricing_bracket(model: &MarketModel, claim: &ContingentClaim) -> Result<(f64, f64)> {
    if claim.len() != model.n_states() {
        return Err(Error::Dimension(format!(
            "claim has {} states, market has {}",
            claim.len(),
            model.n_states()
        )));
    }
    let band = price_band(model, claim)?;
    let m = 1.0 + claim.spread();
    Ok((band.lower - m, band.upper + m))
}

pub(crate) fn price_at_weights_in(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
    q: &[f64],
    bracket: (f64, f64),
) -> Result<f64> {
    let attempt = |w: &[f64]| {
        Pricer::with_bracket(model, agent, w, claim, role, bracket)?.indifference_price()
    };
    match attempt(q) {
        Err(Error::UnboundedUtility(_)) | Err(Error::NonConvergence(_))
            if q.contains(&0.0) =>
        {
            let k = q.len() as f64;
            let pulled: Vec<f64> = q.iter().map(|v| (1.0 - 1e-6) * v + 1e-6 / k).collect();
            attempt(&pulled)
        }
        other => other,
    }
}
