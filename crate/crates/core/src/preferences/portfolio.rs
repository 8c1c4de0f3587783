//! Expected-utility portfolio choice under the budget `sum pi = 1`.
//!
//! Money amounts `x_j` placed in the risky assets `j >= 2` are the free
//! variables; the remainder sits in the riskless asset. Terminal wealth in
//! state `i` is
//!
//! ```text
//!   W_1(i) = W_0 (1 + r) + sum_j x_j G_j(i) + c(i),   G_j(i) = d_j(i)/p_j - (1 + r)
//! ```
//!
//! where `c` is the claim cash flow (`-F` when short, `+F` when long). The
//! objective is concave in `x`, so damped Newton with backtracking converges
//! from any point inside the wealth domain.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{ContingentClaim, MarketModel};
use crate::numeric::LinearProgram;
use crate::preferences::utility::{AgentSpec, UtilitySpec};

const MAX_NEWTON: usize = 200;

/// Position in the contingent claim held alongside the market portfolio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position<'a> {
    None,
    Short(&'a ContingentClaim),
    Long(&'a ContingentClaim),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioSolution {
    /// Wealth proportions `pi`; absent when initial wealth is zero.
    pub proportions: Option<Vec<f64>>,
    /// Money invested in each asset (riskless first).
    pub amounts: Vec<f64>,
    pub expected_utility: f64,
    /// Largest absolute partial derivative at the optimum, relative to the
    /// expected marginal utility of wealth.
    pub gradient_residual: f64,
    pub iterations: usize,
}

/// The concave program behind [`optimize_portfolio`], exposed for
/// derivative checks.
#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    utility: UtilitySpec,
    wealth: f64,
    // states with zero belief weight are dropped
    weights: Vec<f64>,
    base: Vec<f64>,
    gains: Vec<Vec<f64>>,
    n_risky: usize,
}

impl PortfolioProblem {
    pub fn new(
        model: &MarketModel,
        utility: UtilitySpec,
        wealth: f64,
        beliefs: &[f64],
        position: Position,
    ) -> Result<Self> {
        utility.validate()?;
        let k = model.n_states();
        if beliefs.len() != k {
            return Err(Error::Dimension(format!(
                "beliefs have {} states, market has {k}",
                beliefs.len()
            )));
        }
        let cash = |i: usize| match position {
            Position::None => 0.0,
            Position::Short(f) => -f.payoff[i],
            Position::Long(f) => f.payoff[i],
        };
        if let Position::Short(f) | Position::Long(f) = position {
            if f.len() != k {
                return Err(Error::Dimension(format!(
                    "claim has {} states, market has {k}",
                    f.len()
                )));
            }
        }
        let n_risky = model.n_assets() - 1;
        let (mut weights, mut base, mut gains) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &q) in beliefs.iter().enumerate() {
            if q > 0.0 {
                weights.push(q);
                base.push(wealth * model.growth() + cash(i));
                gains.push(
                    (1..model.n_assets())
                        .map(|j| model.excess_gain(i, j))
                        .collect(),
                );
            }
        }
        Ok(Self {
            utility,
            wealth,
            weights,
            base,
            gains,
            n_risky,
        })
    }

    pub fn dimension(&self) -> usize {
        self.n_risky
    }

    fn terminal(&self, x: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let x = x.to_vec();
        self.base
            .iter()
            .zip(&self.gains)
            .map(move |(b, g)| b + g.iter().zip(&x).map(|(gj, xj)| gj * xj).sum::<f64>())
    }

    /// Expected utility at risky amounts `x` (`-inf` outside the domain).
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terminal(x)
            .zip(&self.weights)
            .map(|(w, q)| q * self.utility.value(w))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_risky];
        for ((w, q), gi) in self.terminal(x).zip(&self.weights).zip(&self.gains) {
            let m = q * self.utility.marginal(w);
            g.iter_mut().zip(gi).for_each(|(gj, a)| *gj += m * a);
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n_risky;
        let mut h = vec![vec![0.0; n]; n];
        for ((w, q), gi) in self.terminal(x).zip(&self.weights).zip(&self.gains) {
            let c = q * self.utility.curvature(w);
            for a in 0..n {
                for b in 0..n {
                    h[a][b] += c * gi[a] * gi[b];
                }
            }
        }
        h
    }

    fn marginal_scale(&self, x: &[f64]) -> f64 {
        self.terminal(x)
            .zip(&self.weights)
            .map(|(w, q)| q * self.utility.marginal(w))
            .sum::<f64>()
            .max(f64::MIN_POSITIVE)
    }

    /// `E[|U(W_1)|]`, the scale of rounding in [`Self::value`].
    fn value_magnitude(&self, x: &[f64]) -> f64 {
        self.terminal(x)
            .zip(&self.weights)
            .map(|(w, q)| q * self.utility.value(w).abs())
            .sum()
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        !self.utility.positive_wealth_only() || self.terminal(x).all(|w| w > 0.0)
    }

    /// A point with strictly positive terminal wealth in every state, found
    /// by maximizing the smallest terminal wealth (capped at 1).
    fn feasible_start(&self) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.n_risky];
        if self.in_domain(&zero) {
            return Ok(zero);
        }
        let n = self.n_risky;
        let mut cost = vec![0.0; n + 1];
        cost[n] = 1.0;
        let mut lp = LinearProgram::new(cost);
        for j in 0..=n {
            lp = lp.free_var(j);
        }
        for (b, g) in self.base.iter().zip(&self.gains) {
            // t - G x <= b
            let mut row: Vec<f64> = g.iter().map(|v| -v).collect();
            row.push(1.0);
            lp = lp.inequality(row, *b);
        }
        let mut cap = vec![0.0; n + 1];
        cap[n] = 1.0;
        lp = lp.inequality(cap, 1.0);
        let sol = lp.maximize()?;
        if sol.objective <= 0.0 {
            return Err(Error::Domain(format!(
                "terminal wealth cannot be made positive in every state (best worst-case {:.3e})",
                sol.objective
            )));
        }
        Ok(sol.x[..n].to_vec())
    }

    /// Damped Newton ascent; returns the optimal risky amounts.
    pub fn solve(&self) -> Result<(Vec<f64>, f64, f64, usize)> {
        let n = self.n_risky;
        if n == 0 {
            let v = self.value(&[]);
            if v == f64::NEG_INFINITY {
                return Err(Error::Domain(
                    "riskless terminal wealth outside utility domain".into(),
                ));
            }
            return Ok((Vec::new(), v, 0.0, 0));
        }
        let mut x = self.feasible_start()?;
        let mut fx = self.value(&x);
        let scale_x =
            1.0 + self.wealth.abs() + self.base.iter().map(|b| b.abs()).fold(0.0, f64::max);
        let limit = 1e8 * scale_x;
        for iter in 0..MAX_NEWTON {
            if x.iter().map(|v| v.abs()).fold(0.0, f64::max) > limit {
                return Err(Error::UnboundedUtility(format!(
                    "positions exceed {limit:.1e} after {iter} Newton steps"
                )));
            }
            let g = self.gradient(&x);
            let resid = g.iter().map(|v| v.abs()).fold(0.0, f64::max) / self.marginal_scale(&x);
            if resid <= 1e-12 {
                return Ok((x, fx, resid, iter));
            }
            let h = self.hessian(&x);
            let neg_h = DMatrix::from_fn(n, n, |a, b| -h[a][b]);
            let gv = DVector::from_vec(g.clone());
            let dir = match neg_h.clone().cholesky() {
                Some(ch) => ch.solve(&gv),
                None => {
                    // flat directions (e.g. zero-weight states removed): regularize
                    let ridge = 1e-12 * (1.0 + neg_h.abs().max());
                    match (neg_h + DMatrix::identity(n, n) * ridge).cholesky() {
                        Some(ch) => ch.solve(&gv),
                        None => gv.clone(),
                    }
                }
            };
            let slope: f64 = dir.dot(&gv);
            let mut step = 1.0;
            let mut accepted = false;
            // Near the optimum the predicted gain can drop below the rounding
            // level of E[U]; the value test is then noise, so a full step is
            // judged by the gradient instead.
            if slope <= 1e3 * f64::EPSILON * self.value_magnitude(&x) {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + d).collect();
                if self.in_domain(&trial) {
                    let gt = self.gradient(&trial);
                    let rt = gt.iter().map(|v| v.abs()).fold(0.0, f64::max)
                        / self.marginal_scale(&trial);
                    if rt < resid {
                        fx = self.value(&trial);
                        x = trial;
                        continue;
                    }
                }
            }
            for _ in 0..60 {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(dir.iter())
                    .map(|(a, d)| a + step * d)
                    .collect();
                if self.in_domain(&trial) {
                    let ft = self.value(&trial);
                    if ft.is_finite() && ft >= fx + 1e-4 * step * slope {
                        x = trial;
                        fx = ft;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // no ascent possible at machine precision
                let g = self.gradient(&x);
                let resid = g.iter().map(|v| v.abs()).fold(0.0, f64::max) / self.marginal_scale(&x);
                if resid <= 1e-8 {
                    return Ok((x, fx, resid, iter));
                }
                return Err(Error::NonConvergence(format!(
                    "line search stalled with gradient residual {resid:.3e}"
                )));
            }
        }
        let g = self.gradient(&x);
        let resid = g.iter().map(|v| v.abs()).fold(0.0, f64::max) / self.marginal_scale(&x);
        if resid <= 1e-8 {
            return Ok((x, fx, resid, MAX_NEWTON));
        }
        Err(Error::UnboundedUtility(format!(
            "Newton iteration limit reached with gradient residual {resid:.3e}"
        )))
    }
}

/// Maximizes `E_Q[U(W_1)]` for an agent, optionally holding a claim position.
pub fn optimize_portfolio(
    model: &MarketModel,
    agent: &AgentSpec,
    position: Position,
) -> Result<PortfolioSolution> {
    optimize_with(
        model,
        agent.utility,
        agent.initial_wealth,
        agent.beliefs.weights(),
        position,
    )
}

pub(crate) fn optimize_with(
    model: &MarketModel,
    utility: UtilitySpec,
    wealth: f64,
    beliefs: &[f64],
    position: Position,
) -> Result<PortfolioSolution> {
    let problem = PortfolioProblem::new(model, utility, wealth, beliefs, position)?;
    let (x, value, resid, iterations) = problem.solve()?;
    let risky: f64 = x.iter().sum();
    let mut amounts = Vec::with_capacity(model.n_assets());
    amounts.push(wealth - risky);
    amounts.extend_from_slice(&x);
    let proportions = (wealth != 0.0).then(|| amounts.iter().map(|a| a / wealth).collect());
    Ok(PortfolioSolution {
        proportions,
        amounts,
        expected_utility: value,
        gradient_residual: resid,
        iterations,
    })
}

/// Maximum expected utility only.
pub(crate) fn indirect_utility(
    model: &MarketModel,
    utility: UtilitySpec,
    wealth: f64,
    beliefs: &[f64],
    position: Position,
) -> Result<f64> {
    let problem = PortfolioProblem::new(model, utility, wealth, beliefs, position)?;
    Ok(problem.solve()?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::BeliefMeasure;
    use approx::assert_abs_diff_eq;

    fn three_state() -> MarketModel {
        MarketModel::new(
            0.0,
            vec![1.0, 1.0],
            vec![vec![1.0, 2.0], vec![1.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap()
    }

    fn agent(u: UtilitySpec, w: f64, q: Vec<f64>) -> AgentSpec {
        AgentSpec::new(u, w, BeliefMeasure::new(q).unwrap()).unwrap()
    }

    #[test]
    fn risk_neutral_beliefs_hold_only_the_bond() {
        for u in [
            UtilitySpec::Exponential { gamma: 1.5 },
            UtilitySpec::Log,
            UtilitySpec::Power { eta: 2.0 },
        ] {
            let a = agent(u, 2.0, vec![0.25, 0.5, 0.25]);
            let sol = optimize_portfolio(&three_state(), &a, Position::None).unwrap();
            let pi = sol.proportions.unwrap();
            assert_abs_diff_eq!(pi[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(pi[1], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn riskless_only_market_has_single_portfolio() {
        let m = MarketModel::riskless_only(0.1, 2).unwrap();
        let a = agent(UtilitySpec::Log, 3.0, vec![0.3, 0.7]);
        let sol = optimize_portfolio(&m, &a, Position::None).unwrap();
        assert_eq!(sol.proportions.unwrap(), vec![1.0]);
        assert_abs_diff_eq!(sol.expected_utility, (3.0f64 * 1.1).ln(), epsilon = 1e-14);
    }

    #[test]
    fn exponential_matches_grid_oracle() {
        let m = three_state();
        let a = agent(
            UtilitySpec::Exponential { gamma: 1.0 },
            1.0,
            vec![0.5, 0.25, 0.25],
        );
        let sol = optimize_portfolio(&m, &a, Position::None).unwrap();
        let pi2 = sol.proportions.unwrap()[1];

        // 1-D grid search on pi_2, then successive grid refinement
        let eu = |pi2: f64| {
            let w = [1.0 + pi2, 1.0, 1.0 - pi2];
            0.5 * -(-w[0]).exp() + 0.25 * -(-w[1]).exp() + 0.25 * -(-w[2]).exp()
        };
        let (mut lo, mut hi) = (-5.0, 5.0);
        let mut best = 0.0;
        for _ in 0..12 {
            let h = (hi - lo) / 100.0;
            best = (0..=100)
                .map(|k| lo + h * k as f64)
                .max_by(|a, b| eu(*a).total_cmp(&eu(*b)))
                .unwrap();
            lo = best - 2.0 * h;
            hi = best + 2.0 * h;
        }
        assert_abs_diff_eq!(pi2, best, epsilon = 1e-6);
        // closed form: 0.5 e^{-x} = 0.25 e^{x}  =>  x = ln(2)/2
        assert_abs_diff_eq!(pi2, 0.5 * 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn log_utility_with_short_claim_respects_domain() {
        let m = three_state();
        let f = ContingentClaim::new(vec![0.0, 0.0, 1.5]).unwrap();
        let a = agent(UtilitySpec::Log, 1.0, vec![0.4, 0.3, 0.3]);
        // at x = 0 wealth in state 3 is -0.5; the LP start must repair it
        let sol = optimize_portfolio(&m, &a, Position::Short(&f)).unwrap();
        assert!(sol.expected_utility.is_finite());
        assert!(sol.gradient_residual <= 1e-8);
    }

    #[test]
    fn domain_error_when_wealth_cannot_be_positive() {
        let m = MarketModel::riskless_only(0.0, 2).unwrap();
        let f = ContingentClaim::new(vec![5.0, 0.0]).unwrap();
        let a = agent(UtilitySpec::Log, 1.0, vec![0.5, 0.5]);
        let err = optimize_portfolio(&m, &a, Position::Short(&f)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn arbitrage_beliefs_are_unbounded() {
        // zero weight on the only state where the risky asset loses
        let m = three_state();
        let problem =
            PortfolioProblem::new(&m, UtilitySpec::Log, 1.0, &[0.5, 0.5, 0.0], Position::None)
                .unwrap();
        assert!(matches!(
            problem.solve(),
            Err(Error::UnboundedUtility(_)) | Err(Error::NonConvergence(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = MarketModel::new(
            0.02,
            vec![1.0 / 1.02, 0.9, 1.1],
            vec![
                vec![1.0, 1.3, 0.8],
                vec![1.0, 0.8, 1.4],
                vec![1.0, 1.0, 1.2],
                vec![1.0, 0.6, 1.0],
            ],
        )
        .unwrap();
        let f = ContingentClaim::new(vec![0.5, 0.0, 0.2, 0.1]).unwrap();
        for u in [
            UtilitySpec::Exponential { gamma: 0.7 },
            UtilitySpec::Power { eta: 2.5 },
            UtilitySpec::Log,
        ] {
            let p = PortfolioProblem::new(&m, u, 3.0, &[0.1, 0.2, 0.3, 0.4], Position::Short(&f))
                .unwrap();
            for x in [[0.1, -0.2], [0.4, 0.3], [-0.3, 0.05]] {
                let g = p.gradient(&x);
                for j in 0..2 {
                    let h = 1e-6;
                    let mut a = x;
                    let mut b = x;
                    a[j] += h;
                    b[j] -= h;
                    let fd = (p.value(&a) - p.value(&b)) / (2.0 * h);
                    assert!(
                        (g[j] - fd).abs() <= 1e-5 * g[j].abs().max(1e-3),
                        "{u:?} {x:?} {j}"
                    );
                }
            }
        }
    }
}
