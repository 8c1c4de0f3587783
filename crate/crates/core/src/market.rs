//! One-period market: `N` traded assets over `K` states, riskless asset first.
//!
//! The set of equivalent risk-neutral measures is
//! `{q > 0, sum q = 1, D^T q = (1 + r) p}`; its closure drives the
//! no-arbitrage price band of any contingent claim.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, LinearProgram};

/// Singular values at or below this (relative to the largest) count as rank loss.
pub const RANK_TOL: f64 = 1e-10;
/// Minimum interior weight for a measure to count as strictly positive.
pub const ARBITRAGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub riskless_rate: f64,
    pub prices: Vec<f64>,
    /// Row `i` is state `i`, column `j` is asset `j`.
    pub payoffs: Vec<Vec<f64>>,
}

impl MarketModel {
    pub fn new(riskless_rate: f64, prices: Vec<f64>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self {
            riskless_rate,
            prices,
            payoffs,
        };
        m.check_shape()?;
        Ok(m)
    }

    /// Market with only the riskless bond over `n_states` states.
    pub fn riskless_only(riskless_rate: f64, n_states: usize) -> Result<Self> {
        Self::new(
            riskless_rate,
            vec![1.0 / (1.0 + riskless_rate)],
            vec![vec![1.0]; n_states],
        )
    }

    pub fn check_shape(&self) -> Result<()> {
        let n = self.prices.len();
        if n == 0 || self.payoffs.is_empty() {
            return Err(Error::Dimension(
                "market needs at least one asset and one state".into(),
            ));
        }
        if let Some((i, row)) = self.payoffs.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Dimension(format!(
                "payoff row {i} has {} entries for {n} assets",
                row.len()
            )));
        }
        let finite = self.riskless_rate.is_finite()
            && self.prices.iter().all(|p| p.is_finite())
            && self.payoffs.iter().flatten().all(|d| d.is_finite());
        if !finite {
            return Err(Error::InvalidInput(
                "market contains non-finite numbers".into(),
            ));
        }
        if self.riskless_rate <= -1.0 {
            return Err(Error::InvalidInput("riskless rate must exceed -1".into()));
        }
        Ok(())
    }

    pub fn n_assets(&self) -> usize {
        self.prices.len()
    }

    pub fn n_states(&self) -> usize {
        self.payoffs.len()
    }

    pub fn growth(&self) -> f64 {
        1.0 + self.riskless_rate
    }

    pub fn payoff(&self, state: usize, asset: usize) -> f64 {
        self.payoffs[state][asset]
    }

    pub fn column(&self, asset: usize) -> Vec<f64> {
        self.payoffs.iter().map(|row| row[asset]).collect()
    }

    /// Excess gain per unit of money invested in asset `j`, state by state:
    /// `d_j(w_i) / p_j - (1 + r)`.
    pub fn excess_gain(&self, state: usize, asset: usize) -> f64 {
        self.payoffs[state][asset] / self.prices[asset] - self.growth()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states(), self.n_assets(), |i, j| self.payoffs[i][j])
    }

    /// Rows of the pricing constraints `D^T q = (1 + r) p`.
    fn pricing_rows(&self) -> Vec<(Vec<f64>, f64)> {
        (0..self.n_assets())
            .map(|j| (self.column(j), self.growth() * self.prices[j]))
            .collect()
    }
}

/// A probability vector over the states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BeliefMeasure {
    weights: Vec<f64>,
}

impl BeliefMeasure {
    /// Strictly positive measure; sums to one within 1e-12.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::check(&weights, false)?;
        Ok(Self { weights })
    }

    /// Closed-simplex measure (zeros allowed), used by extreme-value searches.
    pub fn boundary(weights: Vec<f64>) -> Result<Self> {
        Self::check(&weights, true)?;
        Ok(Self { weights })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    fn check(w: &[f64], allow_zero: bool) -> Result<()> {
        if w.is_empty() {
            return Err(Error::InvalidInput("empty belief vector".into()));
        }
        let bad = w
            .iter()
            .any(|&q| !q.is_finite() || q < 0.0 || (!allow_zero && q == 0.0));
        if bad {
            return Err(Error::InvalidInput(format!(
                "belief weights not admissible: {w:?}"
            )));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "belief weights sum to {s}, not 1"
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&q| q > 0.0)
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        dot(&self.weights, values)
    }
}

impl TryFrom<Vec<f64>> for BeliefMeasure {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<BeliefMeasure> for Vec<f64> {
    fn from(q: BeliefMeasure) -> Self {
        q.weights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingentClaim {
    pub payoff: Vec<f64>,
}

impl ContingentClaim {
    pub fn new(payoff: Vec<f64>) -> Result<Self> {
        if payoff.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("claim payoff must be finite".into()));
        }
        Ok(Self { payoff })
    }

    pub fn len(&self) -> usize {
        self.payoff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payoff.is_empty()
    }

    pub fn spread(&self) -> f64 {
        let max = self
            .payoff
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self.payoff.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn scaled(&self, a: f64, c: f64) -> Self {
        Self {
            payoff: self.payoff.iter().map(|x| a * x + c).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBand {
    pub lower: f64,
    pub upper: f64,
}

impl PriceBand {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, p: f64, tol: f64) -> bool {
        p >= self.lower - tol && p <= self.upper + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ones_column: bool,
    pub riskless_price: bool,
    pub full_rank: bool,
    pub incomplete: bool,
    pub positive_prices: bool,
    pub rank: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.ones_column
            && self.riskless_price
            && self.full_rank
            && self.incomplete
            && self.positive_prices
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let checks = [
            (self.ones_column, "first payoff column is not all ones"),
            (self.riskless_price, "first price differs from 1/(1+r)"),
            (
                self.full_rank,
                "payoff matrix is column-rank deficient (redundant asset)",
            ),
            (self.incomplete, "market is not incomplete (N >= K)"),
            (
                self.positive_prices,
                "asset prices must be strictly positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                out.push(msg);
            }
        }
        out
    }
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax.max(1.0)).count()
}

pub fn validate_market(model: &MarketModel) -> ValidationReport {
    let ones_column = model.payoffs.iter().all(|row| row[0] == 1.0);
    let riskless_price = (model.prices[0] - 1.0 / model.growth()).abs() <= 1e-12;
    let rank = matrix_rank(&model.matrix());
    ValidationReport {
        ones_column,
        riskless_price,
        full_rank: rank == model.n_assets(),
        incomplete: model.n_assets() < model.n_states(),
        positive_prices: model.prices.iter().all(|&p| p > 0.0),
        rank,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageCheck {
    pub arbitrage_free: bool,
    /// Largest achievable smallest weight over measures matching the prices.
    pub max_min_weight: f64,
    pub witness: Option<BeliefMeasure>,
}

/// Searches for a strictly positive pricing measure by maximizing its
/// smallest weight subject to `D^T q = (1 + r) p`.
pub fn arbitrage_free(model: &MarketModel) -> Result<ArbitrageCheck> {
    model.check_shape()?;
    let k = model.n_states();
    // variables: q_1..q_K >= 0, t free; maximize t with t <= q_i
    let mut cost = vec![0.0; k + 1];
    cost[k] = 1.0;
    let mut lp = LinearProgram::new(cost).free_var(k);
    for (row, rhs) in model.pricing_rows() {
        let mut r = row;
        r.push(0.0);
        lp = lp.equality(r, rhs);
    }
    for i in 0..k {
        let mut r = vec![0.0; k + 1];
        r[i] = -1.0;
        r[k] = 1.0;
        lp = lp.inequality(r, 0.0);
    }
    let sol = match lp.maximize() {
        Ok(s) => s,
        Err(Error::Infeasible) => {
            return Ok(ArbitrageCheck {
                arbitrage_free: false,
                max_min_weight: f64::NEG_INFINITY,
                witness: None,
            })
        }
        Err(e) => return Err(e),
    };
    let t = sol.objective;
    if t <= ARBITRAGE_TOL {
        return Ok(ArbitrageCheck {
            arbitrage_free: false,
            max_min_weight: t,
            witness: None,
        });
    }
    let mut q: Vec<f64> = sol.x[..k].to_vec();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= s);
    Ok(ArbitrageCheck {
        arbitrage_free: true,
        max_min_weight: t,
        witness: Some(BeliefMeasure::new(q)?),
    })
}

/// Discounted expectation `E_q[F] / (1 + r)`.
pub fn risk_neutral_price(q: &BeliefMeasure, claim: &ContingentClaim, r: f64) -> f64 {
    q.expectation(&claim.payoff) / (1.0 + r)
}

/// Lower and upper price of `claim` over the closure of the risk-neutral set.
pub fn price_band(model: &MarketModel, claim: &ContingentClaim) -> Result<PriceBand> {
    model.check_shape()?;
    if claim.len() != model.n_states() {
        return Err(Error::Dimension(format!(
            "claim has {} states, market has {}",
            claim.len(),
            model.n_states()
        )));
    }
    let cost: Vec<f64> = claim.payoff.iter().map(|f| f / model.growth()).collect();
    let mut lp = LinearProgram::new(cost);
    for (row, rhs) in model.pricing_rows() {
        lp = lp.equality(row, rhs);
    }
    let map = |e: Error| match e {
        Error::Infeasible => Error::Arbitrage,
        other => other,
    };
    let lower = lp.minimize().map_err(map)?.objective;
    let upper = lp.maximize().map_err(map)?.objective;
    Ok(PriceBand {
        lower,
        upper: upper.max(lower),
    })
}

/// Affine parameterization `q = base + B z` of the risk-neutral set, with an
/// orthonormal basis `B` of the null space of `D^T`.
#[derive(Debug, Clone)]
pub struct RiskNeutralSet {
    base: Vec<f64>,
    basis: Vec<Vec<f64>>,
    growth: f64,
    pricing: Vec<(Vec<f64>, f64)>,
}

impl RiskNeutralSet {
    pub fn new(model: &MarketModel) -> Result<Self> {
        let check = arbitrage_free(model)?;
        let witness = check.witness.ok_or(Error::Arbitrage)?;
        let k = model.n_states();
        let d = model.matrix();
        let gram = d.transpose() * &d;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("payoff matrix is rank deficient".into()))?;
        let proj = DMatrix::<f64>::identity(k, k) - &d * inv * d.transpose();
        let svd = proj.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let basis = (0..k)
            .filter(|&c| svd.singular_values[c] > 0.5)
            .map(|c| u.column(c).iter().copied().collect())
            .collect();
        Ok(Self {
            base: witness.weights().to_vec(),
            basis,
            growth: model.growth(),
            pricing: model.pricing_rows(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn point(&self, z: &[f64]) -> Vec<f64> {
        let mut q = self.base.clone();
        for (b, &zk) in self.basis.iter().zip(z) {
            q.iter_mut().zip(b).for_each(|(qi, bi)| *qi += zk * bi);
        }
        q
    }

    /// Largest violation of the pricing equalities and of nonnegativity.
    pub fn residual(&self, q: &[f64]) -> f64 {
        let eq = self
            .pricing
            .iter()
            .map(|(row, rhs)| (dot(row, q) - rhs).abs())
            .fold(0.0, f64::max);
        let neg = q.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
        eq.max(neg)
    }

    /// Orthogonal projection onto the affine hull (ignores positivity).
    pub fn project_affine(&self, v: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = v.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = self.basis.iter().map(|b| dot(b, &diff)).collect();
        self.point(&z)
    }

    /// Euclidean projection onto the closed risk-neutral set (Dykstra's
    /// alternating projections between the affine hull and the orthant).
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let k = v.len();
        let mut x = v.to_vec();
        let mut p = vec![0.0; k];
        let mut q = vec![0.0; k];
        for _ in 0..20_000 {
            let y_in: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let y = self.project_affine(&y_in);
            p = y_in.iter().zip(&y).map(|(a, b)| a - b).collect();
            let x_in: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
            let x_new: Vec<f64> = x_in.iter().map(|&a| a.max(0.0)).collect();
            q = x_in.iter().zip(&x_new).map(|(a, b)| a - b).collect();
            let change = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let gap = x_new
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            x = x_new;
            if change < 1e-15 && gap < 1e-13 {
                break;
            }
        }
        // finish on the affine hull; positivity holds to Dykstra accuracy
        self.project_affine(&x)
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    /// Box bounds of the null-space coordinates over the closed set.
    fn coordinate_box(&self) -> Result<Vec<(f64, f64)>> {
        let d = self.dimension();
        let k = self.base.len();
        (0..d)
            .map(|c| {
                let mut cost = vec![0.0; d];
                cost[c] = 1.0;
                let mut lp = LinearProgram::new(cost);
                for j in 0..d {
                    lp = lp.free_var(j);
                }
                for i in 0..k {
                    let row: Vec<f64> = self.basis.iter().map(|b| -b[i]).collect();
                    lp = lp.inequality(row, self.base[i]);
                }
                Ok((lp.minimize()?.objective, lp.maximize()?.objective))
            })
            .collect()
    }
}

/// Deterministic-in-seed strictly positive risk-neutral measures, drawn by
/// rejection sampling over the bounding box of the affine parameterization.
pub fn sample_risk_neutral(
    model: &MarketModel,
    seed: u64,
    count: usize,
) -> Result<Vec<BeliefMeasure>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let set = RiskNeutralSet::new(model)?;
    if set.dimension() == 0 {
        return Ok(vec![BeliefMeasure::new(set.base.clone())?; count]);
    }
    let bounds = set.coordinate_box()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let (mut attempts, mut accepted) = (0u64, 0u64);
    while out.len() < count {
        attempts += 1;
        let z: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        let q = set.point(&z);
        if q.iter().all(|&x| x > 0.0) {
            let s: f64 = q.iter().sum();
            if (s - 1.0).abs() <= 1e-12 {
                accepted += 1;
                out.push(BeliefMeasure::new(q)?);
                continue;
            }
        }
        if attempts >= 1_000_000 && (accepted as f64) < 1e-6 * attempts as f64 {
            return Err(Error::SamplerExhausted { attempts, accepted });
        }
    }
    Ok(out)
}
