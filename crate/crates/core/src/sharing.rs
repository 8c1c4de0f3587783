//! Optimal risk sharing between seller and buyer.
//!
//! Primal: minimize `lambda eps_S + (1 - lambda) eps_B` subject to
//! `P_S(eps_S) <= P_B(eps_B)`. At the optimum the constraint binds, so the
//! search runs along the frontier `P_S(eps_S) = P_B(eps_B) = P`, a
//! one-dimensional problem in the common price `P`.
//!
//! Dual: maximize `P_B(eps_B) - P_S(eps_S)` subject to
//! `lambda eps_S + (1 - lambda) eps_B <= w`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::minimize::{descend_from, scan_then_golden};
use crate::numeric::roots::brent;
use crate::preferences::curves::PriceCurvePair;

const SCAN_SAMPLES: usize = 65;

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub lambda: f64,
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl SharingConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            budget: None,
            tolerance: default_tolerance(),
        }
    }

    pub fn with_budget(mut self, w: f64) -> Self {
        self.budget = Some(w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if let Some(w) = self.budget {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "risk budget must be positive, got {w}"
                )));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingSolution {
    pub eps_seller: f64,
    pub eps_buyer: f64,
    pub price: f64,
    /// `lambda eps_S + (1 - lambda) eps_B`
    pub objective: f64,
    /// `P_S(eps_S) - P_B(eps_B)`
    pub price_gap: f64,
    pub multiplier: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub multiplier: f64,
    /// `lambda + mu dP_S/deps_S`
    pub seller_stationarity: f64,
    /// `(1 - lambda) - mu dP_B/deps_B`
    pub buyer_stationarity: f64,
    /// `eps_S (seller term) + eps_B (buyer term) + mu |P_S - P_B|`
    pub complementarity: f64,
    /// `max(0, P_S - P_B)`
    pub primal_violation: f64,
    pub max_violation: f64,
}

/// Least-squares multiplier for the two stationarity relations.
fn fit_multiplier(lambda: f64, a: f64, b: f64) -> f64 {
    if !a.is_finite() || !b.is_finite() || a * a + b * b == 0.0 {
        return 0.0;
    }
    ((-lambda * a + (1.0 - lambda) * b) / (a * a + b * b)).max(0.0)
}

/// First-order conditions at `(eps_S, eps_B)`; `mu = 0` when the constraint
/// is slack.
///
/// A risk held at zero only needs a nonnegative stationarity term (its bound
/// multiplier absorbs the rest). With both risks positive the multiplier is
/// fitted by least squares; with one, it is solved from that equation.
pub fn kkt_residuals(
    curves: &PriceCurvePair,
    eps_s: f64,
    eps_b: f64,
    lambda: f64,
) -> Result<KktReport> {
    let gap = curves.gap(eps_s, eps_b)?;
    let slack = gap < -1e-9;
    let (a, b) = if slack {
        (0.0, 0.0)
    } else {
        (
            curves.seller.derivative(eps_s)?,
            curves.buyer.derivative(eps_b)?,
        )
    };
    let (free_s, free_b) = (eps_s > 0.0, eps_b > 0.0);
    let mu = match (slack, free_s, free_b) {
        (true, _, _) | (false, false, false) => 0.0,
        (false, true, true) => fit_multiplier(lambda, a, b),
        (false, true, false) if a < 0.0 => lambda / -a,
        (false, false, true) if b > 0.0 => (1.0 - lambda) / b,
        _ => 0.0,
    };
    let term = |m: f64, d: f64| if m == 0.0 { 0.0 } else { m * d };
    let s = lambda + term(mu, a);
    let t = (1.0 - lambda) - term(mu, b);
    let residual = |free: bool, v: f64| if free { v.abs() } else { (-v).max(0.0) };
    let comp = (eps_s * s).abs() + (eps_b * t).abs() + (mu * gap).abs();
    let primal = gap.max(0.0);
    let max_violation = residual(free_s, s)
        .max(residual(free_b, t))
        .max(comp)
        .max(primal);
    Ok(KktReport {
        multiplier: mu,
        seller_stationarity: s,
        buyer_stationarity: t,
        complementarity: comp,
        primal_violation: primal,
        max_violation,
    })
}

/// The binding frontier parameterized by the common price.
pub struct Frontier<'a> {
    curves: &'a PriceCurvePair,
    lambda: f64,
    lo: f64,
    hi: f64,
}

impl<'a> Frontier<'a> {
    pub fn new(curves: &'a PriceCurvePair, lambda: f64) -> Result<Self> {
        let lo = curves.buyer_price(0.0)?;
        let hi = curves.seller_price(0.0)?;
        Ok(Self {
            curves,
            lambda,
            lo,
            hi,
        })
    }

    /// `[P_B(0), P_S(0)]`
    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Risk pair that makes both agents quote `price`.
    pub fn point(&self, price: f64) -> Result<(f64, f64)> {
        Ok((
            self.curves.seller.inverse(price)?,
            self.curves.buyer.inverse(price)?,
        ))
    }

    /// Total weighted risk at `price`; `+inf` where a curve cannot reach it.
    pub fn objective(&self, price: f64) -> Result<f64> {
        match self.point(price) {
            Ok((s, b)) => Ok(self.lambda * s + (1.0 - self.lambda) * b),
            Err(Error::OutOfRange { .. }) | Err(Error::RiskTooLarge { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Slope of the objective, `lambda / P_S' + (1 - lambda) / P_B'`.
    fn slope(&self, price: f64) -> Result<f64> {
        let (s, b) = self.point(price)?;
        let ds = self.curves.seller.derivative(s)?;
        let db = self.curves.buyer.derivative(b)?;
        if ds >= 0.0 || db <= 0.0 {
            return Err(Error::NonMonotoneCurve(format!(
                "curve derivatives ({ds:.3e}, {db:.3e}) at price {price}"
            )));
        }
        Ok(self.lambda / ds + (1.0 - self.lambda) / db)
    }

    /// Local minimization from `p0`.
    pub fn minimize_from(&self, p0: f64) -> Result<f64> {
        let (x, _) = descend_from(|p| self.objective(p), p0, self.lo, self.hi, 1e-12)?;
        self.refine(x)
    }

    /// Polishes a golden-section estimate with a root of the slope.
    fn refine(&self, x: f64) -> Result<f64> {
        let span = self.hi - self.lo;
        let h = 1e-6 * span;
        let (a, b) = ((x - h).max(self.lo), (x + h).min(self.hi));
        let slope = |p: f64| self.slope(p);
        match (slope(a), slope(b)) {
            (Ok(sa), Ok(sb)) if sa < 0.0 && sb > 0.0 => {
                let root = brent(slope, a, b, 1e-15)?;
                let (fx, fr) = (self.objective(x)?, self.objective(root)?);
                Ok(if fr <= fx { root } else { x })
            }
            _ => Ok(x),
        }
    }

    pub fn minimize(&self) -> Result<f64> {
        let (x, fx) =
            scan_then_golden(|p| self.objective(p), self.lo, self.hi, SCAN_SAMPLES, 1e-12)?;
        if !fx.is_finite() {
            return Err(Error::EmptyFrontier(format!(
                "no common price in [{}, {}] is reachable by both curves",
                self.lo, self.hi
            )));
        }
        self.refine(x)
    }
}

fn package(
    curves: &PriceCurvePair,
    lambda: f64,
    eps_s: f64,
    eps_b: f64,
    price: f64,
) -> Result<SharingSolution> {
    let kkt = kkt_residuals(curves, eps_s, eps_b, lambda)?;
    Ok(SharingSolution {
        eps_seller: eps_s,
        eps_buyer: eps_b,
        price,
        objective: lambda * eps_s + (1.0 - lambda) * eps_b,
        price_gap: curves.gap(eps_s, eps_b)?,
        multiplier: kkt.multiplier,
        kkt_residual: kkt.max_violation,
    })
}

/// Minimum-total-risk allocation that makes trade possible.
///
/// When the zero-risk prices already allow trade the allocation is `(0, 0)`
/// and the price is the midpoint of the two zero-risk quotes.
pub fn solve_primal(curves: &PriceCurvePair, cfg: &SharingConfig) -> Result<SharingSolution> {
    cfg.validate()?;
    let frontier = Frontier::new(curves, cfg.lambda)?;
    let (pb0, ps0) = frontier.interval();
    if ps0 <= pb0 {
        return package(curves, cfg.lambda, 0.0, 0.0, 0.5 * (ps0 + pb0));
    }
    let p = frontier.minimize()?;
    let (s, b) = frontier.point(p)?;
    package(curves, cfg.lambda, s, b, p)
}

/// Largest price surplus `P_B - P_S` attainable within the risk budget.
pub fn solve_dual(curves: &PriceCurvePair, cfg: &SharingConfig) -> Result<SharingSolution> {
    cfg.validate()?;
    let w = cfg
        .budget
        .ok_or_else(|| Error::InvalidInput("dual problem needs a risk budget".into()))?;
    let lambda = cfg.lambda;
    let split = |t: f64| (t, ((w - lambda * t) / (1.0 - lambda)).max(0.0));
    let neg_surplus = |t: f64| {
        let (s, b) = split(t);
        match curves.gap(s, b) {
            Ok(g) => Ok(g),
            Err(Error::OutOfRange { .. }) | Err(Error::RiskTooLarge { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let (t, v) = scan_then_golden(neg_surplus, 0.0, w / lambda, SCAN_SAMPLES, 1e-13)?;
    if !v.is_finite() {
        return Err(Error::EmptyFrontier(format!(
            "no point of the budget line w = {w} is in both curve domains"
        )));
    }
    let (s, b) = split(t);
    let ps = curves.seller_price(s)?;
    let pb = curves.buyer_price(b)?;
    package(curves, lambda, s, b, 0.5 * (ps + pb))
}

/// Primal solutions over a grid of weights, in input order.
pub fn lambda_sweep(curves: &PriceCurvePair, lambdas: &[f64]) -> Result<Vec<SharingSolution>> {
    lambdas
        .par_iter()
        .map(|&l| solve_primal(curves, &SharingConfig::new(l)))
        .collect()
}
