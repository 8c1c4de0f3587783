//! Risk-parameterized price maps `eps -> P_S(eps)` and `eps -> P_B(eps)`.
//!
//! The scenario and dynamics modules only see [`PriceCurve`] handles, which
//! either wrap closed-form synthetic shapes or call back into the
//! preference-based pricer.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{ContingentClaim, MarketModel};
use crate::numeric::roots::bisect_monotone;
use crate::preferences::pricing::{Pricer, Role};
use crate::preferences::utility::AgentSpec;

pub trait PriceCurve: fmt::Debug + Send + Sync {
    fn value(&self, eps: f64) -> Result<f64>;

    /// Half-open admissible risk interval `[lo, hi)`.
    fn domain(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    fn derivative(&self, eps: f64) -> Result<f64> {
        let h = fd_step(eps);
        Ok((self.value(eps + h)? - self.value(eps - h)?) / (2.0 * h))
    }

    fn second_derivative(&self, eps: f64) -> Result<f64> {
        let h = 1e-4 * eps.abs().max(1.0);
        Ok((self.value(eps + h)? - 2.0 * self.value(eps)? + self.value(eps - h)?) / (h * h))
    }

    /// Risk level at which the curve attains `price`.
    fn inverse(&self, price: f64) -> Result<f64>;
}

pub(crate) fn fd_step(eps: f64) -> f64 {
    1e-6f64.max(1e-6 * eps.abs())
}

/// Closed-form curve shapes accepted from scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CurveSpec {
    /// `P = intercept + slope * eps`
    Affine { intercept: f64, slope: f64 },
    /// `P = intercept + coefficient * sqrt(eps)`
    Sqrt { intercept: f64, coefficient: f64 },
    /// Piecewise-linear interpolation through strictly increasing `eps` knots.
    Table { eps: Vec<f64>, price: Vec<f64> },
}

impl CurveSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CurveSpec::Affine { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() || *slope == 0.0 {
                    return Err(Error::InvalidInput(
                        "affine curve needs finite intercept and nonzero slope".into(),
                    ));
                }
            }
            CurveSpec::Sqrt {
                intercept,
                coefficient,
            } => {
                if !intercept.is_finite() || !coefficient.is_finite() || *coefficient == 0.0 {
                    return Err(Error::InvalidInput(
                        "sqrt curve needs finite intercept and nonzero coefficient".into(),
                    ));
                }
            }
            CurveSpec::Table { eps, price } => {
                if eps.len() < 2 || eps.len() != price.len() {
                    return Err(Error::InvalidInput(
                        "table curve needs >= 2 matching knots".into(),
                    ));
                }
                if eps.windows(2).any(|w| !(w[1] > w[0])) || price.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidInput(
                        "table knots must be finite and strictly increasing in eps".into(),
                    ));
                }
                let up = price.windows(2).all(|w| w[1] > w[0]);
                let down = price.windows(2).all(|w| w[1] < w[0]);
                if !up && !down {
                    return Err(Error::NonMonotoneCurve(
                        "table prices must be strictly monotone".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sign of the slope: `+1` rising, `-1` falling.
    fn direction(&self) -> f64 {
        match self {
            CurveSpec::Affine { slope, .. } => slope.signum(),
            CurveSpec::Sqrt { coefficient, .. } => coefficient.signum(),
            CurveSpec::Table { price, .. } => (price[1] - price[0]).signum(),
        }
    }

    fn segment(eps: &[f64], x: f64) -> usize {
        match eps.iter().position(|&e| e > x) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => eps.len() - 2,
        }
    }
}

impl PriceCurve for CurveSpec {
    fn value(&self, e: f64) -> Result<f64> {
        match self {
            CurveSpec::Affine { intercept, slope } => Ok(intercept + slope * e),
            CurveSpec::Sqrt {
                intercept,
                coefficient,
            } => {
                if e < 0.0 {
                    return Err(Error::OutOfRange {
                        value: e,
                        lower: 0.0,
                        upper: f64::INFINITY,
                    });
                }
                Ok(intercept + coefficient * e.sqrt())
            }
            CurveSpec::Table { eps, price } => {
                let (lo, hi) = (eps[0], eps[eps.len() - 1]);
                if e < lo || e > hi {
                    return Err(Error::OutOfRange {
                        value: e,
                        lower: lo,
                        upper: hi,
                    });
                }
                let i = Self::segment(eps, e);
                let w = (e - eps[i]) / (eps[i + 1] - eps[i]);
                Ok(price[i] + w * (price[i + 1] - price[i]))
            }
        }
    }

    fn domain(&self) -> (f64, f64) {
        match self {
            CurveSpec::Table { eps, .. } => (eps[0], eps[eps.len() - 1]),
            _ => (0.0, f64::INFINITY),
        }
    }

    fn derivative(&self, e: f64) -> Result<f64> {
        match self {
            CurveSpec::Affine { slope, .. } => Ok(*slope),
            CurveSpec::Sqrt { coefficient, .. } => {
                if e < 0.0 {
                    return Err(Error::OutOfRange {
                        value: e,
                        lower: 0.0,
                        upper: f64::INFINITY,
                    });
                }
                Ok(0.5 * coefficient / e.sqrt())
            }
            CurveSpec::Table { eps, price } => {
                let i = Self::segment(eps, e);
                Ok((price[i + 1] - price[i]) / (eps[i + 1] - eps[i]))
            }
        }
    }

    fn second_derivative(&self, e: f64) -> Result<f64> {
        match self {
            CurveSpec::Affine { .. } | CurveSpec::Table { .. } => Ok(0.0),
            CurveSpec::Sqrt { coefficient, .. } => Ok(-0.25 * coefficient / (e * e.sqrt())),
        }
    }

    fn inverse(&self, p: f64) -> Result<f64> {
        let out = |lo: f64, hi: f64| Error::OutOfRange {
            value: p,
            lower: lo,
            upper: hi,
        };
        match self {
            CurveSpec::Affine { intercept, slope } => {
                let e = (p - intercept) / slope;
                if e < 0.0 {
                    let (a, b) = if *slope > 0.0 {
                        (*intercept, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, *intercept)
                    };
                    return Err(out(a, b));
                }
                Ok(e)
            }
            CurveSpec::Sqrt {
                intercept,
                coefficient,
            } => {
                let s = (p - intercept) / coefficient;
                if s < 0.0 {
                    let (a, b) = if *coefficient > 0.0 {
                        (*intercept, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, *intercept)
                    };
                    return Err(out(a, b));
                }
                Ok(s * s)
            }
            CurveSpec::Table { eps, price } => {
                let dir = self.direction();
                let (first, last) = (price[0], price[price.len() - 1]);
                let (lo, hi) = if dir > 0.0 {
                    (first, last)
                } else {
                    (last, first)
                };
                if p < lo || p > hi {
                    return Err(out(lo, hi));
                }
                let i = (0..price.len() - 1)
                    .find(|&i| (price[i + 1] - p) * dir >= 0.0)
                    .unwrap_or(price.len() - 2);
                let w = (p - price[i]) / (price[i + 1] - price[i]);
                Ok(eps[i] + w * (eps[i + 1] - eps[i]))
            }
        }
    }
}

/// `P_S` or `P_B` computed from an agent's preferences.
///
/// The inverse is the agent's utility gap evaluated at the price, so it is
/// exact up to the portfolio solver's tolerance.
#[derive(Debug, Clone)]
pub struct DerivedCurve {
    pricer: Pricer,
    max_risk: f64,
}

impl DerivedCurve {
    pub fn new(pricer: Pricer) -> Result<Self> {
        let max_risk = pricer.max_risk()?;
        Ok(Self { pricer, max_risk })
    }

    pub fn pricer(&self) -> &Pricer {
        &self.pricer
    }

    fn checked(&self, d: f64, eps: f64) -> Result<f64> {
        if d * self.pricer.role().risk_direction() <= 0.0 {
            return Err(Error::NonMonotoneCurve(format!(
                "{:?} curve has derivative {d:.3e} at eps = {eps}",
                self.pricer.role()
            )));
        }
        Ok(d)
    }
}

impl PriceCurve for DerivedCurve {
    fn value(&self, eps: f64) -> Result<f64> {
        // negative arguments are only reached by difference stencils at 0
        if eps < 0.0 {
            return self.pricer.solve_gap(eps);
        }
        self.pricer.price_at_risk(eps)
    }

    fn domain(&self) -> (f64, f64) {
        (0.0, self.max_risk)
    }

    fn derivative(&self, eps: f64) -> Result<f64> {
        let h = fd_step(eps);
        let d = (self.value(eps + h)? - self.value(eps - h)?) / (2.0 * h);
        self.checked(d, eps)
    }

    fn inverse(&self, price: f64) -> Result<f64> {
        let g = self.pricer.utility_gap(price)?;
        if g < -1e-12 || g >= self.max_risk {
            let (lo, hi) = self.pricer.bracket();
            return Err(Error::OutOfRange {
                value: price,
                lower: lo,
                upper: hi,
            });
        }
        Ok(g.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    PreferenceDerived,
}

/// Seller (falling) and buyer (rising) price curves.
#[derive(Debug, Clone)]
pub struct PriceCurvePair {
    pub seller: Arc<dyn PriceCurve>,
    pub buyer: Arc<dyn PriceCurve>,
    pub provenance: Provenance,
}

/// JSON form `{"seller": {...}, "buyer": {...}}` of a synthetic pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCurves {
    pub seller: CurveSpec,
    pub buyer: CurveSpec,
}

impl PriceCurvePair {
    pub fn synthetic(seller: CurveSpec, buyer: CurveSpec) -> Result<Self> {
        seller.validate()?;
        buyer.validate()?;
        if seller.direction() > 0.0 {
            return Err(Error::NonMonotoneCurve(
                "seller curve must be decreasing in risk".into(),
            ));
        }
        if buyer.direction() < 0.0 {
            return Err(Error::NonMonotoneCurve(
                "buyer curve must be increasing in risk".into(),
            ));
        }
        Ok(Self {
            seller: Arc::new(seller),
            buyer: Arc::new(buyer),
            provenance: Provenance::Synthetic,
        })
    }

    pub fn from_spec(spec: &SyntheticCurves) -> Result<Self> {
        Self::synthetic(spec.seller.clone(), spec.buyer.clone())
    }

    /// `P_S = 1 - sqrt(eps)`, `P_B = sqrt(eps)`: the running example of the
    /// scenario modules.
    pub fn sqrt_example() -> Self {
        Self::synthetic(
            CurveSpec::Sqrt {
                intercept: 1.0,
                coefficient: -1.0,
            },
            CurveSpec::Sqrt {
                intercept: 0.0,
                coefficient: 1.0,
            },
        )
        .expect("valid example curves")
    }

    /// `P_S = 1 - eps`, `P_B = eps`.
    pub fn affine_example() -> Self {
        Self::synthetic(
            CurveSpec::Affine {
                intercept: 1.0,
                slope: -1.0,
            },
            CurveSpec::Affine {
                intercept: 0.0,
                slope: 1.0,
            },
        )
        .expect("valid example curves")
    }

    pub fn seller_price(&self, eps_s: f64) -> Result<f64> {
        self.seller.value(eps_s)
    }

    pub fn buyer_price(&self, eps_b: f64) -> Result<f64> {
        self.buyer.value(eps_b)
    }

    /// `P_S(eps_s) - P_B(eps_b)`.
    pub fn gap(&self, eps_s: f64, eps_b: f64) -> Result<f64> {
        Ok(self.seller.value(eps_s)? - self.buyer.value(eps_b)?)
    }
}

/// Curve handles backed by the seller's and buyer's price-at-risk maps.
pub fn derived_curves(
    model: &MarketModel,
    seller: &AgentSpec,
    buyer: &AgentSpec,
    claim: &ContingentClaim,
) -> Result<PriceCurvePair> {
    let s = DerivedCurve::new(Pricer::new(model, seller, claim, Role::Seller)?)?;
    let b = DerivedCurve::new(Pricer::new(model, buyer, claim, Role::Buyer)?)?;
    Ok(PriceCurvePair {
        seller: Arc::new(s),
        buyer: Arc::new(b),
        provenance: Provenance::PreferenceDerived,
    })
}

/// Generic inverse by bisection for a monotone curve on `[lo, hi]`.
pub fn invert_by_bisection(
    curve: &dyn PriceCurve,
    price: f64,
    rising: bool,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let (va, vb) = (curve.value(lo)?, curve.value(hi)?);
    let (pmin, pmax) = if rising { (va, vb) } else { (vb, va) };
    if price < pmin || price > pmax {
        return Err(Error::OutOfRange {
            value: price,
            lower: pmin,
            upper: pmax,
        });
    }
    let reached = |e: f64| {
        let v = curve.value(e).unwrap_or(f64::NAN);
        if rising {
            v >= price
        } else {
            v <= price
        }
    };
    Ok(bisect_monotone(reached, lo, hi, 1e-15 * (1.0 + hi.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::BeliefMeasure;
    use crate::preferences::utility::UtilitySpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn synthetic_sqrt_round_trip() {
        let pair = PriceCurvePair::sqrt_example();
        for e in [0.01, 0.1, 0.25, 0.7] {
            let ps = pair.seller.value(e).unwrap();
            assert_abs_diff_eq!(ps, 1.0 - e.sqrt(), epsilon = 1e-15);
            assert_abs_diff_eq!(pair.seller.inverse(ps).unwrap(), e, epsilon = 1e-8);
            assert_abs_diff_eq!(
                pair.buyer.derivative(e).unwrap(),
                0.5 / e.sqrt(),
                epsilon = 1e-8
            );
            assert_abs_diff_eq!(
                pair.seller.derivative(e).unwrap(),
                -0.5 / e.sqrt(),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn table_interpolates_and_inverts() {
        let c = CurveSpec::Table {
            eps: vec![0.0, 0.5, 1.0],
            price: vec![1.0, 0.4, 0.2],
        };
        c.validate().unwrap();
        assert_abs_diff_eq!(c.value(0.25).unwrap(), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(c.inverse(0.3).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(c.derivative(0.75).unwrap(), -0.4, epsilon = 1e-15);
        assert!(c.value(1.5).is_err());
        let bad = CurveSpec::Table {
            eps: vec![0.0, 0.5, 1.0],
            price: vec![1.0, 0.4, 0.6],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn curve_json_shape() {
        let s: SyntheticCurves = serde_json::from_str(
            r#"{"seller": {"kind": "sqrt", "intercept": 1.0, "coefficient": -1.0},
                "buyer": {"kind": "affine", "intercept": 0.0, "slope": 1.0}}"#,
        )
        .unwrap();
        let pair = PriceCurvePair::from_spec(&s).unwrap();
        assert_eq!(pair.provenance, Provenance::Synthetic);
        assert!(PriceCurvePair::synthetic(s.buyer.clone(), s.seller.clone()).is_err());
    }

    #[test]
    fn bisection_inverse_agrees_with_closed_form() {
        let c = CurveSpec::Sqrt {
            intercept: 1.0,
            coefficient: -1.0,
        };
        let e = invert_by_bisection(&c, 0.3, false, 0.0, 4.0).unwrap();
        assert_abs_diff_eq!(e, 0.49, epsilon = 1e-12);
    }

    #[test]
    fn derived_curves_are_monotone_with_gap_inverse() {
        let m = MarketModel::riskless_only(0.0, 2).unwrap();
        let q = BeliefMeasure::new(vec![0.5, 0.5]).unwrap();
        let a = AgentSpec::new(UtilitySpec::Exponential { gamma: 1.0 }, 0.0, q).unwrap();
        let f = ContingentClaim::new(vec![1.0, 0.0]).unwrap();
        let pair = derived_curves(&m, &a, &a, &f).unwrap();
        assert_eq!(pair.provenance, Provenance::PreferenceDerived);
        let e = 1f64.exp();
        assert_abs_diff_eq!(
            pair.seller.value(0.0).unwrap(),
            ((e + 1.0) / 2.0).ln(),
            epsilon = 1e-12
        );
        for i in 0..10 {
            let eps = 0.05 * i as f64;
            let ds = pair.seller.derivative(eps).unwrap();
            let db = pair.buyer.derivative(eps).unwrap();
            assert!(ds <= -1e-12 && db >= 1e-12);
            // closed form: dP_S/deps = -1 / (1 + eps)
            assert!((ds + 1.0 / (1.0 + eps)).abs() <= 1e-5);
            let p = pair.seller.value(eps).unwrap();
            assert_abs_diff_eq!(pair.seller.inverse(p).unwrap(), eps, epsilon = 1e-10);
        }
    }
}
