use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::BeliefMeasure;

/// Strictly increasing, strictly concave utility families.
///
/// * exponential: `u(w) = -exp(-gamma w)`
/// * power: `u(w) = w^(1-eta) / (1-eta)`, `w > 0`
/// * log: `u(w) = ln w`, `w > 0`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum UtilitySpec {
    Exponential { gamma: f64 },
    Power { eta: f64 },
    Log,
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::InvalidInput(format!("exponential gamma must be positive, got {gamma}")),
            ),
            Self::Power { eta } if !(eta > 0.0 && eta.is_finite()) || eta == 1.0 => Err(
                Error::InvalidInput(format!("power eta must be positive and != 1, got {eta}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether terminal wealth must stay strictly positive.
    pub fn positive_wealth_only(&self) -> bool {
        !matches!(self, Self::Exponential { .. })
    }

    /// Utility of terminal wealth; `-inf` outside the domain.
    pub fn value(&self, w: f64) -> f64 {
        match *self {
            Self::Exponential { gamma } => -(-gamma * w).exp(),
            Self::Power { eta } => {
                if w > 0.0 {
                    w.powf(1.0 - eta) / (1.0 - eta)
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Log => {
                if w > 0.0 {
                    w.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn marginal(&self, w: f64) -> f64 {
        match *self {
            Self::Exponential { gamma } => gamma * (-gamma * w).exp(),
            Self::Power { eta } => w.powf(-eta),
            Self::Log => 1.0 / w,
        }
    }

    pub fn curvature(&self, w: f64) -> f64 {
        match *self {
            Self::Exponential { gamma } => -gamma * gamma * (-gamma * w).exp(),
            Self::Power { eta } => -eta * w.powf(-eta - 1.0),
            Self::Log => -1.0 / (w * w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub utility: UtilitySpec,
    #[serde(rename = "wealth")]
    pub initial_wealth: f64,
    pub beliefs: BeliefMeasure,
}

impl AgentSpec {
    pub fn new(utility: UtilitySpec, initial_wealth: f64, beliefs: BeliefMeasure) -> Result<Self> {
        utility.validate()?;
        if !initial_wealth.is_finite() {
            return Err(Error::InvalidInput("initial wealth must be finite".into()));
        }
        Ok(Self {
            utility,
            initial_wealth,
            beliefs,
        })
    }

    pub fn with_beliefs(&self, beliefs: BeliefMeasure) -> Self {
        Self {
            beliefs,
            ..self.clone()
        }
    }

    pub fn with_wealth(&self, initial_wealth: f64) -> Self {
        Self {
            initial_wealth,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_are_increasing_and_concave() {
        let specs = [
            UtilitySpec::Exponential { gamma: 2.0 },
            UtilitySpec::Power { eta: 3.0 },
            UtilitySpec::Power { eta: 0.5 },
            UtilitySpec::Log,
        ];
        for u in specs {
            u.validate().unwrap();
            for w in [0.1, 0.5, 1.0, 4.0] {
                assert!(u.marginal(w) > 0.0);
                assert!(u.curvature(w) < 0.0);
                let h = 1e-5;
                let fd = (u.value(w + h) - u.value(w - h)) / (2.0 * h);
                assert!((fd - u.marginal(w)).abs() <= 1e-6 * u.marginal(w).max(1.0));
            }
        }
    }

    #[test]
    fn domain_and_parameter_checks() {
        assert_eq!(UtilitySpec::Log.value(0.0), f64::NEG_INFINITY);
        assert_eq!(
            UtilitySpec::Power { eta: 2.0 }.value(-1.0),
            f64::NEG_INFINITY
        );
        assert!(UtilitySpec::Power { eta: 1.0 }.validate().is_err());
        assert!(UtilitySpec::Exponential { gamma: 0.0 }.validate().is_err());
    }

    #[test]
    fn agent_json_shape() {
        let a: AgentSpec = serde_json::from_str(
            r#"{"utility": {"family": "exponential", "gamma": 1.0}, "wealth": 0.0, "beliefs": [0.5, 0.5]}"#,
        )
        .unwrap();
        assert_eq!(a.utility, UtilitySpec::Exponential { gamma: 1.0 });
        assert_eq!(a.beliefs.weights(), &[0.5, 0.5]);
        let bad = serde_json::from_str::<AgentSpec>(
            r#"{"utility": {"family": "log"}, "wealth": 1.0, "beliefs": [0.7, 0.7]}"#,
        );
        assert!(bad.is_err());
    }
}
