//! Scenario files and dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tatonnement_core::dynamics::{
    BarrierConfig, ConstraintSet, PriceGradientConfig, RegretGradient, StateGrid, StepSchedule,
    UpdateFieldSpec,
};
use tatonnement_core::market::{BeliefMeasure, ContingentClaim, MarketModel};
use tatonnement_core::preferences::{AgentSpec, Role, SyntheticCurves};
use tatonnement_core::regret::{Distance, RegretFunction};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Band,
    Indiff,
    Game,
    Share,
    Regret,
    Dyn,
    Pipeline,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub market: Option<MarketModel>,
    #[serde(default)]
    pub agents: Option<Agents>,
    #[serde(default)]
    pub claim: Option<ClaimInput>,
    /// Closed-form curves; when absent the curves are derived from the agents.
    #[serde(default)]
    pub curves: Option<SyntheticCurves>,
    #[serde(default)]
    pub indiff: Option<IndiffParams>,
    #[serde(default)]
    pub game: Option<GameParams>,
    #[serde(default)]
    pub share: Option<ShareParams>,
    #[serde(default)]
    pub regret: Option<RegretParams>,
    #[serde(default, rename = "dyn")]
    pub dynamics: Option<DynParams>,
    #[serde(default)]
    pub pipeline: Option<PipelineParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agents {
    pub seller: AgentSpec,
    pub buyer: AgentSpec,
}

/// A claim as a bare payoff list or as `{"payoff": [...]}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ClaimInput {
    Payoff(Vec<f64>),
    Claim(ContingentClaim),
}

impl ClaimInput {
    pub fn claim(&self) -> ContingentClaim {
        match self {
            ClaimInput::Payoff(p) => ContingentClaim { payoff: p.clone() },
            ClaimInput::Claim(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndiffParams {
    /// Also report `P_S(eps)` and `P_B(eps)`.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Also report belief extremes for both roles.
    #[serde(default)]
    pub extremes: bool,
    #[serde(default)]
    pub roles: Option<Vec<Role>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    pub alpha: f64,
    pub beta: f64,
    /// Valuations; indifference prices of the agents when absent.
    #[serde(default)]
    pub p_buyer: Option<f64>,
    #[serde(default)]
    pub p_seller: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareParams {
    pub lambda: f64,
    /// Solve the dual with this risk budget.
    #[serde(default)]
    pub budget: Option<f64>,
    /// Extra weights for a primal sweep.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegretSpace {
    #[default]
    Beliefs,
    Prices,
    RiskNeutral,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretParams {
    #[serde(default)]
    pub space: RegretSpace,
    pub lambda: f64,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub budget: Option<f64>,
    /// Anchors default to the agents' own beliefs.
    #[serde(default)]
    pub seller_anchor: Option<BeliefMeasure>,
    #[serde(default)]
    pub buyer_anchor: Option<BeliefMeasure>,
    #[serde(default)]
    pub prices: Option<PriceRectangle>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceRectangle {
    pub buyer_lower: f64,
    pub buyer_upper: f64,
    pub seller_lower: f64,
    pub seller_upper: f64,
    #[serde(default)]
    pub phi_buyer: RegretFunction,
    #[serde(default)]
    pub phi_seller: RegretFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ode,
    Discrete,
    Barrier,
    Projected,
    Sde,
    Report,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynParams {
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub field: Option<UpdateFieldSpec>,
    #[serde(default)]
    pub eps0: Option<(f64, f64)>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub step_scale: Option<f64>,
    #[serde(default)]
    pub barrier: Option<BarrierConfig>,
    #[serde(default)]
    pub projected: Option<ProjectedParams>,
    #[serde(default)]
    pub sde: Option<SdeParams>,
    #[serde(default)]
    pub grid: Option<StateGrid>,
}

/// Either the risk-space fixed-point iteration or the price-space gradient
/// flow, selected by which block is present.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectedParams {
    #[serde(default)]
    pub set: Option<ConstraintSet>,
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub prices: Option<PriceFlowParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceFlowParams {
    #[serde(flatten)]
    pub config: PriceGradientConfig,
    pub seller_regret: RegretGradient,
    pub buyer_regret: RegretGradient,
    pub start: (f64, f64),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeParams {
    pub f1: f64,
    pub f2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    #[serde(default)]
    pub record_every: usize,
    /// Also write every path to `<prefix>.ensemble.csv`.
    #[serde(default)]
    pub ensemble_csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    Share,
    Regret,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    pub fallback: Fallback,
}

impl Scenario {
    pub fn market(&self) -> Result<&MarketModel, Failure> {
        self.market
            .as_ref()
            .ok_or_else(|| Failure::invalid("scenario needs a `market` section"))
    }

    pub fn agents(&self) -> Result<&Agents, Failure> {
        self.agents
            .as_ref()
            .ok_or_else(|| Failure::invalid("scenario needs an `agents` section"))
    }

    pub fn claim(&self) -> Result<ContingentClaim, Failure> {
        self.claim
            .as_ref()
            .map(ClaimInput::claim)
            .ok_or_else(|| Failure::invalid("scenario needs a `claim` section"))
    }

    pub fn section<'a, T>(&self, v: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
        v.as_ref().ok_or_else(|| {
            Failure::invalid(format!("task {:?} needs a `{name}` section", self.task))
        })
    }
}

/// Reads the scenario as JSON and applies `key=value` overrides.
pub fn load(path: &Path, overrides: &[String]) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::invalid(format!("malformed JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    Ok(doc)
}

/// `a.b.0.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), Failure> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::invalid(format!("override `{spec}` is not key=value")))?;
    if path.is_empty() {
        return Err(Failure::invalid("override key is empty"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    Failure::invalid(format!("override `{path}`: `{key}` is not an index"))
                })?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Failure::invalid(format!("override `{path}`: index {idx} out of {len}"))
                })?
            }
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                match cur {
                    Value::Object(map) => {
                        if last {
                            map.insert(key.to_string(), value);
                            return Ok(());
                        }
                        map.entry(key.to_string())
                            .or_insert_with(|| Value::Object(Default::default()))
                    }
                    _ => unreachable!(),
                }
            }
            _ => {
                return Err(Failure::invalid(format!(
                    "override `{path}`: `{key}` indexes into a scalar"
                )))
            }
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Ok(())
}

pub fn parse(doc: &Value) -> Result<Scenario, Failure> {
    serde_json::from_value(doc.clone())
        .map_err(|e| Failure::invalid(format!("scenario schema: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_walk_objects_and_arrays() {
        let mut v = json!({"a": {"b": [1, 2, 3]}, "task": "band"});
        apply_override(&mut v, "a.b.1=5.5").unwrap();
        apply_override(&mut v, "a.c.d=true").unwrap();
        apply_override(&mut v, "task=game").unwrap();
        assert_eq!(
            v,
            json!({"a": {"b": [1, 5.5, 3], "c": {"d": true}}, "task": "game"})
        );
        assert!(apply_override(&mut v, "a.b.9=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "task.x=1").is_err());
    }

    #[test]
    fn claim_accepts_both_forms() {
        let a: ClaimInput = serde_json::from_value(json!([1.0, 0.0])).unwrap();
        let b: ClaimInput = serde_json::from_value(json!({"payoff": [1.0, 0.0]})).unwrap();
        assert_eq!(a.claim(), b.claim());
    }
}
