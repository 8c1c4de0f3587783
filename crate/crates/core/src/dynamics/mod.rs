//! Price-convergence dynamics: risk-updating schemes, the barrier flow,
//! projected systems and the stochastic scheme with its stability report.

mod deterministic;
mod projected;
mod stochastic;

pub use deterministic::{
    contraction_coefficient, gronwall_check, printed_coefficient, simulate_barrier_gradient,
    simulate_discrete, simulate_ode, BarrierConfig, BarrierForm, GronwallCheck,
};
pub use projected::{
    project_halfplane, simulate_projected_discrete, simulate_projected_gradient_prices,
    ConstraintSet, PriceGradientConfig, ProjectedRun, RegretGradient, StepSchedule,
};
pub use stochastic::{
    simulate_sde, stability_report, Ensemble, ExponentSummary, PathResult, SdeSpec,
    StabilityReport, StateGrid,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preferences::curves::PriceCurvePair;

/// Gaps beyond this magnitude abort a simulation.
pub const DIVERGENCE_GAP: f64 = 1e6;

/// How the stored `f1` enters the seller's equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    /// `eps_S' = f1 * gap`
    #[default]
    Printed,
    /// `eps_S' = -f1 * gap`
    SellerNegated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldKind {
    Constant {
        f1: f64,
        f2: f64,
    },
    /// `f1 = -P_S'(eps_S)`, `f2 = P_B'(eps_B)`.
    SteepestDescent,
    /// Piecewise-linear in time, held constant past the end knots.
    Table {
        t: Vec<f64>,
        f1: Vec<f64>,
        f2: Vec<f64>,
    },
}

/// Speeds at which the two agents update their risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateFieldSpec {
    #[serde(flatten)]
    pub kind: FieldKind,
    #[serde(default)]
    pub sign: SignConvention,
}

impl UpdateFieldSpec {
    pub fn constant(f1: f64, f2: f64) -> Self {
        Self {
            kind: FieldKind::Constant { f1, f2 },
            sign: SignConvention::Printed,
        }
    }

    pub fn steepest_descent() -> Self {
        Self {
            kind: FieldKind::SteepestDescent,
            sign: SignConvention::Printed,
        }
    }

    pub fn with_sign(mut self, sign: SignConvention) -> Self {
        self.sign = sign;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            FieldKind::Constant { f1, f2 } if !f1.is_finite() || !f2.is_finite() => Err(
                Error::InvalidInput("field coefficients must be finite".into()),
            ),
            FieldKind::Table { t, f1, f2 } => {
                if t.is_empty() || t.len() != f1.len() || t.len() != f2.len() {
                    return Err(Error::InvalidInput(
                        "field table needs matching nonempty columns".into(),
                    ));
                }
                if t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput(
                        "field table times must be strictly increasing".into(),
                    ));
                }
                if f1.iter().chain(f2).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "field table entries must be finite".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Effective coefficients `(g1, g2)` with `eps_S' = g1 gap`, `eps_B' = g2 gap`.
    pub fn rates(
        &self,
        curves: &PriceCurvePair,
        t: f64,
        eps_s: f64,
        eps_b: f64,
    ) -> Result<(f64, f64)> {
        let (f1, f2) = match &self.kind {
            FieldKind::Constant { f1, f2 } => (*f1, *f2),
            FieldKind::SteepestDescent => {
                return Ok((
                    -curves.seller.derivative(eps_s)?,
                    curves.buyer.derivative(eps_b)?,
                ));
            }
            FieldKind::Table { t: knots, f1, f2 } => (interp(knots, f1, t), interp(knots, f2, t)),
        };
        Ok(match self.sign {
            SignConvention::Printed => (f1, f2),
            SignConvention::SellerNegated => (-f1, f2),
        })
    }
}

fn interp(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t <= x[0] {
        return y[0];
    }
    let n = x.len();
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = x.partition_point(|&v| v <= t) - 1;
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] + w * (y[i + 1] - y[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub eps_s: f64,
    pub eps_b: f64,
    pub p_s: f64,
    pub p_b: f64,
    pub gap: f64,
}

impl TraceRow {
    pub fn at(curves: &PriceCurvePair, t: f64, eps_s: f64, eps_b: f64) -> Result<Self> {
        let p_s = curves.seller_price(eps_s)?;
        let p_b = curves.buyer_price(eps_b)?;
        Ok(Self {
            t,
            eps_s,
            eps_b,
            p_s,
            p_b,
            gap: p_s - p_b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// A risk variable was held at zero.
    ClampSeller,
    ClampBuyer,
    /// The gap changed sign.
    Crossing,
    /// `|P_B - P_S|` was floored in the barrier scheme.
    GapFloor,
    RegimeSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: EventKind,
}

/// Recorded trajectory with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scheme: String,
    pub step: f64,
    pub seed: Option<u64>,
    pub rows: Vec<TraceRow>,
    pub events: Vec<TraceEvent>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub(crate) fn new(scheme: &str, step: f64) -> Self {
        Self {
            scheme: scheme.to_string(),
            step,
            seed: None,
            rows: Vec::new(),
            events: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn first(&self) -> &TraceRow {
        &self.rows[0]
    }

    pub fn last(&self) -> &TraceRow {
        &self.rows[self.rows.len() - 1]
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// CSV with header `t,eps_S,eps_B,P_S,P_B,gap`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,eps_S,eps_B,P_S,P_B,gap\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.eps_s, r.eps_b, r.p_s, r.p_b, r.gap
            );
        }
        s
    }

    pub(crate) fn push(&mut self, row: TraceRow) -> Result<()> {
        if !row.gap.is_finite()
            || !row.eps_s.is_finite()
            || !row.eps_b.is_finite()
            || row.gap.abs() > DIVERGENCE_GAP
        {
            return Err(Error::Divergence {
                t: row.t,
                gap: row.gap,
            });
        }
        if let Some(prev) = self.rows.last() {
            if prev.gap != 0.0 && row.gap != 0.0 && prev.gap.signum() != row.gap.signum() {
                self.events.push(TraceEvent {
                    t: row.t,
                    kind: EventKind::Crossing,
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub(crate) fn event(&mut self, t: f64, kind: EventKind) {
        self.events.push(TraceEvent { t, kind });
    }
}

/// Holds risk variables at zero, logging each clamp.
pub(crate) fn clamp_state(trace: &mut Trace, t: f64, eps_s: &mut f64, eps_b: &mut f64) {
    if *eps_s < 0.0 {
        *eps_s = 0.0;
        trace.event(t, EventKind::ClampSeller);
    }
    if *eps_b < 0.0 {
        *eps_b = 0.0;
        trace.event(t, EventKind::ClampBuyer);
    }
}

pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need positive horizon and step, got T={horizon}, dt={dt}"
        )));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}
