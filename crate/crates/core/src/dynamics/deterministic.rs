//! Risk-updating schemes driven by the price gap.

use serde::{Deserialize, Serialize};

use super::{clamp_state, step_count, EventKind, Trace, TraceRow, UpdateFieldSpec};
use crate::error::{Error, Result};
use crate::preferences::curves::PriceCurvePair;

/// `eps(n+1) = eps(n) + s * f * gap(n)` for `steps` iterations.
pub fn simulate_discrete(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    eps0: (f64, f64),
    steps: usize,
    step_scale: f64,
) -> Result<Trace> {
    field.validate()?;
    if !(step_scale > 0.0 && step_scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step scale must be positive, got {step_scale}"
        )));
    }
    let (mut es, mut eb) = eps0;
    let mut trace = Trace::new("discrete", step_scale);
    trace.push(TraceRow::at(curves, 0.0, es, eb)?)?;
    for n in 0..steps {
        let gap = trace.last().gap;
        let (g1, g2) = field.rates(curves, n as f64, es, eb)?;
        es += step_scale * g1 * gap;
        eb += step_scale * g2 * gap;
        let t = (n + 1) as f64;
        clamp_state(&mut trace, t, &mut es, &mut eb);
        trace.push(TraceRow::at(curves, t, es, eb)?)?;
    }
    Ok(trace)
}

fn rhs(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    t: f64,
    es: f64,
    eb: f64,
) -> Result<[f64; 2]> {
    // stages may poke slightly below zero; the curves are only defined above
    let (es, eb) = (es.max(0.0), eb.max(0.0));
    let gap = curves.gap(es, eb)?;
    let (g1, g2) = field.rates(curves, t, es, eb)?;
    // at zero a rate pointing outward is held, as the clamp would; this
    // also removes infinite slopes of curves like sqrt at the boundary
    let held = |e: f64, v: f64| if e <= 0.0 && !(v > 0.0) { 0.0 } else { v };
    let v = [held(es, g1 * gap), held(eb, g2 * gap)];
    if !(v[0].is_finite() && v[1].is_finite()) {
        // an infinite slope pushing off the boundary: no step size resolves it
        return Err(Error::StepTooLarge {
            t,
            proxy: f64::INFINITY,
        });
    }
    Ok(v)
}

fn rk4_step(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    t: f64,
    y: [f64; 2],
    h: f64,
) -> Result<[f64; 2]> {
    let k1 = rhs(curves, field, t, y[0], y[1])?;
    let k2 = rhs(
        curves,
        field,
        t + 0.5 * h,
        y[0] + 0.5 * h * k1[0],
        y[1] + 0.5 * h * k1[1],
    )?;
    let k3 = rhs(
        curves,
        field,
        t + 0.5 * h,
        y[0] + 0.5 * h * k2[0],
        y[1] + 0.5 * h * k2[1],
    )?;
    let k4 = rhs(curves, field, t + h, y[0] + h * k3[0], y[1] + h * k3[1])?;
    Ok([
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

/// Classical RK4 on `eps_S' = f1 gap`, `eps_B' = f2 gap` over `[0, horizon]`.
///
/// Each step is compared with two half steps; a difference above `1e-3`
/// aborts with [`Error::StepTooLarge`].
pub fn simulate_ode(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    eps0: (f64, f64),
    horizon: f64,
    dt: f64,
) -> Result<Trace> {
    field.validate()?;
    let n = step_count(horizon, dt)?;
    let mut y = [eps0.0, eps0.1];
    let mut trace = Trace::new("ode", dt);
    trace.push(TraceRow::at(curves, 0.0, y[0], y[1])?)?;
    for i in 0..n {
        let t = i as f64 * dt;
        let full = rk4_step(curves, field, t, y, dt)?;
        let half = rk4_step(curves, field, t, y, 0.5 * dt)?;
        let twice = rk4_step(curves, field, t + 0.5 * dt, half, 0.5 * dt)?;
        let proxy = (full[0] - twice[0]).abs().max((full[1] - twice[1]).abs());
        let t1 = (i + 1) as f64 * dt;
        if !(proxy <= 1e-3) {
            if !proxy.is_finite() {
                return Err(Error::Divergence {
                    t: t1,
                    gap: f64::NAN,
                });
            }
            return Err(Error::StepTooLarge { t: t1, proxy });
        }
        let [mut es, mut eb] = full;
        clamp_state(&mut trace, t1, &mut es, &mut eb);
        y = [es, eb];
        trace.push(TraceRow::at(curves, t1, y[0], y[1])?)?;
    }
    Ok(trace)
}

/// Coefficient of `gap` in `d(gap)/dt`: `P_S' g1 - P_B' g2`.
pub fn contraction_coefficient(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    t: f64,
    state: (f64, f64),
) -> Result<f64> {
    let (g1, g2) = field.rates(curves, t, state.0, state.1)?;
    Ok(curves.seller.derivative(state.0)? * g1 - curves.buyer.derivative(state.1)? * g2)
}

/// The same coefficient with a plus on the buyer term, `P_S' g1 + P_B' g2`.
pub fn printed_coefficient(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    t: f64,
    state: (f64, f64),
) -> Result<f64> {
    let (g1, g2) = field.rates(curves, t, state.0, state.1)?;
    Ok(curves.seller.derivative(state.0)? * g1 + curves.buyer.derivative(state.1)? * g2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    /// `-max` of the applied contraction coefficient along the trace.
    pub epsilon: f64,
    /// The envelope is only claimed when `epsilon > 0`.
    pub applicable: bool,
    pub holds: bool,
    /// Largest `|gap(t)| / (|gap(0)| e^{-eps t} (1 + 10 dt))`.
    pub worst_ratio: f64,
}

/// Contraction coefficient of the field actually applied at a row: a risk
/// held at zero whose rate points below zero does not move.
fn applied_coefficient(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    r: &TraceRow,
) -> Result<f64> {
    let (mut g1, mut g2) = field.rates(curves, r.t, r.eps_s, r.eps_b)?;
    if r.eps_s <= 0.0 && g1 * r.gap < 0.0 {
        g1 = 0.0;
    }
    if r.eps_b <= 0.0 && g2 * r.gap < 0.0 {
        g2 = 0.0;
    }
    // a frozen component contributes nothing even where its slope is infinite
    let seller = if g1 == 0.0 {
        0.0
    } else {
        curves.seller.derivative(r.eps_s)? * g1
    };
    let buyer = if g2 == 0.0 {
        0.0
    } else {
        curves.buyer.derivative(r.eps_b)? * g2
    };
    let c = seller - buyer;
    Ok(if c.is_nan() { f64::INFINITY } else { c })
}

/// Checks `|gap(t)| <= |gap(0)| e^{-eps t} (1 + 10 dt)` with the measured
/// `eps` of the trajectory, down to the rounding level of the two prices.
pub fn gronwall_check(
    curves: &PriceCurvePair,
    field: &UpdateFieldSpec,
    trace: &Trace,
) -> Result<GronwallCheck> {
    let mut worst_coef = f64::NEG_INFINITY;
    for r in &trace.rows {
        worst_coef = worst_coef.max(applied_coefficient(curves, field, r)?);
    }
    let epsilon = -worst_coef;
    let g0 = trace.first().gap.abs();
    let slack = 1.0 + 10.0 * trace.step;
    let mut worst_ratio = 0.0f64;
    for r in &trace.rows {
        // below this the gap is rounding noise: price cancellation, plus
        // risk increments smaller than one ulp of the state being lost
        let state = curves.seller.derivative(r.eps_s)?.abs() * r.eps_s
            + curves.buyer.derivative(r.eps_b)?.abs() * r.eps_b;
        let floor = f64::EPSILON * (8.0 * (r.p_s.abs() + r.p_b.abs()) + state / trace.step);
        let bound = (g0 * (-epsilon * r.t).exp() * slack).max(floor);
        let ratio = if bound > 0.0 {
            r.gap.abs() / bound
        } else if r.gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_ratio = worst_ratio.max(ratio);
    }
    let applicable = epsilon > 0.0;
    Ok(GronwallCheck {
        epsilon,
        applicable,
        holds: !applicable || worst_ratio <= 1.0,
        worst_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierForm {
    /// `eps_B' = s (lambda - w P_B' / (P_B - P_S))`,
    /// `eps_S' = s ((1 - lambda) + w P_S' / (P_B - P_S))`.
    #[default]
    Printed,
    /// The negative of the printed field: gradient descent on
    /// `lambda eps_B + (1 - lambda) eps_S - w log(P_B - P_S)`.
    Descent,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    /// Weight on the buyer's risk.
    pub lambda: f64,
    pub s: f64,
    /// Barrier weight `1/h`.
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub form: BarrierForm,
}

impl BarrierConfig {
    pub fn new(lambda: f64, s: f64) -> Self {
        Self {
            lambda,
            s,
            weight: 1.0,
            form: BarrierForm::Printed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.s > 0.0 && self.s.is_finite()) || !(self.weight > 0.0 && self.weight.is_finite())
        {
            return Err(Error::InvalidInput(
                "barrier speed and weight must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `(eps_S', eps_B')` at a state, with the floored gap and whether the
    /// floor was used.
    pub fn velocity(
        &self,
        curves: &PriceCurvePair,
        eps_s: f64,
        eps_b: f64,
    ) -> Result<((f64, f64), bool)> {
        let mut d = curves.buyer_price(eps_b)? - curves.seller_price(eps_s)?;
        let floored = d.abs() < BARRIER_FLOOR;
        if floored {
            d = if d < 0.0 {
                -BARRIER_FLOOR
            } else {
                BARRIER_FLOOR
            };
        }
        let dps = curves.seller.derivative(eps_s)?;
        let dpb = curves.buyer.derivative(eps_b)?;
        let vb = self.s * (self.lambda - self.weight * dpb / d);
        let vs = self.s * ((1.0 - self.lambda) + self.weight * dps / d);
        let sign = match self.form {
            BarrierForm::Printed => 1.0,
            BarrierForm::Descent => -1.0,
        };
        Ok(((sign * vs, sign * vb), floored))
    }
}

const BARRIER_FLOOR: f64 = 1e-8;

/// Explicit Euler integration of the barrier flow.
pub fn simulate_barrier_gradient(
    curves: &PriceCurvePair,
    cfg: &BarrierConfig,
    eps0: (f64, f64),
    horizon: f64,
    dt: f64,
) -> Result<Trace> {
    cfg.validate()?;
    let n = step_count(horizon, dt)?;
    if curves.gap(eps0.0, eps0.1)? == 0.0 {
        return Err(Error::InvalidInput(
            "barrier flow is singular at a zero initial gap".into(),
        ));
    }
    let (mut es, mut eb) = eps0;
    let mut trace = Trace::new("barrier", dt);
    trace.push(TraceRow::at(curves, 0.0, es, eb)?)?;
    let mut hits = 0;
    for i in 0..n {
        let ((vs, vb), floored) = cfg.velocity(curves, es, eb)?;
        let t = (i + 1) as f64 * dt;
        if floored {
            hits += 1;
            trace.event(t, EventKind::GapFloor);
        }
        es += dt * vs;
        eb += dt * vb;
        clamp_state(&mut trace, t, &mut es, &mut eb);
        trace.push(TraceRow::at(curves, t, es, eb)?)?;
    }
    if hits * 100 > n {
        return Err(Error::SingularityStall { hits, steps: n });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SignConvention;
    use crate::preferences::curves::CurveSpec;
    use crate::sharing::{solve_primal, SharingConfig};
    use approx::assert_abs_diff_eq;

    fn affine() -> PriceCurvePair {
        PriceCurvePair::affine_example()
    }

    #[test]
    fn discrete_affine_gap_contracts_by_point_eight() {
        let f = UpdateFieldSpec::constant(-1.0, 1.0).with_sign(SignConvention::SellerNegated);
        let tr = simulate_discrete(&affine(), &f, (0.0, 0.0), 30, 0.1).unwrap();
        for (n, r) in tr.rows.iter().enumerate() {
            assert_abs_diff_eq!(r.gap, 0.8f64.powi(n as i32), epsilon = 1e-13);
        }
        assert!(tr.events.is_empty());
    }

    #[test]
    fn frozen_field_keeps_state() {
        let tr = simulate_discrete(
            &affine(),
            &UpdateFieldSpec::constant(0.0, 0.0),
            (0.2, 0.3),
            10,
            1.0,
        )
        .unwrap();
        assert!(tr.rows.iter().all(|r| r.eps_s == 0.2 && r.eps_b == 0.3));
    }

    #[test]
    fn overshooting_step_flips_the_gap() {
        let f = UpdateFieldSpec::constant(-1.0, 1.0).with_sign(SignConvention::SellerNegated);
        let tr = simulate_discrete(&affine(), &f, (0.0, 0.0), 3, 1.5).unwrap();
        assert_abs_diff_eq!(tr.rows[1].gap, -2.0, epsilon = 1e-12);
        assert!(tr.count(EventKind::Crossing) >= 1);
        // past the first flip the risks are held at zero
        assert!(tr.count(EventKind::ClampSeller) + tr.count(EventKind::ClampBuyer) > 0);
        // a field pointing away from the frontier runs off
        let away = UpdateFieldSpec::constant(-1.0, -1.0);
        let err = simulate_discrete(&affine(), &away, (0.5, 0.6), 200, 1.5);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn ode_affine_steepest_descent() {
        let tr = simulate_ode(
            &affine(),
            &UpdateFieldSpec::steepest_descent(),
            (0.0, 0.0),
            5.0,
            0.01,
        )
        .unwrap();
        for r in &tr.rows {
            assert!((r.gap - (-2.0 * r.t).exp()).abs() <= 1e-6);
            assert!((r.p_s + r.p_b - 1.0).abs() <= 1e-8);
        }
        assert_abs_diff_eq!(tr.last().p_s, 0.5, epsilon = 1e-4);
    }

    #[test]
    fn ode_equilibrium_is_stationary() {
        let tr = simulate_ode(
            &affine(),
            &UpdateFieldSpec::steepest_descent(),
            (0.3, 0.7),
            1.0,
            0.1,
        )
        .unwrap();
        assert!(tr
            .rows
            .iter()
            .all(|r| r.eps_s == 0.3 && r.eps_b == 0.7 && r.gap == 0.0));
    }

    #[test]
    fn ode_sqrt_curves_respect_gronwall() {
        let c = PriceCurvePair::sqrt_example();
        let f = UpdateFieldSpec::steepest_descent();
        let tr = simulate_ode(&c, &f, (0.01, 0.04), 4.0, 1e-3).unwrap();
        assert!(tr
            .rows
            .windows(2)
            .all(|w| w[1].gap.abs() < w[0].gap.abs() || w[1].gap.abs() < 1e-14));
        assert!(tr.rows.iter().all(|r| r.gap >= 0.0));
        let g = gronwall_check(&c, &f, &tr).unwrap();
        assert!(g.applicable && g.holds, "{g:?}");
    }

    #[test]
    fn step_too_large_is_reported() {
        let c = PriceCurvePair::synthetic(
            CurveSpec::Affine {
                intercept: 1.0,
                slope: -100.0,
            },
            CurveSpec::Affine {
                intercept: 0.0,
                slope: 100.0,
            },
        )
        .unwrap();
        let r = simulate_ode(
            &c,
            &UpdateFieldSpec::steepest_descent(),
            (0.0, 0.0),
            1.0,
            0.1,
        );
        assert!(
            matches!(
                r,
                Err(Error::StepTooLarge { .. }) | Err(Error::Divergence { .. })
            ),
            "{r:?}"
        );
    }

    #[test]
    fn contraction_examples() {
        let sd = UpdateFieldSpec::steepest_descent();
        assert_eq!(
            contraction_coefficient(&affine(), &sd, 0.0, (0.3, 0.9)).unwrap(),
            -2.0
        );
        assert_eq!(
            printed_coefficient(&affine(), &sd, 0.0, (0.3, 0.9)).unwrap(),
            0.0
        );
        let zero = UpdateFieldSpec::constant(0.0, 0.0);
        assert_eq!(
            contraction_coefficient(&affine(), &zero, 0.0, (0.3, 0.9)).unwrap(),
            0.0
        );
        let c = PriceCurvePair::sqrt_example();
        assert_abs_diff_eq!(
            contraction_coefficient(&c, &sd, 0.0, (0.25, 0.25)).unwrap(),
            -2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn barrier_signs_match_the_prose() {
        let c = PriceCurvePair::sqrt_example();
        let cfg = BarrierConfig::new(0.5, 0.1);
        // P_B < P_S: both agents take on risk
        let ((vs, vb), _) = cfg.velocity(&c, 0.01, 0.01).unwrap();
        assert!(vs > 0.0 && vb > 0.0);
        let tr = simulate_barrier_gradient(&c, &cfg, (0.01, 0.01), 0.5, 1e-3).unwrap();
        assert!(tr.rows[1].eps_s > 0.01 && tr.rows[1].eps_b > 0.01);
        // P_B > P_S near the frontier: both shed risk
        let ((vs, vb), _) = cfg.velocity(&c, 0.3, 0.3).unwrap();
        assert!(curves_gap(&c, 0.3, 0.3) < 0.0 && vs < 0.0 && vb < 0.0);
    }

    fn curves_gap(c: &PriceCurvePair, s: f64, b: f64) -> f64 {
        c.gap(s, b).unwrap()
    }

    #[test]
    fn descent_barrier_approaches_risk_sharing() {
        let c = PriceCurvePair::sqrt_example();
        let cfg = BarrierConfig {
            lambda: 0.5,
            s: 1.0,
            weight: 1e-3,
            form: BarrierForm::Descent,
        };
        let tr = simulate_barrier_gradient(&c, &cfg, (0.5, 0.5), 20.0, 1e-3).unwrap();
        let opt = solve_primal(&c, &SharingConfig::new(0.5)).unwrap();
        let end = tr.last();
        assert!((end.eps_s - opt.eps_seller).abs() < 5e-2, "{end:?}");
        assert!((end.eps_b - opt.eps_buyer).abs() < 5e-2, "{end:?}");
        assert!(end.gap < 0.0);
    }

    #[test]
    fn barrier_rejects_zero_gap_start() {
        let c = PriceCurvePair::affine_example();
        let r = simulate_barrier_gradient(&c, &BarrierConfig::new(0.5, 0.1), (0.5, 0.5), 1.0, 0.01);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
