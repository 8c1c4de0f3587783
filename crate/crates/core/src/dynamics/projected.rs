//! Projected fixed-point and projected-gradient systems.

use serde::{Deserialize, Serialize};

use super::{step_count, EventKind, Trace, TraceRow};
use crate::error::{Error, Result};
use crate::preferences::curves::PriceCurvePair;

/// Projection onto `{x1 >= x2}`: identity there, averaging otherwise.
pub fn project_halfplane(x: [f64; 2]) -> [f64; 2] {
    if x[0] >= x[1] {
        x
    } else {
        let m = 0.5 * (x[0] + x[1]);
        [m, m]
    }
}

/// Closed convex sets for the risk pair `(eps_S, eps_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConstraintSet {
    /// `eps_S >= eps_B`
    HalfPlane,
    /// `lambda eps_S + (1 - lambda) eps_B <= w`, both nonnegative.
    Budget { lambda: f64, w: f64 },
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        if let ConstraintSet::Budget { lambda, w } = *self {
            if !(0.0..=1.0).contains(&lambda) || !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "budget set needs lambda in [0, 1] and w >= 0, got ({lambda}, {w})"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        match *self {
            ConstraintSet::HalfPlane => x[0] >= x[1],
            ConstraintSet::Budget { lambda, w } => {
                x[0] >= 0.0 && x[1] >= 0.0 && lambda * x[0] + (1.0 - lambda) * x[1] <= w
            }
        }
    }

    /// Euclidean projection; the result always satisfies [`Self::contains`].
    pub fn project(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            ConstraintSet::HalfPlane => project_halfplane(x),
            ConstraintSet::Budget { lambda, w } => project_budget(x, [lambda, 1.0 - lambda], w),
        }
    }
}

/// Projection onto `{y >= 0, a.y <= w}` with `a >= 0`: `y = max(0, x - mu a)`
/// for the smallest feasible `mu >= 0`.
fn project_budget(x: [f64; 2], a: [f64; 2], w: f64) -> [f64; 2] {
    let at = |mu: f64| [(x[0] - mu * a[0]).max(0.0), (x[1] - mu * a[1]).max(0.0)];
    let load = |y: [f64; 2]| a[0] * y[0] + a[1] * y[1];
    let mut y = at(0.0);
    if load(y) > w {
        // load(mu) is piecewise linear and decreasing; walk the breakpoints
        let mut bps: Vec<f64> = (0..2)
            .filter(|&i| a[i] > 0.0 && x[i] > 0.0)
            .map(|i| x[i] / a[i])
            .collect();
        bps.sort_by(f64::total_cmp);
        let mut lo = 0.0;
        for &b in &bps {
            if load(at(b)) <= w {
                break;
            }
            lo = b;
        }
        let active: Vec<usize> = (0..2).filter(|&i| x[i] - lo * a[i] > 0.0).collect();
        let num: f64 = active.iter().map(|&i| a[i] * x[i]).sum::<f64>() - w;
        let den: f64 = active.iter().map(|&i| a[i] * a[i]).sum();
        let mu = if den > 0.0 { num / den } else { lo };
        y = at(mu.max(lo));
        // rounding can leave the load a few ulps above w
        let l = load(y);
        if l > w {
            let r = w / l;
            y = [y[0] * r, y[1] * r];
            while load(y) > w {
                y = [
                    y[0] * (1.0 - 4.0 * f64::EPSILON),
                    y[1] * (1.0 - 4.0 * f64::EPSILON),
                ];
            }
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant {
        size: f64,
    },
    /// `s_n = scale / n`, `n = 1, 2, ...`
    Diminishing {
        scale: f64,
    },
}

impl StepSchedule {
    fn size(&self, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { size } => size,
            StepSchedule::Diminishing { scale } => scale / n as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            StepSchedule::Constant { size } => size,
            StepSchedule::Diminishing { scale } => scale,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step schedule needs a positive size, got {v}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRun {
    pub trace: Trace,
    /// `|x(n+1) - x(n)|` for each step.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// `x(n+1) = P_K[x(n) + s_n (P_S - P_B)(x(n)) (1, 1)]` until the step
/// residual drops below `tolerance` or `max_steps` is reached.
///
/// Running out of steps is recorded as a warning, not an error.
pub fn simulate_projected_discrete(
    curves: &PriceCurvePair,
    set: &ConstraintSet,
    x0: (f64, f64),
    schedule: &StepSchedule,
    max_steps: usize,
    tolerance: f64,
) -> Result<ProjectedRun> {
    set.validate()?;
    schedule.validate()?;
    let mut x = [x0.0, x0.1];
    if !set.contains(x) {
        return Err(Error::InvalidInput(format!(
            "start {x:?} lies outside the constraint set"
        )));
    }
    let mut trace = Trace::new("projected-discrete", f64::NAN);
    trace.push(TraceRow::at(curves, 0.0, x[0], x[1])?)?;
    let mut residuals = Vec::new();
    let mut converged = false;
    for n in 1..=max_steps {
        let gap = trace.last().gap;
        let s = schedule.size(n);
        let next = set.project([x[0] + s * gap, x[1] + s * gap]);
        let r = ((next[0] - x[0]).powi(2) + (next[1] - x[1]).powi(2)).sqrt();
        residuals.push(r);
        x = next;
        trace.push(TraceRow::at(curves, n as f64, x[0], x[1])?)?;
        if r <= tolerance {
            converged = true;
            break;
        }
    }
    trace.step = match *schedule {
        StepSchedule::Constant { size } => size,
        StepSchedule::Diminishing { scale } => scale,
    };
    if !converged {
        trace.warnings.push(format!(
            "no convergence after {max_steps} steps: residual {:.3e} > {tolerance:.3e}",
            residuals.last().copied().unwrap_or(f64::NAN)
        ));
    }
    Ok(ProjectedRun {
        trace,
        residuals,
        converged,
    })
}

/// Derivative of a per-agent price regret.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegretGradient {
    /// `R(P) = scale (P - center)^2`
    Quadratic { center: f64, scale: f64 },
    /// `R(P) = slope P`
    Linear { slope: f64 },
}

impl RegretGradient {
    pub fn at(&self, p: f64) -> f64 {
        match *self {
            RegretGradient::Quadratic { center, scale } => 2.0 * scale * (p - center),
            RegretGradient::Linear { slope } => slope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceGradientConfig {
    /// Overall rate `Lambda`.
    pub rate: f64,
    pub alpha: f64,
}

impl PriceGradientConfig {
    /// Velocity `(P1', P2')` of the two-regime system.
    pub fn velocity(&self, d1: f64, d2: f64, p1: f64, p2: f64) -> [f64; 2] {
        let h = 0.5 * self.alpha * self.rate;
        if p1 < p2 {
            let common = h * (d1 - d2);
            [-h * (p1 - p2) + common, h * (p1 - p2) + common]
        } else {
            [-h * d1, h * d2]
        }
    }
}

/// RK4 on the piecewise price system. The trace stores `P1` and `P2` in the
/// price columns and zero risks.
pub fn simulate_projected_gradient_prices(
    r1: &dyn Fn(f64) -> f64,
    r2: &dyn Fn(f64) -> f64,
    cfg: &PriceGradientConfig,
    x0: (f64, f64),
    horizon: f64,
    dt: f64,
) -> Result<Trace> {
    if !(cfg.rate > 0.0 && cfg.alpha > 0.0) {
        return Err(Error::InvalidInput(
            "rate and alpha must be positive".into(),
        ));
    }
    let n = step_count(horizon, dt)?;
    let f = |p: [f64; 2]| cfg.velocity(r1(p[0]), r2(p[1]), p[0], p[1]);
    let row = |t: f64, p: [f64; 2]| TraceRow {
        t,
        eps_s: 0.0,
        eps_b: 0.0,
        p_s: p[0],
        p_b: p[1],
        gap: p[0] - p[1],
    };
    let mut p = [x0.0, x0.1];
    let mut trace = Trace::new("projected-gradient", dt);
    trace.push(row(0.0, p))?;
    let mut flips = 0;
    for i in 0..n {
        let k1 = f(p);
        let k2 = f([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]]);
        let k3 = f([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]]);
        let k4 = f([p[0] + dt * k3[0], p[1] + dt * k3[1]]);
        let next = [
            p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        let t = (i + 1) as f64 * dt;
        if (p[0] < p[1]) != (next[0] < next[1]) {
            flips += 1;
            trace.event(t, EventKind::RegimeSwitch);
        }
        p = next;
        trace.push(row(t, p))?;
    }
    if flips * 100 > n.max(100) {
        trace
            .warnings
            .push(format!("regime chatter: {flips} switches in {n} steps"));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn halfplane_examples() {
        assert_eq!(project_halfplane([0.3, 0.7]), [0.5, 0.5]);
        assert_eq!(project_halfplane([0.7, 0.3]), [0.7, 0.3]);
    }

    #[test]
    fn budget_projection_cases() {
        let k = ConstraintSet::Budget {
            lambda: 0.5,
            w: 1.0,
        };
        assert_eq!(k.project([0.5, 0.5]), [0.5, 0.5]);
        assert_eq!(k.project([-1.0, 0.5]), [0.0, 0.5]);
        let y = k.project([2.0, 2.0]);
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-15);
        // far along one axis the other coordinate hits zero
        let y = k.project([5.0, 0.1]);
        assert_eq!(y[1], 0.0);
        assert_abs_diff_eq!(y[0], 2.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn budget_projection_is_a_projection(
            x in prop::array::uniform2(-5.0f64..5.0),
            y in prop::array::uniform2(-5.0f64..5.0),
            lambda in 0.0f64..=1.0,
            w in 0.0f64..3.0,
        ) {
            let k = ConstraintSet::Budget { lambda, w };
            let px = k.project(x);
            let py = k.project(y);
            prop_assert!(k.contains(px));
            let ppx = k.project(px);
            prop_assert!((ppx[0] - px[0]).abs() <= 1e-12 && (ppx[1] - px[1]).abs() <= 1e-12);
            let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            prop_assert!(d(px, py) <= d(x, y) + 1e-12);
            // obtuse-angle characterization against the corners of the set
            let a = [lambda, 1.0 - lambda];
            let mut corners = vec![[0.0, 0.0]];
            if a[0] > 0.0 { corners.push([w / a[0], 0.0]); }
            if a[1] > 0.0 { corners.push([0.0, w / a[1]]); }
            for z in corners {
                let ip = (x[0] - px[0]) * (z[0] - px[0]) + (x[1] - px[1]) * (z[1] - px[1]);
                prop_assert!(ip <= 1e-9);
            }
        }
    }

    #[test]
    fn fixed_point_start_stays_put() {
        let c = PriceCurvePair::affine_example();
        let run = simulate_projected_discrete(
            &c,
            &ConstraintSet::HalfPlane,
            (0.6, 0.4),
            &StepSchedule::Constant { size: 0.2 },
            50,
            1e-12,
        )
        .unwrap();
        assert!(run.converged);
        assert_eq!(run.residuals, vec![0.0]);
        assert!(run
            .trace
            .rows
            .iter()
            .all(|r| r.eps_s == 0.6 && r.eps_b == 0.4));
    }

    #[test]
    fn constant_steps_contract_geometrically() {
        let c = PriceCurvePair::affine_example();
        let run = simulate_projected_discrete(
            &c,
            &ConstraintSet::HalfPlane,
            (0.2, 0.0),
            &StepSchedule::Constant { size: 0.2 },
            200,
            1e-14,
        )
        .unwrap();
        assert!(run.converged);
        let r = &run.residuals;
        for w in r.windows(2).take(20) {
            assert_abs_diff_eq!(w[1] / w[0], 0.6, epsilon = 1e-9);
        }
        assert!(run.trace.rows.iter().all(|r| r.eps_s >= r.eps_b));
    }

    #[test]
    fn diminishing_steps_reach_the_frontier() {
        let c = PriceCurvePair::sqrt_example();
        let k = ConstraintSet::Budget {
            lambda: 0.5,
            w: 1.0,
        };
        let run = simulate_projected_discrete(
            &c,
            &k,
            (0.0, 0.0),
            &StepSchedule::Diminishing { scale: 1.0 },
            20_000,
            1e-9,
        )
        .unwrap();
        assert!(run
            .trace
            .rows
            .iter()
            .all(|r| k.contains([r.eps_s, r.eps_b])));
        assert!(run.trace.last().gap.abs() <= 1e-3, "{:?}", run.trace.last());
    }

    #[test]
    fn outside_start_is_rejected() {
        let c = PriceCurvePair::affine_example();
        let r = simulate_projected_discrete(
            &c,
            &ConstraintSet::HalfPlane,
            (0.0, 1.0),
            &StepSchedule::Constant { size: 0.1 },
            5,
            1e-9,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn quadratic_regrets_start_stationary() {
        let r1 = RegretGradient::Quadratic {
            center: 0.7,
            scale: 1.0,
        };
        let r2 = RegretGradient::Quadratic {
            center: 0.2,
            scale: 1.0,
        };
        let cfg = PriceGradientConfig {
            rate: 1.0,
            alpha: 1.0,
        };
        let tr = simulate_projected_gradient_prices(
            &|p| r1.at(p),
            &|p| r2.at(p),
            &cfg,
            (0.7, 0.2),
            1.0,
            0.01,
        )
        .unwrap();
        assert!(tr.rows.iter().all(|r| r.p_s == 0.7 && r.p_b == 0.2));
    }

    #[test]
    fn averaging_flow_conserves_the_sum() {
        let cfg = PriceGradientConfig {
            rate: 1.0,
            alpha: 2.0,
        };
        let zero = |_: f64| 0.0;
        let tr =
            simulate_projected_gradient_prices(&zero, &zero, &cfg, (0.2, 0.7), 10.0, 0.01).unwrap();
        for r in &tr.rows {
            assert_abs_diff_eq!(r.p_s + r.p_b, 0.9, epsilon = 1e-12);
        }
        assert!(tr.last().gap.abs() < 1e-4);
        assert!(tr.last().gap <= 0.0);
    }

    #[test]
    fn velocity_is_linear_in_alpha() {
        let a = PriceGradientConfig {
            rate: 1.0,
            alpha: 1.0,
        };
        let b = PriceGradientConfig {
            rate: 1.0,
            alpha: 2.0,
        };
        for (p1, p2) in [(0.2, 0.7), (0.7, 0.2)] {
            let va = a.velocity(0.3, -0.4, p1, p2);
            let vb = b.velocity(0.3, -0.4, p1, p2);
            assert_abs_diff_eq!(vb[0], 2.0 * va[0], epsilon = 1e-15);
            assert_abs_diff_eq!(vb[1], 2.0 * va[1], epsilon = 1e-15);
        }
    }
}
