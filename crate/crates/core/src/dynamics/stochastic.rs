//! Noisy risk updating and its almost-sure stability certificate.
//!
//! The scheme is
//! `d eps_S = -f1 gap dt + sigma1 gap dW`, `d eps_B = f2 gap dt + sigma2 gap dW`
//! with one scalar Brownian motion shared by both equations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clamp_state, step_count, SignConvention, Trace, TraceRow, UpdateFieldSpec};
use crate::error::{Error, Result};
use crate::preferences::curves::{PriceCurve, PriceCurvePair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeSpec {
    pub f1: f64,
    pub f2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Keep every n-th step in the stored traces; 0 picks about 1000 rows.
    #[serde(default)]
    pub record_every: usize,
}

impl SdeSpec {
    pub fn validate(&self) -> Result<()> {
        step_count(self.horizon, self.dt)?;
        if self.paths == 0 {
            return Err(Error::InvalidInput("need at least one path".into()));
        }
        if [self.f1, self.f2, self.sigma1, self.sigma2]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "drift and noise coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    /// The drift as an update field, for comparison with the ODE.
    pub fn drift_field(&self) -> UpdateFieldSpec {
        UpdateFieldSpec::constant(self.f1, self.f2).with_sign(SignConvention::SellerNegated)
    }

    fn stride(&self, steps: usize) -> usize {
        if self.record_every > 0 {
            self.record_every
        } else {
            (steps / 1000).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub index: usize,
    pub trace: Trace,
    /// `(1/T) ln |gap(T) / gap(0)|`, absent for diverged paths.
    pub exponent: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSummary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub diverged: usize,
}

impl ExponentSummary {
    fn from_values(mut v: Vec<f64>, diverged: usize) -> Self {
        v.retain(|x| x.is_finite());
        let n = v.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                std_dev: f64::NAN,
                min: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
                diverged,
            };
        }
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Self {
            count: n,
            mean,
            std_dev: var.sqrt(),
            min: v[0],
            median,
            max: v[n - 1],
            diverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub spec: SdeSpec,
    pub paths: Vec<PathResult>,
    pub summary: ExponentSummary,
}

impl Ensemble {
    pub fn exponents(&self) -> Vec<f64> {
        self.paths.iter().filter_map(|p| p.exponent).collect()
    }

    /// All paths concatenated, each prefixed by its index.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,t,eps_S,eps_B,P_S,P_B,gap\n");
        for p in &self.paths {
            for line in p.trace.to_csv().lines().skip(1) {
                s.push_str(&p.index.to_string());
                s.push(',');
                s.push_str(line);
                s.push('\n');
            }
        }
        s
    }
}

fn run_path(
    curves: &PriceCurvePair,
    spec: &SdeSpec,
    eps0: (f64, f64),
    index: usize,
    steps: usize,
) -> Result<PathResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let stride = spec.stride(steps);
    let sqdt = spec.dt.sqrt();
    let (mut es, mut eb) = eps0;
    let mut trace = Trace::new("sde", spec.dt);
    trace.seed = Some(spec.seed);
    let first = TraceRow::at(curves, 0.0, es, eb)?;
    let g0 = first.gap;
    trace.push(first)?;
    let mut gap = g0;
    for i in 0..steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = sqdt * z;
        let ds = -spec.f1 * gap * spec.dt + spec.sigma1 * gap * dw;
        let db = spec.f2 * gap * spec.dt + spec.sigma2 * gap * dw;
        let next_gap = gap + taylor_increment(&*curves.seller, es, ds)?
            - taylor_increment(&*curves.buyer, eb, db)?;
        es += ds;
        eb += db;
        let t = (i + 1) as f64 * spec.dt;
        let clamps = trace.events.len();
        clamp_state(&mut trace, t, &mut es, &mut eb);
        let mut row = TraceRow::at(curves, t, es, eb)?;
        if trace.events.len() == clamps {
            row.gap = next_gap;
        }
        gap = row.gap;
        let keep = (i + 1) % stride == 0 || i + 1 == steps;
        if !gap.is_finite() || gap.abs() > super::DIVERGENCE_GAP {
            trace
                .warnings
                .push(format!("diverged at t={t} with gap {gap:e}"));
            return Ok(PathResult {
                index,
                trace,
                exponent: None,
                diverged: true,
            });
        }
        if keep {
            trace.push(row)?;
        }
    }
    let exponent = if g0 != 0.0 {
        Some((gap / g0).abs().ln() / spec.horizon)
    } else {
        None
    };
    Ok(PathResult {
        index,
        trace,
        exponent,
        diverged: false,
    })
}

/// Second-order change of a curve over a small step.
///
/// The gap is carried as its own state: recomputing it as `P_S - P_B`
/// would floor it at the rounding level of the prices, long before the
/// decay rates of interest are visible.
fn taylor_increment(curve: &dyn PriceCurve, eps: f64, d: f64) -> Result<f64> {
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(curve.derivative(eps)? * d + 0.5 * curve.second_derivative(eps)? * d * d)
}

/// Euler-Maruyama ensemble. Path `p` draws from the ChaCha8 stream `p` of
/// `seed`, so results do not depend on scheduling.
pub fn simulate_sde(curves: &PriceCurvePair, spec: &SdeSpec, eps0: (f64, f64)) -> Result<Ensemble> {
    spec.validate()?;
    let steps = step_count(spec.horizon, spec.dt)?;
    let paths: Vec<PathResult> = (0..spec.paths)
        .into_par_iter()
        .map(|p| run_path(curves, spec, eps0, p, steps))
        .collect::<Result<_>>()?;
    let diverged = paths.iter().filter(|p| p.diverged).count();
    let summary =
        ExponentSummary::from_values(paths.iter().filter_map(|p| p.exponent).collect(), diverged);
    Ok(Ensemble {
        spec: *spec,
        paths,
        summary,
    })
}

/// Rectangle of states over which the coefficient bounds are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub eps_s: (f64, f64),
    pub eps_b: (f64, f64),
    pub points: usize,
}

impl StateGrid {
    /// Bounding box of a set of traces.
    pub fn bounding<'a>(traces: impl IntoIterator<Item = &'a Trace>, points: usize) -> Self {
        let mut g = Self {
            eps_s: (f64::INFINITY, f64::NEG_INFINITY),
            eps_b: (f64::INFINITY, f64::NEG_INFINITY),
            points,
        };
        for tr in traces {
            for r in &tr.rows {
                g.eps_s = (g.eps_s.0.min(r.eps_s), g.eps_s.1.max(r.eps_s));
                g.eps_b = (g.eps_b.0.min(r.eps_b), g.eps_b.1.max(r.eps_b));
            }
        }
        g
    }

    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        if n <= 1 || range.1 <= range.0 {
            return vec![range.0];
        }
        (0..n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn states(&self) -> Vec<(f64, f64)> {
        let xs = Self::axis(self.eps_s, self.points);
        let ys = Self::axis(self.eps_b, self.points);
        xs.iter()
            .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub r1_range: (f64, f64),
    pub r2_range: (f64, f64),
    pub r3sq_range: (f64, f64),
    pub bound_k: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub condition_satisfied: bool,
    /// `-(sigma_lower - K - sigma_upper / 2)`, only when the condition holds.
    pub predicted_rate: Option<f64>,
    pub estimated_exponents: Option<ExponentSummary>,
    pub grid: StateGrid,
}

/// Values of `R2` above this count as positive.
const R2_TOLERANCE: f64 = 1e-9;

/// `R1 = P_S' g1 - P_B' g2`, `R2 = (P_S'' s1^2 - P_B'' s2^2) / 2`,
/// `R3 = P_S' s1 - P_B' s2` over the grid, with the drift signs of
/// [`SdeSpec`].
pub fn stability_report(
    curves: &PriceCurvePair,
    spec: &SdeSpec,
    grid: &StateGrid,
    ensemble: Option<&Ensemble>,
) -> Result<StabilityReport> {
    let (g1, g2) = (-spec.f1, spec.f2);
    let mut r1 = (f64::INFINITY, f64::NEG_INFINITY);
    let mut r2 = r1;
    let mut r3 = r1;
    for (es, eb) in grid.states() {
        let ds = curves.seller.derivative(es)?;
        let db = curves.buyer.derivative(eb)?;
        let dds = curves.seller.second_derivative(es)?;
        let ddb = curves.buyer.second_derivative(eb)?;
        let a = ds * g1 - db * g2;
        let b = 0.5 * (dds * spec.sigma1.powi(2) - ddb * spec.sigma2.powi(2));
        let c = (ds * spec.sigma1 - db * spec.sigma2).powi(2);
        r1 = (r1.0.min(a), r1.1.max(a));
        r2 = (r2.0.min(b), r2.1.max(b));
        r3 = (r3.0.min(c), r3.1.max(c));
    }
    let bound_k = r1.0.abs().max(r1.1.abs());
    let (lo, hi) = r3;
    let condition_satisfied = r2.1 <= R2_TOLERANCE && lo > bound_k + 0.5 * hi;
    Ok(StabilityReport {
        r1_range: r1,
        r2_range: r2,
        r3sq_range: r3,
        bound_k,
        sigma_lower: lo,
        sigma_upper: hi,
        condition_satisfied,
        predicted_rate: condition_satisfied.then(|| -(lo - bound_k - 0.5 * hi)),
        estimated_exponents: ensemble.map(|e| e.summary),
        grid: *grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_ode;
    use approx::assert_abs_diff_eq;

    fn spec(sigma: f64, paths: usize) -> SdeSpec {
        SdeSpec {
            f1: 1.0,
            f2: 0.5,
            sigma1: sigma,
            sigma2: sigma,
            horizon: 4.0,
            dt: 1e-3,
            paths,
            seed: 7,
            record_every: 1,
        }
    }

    const START: (f64, f64) = (0.5, 0.49);

    #[test]
    fn noiseless_gap_grows_at_rate_one_half() {
        let c = PriceCurvePair::affine_example();
        let e = simulate_sde(&c, &spec(0.0, 2), START).unwrap();
        let ex = e.paths[0].exponent.unwrap();
        assert_abs_diff_eq!(ex, 0.5, epsilon = 1e-3);
        assert_eq!(e.paths[0].trace, e.paths[1].trace);
    }

    #[test]
    fn noiseless_matches_ode() {
        let c = PriceCurvePair::affine_example();
        let s = spec(0.0, 1);
        let e = simulate_sde(&c, &s, START).unwrap();
        let ode = simulate_ode(&c, &s.drift_field(), START, s.horizon, s.dt).unwrap();
        assert_eq!(e.paths[0].trace.rows.len(), ode.rows.len());
        for (a, b) in e.paths[0].trace.rows.iter().zip(&ode.rows) {
            assert!((a.gap - b.gap).abs() <= 5.0 * s.dt);
        }
    }

    #[test]
    fn same_seed_same_csv() {
        let c = PriceCurvePair::affine_example();
        let a = simulate_sde(&c, &spec(1.0, 8), START).unwrap();
        let b = simulate_sde(&c, &spec(1.0, 8), START).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let mut other = spec(1.0, 8);
        other.seed = 8;
        let d = simulate_sde(&c, &other, START).unwrap();
        assert_ne!(a.to_csv(), d.to_csv());
        assert_ne!(a.paths[0].trace, a.paths[1].trace);
    }

    #[test]
    fn report_for_the_linear_example() {
        let c = PriceCurvePair::affine_example();
        let grid = StateGrid {
            eps_s: (0.0, 1.0),
            eps_b: (0.0, 1.0),
            points: 5,
        };
        let r = stability_report(&c, &spec(1.0, 1), &grid, None).unwrap();
        assert_abs_diff_eq!(r.bound_k, 0.5, epsilon = 1e-15);
        assert_eq!(r.r2_range, (0.0, 0.0));
        assert_abs_diff_eq!(r.sigma_lower, 4.0, epsilon = 1e-15);
        assert!(r.condition_satisfied);
        assert_abs_diff_eq!(r.predicted_rate.unwrap(), -1.5, epsilon = 1e-15);

        let r = stability_report(&c, &spec(0.0, 1), &grid, None).unwrap();
        assert_eq!(r.sigma_lower, 0.0);
        assert!(!r.condition_satisfied && r.predicted_rate.is_none());
    }

    #[test]
    fn bounding_grid_covers_traces() {
        let c = PriceCurvePair::affine_example();
        let e = simulate_sde(&c, &spec(1.0, 4), START).unwrap();
        let g = StateGrid::bounding(e.paths.iter().map(|p| &p.trace), 3);
        for p in &e.paths {
            for r in &p.trace.rows {
                assert!(r.eps_s >= g.eps_s.0 && r.eps_s <= g.eps_s.1);
            }
        }
        assert_eq!(g.states().len(), 9);
    }
}
