//! Extremes of a belief-parameterized price over the closed simplex.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::Result;
use crate::market::{ContingentClaim, MarketModel};
use crate::numeric::{dot, project_simplex, simplex_grid};
use crate::preferences::pricing::{price_at_weights_in, pricing_bracket, Role};
use crate::preferences::utility::AgentSpec;

/// Interior starts drawn in addition to the vertices and the barycenter.
pub const INTERIOR_STARTS: usize = 32;
/// Grid certificates are skipped above this many grid points.
const GRID_LIMIT: usize = 5000;
const GRID_MESH: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceExtremes {
    pub min: f64,
    pub max: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    /// Best grid values, when the grid was small enough to evaluate.
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
}

/// Forward-difference gradient of `f(q / sum q)`; perturbations only add
/// mass, so boundary points stay in the domain.
pub(crate) fn homogeneous_gradient<F>(f: &mut F, q: &[f64], fq: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = Vec::with_capacity(q.len());
    let mut trial = q.to_vec();
    for i in 0..q.len() {
        trial[i] += h;
        let s = 1.0 + h;
        let normalized: Vec<f64> = trial.iter().map(|v| v / s).collect();
        g.push((f(&normalized)? - fq) / h);
        trial[i] = q[i];
    }
    Ok(g)
}

/// Projected gradient descent on the simplex with Armijo backtracking.
pub(crate) fn descend_on_simplex<F>(
    f: &mut F,
    start: &[f64],
    max_iter: usize,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut q = project_simplex(start);
    let mut fq = f(&q)?;
    let mut t = 1.0;
    for _ in 0..max_iter {
        let g = homogeneous_gradient(f, &q, fq, 1e-7)?;
        let mut moved = false;
        for _ in 0..50 {
            let cand =
                project_simplex(&q.iter().zip(&g).map(|(a, b)| a - t * b).collect::<Vec<_>>());
            let step: Vec<f64> = cand.iter().zip(&q).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|s| s.abs() < 1e-13) {
                break;
            }
            let fc = f(&cand)?;
            if fc <= fq + 1e-4 * decrease {
                let done = (fq - fc).abs() <= 1e-15 * (1.0 + fq.abs())
                    || step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-11;
                q = cand;
                fq = fc;
                moved = !done;
                t *= 2.0;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((q, fq))
}

/// Multi-start minimization over the closed simplex of dimension `k`,
/// certified against a grid of mesh 0.05 when that grid is small.
pub(crate) fn minimize_on_simplex<F>(
    mut f: F,
    k: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, Option<f64>)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut starts: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut v = vec![0.0; k];
            v[i] = 1.0;
            v
        })
        .collect();
    starts.push(vec![1.0 / k as f64; k]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..INTERIOR_STARTS {
        let draw: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = draw.iter().sum();
        starts.push(draw.iter().map(|v| v / s).collect());
    }
    let mut best = (starts[0].clone(), f64::INFINITY);
    for s in &starts {
        let (q, v) = descend_on_simplex(&mut f, s, 200)?;
        if v < best.1 {
            best = (q, v);
        }
    }
    let grid = simplex_grid(k, GRID_MESH);
    let mut grid_best = None;
    if grid.len() <= GRID_LIMIT {
        let mut gb = (grid[0].clone(), f64::INFINITY);
        for p in &grid {
            let v = f(p)?;
            if v < gb.1 {
                gb = (p.clone(), v);
            }
        }
        if gb.1 < best.1 {
            let (q, v) = descend_on_simplex(&mut f, &gb.0, 200)?;
            best = if v <= gb.1 { (q, v) } else { gb.clone() };
        }
        grid_best = Some(gb.1);
    }
    Ok((best.0, best.1, grid_best))
}

/// Minimum and maximum of the agent's indifference price as beliefs range
/// over the closed simplex.
pub fn price_extremes(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
) -> Result<PriceExtremes> {
    price_extremes_seeded(model, agent, claim, role, 0)
}

pub fn price_extremes_seeded(
    model: &MarketModel,
    agent: &AgentSpec,
    claim: &ContingentClaim,
    role: Role,
    seed: u64,
) -> Result<PriceExtremes> {
    let k = model.n_states();
    let bracket = pricing_bracket(model, claim)?;
    let price = |q: &[f64]| price_at_weights_in(model, agent, claim, role, q, bracket);
    let (argmin, min, grid_min) = minimize_on_simplex(price, k, seed)?;
    let (argmax, neg_max, grid_neg) = minimize_on_simplex(|q: &[f64]| Ok(-price(q)?), k, seed)?;
    Ok(PriceExtremes {
        min,
        max: -neg_max,
        argmin,
        argmax,
        grid_min,
        grid_max: grid_neg.map(|v| -v),
    })
}
