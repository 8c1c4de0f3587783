//! Random instances shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tatonnement_core::market::{BeliefMeasure, ContingentClaim, MarketModel};
use tatonnement_core::preferences::curves::CurveSpec;
use tatonnement_core::preferences::{
    price_at_belief, AgentSpec, PriceCurvePair, Role, UtilitySpec,
};
use tatonnement_core::regret::RegretConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Interior measure with weights at least `0.05 / k`-ish.
pub fn measure(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Incomplete arbitrage-free market: prices are expectations under a random
/// interior measure, so that measure is risk neutral.
pub fn market(rng: &mut ChaCha8Rng, k: usize, n: usize) -> MarketModel {
    assert!(n >= 1 && n < k);
    let r = rng.random_range(0.0..0.1);
    let q = measure(rng, k);
    let payoffs: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..n).map(|_| rng.random_range(0.0..2.0)));
            row
        })
        .collect();
    let prices: Vec<f64> = (0..n)
        .map(|j| (0..k).map(|i| q[i] * payoffs[i][j]).sum::<f64>() / (1.0 + r))
        .collect();
    MarketModel::new(r, prices, payoffs).expect("valid random market")
}

pub fn claim(rng: &mut ChaCha8Rng, k: usize) -> ContingentClaim {
    ContingentClaim::new((0..k).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn cara(rng: &mut ChaCha8Rng, k: usize) -> AgentSpec {
    let gamma = rng.random_range(0.3..2.0);
    let w0 = rng.random_range(-1.0..1.0);
    AgentSpec::new(
        UtilitySpec::Exponential { gamma },
        w0,
        BeliefMeasure::new(measure(rng, k)).unwrap(),
    )
    .unwrap()
}

/// Exponential, power or log utility with comfortably positive wealth.
pub fn agent(rng: &mut ChaCha8Rng, k: usize) -> AgentSpec {
    let utility = match rng.random_range(0..3) {
        0 => UtilitySpec::Exponential {
            gamma: rng.random_range(0.3..2.0),
        },
        1 => UtilitySpec::Power {
            eta: rng.random_range(0.5..3.0),
        },
        _ => UtilitySpec::Log,
    };
    let w0 = rng.random_range(3.0..6.0);
    AgentSpec::new(utility, w0, BeliefMeasure::new(measure(rng, k)).unwrap()).unwrap()
}

/// Closed-form CARA prices with only the riskless asset.
pub fn cara_prices(gamma: f64, r: f64, q: &[f64], f: &[f64]) -> (f64, f64) {
    let g = 1.0 + r;
    let up: f64 = q.iter().zip(f).map(|(a, b)| a * (gamma * b).exp()).sum();
    let down: f64 = q.iter().zip(f).map(|(a, b)| a * (-gamma * b).exp()).sum();
    (up.ln() / (gamma * g), -down.ln() / (gamma * g))
}

/// Falling seller and rising buyer curves of random affine or sqrt shape.
pub fn synthetic_curves(rng: &mut ChaCha8Rng) -> PriceCurvePair {
    let top = rng.random_range(0.6..1.5);
    let bottom = rng.random_range(-0.5..0.4);
    let a = rng.random_range(0.3..2.0);
    let b = rng.random_range(0.3..2.0);
    let (seller, buyer) = if rng.random_bool(0.5) {
        (
            CurveSpec::Sqrt {
                intercept: top,
                coefficient: -a,
            },
            CurveSpec::Sqrt {
                intercept: bottom,
                coefficient: b,
            },
        )
    } else {
        (
            CurveSpec::Affine {
                intercept: top,
                slope: -a,
            },
            CurveSpec::Affine {
                intercept: bottom,
                slope: b,
            },
        )
    };
    PriceCurvePair::synthetic(seller, buyer).unwrap()
}

/// Smallest `lambda eps_S + (1 - lambda) eps_B` over a square grid of
/// feasible points (`P_S <= P_B`).
pub fn sharing_grid_oracle(c: &PriceCurvePair, lambda: f64, hi: f64, mesh: f64) -> f64 {
    let n = (hi / mesh).round() as usize;
    let ps: Vec<f64> = (0..=n)
        .map(|i| c.seller_price(i as f64 * mesh).unwrap())
        .collect();
    let pb: Vec<f64> = (0..=n)
        .map(|i| c.buyer_price(i as f64 * mesh).unwrap())
        .collect();
    let mut best = f64::INFINITY;
    for (i, s) in ps.iter().enumerate() {
        // smallest buyer index that covers the seller's price
        if let Some(j) = pb.iter().position(|b| b >= s) {
            best = best.min(mesh * (lambda * i as f64 + (1.0 - lambda) * j as f64));
        }
    }
    best
}

/// Exhaustive oracle on the two 1-D simplices with mesh 0.005. A party
/// with zero weight keeps its anchor.
pub fn belief_grid_oracle(
    m: &MarketModel,
    a: &AgentSpec,
    f: &ContingentClaim,
    cfg: &RegretConfig,
) -> f64 {
    let n = 200;
    let price = |t: f64, role: Role| {
        let q = BeliefMeasure::boundary(vec![t, 1.0 - t]).unwrap();
        price_at_belief(m, a, f, role, &q).unwrap()
    };
    let ts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let (qs, qb) = (cfg.seller_anchor.weights(), cfg.buyer_anchor.weights());
    let ts_s = if cfg.lambda == 0.0 {
        vec![qs[0]]
    } else {
        ts.clone()
    };
    let ts_b = if cfg.lambda == 1.0 {
        vec![qb[0]]
    } else {
        ts.clone()
    };
    let ps: Vec<f64> = ts_s.iter().map(|&t| price(t, Role::Seller)).collect();
    let pb: Vec<f64> = ts_b.iter().map(|&t| price(t, Role::Buyer)).collect();
    let d = |a: &[f64], t: f64| cfg.distance.value(a, &[t, 1.0 - t]);
    let mut best = f64::INFINITY;
    for (i, &s) in ts_s.iter().enumerate() {
        for (j, &b) in ts_b.iter().enumerate() {
            if ps[i] <= pb[j] {
                best = best.min(cfg.lambda * d(qs, s) + (1.0 - cfg.lambda) * d(qb, b));
            }
        }
    }
    best
}
