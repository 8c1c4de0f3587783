//! Regret-minimizing belief updates and price-space regret.
//!
//! Belief primal: minimize `lambda d_S(Qbar, Q_S) + (1 - lambda) d_B(Q_B, Qlow)`
//! subject to `P_S(Q_S) <= P_B(Q_B)`. Belief dual: maximize
//! `P_B(Q_B) - P_S(Q_S)` subject to the regret being at most `w`.
//!
//! Both are solved by an augmented Lagrangian whose penalty doubles until
//! the constraint is met, with projected-gradient inner solves on the
//! product of the two belief sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BeliefMeasure, ContingentClaim, MarketModel, RiskNeutralSet};
use crate::numeric::minimize::{descend_from, scan_then_golden};
use crate::numeric::roots::brent;
use crate::numeric::{dot, project_simplex, simplex_grid};
use crate::preferences::extremes::homogeneous_gradient;
use crate::preferences::pricing::{price_at_weights_in, pricing_bracket, Role};
use crate::preferences::utility::AgentSpec;

pub const INTERIOR_STARTS: usize = 16;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    /// `KL(q || anchor)`, the anchor acting as reference measure.
    KlDivergence,
}

impl Distance {
    pub fn value(self, anchor: &[f64], q: &[f64]) -> f64 {
        match self {
            Distance::SquaredEuclidean => {
                q.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            Distance::KlDivergence => q
                .iter()
                .zip(anchor)
                .map(|(&qi, &ai)| if qi > 0.0 { qi * (qi / ai).ln() } else { 0.0 })
                .sum(),
        }
    }

    pub fn gradient(self, anchor: &[f64], q: &[f64]) -> Vec<f64> {
        match self {
            Distance::SquaredEuclidean => {
                q.iter().zip(anchor).map(|(a, b)| 2.0 * (a - b)).collect()
            }
            Distance::KlDivergence => q
                .iter()
                .zip(anchor)
                .map(|(&qi, &ai)| (qi.max(1e-300) / ai).ln() + 1.0)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretConfig {
    pub lambda: f64,
    /// Seller's preferred beliefs `Qbar`.
    pub seller_anchor: BeliefMeasure,
    /// Buyer's preferred beliefs `Qlow`.
    pub buyer_anchor: BeliefMeasure,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl RegretConfig {
    pub fn new(lambda: f64, seller_anchor: BeliefMeasure, buyer_anchor: BeliefMeasure) -> Self {
        Self {
            lambda,
            seller_anchor,
            buyer_anchor,
            distance: Distance::default(),
            budget: None,
            seed: 0,
        }
    }

    pub fn with_budget(mut self, w: f64) -> Self {
        self.budget = Some(w);
        self
    }

    pub fn with_distance(mut self, d: Distance) -> Self {
        self.distance = d;
        self
    }

    /// Weights 0 and 1 are admitted: the unweighted party then keeps its anchor.
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.seller_anchor.len() != k || self.buyer_anchor.len() != k {
            return Err(Error::Dimension(format!("anchors must have {k} states")));
        }
        if let Some(w) = self.budget {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "regret budget must be >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSolution {
    pub seller_beliefs: Option<Vec<f64>>,
    pub buyer_beliefs: Option<Vec<f64>>,
    pub seller_price: f64,
    pub buyer_price: f64,
    pub price: f64,
    pub total_regret: f64,
    /// `P_B - P_S`
    pub surplus: f64,
    /// Violation of the problem's constraint (price order or regret budget).
    pub constraint_residual: f64,
    pub multiplier: f64,
    /// Best objective over the certification grid, when one was evaluated.
    pub grid_objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A price as a function of beliefs, with its gradient.
pub trait BeliefPrice: Sync {
    fn price(&self, q: &[f64]) -> Result<f64>;
    fn gradient(&self, q: &[f64], pq: f64) -> Result<Vec<f64>>;
}

/// Indifference price of an agent template under substituted beliefs.
pub struct PreferencePrice<'a> {
    model: &'a MarketModel,
    agent: &'a AgentSpec,
    claim: &'a ContingentClaim,
    role: Role,
    bracket: (f64, f64),
}

impl<'a> PreferencePrice<'a> {
    pub fn new(
        model: &'a MarketModel,
        agent: &'a AgentSpec,
        claim: &'a ContingentClaim,
        role: Role,
    ) -> Result<Self> {
        Ok(Self {
            model,
            agent,
            claim,
            role,
            bracket: pricing_bracket(model, claim)?,
        })
    }
}

impl BeliefPrice for PreferencePrice<'_> {
    fn price(&self, q: &[f64]) -> Result<f64> {
        price_at_weights_in(
            self.model,
            self.agent,
            self.claim,
            self.role,
            q,
            self.bracket,
        )
    }

    fn gradient(&self, q: &[f64], pq: f64) -> Result<Vec<f64>> {
        homogeneous_gradient(&mut |v: &[f64]| self.price(v), q, pq, 1e-7)
    }
}

/// Discounted expectation `E_q[F] / (1 + r)`.
pub struct LinearPrice {
    discounted: Vec<f64>,
}

impl LinearPrice {
    pub fn new(claim: &ContingentClaim, riskless_rate: f64) -> Self {
        Self {
            discounted: claim
                .payoff
                .iter()
                .map(|f| f / (1.0 + riskless_rate))
                .collect(),
        }
    }
}

impl BeliefPrice for LinearPrice {
    fn price(&self, q: &[f64]) -> Result<f64> {
        Ok(dot(q, &self.discounted))
    }

    fn gradient(&self, _q: &[f64], _pq: f64) -> Result<Vec<f64>> {
        Ok(self.discounted.clone())
    }
}

enum Feasible<'a> {
    Simplex,
    RiskNeutral(&'a RiskNeutralSet),
}

struct BeliefProblem<'a> {
    seller: &'a dyn BeliefPrice,
    buyer: &'a dyn BeliefPrice,
    lambda: f64,
    anchor_s: Vec<f64>,
    anchor_b: Vec<f64>,
    distance: Distance,
    set: Feasible<'a>,
    k: usize,
}

/// Objective and constraint of an inequality-constrained problem.
#[derive(Clone, Copy)]
enum Mode {
    /// min regret s.t. `P_S - P_B <= 0`
    Primal,
    /// min `P_S - P_B` s.t. `regret - w <= 0`
    Dual(f64),
}

struct Eval {
    regret: f64,
    ps: f64,
    pb: f64,
}

impl Eval {
    fn gap(&self) -> f64 {
        self.ps - self.pb
    }
}

impl<'a> BeliefProblem<'a> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.k)
    }

    fn project_block(&self, v: &[f64]) -> Vec<f64> {
        match self.set {
            Feasible::Simplex => project_simplex(v),
            Feasible::RiskNeutral(s) => s.project(v),
        }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let (s, b) = self.split(x);
        // a party with zero weight keeps its anchor
        let mut out = if self.lambda == 0.0 {
            self.anchor_s.clone()
        } else {
            self.project_block(s)
        };
        out.extend(if self.lambda == 1.0 {
            self.anchor_b.clone()
        } else {
            self.project_block(b)
        });
        out
    }

    fn regret(&self, x: &[f64]) -> f64 {
        let (s, b) = self.split(x);
        self.lambda * self.distance.value(&self.anchor_s, s)
            + (1.0 - self.lambda) * self.distance.value(&self.anchor_b, b)
    }

    fn eval(&self, x: &[f64]) -> Result<Eval> {
        let (s, b) = self.split(x);
        Ok(Eval {
            regret: self.regret(x),
            ps: self.seller.price(s)?,
            pb: self.buyer.price(b)?,
        })
    }

    fn regret_gradient(&self, x: &[f64]) -> Vec<f64> {
        let (s, b) = self.split(x);
        let mut g: Vec<f64> = self
            .distance
            .gradient(&self.anchor_s, s)
            .iter()
            .map(|v| self.lambda * v)
            .collect();
        g.extend(
            self.distance
                .gradient(&self.anchor_b, b)
                .iter()
                .map(|v| (1.0 - self.lambda) * v),
        );
        g
    }

    fn gap_gradient(&self, x: &[f64], e: &Eval) -> Result<Vec<f64>> {
        let (s, b) = self.split(x);
        let mut g = self.seller.gradient(s, e.ps)?;
        g.extend(self.buyer.gradient(b, e.pb)?.iter().map(|v| -v));
        Ok(g)
    }

    fn parts(&self, mode: Mode, e: &Eval) -> (f64, f64) {
        match mode {
            Mode::Primal => (e.regret, e.gap()),
            Mode::Dual(w) => (e.gap(), e.regret - w),
        }
    }

    fn merit(&self, mode: Mode, e: &Eval, mu: f64, rho: f64) -> f64 {
        let (f, c) = self.parts(mode, e);
        let m = (mu + rho * c).max(0.0);
        f + (m * m - mu * mu) / (2.0 * rho)
    }

    fn merit_gradient(
        &self,
        mode: Mode,
        x: &[f64],
        e: &Eval,
        mu: f64,
        rho: f64,
    ) -> Result<Vec<f64>> {
        let (_, c) = self.parts(mode, e);
        let m = (mu + rho * c).max(0.0);
        let (gf, gc) = match mode {
            Mode::Primal => (
                self.regret_gradient(x),
                if m > 0.0 {
                    Some(self.gap_gradient(x, e)?)
                } else {
                    None
                },
            ),
            Mode::Dual(_) => (
                self.gap_gradient(x, e)?,
                if m > 0.0 {
                    Some(self.regret_gradient(x))
                } else {
                    None
                },
            ),
        };
        Ok(match gc {
            Some(gc) => gf.iter().zip(&gc).map(|(a, b)| a + m * b).collect(),
            None => gf,
        })
    }

    /// Projected gradient on the augmented Lagrangian for fixed `(mu, rho)`.
    fn inner(
        &self,
        mode: Mode,
        x0: Vec<f64>,
        mu: f64,
        rho: f64,
        step: &mut f64,
    ) -> Result<(Vec<f64>, Eval)> {
        let mut x = x0;
        let mut e = self.eval(&x)?;
        let mut fx = self.merit(mode, &e, mu, rho);
        for _ in 0..400 {
            let g = self.merit_gradient(mode, &x, &e, mu, rho)?;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - *step * b).collect();
                let y = self.project(&trial);
                let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                let dmax = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if dmax < 1e-14 {
                    break;
                }
                let ey = self.eval(&y)?;
                let fy = self.merit(mode, &ey, mu, rho);
                if fy <= fx + 1e-4 * dot(&g, &d) {
                    let small = dmax < 1e-12 || fx - fy <= 1e-16 * (1.0 + fx.abs());
                    x = y;
                    e = ey;
                    fx = fy;
                    accepted = !small;
                    *step = (*step * 2.0).min(1e3);
                    break;
                }
                *step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok((x, e))
    }

    fn solve_from(&self, mode: Mode, x0: Vec<f64>) -> Result<(Vec<f64>, Eval, f64)> {
        let (mut mu, mut rho) = (0.0f64, 10.0f64);
        let mut x = self.project(&x0);
        let mut step = 0.1;
        let mut prev_c = f64::INFINITY;
        let mut e = self.eval(&x)?;
        for _ in 0..60 {
            let (nx, ne) = self.inner(mode, x, mu, rho, &mut step)?;
            x = nx;
            e = ne;
            let (_, c) = self.parts(mode, &e);
            let new_mu = (mu + rho * c).max(0.0);
            let mu_change = (new_mu - mu).abs();
            mu = new_mu;
            if c <= FEAS_TOL && mu_change <= 1e-8 * (1.0 + mu) {
                break;
            }
            if c.max(0.0) > 0.25 * prev_c.max(0.0) {
                rho *= 2.0;
            }
            prev_c = c;
        }
        Ok((x, e, mu))
    }

    fn anchors(&self) -> Vec<f64> {
        let mut x = self.anchor_s.clone();
        x.extend_from_slice(&self.anchor_b);
        x
    }

    fn starts(&self, seed: u64) -> Vec<Vec<f64>> {
        let k = self.k;
        let mut starts = vec![self.anchors(), vec![1.0 / k as f64; 2 * k]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..INTERIOR_STARTS {
            let mut x = Vec::with_capacity(2 * k);
            for _ in 0..2 {
                let d: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
                let s: f64 = d.iter().sum();
                x.extend(d.iter().map(|v| v / s));
            }
            starts.push(x);
        }
        starts
    }

    fn multistart(&self, mode: Mode, seed: u64) -> Result<(Vec<f64>, Eval, f64)> {
        let runs: Vec<Result<(Vec<f64>, Eval, f64)>> = self
            .starts(seed)
            .into_par_iter()
            .map(|x0| self.solve_from(mode, x0))
            .collect();
        let mut best: Option<(Vec<f64>, Eval, f64)> = None;
        for r in runs {
            let cand = r?;
            if better(mode, &cand.1, best.as_ref().map(|b| &b.1), self) {
                best = Some(cand);
            }
        }
        Ok(best.expect("at least one start"))
    }

    /// Best feasible point of a simplex-pair grid (mesh `1/m`).
    fn grid_best(&self, mode: Mode, m: usize) -> Result<Option<(Vec<f64>, f64)>> {
        let grid = simplex_grid(self.k, m);
        let pin = |fixed: bool, anchor: &Vec<f64>| {
            if fixed {
                vec![anchor.clone()]
            } else {
                grid.clone()
            }
        };
        let gs = pin(self.lambda == 0.0, &self.anchor_s);
        let gb = pin(self.lambda == 1.0, &self.anchor_b);
        let ps: Vec<f64> = gs
            .iter()
            .map(|q| self.seller.price(q))
            .collect::<Result<_>>()?;
        let pb: Vec<f64> = gb
            .iter()
            .map(|q| self.buyer.price(q))
            .collect::<Result<_>>()?;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for (i, qs) in gs.iter().enumerate() {
            let ds = self.lambda * self.distance.value(&self.anchor_s, qs);
            for (j, qb) in gb.iter().enumerate() {
                let regret = ds + (1.0 - self.lambda) * self.distance.value(&self.anchor_b, qb);
                let gap = ps[i] - pb[j];
                let (f, feasible) = match mode {
                    Mode::Primal => (regret, gap <= 0.0),
                    Mode::Dual(w) => (gap, regret <= w),
                };
                if feasible && best.as_ref().is_none_or(|b| f < b.1) {
                    let mut x = qs.clone();
                    x.extend_from_slice(qb);
                    best = Some((x, f));
                }
            }
        }
        Ok(best)
    }

    fn certify(
        &self,
        mode: Mode,
        seed: u64,
        grid_mesh: Option<usize>,
    ) -> Result<(Vec<f64>, Eval, f64, Option<f64>)> {
        let (mut x, mut e, mut mu) = self.multistart(mode, seed)?;
        let mut grid_obj = None;
        if let Some(m) = grid_mesh {
            if let Some((gx, gf)) = self.grid_best(mode, m)? {
                grid_obj = Some(gf);
                let (f, c) = self.parts(mode, &e);
                if c > FEAS_TOL || gf < f - 1e-12 {
                    let cand = self.solve_from(mode, gx)?;
                    if better(mode, &cand.1, Some(&e), self) {
                        (x, e, mu) = cand;
                    }
                }
            }
        }
        Ok((x, e, mu, grid_obj))
    }
}

/// Feasible beats infeasible; then lower objective; then lower violation.
fn better(mode: Mode, a: &Eval, b: Option<&Eval>, p: &BeliefProblem) -> bool {
    let Some(b) = b else { return true };
    let (fa, ca) = p.parts(mode, a);
    let (fb, cb) = p.parts(mode, b);
    let (oka, okb) = (ca <= FEAS_TOL, cb <= FEAS_TOL);
    match (oka, okb) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => fa < fb,
        (false, false) => ca < cb,
    }
}

fn package(
    p: &BeliefProblem,
    mode: Mode,
    x: &[f64],
    e: &Eval,
    mu: f64,
    grid: Option<f64>,
) -> RegretSolution {
    let (s, b) = p.split(x);
    let residual = match mode {
        Mode::Primal => e.gap().max(0.0),
        Mode::Dual(w) => (e.regret - w).max(0.0),
    };
    RegretSolution {
        seller_beliefs: Some(s.to_vec()),
        buyer_beliefs: Some(b.to_vec()),
        seller_price: e.ps,
        buyer_price: e.pb,
        price: 0.5 * (e.ps + e.pb),
        total_regret: e.regret,
        surplus: -e.gap(),
        constraint_residual: residual,
        multiplier: mu,
        grid_objective: grid,
        warnings: Vec::new(),
    }
}

fn grid_mesh(k: usize) -> Option<usize> {
    (k <= 3).then_some(10)
}

fn solve_primal_with(p: &BeliefProblem, seed: u64, mesh: Option<usize>) -> Result<RegretSolution> {
    let anchors = p.anchors();
    let e0 = p.eval(&anchors)?;
    if e0.gap() <= 0.0 {
        return Ok(package(p, Mode::Primal, &anchors, &e0, 0.0, None));
    }
    let (x, e, mu, grid) = p.certify(Mode::Primal, seed, mesh)?;
    if e.gap() > 1e-6 {
        return Err(Error::Infeasible);
    }
    Ok(package(p, Mode::Primal, &x, &e, mu, grid))
}

fn solve_dual_with(
    p: &BeliefProblem,
    w: f64,
    seed: u64,
    mesh: Option<usize>,
) -> Result<RegretSolution> {
    let anchors = p.anchors();
    if w == 0.0 {
        let e = p.eval(&anchors)?;
        return Ok(package(p, Mode::Dual(0.0), &anchors, &e, 0.0, None));
    }
    let (x, e, mu, grid) = p.certify(Mode::Dual(w), seed, mesh)?;
    Ok(package(p, Mode::Dual(w), &x, &e, mu, grid))
}

fn belief_problem<'a>(
    seller: &'a dyn BeliefPrice,
    buyer: &'a dyn BeliefPrice,
    cfg: &RegretConfig,
    set: Feasible<'a>,
    k: usize,
) -> BeliefProblem<'a> {
    BeliefProblem {
        seller,
        buyer,
        lambda: cfg.lambda,
        anchor_s: cfg.seller_anchor.weights().to_vec(),
        anchor_b: cfg.buyer_anchor.weights().to_vec(),
        distance: cfg.distance,
        set,
        k,
    }
}

/// Least total regret that makes the seller's quote no higher than the
/// buyer's, with beliefs free on the simplex.
pub fn solve_belief_primal(
    model: &MarketModel,
    seller: &AgentSpec,
    buyer: &AgentSpec,
    claim: &ContingentClaim,
    cfg: &RegretConfig,
) -> Result<RegretSolution> {
    let k = model.n_states();
    cfg.validate(k)?;
    let ps = PreferencePrice::new(model, seller, claim, Role::Seller)?;
    let pb = PreferencePrice::new(model, buyer, claim, Role::Buyer)?;
    let p = belief_problem(&ps, &pb, cfg, Feasible::Simplex, k);
    solve_primal_with(&p, cfg.seed, grid_mesh(k))
}

/// Largest price surplus `P_B - P_S` within the regret budget.
pub fn solve_belief_dual(
    model: &MarketModel,
    seller: &AgentSpec,
    buyer: &AgentSpec,
    claim: &ContingentClaim,
    cfg: &RegretConfig,
) -> Result<RegretSolution> {
    let k = model.n_states();
    cfg.validate(k)?;
    let w = cfg
        .budget
        .ok_or_else(|| Error::InvalidInput("dual problem needs a regret budget".into()))?;
    let ps = PreferencePrice::new(model, seller, claim, Role::Seller)?;
    let pb = PreferencePrice::new(model, buyer, claim, Role::Buyer)?;
    let p = belief_problem(&ps, &pb, cfg, Feasible::Simplex, k);
    solve_dual_with(&p, w, cfg.seed, grid_mesh(k))
}

/// Belief primal with arbitrary price maps on the simplex.
pub fn solve_belief_primal_with(
    seller: &dyn BeliefPrice,
    buyer: &dyn BeliefPrice,
    cfg: &RegretConfig,
) -> Result<RegretSolution> {
    let k = cfg.seller_anchor.len();
    cfg.validate(k)?;
    let p = belief_problem(seller, buyer, cfg, Feasible::Simplex, k);
    solve_primal_with(&p, cfg.seed, grid_mesh(k))
}

/// Belief primal restricted to risk-neutral measures, with linear prices
/// `E_Q[F] / (1 + r)`.
pub fn risk_neutral_regret(
    model: &MarketModel,
    claim: &ContingentClaim,
    cfg: &RegretConfig,
) -> Result<RegretSolution> {
    let k = model.n_states();
    cfg.validate(k)?;
    let set = RiskNeutralSet::new(model)?;
    for anchor in [&cfg.seller_anchor, &cfg.buyer_anchor] {
        let r = set.residual(anchor.weights());
        if r > 1e-9 {
            return Err(Error::AnchorNotRiskNeutral(r));
        }
    }
    let price = LinearPrice::new(claim, model.riskless_rate);
    let p = belief_problem(&price, &price, cfg, Feasible::RiskNeutral(&set), k);
    match cfg.budget {
        Some(w) => solve_dual_with(&p, w, cfg.seed, None),
        None => solve_primal_with(&p, cfg.seed, None),
    }
}

/// Regret as a function of the distance between a quoted and a preferred price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegretFunction {
    /// `slope * x`
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    /// `scale * x^2`
    Quadratic {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `(1 - exp(-kappa x)) / kappa`, increasing and strictly concave
    ExponentialConcave { kappa: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for RegretFunction {
    fn default() -> Self {
        RegretFunction::Quadratic { scale: 1.0 }
    }
}

impl RegretFunction {
    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            RegretFunction::Linear { slope } => slope,
            RegretFunction::Quadratic { scale } => scale,
            RegretFunction::ExponentialConcave { kappa } => kappa,
        };
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "regret function parameter must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            RegretFunction::Linear { slope } => slope * x,
            RegretFunction::Quadratic { scale } => scale * x * x,
            RegretFunction::ExponentialConcave { kappa } => -(-kappa * x).exp_m1() / kappa,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            RegretFunction::Linear { slope } => slope,
            RegretFunction::Quadratic { scale } => 2.0 * scale * x,
            RegretFunction::ExponentialConcave { kappa } => (-kappa * x).exp(),
        }
    }

    pub fn strictly_convex(&self) -> bool {
        matches!(self, RegretFunction::Quadratic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRegretConfig {
    pub buyer_lower: f64,
    pub buyer_upper: f64,
    pub seller_lower: f64,
    pub seller_upper: f64,
    #[serde(default)]
    pub phi_buyer: RegretFunction,
    #[serde(default)]
    pub phi_seller: RegretFunction,
    pub lambda: f64,
}

impl PriceRegretConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.buyer_lower <= self.buyer_upper && self.seller_lower <= self.seller_upper) {
            return Err(Error::InvalidInput("price rectangle is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        self.phi_buyer.validate()?;
        self.phi_seller.validate()
    }

    /// Regret at a common price `p`.
    pub fn objective(&self, p: f64) -> f64 {
        self.lambda * self.phi_buyer.value(p - self.buyer_lower)
            + (1.0 - self.lambda) * self.phi_seller.value(self.seller_upper - p)
    }

    fn slope(&self, p: f64) -> f64 {
        self.lambda * self.phi_buyer.derivative(p - self.buyer_lower)
            - (1.0 - self.lambda) * self.phi_seller.derivative(self.seller_upper - p)
    }

    /// Common prices that both parties can quote with `P_B >= P_S`.
    pub fn interval(&self) -> Result<(f64, f64)> {
        let lo = self.buyer_lower.max(self.seller_lower);
        let hi = self.buyer_upper.min(self.seller_upper);
        if self.buyer_upper < self.seller_lower || lo > hi {
            return Err(Error::EmptyInterval);
        }
        Ok((lo, hi))
    }

    fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for (who, phi) in [("buyer", &self.phi_buyer), ("seller", &self.phi_seller)] {
            if !phi.strictly_convex() {
                w.push(format!("{who} regret function {phi:?} is not strictly convex; the minimizer may not be unique"));
            }
        }
        w
    }

    fn refine(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let h = 1e-6 * (hi - lo).max(1e-300);
        let (a, b) = ((x - h).max(lo), (x + h).min(hi));
        if a < b && self.slope(a) < 0.0 && self.slope(b) > 0.0 {
            if let Ok(r) = brent(|p| Ok(self.slope(p)), a, b, 1e-16) {
                if self.objective(r) <= self.objective(x) {
                    return r;
                }
            }
        }
        x
    }
}

fn price_solution(cfg: &PriceRegretConfig, pb: f64, ps: f64, regret: f64) -> RegretSolution {
    RegretSolution {
        seller_beliefs: None,
        buyer_beliefs: None,
        seller_price: ps,
        buyer_price: pb,
        price: 0.5 * (pb + ps),
        total_regret: regret,
        surplus: pb - ps,
        constraint_residual: (ps - pb).max(0.0),
        multiplier: 0.0,
        grid_objective: None,
        warnings: cfg.warnings(),
    }
}

/// Common price minimizing `lambda phi_B(P - Plow_B) + (1 - lambda) phi_S(Pbar_S - P)`.
pub fn solve_price_regret(cfg: &PriceRegretConfig) -> Result<RegretSolution> {
    cfg.validate()?;
    if cfg.buyer_lower >= cfg.seller_upper {
        return Ok(price_solution(cfg, cfg.buyer_lower, cfg.seller_upper, 0.0));
    }
    let (lo, hi) = cfg.interval()?;
    let (x, _) = scan_then_golden(|p| Ok(cfg.objective(p)), lo, hi, 33, 1e-14)?;
    let p = cfg.refine(x, lo, hi);
    Ok(price_solution(cfg, p, p, cfg.objective(p)))
}

/// Local price-space solve from `p0`, used to probe uniqueness.
pub fn solve_price_regret_from(cfg: &PriceRegretConfig, p0: f64) -> Result<f64> {
    cfg.validate()?;
    let (lo, hi) = cfg.interval()?;
    let (x, _) = descend_from(|p| Ok(cfg.objective(p)), p0, lo, hi, 1e-14)?;
    Ok(cfg.refine(x, lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preferences::utility::UtilitySpec;
    use approx::assert_abs_diff_eq;

    fn rect(phi: RegretFunction, lambda: f64) -> PriceRegretConfig {
        PriceRegretConfig {
            buyer_lower: 0.2,
            buyer_upper: 0.6,
            seller_lower: 0.3,
            seller_upper: 0.7,
            phi_buyer: phi,
            phi_seller: phi,
            lambda,
        }
    }

    #[test]
    fn price_space_examples() {
        let s = solve_price_regret(&rect(RegretFunction::Quadratic { scale: 1.0 }, 0.5)).unwrap();
        assert_abs_diff_eq!(s.price, 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(s.total_regret, 0.0625, epsilon = 1e-12);
        assert!(s.warnings.is_empty());

        let s = solve_price_regret(&rect(RegretFunction::Linear { slope: 1.0 }, 0.25)).unwrap();
        assert_eq!(s.price, 0.6);
        assert!(!s.warnings.is_empty());

        let mut c = rect(RegretFunction::default(), 0.5);
        c.buyer_lower = 0.8;
        c.buyer_upper = 0.9;
        let s = solve_price_regret(&c).unwrap();
        assert_eq!(
            (s.buyer_price, s.seller_price, s.total_regret),
            (0.8, 0.7, 0.0)
        );
    }

    #[test]
    fn price_space_empty_interval() {
        let c = PriceRegretConfig {
            buyer_lower: 0.0,
            buyer_upper: 0.2,
            seller_lower: 0.3,
            seller_upper: 0.7,
            phi_buyer: RegretFunction::default(),
            phi_seller: RegretFunction::default(),
            lambda: 0.5,
        };
        assert_eq!(solve_price_regret(&c).unwrap_err(), Error::EmptyInterval);
    }

    #[test]
    fn distances() {
        let a = [0.5, 0.5];
        assert_eq!(Distance::SquaredEuclidean.value(&a, &[1.0, 0.0]), 0.5);
        assert_abs_diff_eq!(
            Distance::KlDivergence.value(&a, &[1.0, 0.0]),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert_eq!(Distance::KlDivergence.value(&a, &a), 0.0);
    }

    fn k3() -> MarketModel {
        MarketModel::new(
            0.0,
            vec![1.0, 1.0],
            vec![vec![1.0, 2.0], vec![1.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn risk_neutral_symmetric_meeting_point() {
        let f = ContingentClaim::new(vec![1.0, 0.0, 0.0]).unwrap();
        let cfg = RegretConfig::new(
            0.5,
            BeliefMeasure::new(vec![0.4, 0.2, 0.4]).unwrap(),
            BeliefMeasure::new(vec![0.1, 0.8, 0.1]).unwrap(),
        );
        let s = risk_neutral_regret(&k3(), &f, &cfg).unwrap();
        assert_abs_diff_eq!(s.price, 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(s.seller_beliefs.as_ref().unwrap()[0], 0.25, epsilon = 1e-6);

        let swapped = RegretConfig::new(0.5, cfg.buyer_anchor.clone(), cfg.seller_anchor.clone());
        let s = risk_neutral_regret(&k3(), &f, &swapped).unwrap();
        assert_eq!(s.total_regret, 0.0);

        let off = RegretConfig::new(
            0.5,
            BeliefMeasure::new(vec![0.5, 0.25, 0.25]).unwrap(),
            cfg.buyer_anchor.clone(),
        );
        assert!(matches!(
            risk_neutral_regret(&k3(), &f, &off),
            Err(Error::AnchorNotRiskNeutral(_))
        ));
    }

    fn cara() -> AgentSpec {
        AgentSpec::new(
            UtilitySpec::Exponential { gamma: 1.0 },
            0.0,
            BeliefMeasure::uniform(2),
        )
        .unwrap()
    }

    #[test]
    fn anchors_already_compatible() {
        let m = MarketModel::riskless_only(0.0, 2).unwrap();
        let f = ContingentClaim::new(vec![1.0, 0.0]).unwrap();
        let cfg = RegretConfig::new(
            0.5,
            BeliefMeasure::new(vec![0.3, 0.7]).unwrap(),
            BeliefMeasure::new(vec![0.8, 0.2]).unwrap(),
        );
        let s = solve_belief_primal(&m, &cara(), &cara(), &f, &cfg).unwrap();
        assert_eq!(s.total_regret, 0.0);
        assert_eq!(s.seller_beliefs.unwrap(), vec![0.3, 0.7]);
    }

    #[test]
    fn zero_budget_dual_keeps_anchors() {
        let m = MarketModel::riskless_only(0.0, 2).unwrap();
        let f = ContingentClaim::new(vec![1.0, 0.0]).unwrap();
        let cfg = RegretConfig::new(
            0.5,
            BeliefMeasure::new(vec![0.8, 0.2]).unwrap(),
            BeliefMeasure::new(vec![0.3, 0.7]).unwrap(),
        )
        .with_budget(0.0);
        let s = solve_belief_dual(&m, &cara(), &cara(), &f, &cfg).unwrap();
        assert_eq!(s.buyer_beliefs.unwrap(), vec![0.3, 0.7]);
        assert!(s.surplus < 0.0);
    }
}
