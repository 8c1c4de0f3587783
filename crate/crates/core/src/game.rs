//! One-shot sealed-bid market game with minimax-regret offers.
//!
//! Offers are computed on the support normalized to `[0, 1]` and mapped back
//! affinely, which keeps both offer maps continuous for any support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offers within this fraction of the support width count as crossing, so a
/// gap of exactly a quarter trades despite rounding in the offer maps.
pub const TRADE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    #[serde(rename = "alpha")]
    pub support_lower: f64,
    #[serde(rename = "beta")]
    pub support_upper: f64,
}

impl GameConfig {
    pub fn new(support_lower: f64, support_upper: f64) -> Result<Self> {
        let cfg = Self {
            support_lower,
            support_upper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.support_upper > self.support_lower)
            || !self.support_lower.is_finite()
            || !self.support_upper.is_finite()
        {
            return Err(Error::InvalidInput(format!(
                "support needs finite alpha < beta, got [{}, {}]",
                self.support_lower, self.support_upper
            )));
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        self.support_upper - self.support_lower
    }

    fn normalize(&self, v: f64) -> Result<f64> {
        if !(self.support_lower..=self.support_upper).contains(&v) {
            return Err(Error::OutOfSupport {
                value: v,
                lower: self.support_lower,
                upper: self.support_upper,
            });
        }
        Ok((v - self.support_lower) / self.width())
    }

    fn denormalize(&self, x: f64) -> f64 {
        self.support_lower + self.width() * x
    }
}

fn bid_n(x: f64) -> f64 {
    if x <= 0.25 {
        x
    } else {
        2.0 / 3.0 * x + 1.0 / 12.0
    }
}

fn ask_n(x: f64) -> f64 {
    if x <= 0.75 {
        2.0 / 3.0 * x + 0.25
    } else {
        x
    }
}

/// Buyer's offer for valuation `p_b`.
pub fn minimax_bid(p_b: f64, cfg: &GameConfig) -> Result<f64> {
    Ok(cfg.denormalize(bid_n(cfg.normalize(p_b)?)))
}

/// Seller's offer for valuation `p_s`.
pub fn minimax_ask(p_s: f64, cfg: &GameConfig) -> Result<f64> {
    Ok(cfg.denormalize(ask_n(cfg.normalize(p_s)?)))
}

fn range_error(v: f64, cfg: &GameConfig, lo_n: f64, hi_n: f64) -> Error {
    Error::OutOfRange {
        value: v,
        lower: cfg.denormalize(lo_n),
        upper: cfg.denormalize(hi_n),
    }
}

/// Valuation that produces bid `b`.
pub fn invert_bid(b: f64, cfg: &GameConfig) -> Result<f64> {
    // the bid map sends [0, 1] onto [0, 3/4]
    let y = (b - cfg.support_lower) / cfg.width();
    if !(0.0..=0.75).contains(&y) {
        return Err(range_error(b, cfg, 0.0, 0.75));
    }
    let x = if y <= 0.25 { y } else { 1.5 * (y - 1.0 / 12.0) };
    Ok(cfg.denormalize(x))
}

/// Valuation that produces ask `a`.
pub fn invert_ask(a: f64, cfg: &GameConfig) -> Result<f64> {
    // the ask map sends [0, 1] onto [1/4, 1]
    let y = (a - cfg.support_lower) / cfg.width();
    if !(0.25..=1.0).contains(&y) {
        return Err(range_error(a, cfg, 0.25, 1.0));
    }
    let x = if y <= 0.75 { 1.5 * (y - 0.25) } else { y };
    Ok(cfg.denormalize(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameStage {
    Stage1,
    Stage2,
    NoTrade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub bid: f64,
    pub ask: f64,
    pub traded: bool,
    pub price: Option<f64>,
    pub stage: GameStage,
    /// True when the valuations cannot support trade (`P_B < P_S`).
    pub escalation: bool,
    /// Valuations each side recovers from the other's offer at stage 2.
    pub revealed_buyer: Option<f64>,
    pub revealed_seller: Option<f64>,
}

impl GameOutcome {
    pub fn buyer_profit(&self, p_b: f64) -> Option<f64> {
        self.price.map(|p| p_b - p)
    }

    pub fn seller_profit(&self, p_s: f64) -> Option<f64> {
        self.price.map(|p| p - p_s)
    }
}

/// Plays the two-stage protocol for buyer valuation `p_b` and seller
/// valuation `p_s`.
pub fn play_game(p_b: f64, p_s: f64, cfg: &GameConfig) -> Result<GameOutcome> {
    cfg.validate()?;
    let bid = minimax_bid(p_b, cfg)?;
    let ask = minimax_ask(p_s, cfg)?;
    let mut out = GameOutcome {
        bid,
        ask,
        traded: false,
        price: None,
        stage: GameStage::NoTrade,
        escalation: false,
        revealed_buyer: None,
        revealed_seller: None,
    };
    let tol = TRADE_TOL * cfg.width();
    if bid >= ask - tol {
        out.traded = true;
        out.price = Some(0.5 * (bid + ask));
        out.stage = GameStage::Stage1;
        return Ok(out);
    }
    let vb = invert_bid(bid, cfg)?;
    let vs = invert_ask(ask, cfg)?;
    out.revealed_buyer = Some(vb);
    out.revealed_seller = Some(vs);
    if vb >= vs - tol {
        out.traded = true;
        out.price = Some(0.5 * (vb + vs));
        out.stage = GameStage::Stage2;
    } else {
        out.escalation = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit() -> GameConfig {
        GameConfig::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn offer_examples() {
        let c = unit();
        assert_eq!(minimax_bid(0.2, &c).unwrap(), 0.2);
        assert_abs_diff_eq!(minimax_bid(0.5, &c).unwrap(), 5.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(minimax_ask(0.5, &c).unwrap(), 7.0 / 12.0, epsilon = 1e-15);
        assert_eq!(minimax_ask(0.9, &c).unwrap(), 0.9);
        assert_abs_diff_eq!(minimax_ask(0.75, &c).unwrap(), 0.75, epsilon = 1e-15);
        let c24 = GameConfig::new(2.0, 4.0).unwrap();
        assert_abs_diff_eq!(
            minimax_bid(3.0, &c24).unwrap(),
            2.0 + 2.0 * 5.0 / 12.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            minimax_bid(1.5, &c),
            Err(Error::OutOfSupport { .. })
        ));
    }

    #[test]
    fn inverse_examples() {
        let c = unit();
        assert_abs_diff_eq!(invert_bid(5.0 / 12.0, &c).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(invert_ask(0.9, &c).unwrap(), 0.9);
        assert!(matches!(invert_bid(0.8, &c), Err(Error::OutOfRange { .. })));
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((invert_bid(minimax_bid(x, &c).unwrap(), &c).unwrap() - x).abs() <= 1e-12);
            assert!((invert_ask(minimax_ask(x, &c).unwrap(), &c).unwrap() - x).abs() <= 1e-12);
        }
    }

    #[test]
    fn protocol_examples() {
        let c = unit();
        let g = play_game(0.8, 0.4, &c).unwrap();
        assert_eq!(g.stage, GameStage::Stage1);
        assert_abs_diff_eq!(g.bid, 37.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.ask, 31.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.price.unwrap(), 17.0 / 30.0, epsilon = 1e-15);

        let g = play_game(0.6, 0.5, &c).unwrap();
        assert_eq!(g.stage, GameStage::Stage2);
        assert_abs_diff_eq!(g.price.unwrap(), 0.55, epsilon = 1e-15);

        let g = play_game(0.3, 0.6, &c).unwrap();
        assert_eq!(g.stage, GameStage::NoTrade);
        assert!(g.escalation && !g.traded && g.price.is_none());
    }

    proptest! {
        #[test]
        fn offers_shade_and_stay_monotone(a in -5.0f64..5.0, w in 0.1f64..10.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let c = GameConfig::new(a, a + w).unwrap();
            let (lo, hi) = (a + w * x.min(y), a + w * x.max(y));
            prop_assert!(minimax_bid(lo, &c).unwrap() <= minimax_bid(hi, &c).unwrap());
            prop_assert!(minimax_ask(lo, &c).unwrap() <= minimax_ask(hi, &c).unwrap());
            prop_assert!(minimax_bid(hi, &c).unwrap() <= hi + 1e-12);
            prop_assert!(minimax_ask(lo, &c).unwrap() >= lo - 1e-12);
            let g = play_game(hi, lo, &c).unwrap();
            if g.stage == GameStage::Stage1 {
                let p = g.price.unwrap();
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
        }
    }
}
