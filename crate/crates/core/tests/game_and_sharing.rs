mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use tatonnement_core::game::{
    invert_ask, invert_bid, minimax_ask, minimax_bid, play_game, GameConfig, GameStage,
};
use tatonnement_core::preferences::PriceCurvePair;
use tatonnement_core::sharing::{kkt_residuals, solve_dual, solve_primal, SharingConfig};

#[test]
fn stage_one_trade_iff_quarter_gap() {
    let cfg = GameConfig::new(0.0, 1.0).unwrap();
    let mut violations = 0;
    for i in 0..=100 {
        for j in 0..=100 {
            let (pb, ps) = (i as f64 / 100.0, j as f64 / 100.0);
            let o = play_game(pb, ps, &cfg).unwrap();
            let stage1 = o.stage == GameStage::Stage1;
            let predicted = pb - ps >= 0.25 - 1e-12;
            if stage1 != predicted {
                violations += 1;
            }
            if stage1 {
                let p = o.price.unwrap();
                assert!(p >= ps - 1e-12 && p <= pb + 1e-12);
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn worked_game_examples() {
    let cfg = GameConfig::new(0.0, 1.0).unwrap();
    let a = play_game(0.8, 0.4, &cfg).unwrap();
    assert_eq!(a.stage, GameStage::Stage1);
    assert_abs_diff_eq!(a.price.unwrap(), 17.0 / 30.0, epsilon = 1e-15);
    let b = play_game(0.6, 0.5, &cfg).unwrap();
    assert_eq!(b.stage, GameStage::Stage2);
    assert_abs_diff_eq!(b.price.unwrap(), 0.55, epsilon = 1e-15);
    let c = play_game(0.3, 0.6, &cfg).unwrap();
    assert!(c.escalation && !c.traded && c.price.is_none());
}

proptest! {
    #[test]
    fn offers_invert_exactly(lo in -3.0f64..3.0, width in 0.5f64..5.0, x in 0.0f64..1.0) {
        let cfg = GameConfig::new(lo, lo + width).unwrap();
        let v = lo + width * x;
        prop_assert!((invert_bid(minimax_bid(v, &cfg).unwrap(), &cfg).unwrap() - v).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!((invert_ask(minimax_ask(v, &cfg).unwrap(), &cfg).unwrap() - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }

    #[test]
    fn sharing_optimum_equalizes_prices_and_matches_grid(seed in 0u64..1000, lambda in 0.1f64..0.9) {
        let mut rng = common::rng(seed);
        let c = common::synthetic_curves(&mut rng);
        let sol = solve_primal(&c, &SharingConfig::new(lambda)).unwrap();
        let oracle = common::sharing_grid_oracle(&c, lambda, 6f64.max(1.25 * sol.eps_seller.max(sol.eps_buyer)), 0.005);
        prop_assert!(sol.objective <= oracle + 1e-9, "solver {} above grid {}", sol.objective, oracle);
        prop_assert!(oracle - sol.objective <= 5e-3, "solver {} grid {}", sol.objective, oracle);
        if sol.eps_seller + sol.eps_buyer > 0.0 {
            prop_assert!(sol.price_gap.abs() <= 1e-6);
            let kkt = kkt_residuals(&c, sol.eps_seller, sol.eps_buyer, lambda).unwrap();
            prop_assert!(kkt.max_violation <= 1e-6, "{kkt:?}");
        }
    }

    #[test]
    fn dual_at_primal_budget_closes_the_gap(seed in 0u64..1000, lambda in 0.1f64..0.9) {
        let mut rng = common::rng(seed);
        let c = common::synthetic_curves(&mut rng);
        let p = solve_primal(&c, &SharingConfig::new(lambda)).unwrap();
        prop_assume!(p.objective > 1e-6);
        let d = solve_dual(&c, &SharingConfig::new(lambda).with_budget(p.objective)).unwrap();
        prop_assert!(d.price_gap.abs() <= 1e-6, "gap {}", d.price_gap);
    }
}

#[test]
fn sqrt_curve_optima() {
    let c = PriceCurvePair::sqrt_example();
    let half = solve_primal(&c, &SharingConfig::new(0.5)).unwrap();
    assert_abs_diff_eq!(half.price, 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(half.objective, 0.25, epsilon = 1e-6);
    let quarter = solve_primal(&c, &SharingConfig::new(0.25)).unwrap();
    assert_abs_diff_eq!(quarter.price, 0.25, epsilon = 1e-6);
}
