//! Task dispatch: each task turns a scenario into a JSON payload plus any
//! extra files.

use serde_json::{json, Value};
use tatonnement_core::dynamics::{
    contraction_coefficient, gronwall_check, printed_coefficient, simulate_barrier_gradient,
    simulate_discrete, simulate_ode, simulate_projected_discrete,
    simulate_projected_gradient_prices, simulate_sde, stability_report, ConstraintSet, SdeSpec,
    StateGrid, StepSchedule, Trace, UpdateFieldSpec,
};
use tatonnement_core::game::{play_game, GameConfig, GameOutcome};
use tatonnement_core::market::{arbitrage_free, price_band, validate_market, BeliefMeasure};
use tatonnement_core::preferences::{
    derived_curves, price_extremes_seeded, PriceCurvePair, Pricer, Role,
};
use tatonnement_core::regret::{
    risk_neutral_regret, solve_belief_dual, solve_belief_primal, solve_price_regret,
    PriceRegretConfig, RegretConfig,
};
use tatonnement_core::sharing::{lambda_sweep, solve_dual, solve_primal, SharingConfig};

use crate::scenario::{DynParams, Fallback, RegretSpace, Scenario, Scheme, Task};
use crate::Failure;

/// What a task produced.
pub struct TaskOutput {
    pub route: Option<String>,
    pub result: Value,
    /// `(suffix, contents)` besides the result file.
    pub files: Vec<(String, String)>,
    pub summary: String,
    /// Set when the scenario ends without trade; the run exits with code 4.
    pub no_trade: Option<String>,
}

impl TaskOutput {
    fn new(result: Value, summary: String) -> Self {
        Self {
            route: None,
            result,
            files: Vec::new(),
            summary,
            no_trade: None,
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize to JSON")
}

pub fn run_task(sc: &Scenario) -> Result<TaskOutput, Failure> {
    check_market(sc)?;
    match sc.task {
        Task::Band => band(sc),
        Task::Indiff => indiff(sc),
        Task::Game => game(sc),
        Task::Share => share(sc),
        Task::Regret => regret(sc),
        Task::Dyn => dynamics(sc),
        Task::Pipeline => pipeline(sc),
    }
}

/// Structure and no-arbitrage checks on any market in the scenario.
fn check_market(sc: &Scenario) -> Result<(), Failure> {
    let Some(model) = &sc.market else {
        return Ok(());
    };
    model.check_shape().map_err(Failure::from)?;
    let report = validate_market(model);
    if !report.passed() {
        return Err(Failure::market(format!(
            "market structure: {}",
            report.failures().join("; ")
        )));
    }
    let check = arbitrage_free(model)?;
    if !check.arbitrage_free {
        return Err(Failure::market(format!(
            "market admits arbitrage (largest smallest state weight {:e})",
            check.max_min_weight
        )));
    }
    Ok(())
}

fn curves(sc: &Scenario) -> Result<PriceCurvePair, Failure> {
    if let Some(spec) = &sc.curves {
        return Ok(PriceCurvePair::from_spec(spec)?);
    }
    let agents = sc.agents()?;
    Ok(derived_curves(
        sc.market()?,
        &agents.seller,
        &agents.buyer,
        &sc.claim()?,
    )?)
}

fn band(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let model = sc.market()?;
    let b = price_band(model, &sc.claim()?)?;
    let witness = arbitrage_free(model)?.witness.map(Vec::<f64>::from);
    let result = json!({
        "lower": b.lower,
        "upper": b.upper,
        "width": b.width(),
        "witness": witness,
    });
    Ok(TaskOutput::new(
        result,
        format!("band [{:.6}, {:.6}]", b.lower, b.upper),
    ))
}

fn indiff(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let model = sc.market()?;
    let agents = sc.agents()?;
    let claim = sc.claim()?;
    let params = sc.indiff.clone().unwrap_or_default();
    let roles = params
        .roles
        .clone()
        .unwrap_or_else(|| vec![Role::Seller, Role::Buyer]);
    let b = price_band(model, &claim)?;
    let mut out = serde_json::Map::new();
    out.insert("band".into(), to_value(&b));
    let mut summary = Vec::new();
    for role in roles {
        let agent = match role {
            Role::Seller => &agents.seller,
            Role::Buyer => &agents.buyer,
        };
        let pricer = Pricer::new(model, agent, &claim, role)?;
        let price = pricer.indifference_price()?;
        let mut entry = json!({ "price": price });
        if let Some(eps) = params.eps {
            entry["eps"] = json!(eps);
            entry["price_at_risk"] = json!(pricer.price_at_risk(eps)?);
        }
        if params.extremes {
            entry["extremes"] =
                to_value(&price_extremes_seeded(model, agent, &claim, role, sc.seed)?);
        }
        let key = match role {
            Role::Seller => "seller",
            Role::Buyer => "buyer",
        };
        summary.push(format!("{key} {price:.6}"));
        out.insert(key.into(), entry);
    }
    Ok(TaskOutput::new(Value::Object(out), summary.join(", ")))
}

/// Valuations from the game block, falling back to indifference prices.
fn valuations(sc: &Scenario) -> Result<(GameConfig, f64, f64), Failure> {
    let g = sc.section(&sc.game, "game")?;
    let cfg = GameConfig::new(g.alpha, g.beta)?;
    let p_b = match g.p_buyer {
        Some(p) => p,
        None => {
            let a = sc.agents()?;
            Pricer::new(sc.market()?, &a.buyer, &sc.claim()?, Role::Buyer)?.indifference_price()?
        }
    };
    let p_s = match g.p_seller {
        Some(p) => p,
        None => {
            let a = sc.agents()?;
            Pricer::new(sc.market()?, &a.seller, &sc.claim()?, Role::Seller)?
                .indifference_price()?
        }
    };
    Ok((cfg, p_b, p_s))
}

fn game_summary(o: &GameOutcome) -> String {
    match o.price {
        Some(p) => format!("trade at {p:.6} ({:?})", o.stage),
        None => format!("no trade: bid {:.6} < ask {:.6}", o.bid, o.ask),
    }
}

fn game(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let (cfg, p_b, p_s) = valuations(sc)?;
    let outcome = play_game(p_b, p_s, &cfg)?;
    let mut result = to_value(&outcome);
    result["p_buyer"] = json!(p_b);
    result["p_seller"] = json!(p_s);
    let mut out = TaskOutput::new(result, game_summary(&outcome));
    if outcome.escalation {
        out.no_trade = Some(format!(
            "escalation: buyer valuation {p_b} is below seller valuation {p_s}; no fallback configured"
        ));
    }
    Ok(out)
}

fn share(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let p = sc.section(&sc.share, "share")?;
    let c = curves(sc)?;
    let primal = solve_primal(&c, &SharingConfig::new(p.lambda))?;
    let mut summary = format!(
        "price {:.6}, risks ({:.6}, {:.6})",
        primal.price, primal.eps_seller, primal.eps_buyer
    );
    let mut result = json!({ "lambda": p.lambda, "primal": primal });
    if let Some(w) = p.budget {
        let dual = solve_dual(&c, &SharingConfig::new(p.lambda).with_budget(w))?;
        summary.push_str(&format!(", dual surplus {:.6}", -dual.price_gap));
        result["dual"] = to_value(&dual);
    }
    let mut out = TaskOutput::new(result, summary);
    if let Some(lambdas) = &p.sweep {
        let sols = lambda_sweep(&c, lambdas)?;
        let mut csv = String::from("lambda,eps_S,eps_B,price,objective,kkt_residual\n");
        for (l, s) in lambdas.iter().zip(&sols) {
            csv.push_str(&format!(
                "{l:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.eps_seller, s.eps_buyer, s.price, s.objective, s.kkt_residual
            ));
        }
        out.result["sweep"] = to_value(&sols);
        out.files.push((".sweep.csv".into(), csv));
    }
    Ok(out)
}

fn regret(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let p = sc.section(&sc.regret, "regret")?;
    let sol = match p.space {
        RegretSpace::Prices => {
            let r = p
                .prices
                .as_ref()
                .ok_or_else(|| Failure::invalid("regret space `prices` needs a `prices` block"))?;
            solve_price_regret(&PriceRegretConfig {
                buyer_lower: r.buyer_lower,
                buyer_upper: r.buyer_upper,
                seller_lower: r.seller_lower,
                seller_upper: r.seller_upper,
                phi_buyer: r.phi_buyer,
                phi_seller: r.phi_seller,
                lambda: p.lambda,
            })?
        }
        RegretSpace::Beliefs | RegretSpace::RiskNeutral => {
            let model = sc.market()?;
            let claim = sc.claim()?;
            let anchor =
                |given: &Option<BeliefMeasure>, role: Role| -> Result<BeliefMeasure, Failure> {
                    if let Some(q) = given {
                        return Ok(q.clone());
                    }
                    let a = sc.agents().map_err(|_| {
                        Failure::invalid(format!(
                            "regret needs a {role:?} anchor or the agents' beliefs"
                        ))
                    })?;
                    Ok(match role {
                        Role::Seller => a.seller.beliefs.clone(),
                        Role::Buyer => a.buyer.beliefs.clone(),
                    })
                };
            let mut cfg = RegretConfig::new(
                p.lambda,
                anchor(&p.seller_anchor, Role::Seller)?,
                anchor(&p.buyer_anchor, Role::Buyer)?,
            )
            .with_distance(p.distance);
            cfg.budget = p.budget;
            cfg.seed = sc.seed;
            if p.space == RegretSpace::RiskNeutral {
                risk_neutral_regret(model, &claim, &cfg)?
            } else {
                let a = sc.agents()?;
                match p.budget {
                    Some(_) => solve_belief_dual(model, &a.seller, &a.buyer, &claim, &cfg)?,
                    None => solve_belief_primal(model, &a.seller, &a.buyer, &claim, &cfg)?,
                }
            }
        }
    };
    let summary = format!(
        "price {:.6}, total regret {:.6}",
        sol.price, sol.total_regret
    );
    let mut result = to_value(&sol);
    result["space"] = to_value(&p.space);
    Ok(TaskOutput::new(result, summary))
}

fn dynamics(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let d = sc.section(&sc.dynamics, "dyn")?;
    let scheme = d.scheme.ok_or_else(|| {
        Failure::invalid("dyn needs a scheme (ode, discrete, barrier, projected, sde or report)")
    })?;
    let c = curves(sc)?;
    match scheme {
        Scheme::Ode | Scheme::Discrete => {
            let field = field(d)?;
            let eps0 = eps0(d)?;
            let mut trace = if scheme == Scheme::Ode {
                simulate_ode(
                    &c,
                    field,
                    eps0,
                    need(d.horizon, "horizon")?,
                    need(d.dt, "dt")?,
                )?
            } else {
                simulate_discrete(
                    &c,
                    field,
                    eps0,
                    need(d.steps, "steps")?,
                    d.step_scale.unwrap_or(1.0),
                )?
            };
            trace.seed = Some(sc.seed);
            let state = (trace.first().eps_s, trace.first().eps_b);
            let extra = json!({
                "contraction_coefficient": contraction_coefficient(&c, field, 0.0, state)?,
                "printed_coefficient": printed_coefficient(&c, field, 0.0, state)?,
                "gronwall": gronwall_check(&c, field, &trace)?,
            });
            Ok(trace_output(trace, extra))
        }
        Scheme::Barrier => {
            let cfg = d
                .barrier
                .as_ref()
                .ok_or_else(|| Failure::invalid("barrier scheme needs a `barrier` block"))?;
            let mut trace = simulate_barrier_gradient(
                &c,
                cfg,
                eps0(d)?,
                need(d.horizon, "horizon")?,
                need(d.dt, "dt")?,
            )?;
            trace.seed = Some(sc.seed);
            Ok(trace_output(trace, json!({ "barrier": cfg })))
        }
        Scheme::Projected => {
            let p = d
                .projected
                .as_ref()
                .ok_or_else(|| Failure::invalid("projected scheme needs a `projected` block"))?;
            if let Some(flow) = &p.prices {
                let (g1, g2) = (flow.seller_regret, flow.buyer_regret);
                let r1 = move |x: f64| g1.at(x);
                let r2 = move |x: f64| g2.at(x);
                let mut trace = simulate_projected_gradient_prices(
                    &r1,
                    &r2,
                    &flow.config,
                    flow.start,
                    need(d.horizon, "horizon")?,
                    need(d.dt, "dt")?,
                )?;
                trace.seed = Some(sc.seed);
                return Ok(trace_output(trace, json!({ "system": "prices" })));
            }
            let set = p.set.unwrap_or(ConstraintSet::HalfPlane);
            let schedule = p.schedule.unwrap_or(StepSchedule::Constant { size: 1.0 });
            let run = simulate_projected_discrete(
                &c,
                &set,
                eps0(d)?,
                &schedule,
                p.max_steps.unwrap_or(10_000),
                p.tolerance.unwrap_or(1e-12),
            )?;
            let mut trace = run.trace;
            trace.seed = Some(sc.seed);
            let last_residual = run.residuals.last().copied();
            Ok(trace_output(
                trace,
                json!({ "system": "risks", "converged": run.converged, "last_residual": last_residual }),
            ))
        }
        Scheme::Sde | Scheme::Report => {
            let spec = sde_spec(sc, d)?;
            let eps0 = eps0(d)?;
            if scheme == Scheme::Report {
                let ens = match spec.paths {
                    0 => None,
                    _ => Some(simulate_sde(&c, &spec, eps0)?),
                };
                let grid = match (d.grid, &ens) {
                    (Some(g), _) => g,
                    (None, Some(e)) => StateGrid::bounding(e.paths.iter().map(|p| &p.trace), 21),
                    (None, None) => {
                        return Err(Failure::invalid("report without paths needs a `grid`"))
                    }
                };
                let report = stability_report(&c, &spec, &grid, ens.as_ref())?;
                let summary = format!(
                    "condition {}, predicted rate {}",
                    report.condition_satisfied,
                    report
                        .predicted_rate
                        .map_or("n/a".into(), |r| format!("{r:.6}"))
                );
                return Ok(TaskOutput::new(
                    json!({ "scheme": "report", "report": report }),
                    summary,
                ));
            }
            let ens = simulate_sde(&c, &spec, eps0)?;
            let grid = d
                .grid
                .unwrap_or_else(|| StateGrid::bounding(ens.paths.iter().map(|p| &p.trace), 21));
            let report = stability_report(&c, &spec, &grid, Some(&ens))?;
            let exponents: Vec<Value> = ens.paths.iter().map(|p| json!(p.exponent)).collect();
            let summary = format!(
                "{} paths, mean exponent {:.6} (sd {:.6})",
                ens.summary.count, ens.summary.mean, ens.summary.std_dev
            );
            let result = json!({
                "scheme": "sde",
                "spec": spec,
                "summary": ens.summary,
                "exponents": exponents,
                "report": report,
            });
            let mut out = TaskOutput::new(result, summary);
            out.files
                .push((".trace.csv".into(), ens.paths[0].trace.to_csv()));
            if sc
                .dynamics
                .as_ref()
                .and_then(|d| d.sde.as_ref())
                .is_some_and(|s| s.ensemble_csv)
            {
                out.files.push((".ensemble.csv".into(), ens.to_csv()));
            }
            Ok(out)
        }
    }
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::invalid(format!("dyn needs `{name}`")))
}

fn field(d: &DynParams) -> Result<&UpdateFieldSpec, Failure> {
    d.field
        .as_ref()
        .ok_or_else(|| Failure::invalid("dyn needs a `field`"))
}

fn eps0(d: &DynParams) -> Result<(f64, f64), Failure> {
    need(d.eps0, "eps0")
}

fn sde_spec(sc: &Scenario, d: &DynParams) -> Result<SdeSpec, Failure> {
    let s = d
        .sde
        .as_ref()
        .ok_or_else(|| Failure::invalid("sde scheme needs an `sde` block"))?;
    Ok(SdeSpec {
        f1: s.f1,
        f2: s.f2,
        sigma1: s.sigma1,
        sigma2: s.sigma2,
        horizon: s.horizon,
        dt: s.dt,
        paths: s.paths,
        seed: sc.seed,
        record_every: s.record_every,
    })
}

fn trace_output(trace: Trace, extra: Value) -> TaskOutput {
    let last = *trace.last();
    let summary = format!(
        "{}: {} rows, final gap {:.6e} at t={}",
        trace.scheme,
        trace.rows.len(),
        last.gap,
        last.t
    );
    let csv = trace.to_csv();
    let mut result = json!({
        "scheme": trace.scheme,
        "step": trace.step,
        "seed": trace.seed,
        "rows": trace.rows.len(),
        "final": last,
        "events": trace.events,
        "warnings": trace.warnings,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut result, extra) {
        m.extend(e);
    }
    let mut out = TaskOutput::new(result, summary);
    out.files.push((".trace.csv".into(), csv));
    out
}

fn pipeline(sc: &Scenario) -> Result<TaskOutput, Failure> {
    let p = sc.section(&sc.pipeline, "pipeline")?;
    let (cfg, p_b, p_s) = valuations(sc)?;
    let outcome = play_game(p_b, p_s, &cfg)?;
    let game_value = to_value(&outcome);
    if let Some(price) = outcome.price {
        let route = match outcome.stage {
            tatonnement_core::game::GameStage::Stage1 => "game-stage1",
            _ => "game-stage2",
        };
        let result = json!({ "route": route, "price": price, "game": game_value });
        let mut out = TaskOutput::new(result, format!("route {route}, price {price:.6}"));
        out.route = Some(route.into());
        return Ok(out);
    }
    let (route, price, detail) = match p.fallback {
        Fallback::Share => {
            let mut inner = sc.clone();
            inner.task = Task::Share;
            let o = share(&inner)?;
            let price = o.result["primal"]["price"]
                .as_f64()
                .expect("share reports a price");
            ("risk-sharing", price, o.result)
        }
        Fallback::Regret => {
            let mut inner = sc.clone();
            inner.task = Task::Regret;
            let o = regret(&inner)?;
            let price = o.result["price"].as_f64().expect("regret reports a price");
            ("regret", price, o.result)
        }
    };
    let result = json!({ "route": route, "price": price, "game": game_value, "fallback": detail });
    let mut out = TaskOutput::new(result, format!("route {route}, price {price:.6}"));
    out.route = Some(route.into());
    Ok(out)
}
