//! Batch front end: loads a JSON scenario, runs one task and writes
//! deterministic result files.

pub mod output;
pub mod scenario;
pub mod tasks;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tatonnement_core::Error;

use crate::scenario::{RegretSpace, Scheme, SCHEMA_VERSION};

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_MARKET: i32 = 3;
pub const EXIT_NO_TRADE: i32 = 4;
pub const EXIT_SOLVER: i32 = 5;

const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (input schema 1)");

/// A failed run: message plus process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    pub fn market(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MARKET,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_)
            | Error::Dimension(_)
            | Error::Domain(_)
            | Error::RiskTooLarge { .. }
            | Error::OutOfSupport { .. }
            | Error::OutOfRange { .. }
            | Error::NonMonotoneCurve(_)
            | Error::AnchorNotRiskNeutral(_) => EXIT_INVALID,
            Error::Arbitrage | Error::Infeasible | Error::Unbounded => EXIT_MARKET,
            Error::EmptyFrontier(_) | Error::EmptyInterval => EXIT_NO_TRADE,
            Error::UnboundedUtility(_)
            | Error::Bracket { .. }
            | Error::SamplerExhausted { .. }
            | Error::Divergence { .. }
            | Error::StepTooLarge { .. }
            | Error::SingularityStall { .. }
            | Error::NonConvergence(_) => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tatonnement", version = LONG_VERSION, about = "Run pricing, bargaining and dynamics scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; defaults to the scenario's `output`, then to the scenario path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `share.lambda=0.25`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the task named in the scenario.
    Run(Common),
    /// No-arbitrage price band.
    Band(Common),
    /// Indifference prices.
    Indiff(Common),
    /// Sealed-bid market game.
    Game(Common),
    /// Risk sharing.
    Share(Common),
    /// Regret scenarios.
    Regret {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        space: Option<SpaceArg>,
    },
    /// Price dynamics.
    Dyn {
        #[arg(value_enum)]
        scheme: Option<SchemeArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Game with a declared fallback on escalation.
    Pipeline(Common),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SpaceArg {
    Beliefs,
    Prices,
    RiskNeutral,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SchemeArg {
    Ode,
    Discrete,
    Barrier,
    Projected,
    Sde,
    Report,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Run(c)
            | Command::Band(c)
            | Command::Indiff(c)
            | Command::Game(c)
            | Command::Share(c)
            | Command::Pipeline(c) => c,
            Command::Regret { common, .. } | Command::Dyn { common, .. } => common,
        }
    }

    /// Overrides implied by the subcommand, applied before the user's.
    fn implied(&self) -> Vec<String> {
        let task = |t: &str| format!("task=\"{t}\"");
        let to_str = |v: Value| v.to_string();
        match self {
            Command::Run(_) => vec![],
            Command::Band(_) => vec![task("band")],
            Command::Indiff(_) => vec![task("indiff")],
            Command::Game(_) => vec![task("game")],
            Command::Share(_) => vec![task("share")],
            Command::Pipeline(_) => vec![task("pipeline")],
            Command::Regret { space, .. } => {
                let mut v = vec![task("regret")];
                if let Some(s) = space {
                    let s = match s {
                        SpaceArg::Beliefs => RegretSpace::Beliefs,
                        SpaceArg::Prices => RegretSpace::Prices,
                        SpaceArg::RiskNeutral => RegretSpace::RiskNeutral,
                    };
                    v.push(format!("regret.space={}", to_str(json!(s))));
                }
                v
            }
            Command::Dyn { scheme, .. } => {
                let mut v = vec![task("dyn")];
                if let Some(s) = scheme {
                    let s = match s {
                        SchemeArg::Ode => Scheme::Ode,
                        SchemeArg::Discrete => Scheme::Discrete,
                        SchemeArg::Barrier => Scheme::Barrier,
                        SchemeArg::Projected => Scheme::Projected,
                        SchemeArg::Sde => Scheme::Sde,
                        SchemeArg::Report => Scheme::Report,
                    };
                    v.push(format!("dyn.scheme={}", to_str(json!(s))));
                }
                v
            }
        }
    }
}

fn default_prefix(scenario: &Path) -> PathBuf {
    scenario.with_extension("")
}

/// Runs one invocation and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let started = Instant::now();
    match execute_inner(cli, started) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

fn execute_inner(cli: &Cli, started: Instant) -> Result<i32, Failure> {
    let common = cli.command.common();
    let mut overrides = cli.command.implied();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(common.overrides.iter().cloned());
    let doc = scenario::load(&common.scenario, &overrides)?;
    let sc = scenario::parse(&doc)?;
    let out = tasks::run_task(&sc)?;

    let mut record = json!({
        "tool": "tatonnement",
        "version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "task": sc.task,
        "input_digest": output::digest(&doc),
        "seed": sc.seed,
        "result": out.result,
    });
    if let Some(route) = &out.route {
        record["route"] = json!(route);
    }
    let prefix = common
        .out
        .clone()
        .or_else(|| sc.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_prefix(&common.scenario));
    let mut files = vec![(
        ".result.json".to_string(),
        output::to_json(&record).map_err(|e| Failure {
            code: 1,
            message: format!("serializing result: {e}"),
        })?,
    )];
    files.extend(out.files);
    let written = output::write_all(&prefix, &files).map_err(|e| Failure {
        code: 1,
        message: format!("writing output under {}: {e}", prefix.display()),
    })?;
    println!(
        "{:?}: {} -> {} ({:.3} s)",
        sc.task,
        out.summary,
        written[0].display(),
        started.elapsed().as_secs_f64()
    );
    if let Some(note) = out.no_trade {
        eprintln!("no trade: {note}");
        return Ok(EXIT_NO_TRADE);
    }
    Ok(0)
}
