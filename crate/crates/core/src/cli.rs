//! Command-line front end. Every command returns its output and exit code
//! instead of printing, so it can be driven from tests.
//!
//! Exit codes: 0 success or positive verdict, 1 negative verdict or runtime
//! failure, 2 usage, parse or validation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    q_monotonicity_check, robustness_probe, sweep_eps_minus_with, ProbeConfig, RobustnessResult,
    SweepResult,
};
use crate::constants::{
    assess, derive_constants, AssumptionReport, DerivedConstants, DEFAULT_DWELL_DELTA,
};
use crate::controller::{
    dwell_lower_bounds, find_feasible_eps, in_cz, ControllerParams, SafetyDistances,
    DEFAULT_FEASIBLE_GRID,
};
use crate::model::{Input, Scenario};
use crate::par::Execution;
use crate::scenario_file::ScenarioFile;
use crate::simulator::{simulate, RunReport, SimConfig, Trajectory};

/// A3 bound for the bundled example as quoted in the literature.
pub const REFERENCE_A3_BOUND: f64 = 23.9;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "icufunnel",
    version,
    about = "ICU-capacity funnel control of an SIRASD epidemic"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the admissibility assumptions.
    Check {
        /// Scenario file, or @name for a bundled scenario.
        scenario: String,
    },
    /// Print the derived constants.
    Constants {
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_DWELL_DELTA)]
        dwell_delta: f64,
    },
    /// Integrate open or closed loop and write CSV output.
    Simulate(SimulateArgs),
    /// Print the dwell-time lower bounds of a controller.
    Dwell {
        scenario: String,
        #[command(flatten)]
        eps: EpsArgs,
        /// I_A at the switch-off instant; enables the relaxed-phase bound.
        #[arg(long)]
        ia_at_switch: Option<f64>,
    },
    /// Construct a feasible controller.
    Feasible {
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_FEASIBLE_GRID)]
        grid: usize,
    },
    /// Sample parameter perturbations around the scenario.
    Robust {
        scenario: String,
        /// Without both distances a feasible pair is constructed; the
        /// file's controller table is not used.
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points of the monotonicity grid for q.
        #[arg(long, default_value_t = 10_000)]
        q_grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Closed-loop runs over a list of switch-off distances.
    Sweep {
        scenario: String,
        #[arg(long)]
        eps_plus: Option<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        eps_minus_list: Vec<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Debug, Args)]
pub struct EpsArgs {
    #[arg(long)]
    pub eps_plus: Option<f64>,
    #[arg(long)]
    pub eps_minus: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: String,
    /// Keep distancing off throughout.
    #[arg(long)]
    pub open_loop: bool,
    #[command(flatten)]
    pub eps: EpsArgs,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub events_out: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self::with_code(stdout, EXIT_OK)
    }

    fn with_code(stdout: String, code: i32) -> Self {
        Self {
            stdout,
            stderr: String::new(),
            code,
        }
    }

    fn fail(code: i32, msg: impl std::fmt::Display) -> Self {
        Self {
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
            code,
        }
    }
}

/// Shortest decimal form that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                Outcome {
                    stdout: String::new(),
                    stderr: text,
                    code,
                }
            } else {
                Outcome::ok(text)
            }
        }
    }
}

pub fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Check { scenario } => cmd_check(&scenario),
        Command::Constants {
            scenario,
            dwell_delta,
        } => cmd_constants(&scenario, dwell_delta),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Dwell {
            scenario,
            eps,
            ia_at_switch,
        } => cmd_dwell(&scenario, &eps, ia_at_switch),
        Command::Feasible { scenario, grid } => cmd_feasible(&scenario, grid),
        Command::Robust {
            scenario,
            eps,
            delta,
            samples,
            seed,
            q_grid,
            out,
            sequential,
        } => {
            let cfg = ProbeConfig {
                samples,
                seed,
                execution: execution(sequential),
                ..ProbeConfig::default()
            };
            cmd_robust(&scenario, &eps, delta, &cfg, q_grid, out.as_deref())
        }
        Command::Sweep {
            scenario,
            eps_plus,
            eps_minus_list,
            horizon,
            out,
            sequential,
        } => cmd_sweep(
            &scenario,
            eps_plus,
            &eps_minus_list,
            horizon,
            out.as_deref(),
            execution(sequential),
        ),
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

/// Early return with an [`Outcome`] from a `Result`.
macro_rules! attempt {
    ($e:expr, $code:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return Outcome::fail($code, err),
        }
    };
}

fn load(source: &str) -> Result<ScenarioFile, Outcome> {
    ScenarioFile::load(source).map_err(|e| Outcome::fail(EXIT_USAGE, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), Outcome> {
    std::fs::write(path, text).map_err(|e| {
        Outcome::fail(
            EXIT_NEGATIVE,
            format!("cannot write {}: {e}", path.display()),
        )
    })
}

/// Controller pair from flags, falling back to the file's `[controller]` table.
fn resolve_eps(eps: &EpsArgs, file: &ScenarioFile) -> Option<SafetyDistances> {
    let from_file = file.controller;
    let plus = eps.eps_plus.or(from_file.map(|d| d.eps_plus))?;
    let minus = eps.eps_minus.or(from_file.map(|d| d.eps_minus))?;
    Some(SafetyDistances::new(minus, plus))
}

pub fn format_assumptions(report: &AssumptionReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        let verdict = match (c.holds, c.vacuous) {
            (true, true) => "pass (vacuous)",
            (true, false) => "pass",
            (false, _) => "FAIL",
        };
        let _ = write!(
            s,
            "{} | {} | {} {} {} | {}",
            c.assumption,
            c.name,
            num(c.lhs),
            c.relation.symbol(),
            num(c.rhs),
            verdict
        );
        if let Some(note) = &c.note {
            let _ = write!(s, " | {note}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_check(source: &str) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let (_, report) = assess(&file.scenario, DEFAULT_DWELL_DELTA);
    let mut s = format_assumptions(&report);
    let _ = writeln!(s, "in_sigma = {}", report.in_sigma());
    let _ = writeln!(s, "in_sigma_rob = {}", report.in_sigma_rob());
    let code = if report.in_sigma() {
        EXIT_OK
    } else {
        EXIT_NEGATIVE
    };
    Outcome::with_code(s, code)
}

pub fn format_constants(dc: &DerivedConstants) -> String {
    let rows = [
        ("N", dc.n),
        ("phi_plus", dc.phi_plus),
        ("S_min", dc.s_min),
        ("beta_tilde", dc.beta_tilde),
        ("A", dc.a),
        ("B", dc.b),
        ("zeta", dc.zeta),
        ("K_psi_bar", dc.k_psi_bar),
        ("M1", dc.m1),
        ("M2", dc.m2),
        ("M3", dc.m3),
        ("mu", dc.mu),
        ("psi_floor", dc.psi_floor),
        ("symptomatic_exit_rate", dc.exit_rate_s),
        ("M2_over_M1", dc.eps_lower()),
        ("a3_bound", dc.a3_bound()),
        ("reference_a3_bound", REFERENCE_A3_BOUND),
    ];
    let mut s = String::new();
    for (k, v) in rows {
        let _ = writeln!(s, "{k} = {}", num(v));
    }
    let _ = writeln!(s, "a3_holds = {}", dc.a3_bound() < dc.phi_plus);
    s
}

pub fn cmd_constants(source: &str, dwell_delta: f64) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let dc = attempt!(derive_constants(&file.scenario, dwell_delta), EXIT_NEGATIVE);
    Outcome::ok(format_constants(&dc))
}

pub fn format_report(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "d_max = {}", num(r.d_max));
    let _ = writeln!(s, "total_infected_proxy = {}", num(r.total_infected_proxy));
    let _ = writeln!(s, "input_cost = {}", num(r.input_cost));
    let _ = writeln!(s, "switch_count = {}", r.switch_count);
    let _ = writeln!(
        s,
        "min_observed_dwell = {}",
        r.min_observed_dwell.map_or("none".to_string(), num)
    );
    let _ = writeln!(s, "pandemic_end = {}", num(r.pandemic_end));
    let _ = writeln!(s, "max_IS = {}", num(r.max_i_s));
    let _ = writeln!(s, "phi_plus = {}", num(r.phi_plus));
    let _ = writeln!(s, "icu_bound_satisfied = {}", r.icu_bound_satisfied);
    let _ = writeln!(s, "ended_released = {}", r.ended_released);
    s
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,S,I_A,I_S,R,D,psi,u\n");
    for smp in &traj.samples {
        let x = &smp.state;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            num(x.t),
            num(x.s),
            num(x.i_a),
            num(x.i_s),
            num(x.r),
            num(x.d),
            num(x.psi),
            smp.u.as_u8()
        );
    }
    s
}

pub fn events_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,u_new\n");
    for e in &traj.events {
        let _ = writeln!(s, "{},{}", num(e.t), e.u_new.as_u8());
    }
    s
}

pub fn cmd_simulate(args: &SimulateArgs) -> Outcome {
    let file = match load(&args.scenario) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let mut cfg = SimConfig::default();
    file.sim.apply(&mut cfg);
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    attempt!(cfg.validate(), EXIT_USAGE);

    let cp = if args.open_loop {
        cfg.open_loop_u = Some(Input::Off);
        None
    } else {
        let Some(eps) = resolve_eps(&args.eps, &file) else {
            return Outcome::fail(
                EXIT_USAGE,
                "closed loop needs eps_plus and eps_minus from flags or a [controller] table; use --open-loop otherwise",
            );
        };
        Some(attempt!(
            ControllerParams::for_scenario(&file.scenario, eps),
            EXIT_USAGE
        ))
    };

    let (traj, report) = attempt!(simulate(&file.scenario, cp.as_ref(), &cfg), EXIT_NEGATIVE);
    let text = format_report(&report);
    for (path, body) in [
        (&args.out, trajectory_csv(&traj)),
        (&args.events_out, events_csv(&traj)),
        (&args.report_out, text.clone()),
    ] {
        if let Some(p) = path {
            if let Err(o) = write_file(p, &body) {
                return o;
            }
        }
    }
    Outcome::ok(text)
}

pub fn cmd_dwell(source: &str, eps: &EpsArgs, ia_at_switch: Option<f64>) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let Some(pair) = resolve_eps(eps, &file) else {
        return Outcome::fail(
            EXIT_USAGE,
            "dwell needs eps_plus and eps_minus from flags or a [controller] table",
        );
    };
    let cp = attempt!(
        ControllerParams::for_scenario(&file.scenario, pair),
        EXIT_USAGE
    );
    let dc = attempt!(
        derive_constants(&file.scenario, DEFAULT_DWELL_DELTA),
        EXIT_NEGATIVE
    );
    let b = dwell_lower_bounds(&cp, &dc, ia_at_switch.unwrap_or(0.0));
    let mut s = String::new();
    let _ = writeln!(s, "upper_threshold = {}", num(cp.upper_threshold()));
    let _ = writeln!(s, "lower_threshold = {}", num(cp.lower_threshold()));
    let _ = writeln!(s, "down_bound = {}", num(b.down_bound));
    match ia_at_switch {
        Some(_) => {
            let _ = writeln!(s, "up_bound = {}", num(b.up_bound));
            let _ = writeln!(s, "up_bound_informative = {}", b.up_informative());
        }
        None => s.push_str("up_bound = none (pass --ia-at-switch)\n"),
    }
    Outcome::ok(s)
}

pub fn cmd_feasible(source: &str, grid: usize) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let dc = attempt!(
        derive_constants(&file.scenario, DEFAULT_DWELL_DELTA),
        EXIT_NEGATIVE
    );
    let cp = attempt!(find_feasible_eps(&file.scenario, &dc, grid), EXIT_NEGATIVE);
    let cz = in_cz(cp.distances(), &file.scenario, &dc);
    let mut s = String::new();
    let _ = writeln!(s, "eps_plus = {}", num(cp.eps_plus()));
    let _ = writeln!(s, "eps_minus = {}", num(cp.eps_minus()));
    let _ = writeln!(s, "upper_threshold = {}", num(cp.upper_threshold()));
    let _ = writeln!(s, "q = {}", cz.q_value.map_or("undefined".to_string(), num));
    let _ = writeln!(s, "margin = {}", num(cz.margin()));
    let _ = writeln!(s, "in_cz = {}", cz.member());
    Outcome::ok(s)
}

pub const ROBUST_CSV_HEADER: &str = "delta,samples,seed,eps_minus,eps_plus,pass_fraction,certified_delta,failed_invalid,failed_constants,failed_A1,failed_A2,failed_A3,failed_A6,failed_C_Z";

pub fn robust_csv(r: &RobustnessResult, seed: u64, eps: SafetyDistances) -> String {
    let count = |k: &str| r.failures.get(k).copied().unwrap_or(0);
    format!(
        "{ROBUST_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        num(r.delta),
        r.samples,
        seed,
        num(eps.eps_minus),
        num(eps.eps_plus),
        num(r.pass_fraction),
        num(r.certified_delta),
        count("invalid"),
        count("constants"),
        count("A1"),
        count("A2"),
        count("A3"),
        count("A6"),
        count("C_Z"),
    )
}

pub fn cmd_robust(
    source: &str,
    eps: &EpsArgs,
    delta: f64,
    cfg: &ProbeConfig,
    q_grid: usize,
    out: Option<&Path>,
) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let sc: &Scenario = &file.scenario;
    let dc = attempt!(derive_constants(sc, cfg.dwell_delta), EXIT_NEGATIVE);
    let (pair, origin) = match (eps.eps_minus, eps.eps_plus) {
        (Some(m), Some(p)) => (SafetyDistances::new(m, p), "flags"),
        (None, None) => (
            attempt!(
                find_feasible_eps(sc, &dc, DEFAULT_FEASIBLE_GRID),
                EXIT_NEGATIVE
            )
            .distances(),
            "constructed",
        ),
        _ => {
            return Outcome::fail(
                EXIT_USAGE,
                "pass both --eps-minus and --eps-plus, or neither",
            )
        }
    };
    let r = attempt!(robustness_probe(sc, pair, delta, cfg), EXIT_NEGATIVE);
    let mono = q_monotonicity_check(sc, &dc, q_grid);
    let csv = robust_csv(&r, cfg.seed, pair);
    if let Some(p) = out {
        if let Err(o) = write_file(p, &csv) {
            return o;
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "eps_source = {origin}");
    let _ = writeln!(s, "eps_minus = {}", num(pair.eps_minus));
    let _ = writeln!(s, "eps_plus = {}", num(pair.eps_plus));
    let _ = writeln!(s, "delta = {}", num(r.delta));
    let _ = writeln!(s, "samples = {}", r.samples);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "pass_fraction = {}", num(r.pass_fraction));
    let _ = writeln!(s, "certified_delta = {}", num(r.certified_delta));
    for (k, v) in &r.failures {
        let _ = writeln!(s, "failures.{k} = {v}");
    }
    let _ = writeln!(s, "q_monotone = {}", mono.monotone);
    let _ = writeln!(s, "q1_at_lower = {}", num(mono.q1_at_lower));
    let _ = writeln!(s, "q1_slope_factor = {}", num(mono.q1_slope_factor));
    let robust = r.pass_fraction == 1.0 && mono.passed();
    let _ = writeln!(s, "robust = {robust}");
    Outcome::with_code(s, if robust { EXIT_OK } else { EXIT_NEGATIVE })
}

pub const SWEEP_CSV_HEADER: &str =
    "eps_minus,D_max,switch_count,pandemic_end,input_cost,max_IS,error";

pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for row in &sweep.rows {
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},",
                    num(row.eps_minus),
                    num(r.d_max),
                    r.switch_count,
                    num(r.pandemic_end),
                    num(r.input_cost),
                    num(r.max_i_s)
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{},,,,,,\"{}\"", num(row.eps_minus), e.replace('"', "'"));
            }
        }
    }
    s
}

pub fn cmd_sweep(
    source: &str,
    eps_plus: Option<f64>,
    eps_minus_list: &[f64],
    horizon: Option<f64>,
    out: Option<&Path>,
    exec: Execution,
) -> Outcome {
    let file = match load(source) {
        Ok(f) => f,
        Err(o) => return o,
    };
    let Some(eps_plus) = eps_plus.or(file.controller.map(|c| c.eps_plus)) else {
        return Outcome::fail(EXIT_USAGE, "sweep needs --eps-plus or a [controller] table");
    };
    let mut cfg = SimConfig::default();
    file.sim.apply(&mut cfg);
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    attempt!(cfg.validate(), EXIT_USAGE);
    let sweep = sweep_eps_minus_with(exec, &file.scenario, eps_plus, eps_minus_list, &cfg);
    let csv = sweep_csv(&sweep);
    let code = if sweep.rows.iter().all(|r| r.outcome.is_ok()) {
        EXIT_OK
    } else {
        EXIT_NEGATIVE
    };
    match out {
        Some(p) => {
            if let Err(o) = write_file(p, &csv) {
                return o;
            }
            Outcome::with_code(
                format!("wrote {} rows to {}\n", sweep.rows.len(), p.display()),
                code,
            )
        }
        None => Outcome::with_code(csv, code),
    }
}
