//! Closed-loop simulation of the two-mode hybrid system.
//!
//! Within a mode the smooth dynamics are integrated with Dormand–Prince 5(4).
//! The only active guard in mode `Off` is `I_S >= phi+ - eps+`, in mode `On`
//! it is `I_S <= eps-`. After every accepted step the dense output is scanned
//! for a guard crossing, which is then located by bisection; the step is cut
//! at the crossing, the mode flips and integration restarts from there.

use serde::Serialize;
use thiserror::Error;

use crate::constants::{check_sigma, Assumption, DerivedConstants};
use crate::controller::{control_update, dwell_lower_bounds, ControllerParams, ControllerState};
use crate::integrator::{DenseStep, DormandPrince, StepError, Tolerances};
use crate::model::{rhs, Input, Scenario, State};

/// Sub-intervals of each accepted step scanned for guard crossings and peaks.
const SCAN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("integration failed: {0}")]
    Step(#[from] StepError),
    #[error("more than {0} switches; the controller is chattering or misconfigured")]
    TooManySwitches(usize),
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Days.
    pub horizon: f64,
    /// Sampling interval of the output grid, days.
    pub output_dt: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Width of the bracket around a located switch, days.
    pub event_time_tol: f64,
    /// Fixed input that bypasses the controller.
    pub open_loop_u: Option<Input>,
    /// Upper bound on the integrator step, days.
    pub max_step: f64,
    pub max_switches: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1000.0,
            output_dt: 1.0,
            rtol: 1e-8,
            atol: 1e-10,
            event_time_tol: 1e-9,
            open_loop_u: None,
            max_step: 1.0,
            max_switches: 1_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidConfig(what.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(&format!("horizon = {} must be positive", self.horizon));
        }
        if !(self.output_dt > 0.0 && self.output_dt <= self.horizon) {
            return bad(&format!(
                "output_dt = {} must lie in (0, horizon]",
                self.output_dt
            ));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.event_time_tol > 0.0) {
            return bad("rtol, atol and event_time_tol must be positive");
        }
        if !(self.max_step > 0.0) {
            return bad(&format!("max_step = {} must be positive", self.max_step));
        }
        Ok(())
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub u_new: Input,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub state: State,
    /// Input in force from this instant on (right-continuous).
    pub u: Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<SwitchEvent>,
    pub horizon: f64,
    /// Input before the first event.
    pub initial_input: Input,
    /// Peak of `I_S` over the dense output, not only over the samples.
    pub max_i_s: f64,
    pub max_i_s_at: f64,
    pub event_time_tol: f64,
}

impl Trajectory {
    /// Right-continuous input at time `t`.
    pub fn input_at(&self, t: f64) -> Input {
        self.events
            .iter()
            .take_while(|e| e.t <= t)
            .last()
            .map_or(self.initial_input, |e| e.u_new)
    }

    pub fn final_state(&self) -> &State {
        &self.samples.last().expect("trajectory has samples").state
    }

    /// Closed intervals during which the input is on, clipped to `[0, horizon]`.
    pub fn on_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start = (self.initial_input == Input::On).then_some(0.0);
        for e in &self.events {
            match (e.u_new, start) {
                (Input::On, None) => start = Some(e.t),
                (Input::Off, Some(s)) => {
                    out.push((s, e.t));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.horizon));
        }
        out
    }
}

/// L¹ norm of the input over `[0, t]`.
pub fn input_cost(traj: &Trajectory, t: f64) -> Result<f64, SimError> {
    if !(0.0..=traj.horizon).contains(&t) {
        return Err(SimError::TimeOutOfRange {
            t,
            horizon: traj.horizon,
        });
    }
    Ok(traj
        .on_intervals()
        .iter()
        .map(|&(a, b)| (b.min(t) - a).max(0.0))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// `D` at the horizon.
    pub d_max: f64,
    /// `N - R0 - S` at the horizon.
    pub total_infected_proxy: f64,
    /// Days with the input on.
    pub input_cost: f64,
    pub switch_count: usize,
    /// Shortest time between consecutive switches; `None` with fewer than two.
    pub min_observed_dwell: Option<f64>,
    /// Time of the last switch-off, or 0 if there was none.
    pub pandemic_end: f64,
    pub max_i_s: f64,
    pub phi_plus: f64,
    pub icu_bound_satisfied: bool,
    /// Ends with the input off and `I_S` below the switch-on level and not rising.
    pub ended_released: bool,
}

impl RunReport {
    pub fn from_trajectory(
        traj: &Trajectory,
        scenario: &Scenario,
        cp: Option<&ControllerParams>,
    ) -> Self {
        let last = traj.final_state();
        let min_observed_dwell = traj
            .events
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        let pandemic_end = traj
            .events
            .iter()
            .rev()
            .find(|e| e.u_new == Input::Off)
            .map_or(0.0, |e| e.t);
        let final_u = traj.input_at(traj.horizon);
        let slope = rhs_at(last, final_u, scenario).map_or(f64::NAN, |d| d[2]);
        let below = cp.is_none_or(|cp| last.i_s < cp.upper_threshold());
        let phi_plus = scenario.phi_plus();
        Self {
            d_max: last.d,
            total_infected_proxy: scenario.population() - scenario.init().r0 - last.s,
            input_cost: input_cost(traj, traj.horizon).expect("horizon is in range"),
            switch_count: traj.events.len(),
            min_observed_dwell,
            pandemic_end,
            max_i_s: traj.max_i_s,
            phi_plus,
            icu_bound_satisfied: traj.max_i_s < phi_plus,
            ended_released: final_u == Input::Off && below && slope <= 0.0,
        }
    }
}

fn rhs_at(x: &State, u: Input, scenario: &Scenario) -> Option<[f64; 6]> {
    let mut dy = [0.0; 6];
    rhs(
        &x.to_array(),
        u,
        scenario.params(),
        scenario.population(),
        &mut dy,
    )
    .ok()?;
    Some(dy)
}

/// Integrates the scenario under the controller `cp`, or under
/// `cfg.open_loop_u` when that is set.
pub fn simulate(
    scenario: &Scenario,
    cp: Option<&ControllerParams>,
    cfg: &SimConfig,
) -> Result<(Trajectory, RunReport), SimError> {
    cfg.validate()?;
    let law = match (cfg.open_loop_u, cp) {
        (Some(u), _) => Law::Fixed(u),
        (None, Some(cp)) => {
            check_closed_loop_preconditions(scenario, cp)?;
            Law::Feedback(*cp)
        }
        (None, None) => {
            return Err(SimError::Precondition(
                "closed loop needs controller parameters, open loop needs a fixed input".into(),
            ))
        }
    };
    let traj = integrate(scenario, law, cfg)?;
    let report = RunReport::from_trajectory(&traj, scenario, law.params());
    Ok((traj, report))
}

fn check_closed_loop_preconditions(
    scenario: &Scenario,
    cp: &ControllerParams,
) -> Result<(), SimError> {
    let init = scenario.init();
    let pre = |msg: String| Err(SimError::Precondition(msg));
    if cp.phi_plus() != scenario.phi_plus() {
        return pre(format!(
            "controller phi+ = {} differs from scenario phi+ = {}",
            cp.phi_plus(),
            scenario.phi_plus()
        ));
    }
    if init.is0 > cp.upper_threshold() {
        return pre(format!(
            "IS0 = {} exceeds phi+ - eps+ = {}",
            init.is0,
            cp.upper_threshold()
        ));
    }
    if init.d0 != 0.0 {
        return pre(format!("D0 = {} must be 0", init.d0));
    }
    if init.psi0 != 1.0 {
        return pre(format!("psi0 = {} must be 1", init.psi0));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Law {
    Fixed(Input),
    Feedback(ControllerParams),
}

impl Law {
    fn params(&self) -> Option<&ControllerParams> {
        match self {
            Law::Fixed(_) => None,
            Law::Feedback(cp) => Some(cp),
        }
    }

    /// Whether the switching law would leave `mode` at level `i_s`.
    fn fires(&self, mode: Input, i_s: f64) -> bool {
        match self {
            Law::Fixed(_) => false,
            Law::Feedback(cp) => {
                let mut st = ControllerState { u_prev: mode };
                control_update(i_s, &mut st, cp) != mode
            }
        }
    }
}

struct OutputGrid {
    dt: f64,
    horizon: f64,
    /// Index of the grid point that lands on the horizon.
    last: u64,
    next: u64,
}

impl OutputGrid {
    fn new(dt: f64, horizon: f64) -> Self {
        let last = ((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
        Self {
            dt,
            horizon,
            last,
            next: 1,
        }
    }

    fn peek(&self) -> Option<f64> {
        match self.next.cmp(&self.last) {
            std::cmp::Ordering::Less => Some(self.next as f64 * self.dt),
            std::cmp::Ordering::Equal => Some(self.horizon),
            std::cmp::Ordering::Greater => None,
        }
    }
}

fn integrate(scenario: &Scenario, law: Law, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let params = *scenario.params();
    let population = scenario.population();
    let x0 = scenario.initial_state();
    let initial_input = match law {
        Law::Fixed(u) => u,
        Law::Feedback(_) => Input::Off,
    };

    let mut mode = initial_input;
    let mut events = Vec::new();
    if law.fires(mode, x0.i_s) {
        mode = mode.flipped();
        events.push(SwitchEvent {
            t: 0.0,
            u_new: mode,
        });
    }

    let mut samples = vec![Sample { state: x0, u: mode }];
    let mut grid = OutputGrid::new(cfg.output_dt, cfg.horizon);
    let mut peak = (x0.i_s, 0.0);
    let mut t = 0.0;
    let mut y = x0.to_array();

    'segments: while t < cfg.horizon {
        let m = mode;
        let f = move |_t: f64, y: &[f64; 6], dy: &mut [f64; 6]| {
            rhs(y, m, &params, population, dy).map_err(|e| e.to_string())
        };
        let mut stepper = DormandPrince::new(f, t, y, cfg.tolerances())?;
        loop {
            let step = stepper.step(cfg.horizon)?;
            let crossing = locate_crossing(&step, &law, mode, cfg.event_time_tol);
            let cut = crossing.unwrap_or(step.t1());

            for j in 1..=SCAN_POINTS {
                let ts = step.t0 + step.h * j as f64 / SCAN_POINTS as f64;
                if ts > cut {
                    break;
                }
                let v = step.eval_component(ts, 2);
                if v > peak.0 {
                    peak = (v, ts);
                }
            }

            while let Some(tg) = grid.peek() {
                if tg > cut || (crossing.is_some() && tg >= cut) {
                    break;
                }
                let state = State::from_array(tg, &step.eval(tg));
                samples.push(Sample { state, u: mode });
                grid.next += 1;
            }

            match crossing {
                Some(tc) => {
                    y = step.eval(tc);
                    t = tc;
                    if y[2] > peak.0 {
                        peak = (y[2], tc);
                    }
                    mode = mode.flipped();
                    events.push(SwitchEvent { t: tc, u_new: mode });
                    if events.len() > cfg.max_switches {
                        return Err(SimError::TooManySwitches(cfg.max_switches));
                    }
                    samples.push(Sample {
                        state: State::from_array(tc, &y),
                        u: mode,
                    });
                    continue 'segments;
                }
                None => {
                    t = step.t1();
                    y = step.end();
                    if t >= cfg.horizon {
                        break 'segments;
                    }
                }
            }
        }
    }

    // The grid always closes on the horizon; only an event landing exactly
    // there can leave the last sample short of it.
    if samples.last().map(|s| s.state.t) != Some(cfg.horizon) {
        samples.push(Sample {
            state: State::from_array(cfg.horizon, &y),
            u: mode,
        });
    }

    Ok(Trajectory {
        samples,
        events,
        horizon: cfg.horizon,
        initial_input,
        max_i_s: peak.0,
        max_i_s_at: peak.1,
        event_time_tol: cfg.event_time_tol,
    })
}

/// First time in `(t0, t1]` at which the law fires, to within `tol`.
fn locate_crossing(step: &DenseStep<6>, law: &Law, mode: Input, tol: f64) -> Option<f64> {
    if let Law::Fixed(_) = law {
        return None;
    }
    let fires = |t: f64| law.fires(mode, step.eval_component(t, 2));
    let mut lo = step.t0;
    for j in 1..=SCAN_POINTS {
        let hi = if j == SCAN_POINTS {
            step.t1()
        } else {
            step.t0 + step.h * j as f64 / SCAN_POINTS as f64
        };
        if fires(hi) {
            let (mut a, mut b) = (lo, hi);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if fires(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Some(b);
        }
        lo = hi;
    }
    None
}

/// Absolute slack used by [`validate_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationTolerances {
    /// Individuals.
    pub compartment: f64,
    pub psi: f64,
    /// Days.
    pub event_time: f64,
}

impl ValidationTolerances {
    pub fn for_scenario(scenario: &Scenario, event_time_tol: f64) -> Self {
        Self {
            compartment: 1e-6 * scenario.population(),
            psi: 1e-6,
            event_time: event_time_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub t: f64,
    /// How far past the allowed bound, in the check's units.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryCheck {
    pub name: &'static str,
    /// False when the check's hypotheses do not hold for this run.
    pub applicable: bool,
    pub violations: Vec<Violation>,
    /// Smallest slack seen (negative when violated).
    pub worst_slack: f64,
}

impl TrajectoryCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<TrajectoryCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(TrajectoryCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&TrajectoryCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct CheckBuilder {
    check: TrajectoryCheck,
}

impl CheckBuilder {
    fn new(name: &'static str, applicable: bool) -> Self {
        Self {
            check: TrajectoryCheck {
                name,
                applicable,
                violations: Vec::new(),
                worst_slack: f64::INFINITY,
            },
        }
    }

    /// Records `slack >= 0` as satisfied.
    fn observe(&mut self, t: f64, slack: f64) {
        self.record(t, slack, slack >= 0.0);
    }

    /// Records only `slack > 0` as satisfied.
    fn observe_strict(&mut self, t: f64, slack: f64) {
        self.record(t, slack, slack > 0.0);
    }

    fn record(&mut self, t: f64, slack: f64, ok: bool) {
        if !self.check.applicable {
            return;
        }
        if slack < self.check.worst_slack || slack.is_nan() {
            self.check.worst_slack = slack;
        }
        if !ok {
            self.check.violations.push(Violation { t, excess: -slack });
        }
    }
}

/// Checks a trajectory sample-by-sample against every bound its scenario
/// guarantees: nonnegativity, conservation, the `I_A`/`I_S` cone, the
/// susceptible floor, the response band, the ICU bound and the distancing
/// dwell-time bound.
pub fn validate_trajectory(
    traj: &Trajectory,
    scenario: &Scenario,
    dc: &DerivedConstants,
    cp: Option<&ControllerParams>,
    tol: &ValidationTolerances,
) -> ValidationReport {
    let e = scenario.params();
    let report = check_sigma(scenario, dc);
    let a1a2 = report.holds(Assumption::A1) && report.holds(Assumption::A2);
    let a2 = report.holds(Assumption::A2);
    let psi_band = scenario.init().psi0 == 1.0;
    let n = scenario.population();
    let c = tol.compartment;
    let cone = (1.0 - e.p) / e.p;

    let mut nonneg = CheckBuilder::new("nonnegative", true);
    let mut conservation = CheckBuilder::new("conservation", true);
    let mut lower_cone = CheckBuilder::new("asymptomatic_lower_bound", a1a2);
    let mut s_floor = CheckBuilder::new("susceptible_floor", a2);
    let mut upper_cone = CheckBuilder::new("asymptomatic_upper_bound", true);
    let mut psi = CheckBuilder::new("response_band", psi_band);
    let mut icu = CheckBuilder::new("icu_bound", cp.is_some());
    let mut dwell = CheckBuilder::new("distancing_dwell", cp.is_some());

    for sample in &traj.samples {
        let x = &sample.state;
        let t = x.t;
        let smallest = [x.s, x.i_a, x.i_s, x.r, x.d]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        nonneg.observe(t, smallest + c);
        conservation.observe(t, c - (x.total() - n).abs());
        lower_cone.observe(t, x.i_a - cone * x.i_s + c);
        s_floor.observe(t, x.s - dc.s_min + c);
        upper_cone.observe(t, dc.zeta * x.i_s + c - x.i_a);
        psi.observe(
            t,
            (x.psi - (dc.psi_floor - tol.psi)).min(1.0 + tol.psi - x.psi),
        );
        if let Some(cp) = cp {
            icu.observe_strict(t, cp.phi_plus() - x.i_s);
        }
    }
    if let Some(cp) = cp {
        icu.observe_strict(traj.max_i_s_at, cp.phi_plus() - traj.max_i_s);
        let bound = dwell_lower_bounds(cp, dc, 0.0).down_bound;
        for w in traj.events.windows(2) {
            if w[0].u_new == Input::On && w[1].u_new == Input::Off {
                dwell.observe(w[0].t, (w[1].t - w[0].t) - (bound - tol.event_time));
            }
        }
    }

    ValidationReport {
        checks: vec![
            nonneg.check,
            conservation.check,
            lower_cone.check,
            s_floor.check,
            upper_cone.check,
            psi.check,
            icu.check,
            dwell.check,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{derive_constants, DEFAULT_DWELL_DELTA};
    use crate::controller::SafetyDistances;
    use crate::model::{CapacityPolicy, EpidemicParams, InitialState};

    fn pair(em: f64) -> ControllerParams {
        ControllerParams::new(44.0, SafetyDistances::new(em, 10.0)).unwrap()
    }

    fn short(horizon: f64) -> SimConfig {
        SimConfig {
            horizon,
            ..SimConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        for cfg in [
            SimConfig {
                horizon: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                output_dt: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                output_dt: 2000.0,
                ..SimConfig::default()
            },
            SimConfig {
                rtol: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                event_time_tol: -1.0,
                ..SimConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(SimError::InvalidConfig(_))));
        }
    }

    #[test]
    fn missing_law_is_rejected() {
        let sc = Scenario::example_city();
        assert!(matches!(
            simulate(&sc, None, &SimConfig::default()),
            Err(SimError::Precondition(_))
        ));
    }

    #[test]
    fn closed_loop_preconditions() {
        let mut init = InitialState::example_city();
        init.is0 = 35.0;
        init.s0 -= 34.0;
        let sc = Scenario::new(
            EpidemicParams::example_city(),
            init,
            CapacityPolicy::example_city(),
        )
        .unwrap();
        assert!(matches!(
            simulate(&sc, Some(&pair(8.0)), &short(10.0)),
            Err(SimError::Precondition(_))
        ));

        let mut init = InitialState::example_city();
        init.psi0 = 0.5;
        let sc = Scenario::new(
            EpidemicParams::example_city(),
            init,
            CapacityPolicy::example_city(),
        )
        .unwrap();
        assert!(matches!(
            simulate(&sc, Some(&pair(8.0)), &short(10.0)),
            Err(SimError::Precondition(_))
        ));

        let mut init = InitialState::example_city();
        init.d0 = 1.0;
        let sc = Scenario::new(
            EpidemicParams::example_city(),
            init,
            CapacityPolicy::example_city(),
        )
        .unwrap();
        assert!(matches!(
            simulate(&sc, Some(&pair(8.0)), &short(10.0)),
            Err(SimError::Precondition(_))
        ));

        let other = ControllerParams::new(50.0, SafetyDistances::new(8.0, 10.0)).unwrap();
        assert!(matches!(
            simulate(&Scenario::example_city(), Some(&other), &short(10.0)),
            Err(SimError::Precondition(_))
        ));
    }

    #[test]
    fn disease_free_scenario_is_stationary() {
        let init = InitialState {
            ia0: 0.0,
            is0: 0.0,
            ..InitialState::example_city()
        };
        let sc = Scenario::new(
            EpidemicParams::example_city(),
            init,
            CapacityPolicy::example_city(),
        )
        .unwrap();
        let (traj, rep) = simulate(&sc, Some(&pair(8.0)), &short(100.0)).unwrap();
        for s in &traj.samples {
            assert_eq!(s.state.to_array()[..5], sc.initial_state().to_array()[..5]);
        }
        assert_eq!(rep.switch_count, 0);
        assert_eq!(rep.input_cost, 0.0);
        assert_eq!(rep.pandemic_end, 0.0);
    }

    #[test]
    fn start_at_switch_on_level_records_event_at_zero() {
        let mut init = InitialState::example_city();
        init.is0 = 34.0;
        init.ia0 = 49.0 * 34.0;
        init.s0 = 1e5 - init.is0 - init.ia0 - init.r0;
        let sc = Scenario::new(
            EpidemicParams::example_city(),
            init,
            CapacityPolicy::example_city(),
        )
        .unwrap();
        let (traj, _) = simulate(&sc, Some(&pair(8.0)), &short(5.0)).unwrap();
        assert_eq!(
            traj.events[0],
            SwitchEvent {
                t: 0.0,
                u_new: Input::On
            }
        );
        assert_eq!(traj.samples[0].u, Input::On);
        assert_eq!(traj.input_at(0.0), Input::On);
    }

    #[test]
    fn samples_and_events_are_ordered() {
        let sc = Scenario::example_city();
        let (traj, rep) = simulate(&sc, Some(&pair(20.0)), &SimConfig::default()).unwrap();
        assert!(traj.samples.windows(2).all(|w| w[0].state.t < w[1].state.t));
        assert!(traj
            .events
            .windows(2)
            .all(|w| w[0].t < w[1].t && w[0].u_new != w[1].u_new));
        assert_eq!(traj.events[0].u_new, Input::On);
        assert_eq!(traj.samples.last().unwrap().state.t, 1000.0);
        assert_eq!(rep.switch_count, traj.events.len());
        // u changes only at events.
        for w in traj.samples.windows(2) {
            if w[0].u != w[1].u {
                assert!(traj.events.iter().any(|e| e.t == w[1].state.t));
            }
        }
        for s in &traj.samples {
            assert_eq!(s.u, traj.input_at(s.state.t));
        }
    }

    #[test]
    fn located_events_sit_on_thresholds() {
        let sc = Scenario::example_city();
        let cp = pair(8.0);
        let (traj, _) = simulate(&sc, Some(&cp), &SimConfig::default()).unwrap();
        for e in &traj.events {
            let x = traj
                .samples
                .iter()
                .find(|s| s.state.t == e.t)
                .unwrap()
                .state;
            let level = match e.u_new {
                Input::On => cp.upper_threshold(),
                Input::Off => cp.lower_threshold(),
            };
            // |dI_S/dt| stays below a few individuals per day.
            assert!(
                (x.i_s - level).abs() <= 10.0 * traj.event_time_tol,
                "{e:?} at {}",
                x.i_s
            );
        }
    }

    #[test]
    fn open_loop_overshoots() {
        let sc = Scenario::example_city();
        let cfg = SimConfig {
            open_loop_u: Some(Input::Off),
            ..SimConfig::default()
        };
        let (traj, rep) = simulate(&sc, None, &cfg).unwrap();
        assert!(rep.max_i_s > 44.0 * 5.0);
        assert!(!rep.icu_bound_satisfied);
        assert!(traj.events.is_empty());
        assert_eq!(rep.input_cost, 0.0);
    }

    #[test]
    fn input_cost_of_constant_inputs() {
        let sc = Scenario::example_city();
        let on = SimConfig {
            open_loop_u: Some(Input::On),
            ..short(50.0)
        };
        let (traj, _) = simulate(&sc, None, &on).unwrap();
        assert_eq!(input_cost(&traj, 50.0).unwrap(), 50.0);
        assert_eq!(input_cost(&traj, 12.5).unwrap(), 12.5);
        let off = SimConfig {
            open_loop_u: Some(Input::Off),
            ..short(50.0)
        };
        let (traj, _) = simulate(&sc, None, &off).unwrap();
        assert_eq!(input_cost(&traj, 50.0).unwrap(), 0.0);
        assert!(matches!(
            input_cost(&traj, 51.0),
            Err(SimError::TimeOutOfRange { .. })
        ));
        assert!(input_cost(&traj, -1.0).is_err());
    }

    #[test]
    fn input_cost_sums_on_phases() {
        let traj = Trajectory {
            samples: vec![],
            events: vec![
                SwitchEvent {
                    t: 1.0,
                    u_new: Input::On,
                },
                SwitchEvent {
                    t: 3.0,
                    u_new: Input::Off,
                },
                SwitchEvent {
                    t: 4.5,
                    u_new: Input::On,
                },
            ],
            horizon: 10.0,
            initial_input: Input::Off,
            max_i_s: 0.0,
            max_i_s_at: 0.0,
            event_time_tol: 1e-9,
        };
        assert_eq!(input_cost(&traj, 10.0).unwrap(), 2.0 + 5.5);
        assert_eq!(input_cost(&traj, 2.0).unwrap(), 1.0);
        assert_eq!(input_cost(&traj, 4.0).unwrap(), 2.0);
    }

    #[test]
    fn closed_loop_run_validates() {
        let sc = Scenario::example_city();
        let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        let cp = pair(8.0);
        let (traj, rep) = simulate(&sc, Some(&cp), &SimConfig::default()).unwrap();
        let tol = ValidationTolerances::for_scenario(&sc, 1e-9);
        let v = validate_trajectory(&traj, &sc, &dc, Some(&cp), &tol);
        for c in &v.checks {
            assert!(c.applicable, "{}", c.name);
            assert!(
                c.passed(),
                "{} failed: {:?}",
                c.name,
                &c.violations[..c.violations.len().min(3)]
            );
        }
        assert!(rep.icu_bound_satisfied);
        assert!(rep.ended_released);
        assert!(rep.switch_count > 0);
    }

    #[test]
    fn negative_compartment_is_flagged() {
        let sc = Scenario::example_city();
        let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        let cfg = SimConfig {
            open_loop_u: Some(Input::Off),
            ..short(5.0)
        };
        let (mut traj, _) = simulate(&sc, None, &cfg).unwrap();
        let r = traj.samples[3].state.r;
        traj.samples[3].state.r = -1.0;
        traj.samples[3].state.s += r + 1.0;
        let tol = ValidationTolerances::for_scenario(&sc, 1e-9);
        let v = validate_trajectory(&traj, &sc, &dc, None, &tol);
        let c = v.check("nonnegative").unwrap();
        assert_eq!(c.violations.len(), 1);
        assert_eq!(c.violations[0].t, traj.samples[3].state.t);
        assert!(!v.passed());
        assert!(v.check("conservation").unwrap().passed());
    }

    #[test]
    fn too_many_switches_is_an_error() {
        let sc = Scenario::example_city();
        let cfg = SimConfig {
            max_switches: 3,
            ..SimConfig::default()
        };
        assert_eq!(
            simulate(&sc, Some(&pair(20.0)), &cfg).unwrap_err(),
            SimError::TooManySwitches(3)
        );
    }

    #[test]
    fn output_grid_ends_on_horizon() {
        let sc = Scenario::example_city();
        let cfg = SimConfig {
            horizon: 10.25,
            output_dt: 0.5,
            open_loop_u: Some(Input::Off),
            ..SimConfig::default()
        };
        let (traj, _) = simulate(&sc, None, &cfg).unwrap();
        let times: Vec<f64> = traj.samples.iter().map(|s| s.state.t).collect();
        assert_eq!(times.len(), 22);
        assert_eq!(times[1], 0.5);
        assert_eq!(*times.last().unwrap(), 10.25);
    }
}
