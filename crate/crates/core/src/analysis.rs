//! Robustness probing of a fixed controller, monotonicity of `q`, and
//! closed-loop sweeps over the switch-off distance.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::constants::{check_sigma_rob, derive_constants, DerivedConstants, DEFAULT_DWELL_DELTA};
use crate::controller::{in_cz, q_eval, ControllerParams, SafetyDistances};
use crate::model::{Scenario, SCENARIO_DIM};
use crate::par::{map_ordered, Execution};
use crate::simulator::{simulate, RunReport, SimConfig};

pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_BISECTION_DEPTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Sampled robustness of one controller around one scenario.
///
/// `certified_delta` is an under-approximation from finitely many samples:
/// every sampled perturbation within that radius kept the scenario robustly
/// admissible and the controller feasible, which does not prove it for the
/// whole ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    /// Relative per-coordinate radius.
    pub delta: f64,
    pub samples: usize,
    pub pass_fraction: f64,
    pub certified_delta: f64,
    /// Number of failed samples at `delta`, by first failing condition.
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub samples: usize,
    pub seed: u64,
    pub bisection_depth: usize,
    pub dwell_delta: f64,
    pub execution: Execution,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            bisection_depth: DEFAULT_BISECTION_DEPTH,
            dwell_delta: DEFAULT_DWELL_DELTA,
            execution: Execution::default(),
        }
    }
}

/// Unit perturbation directions, uniform on `[-1, 1]^18`.
pub fn unit_directions(samples: usize, seed: u64) -> Vec<[f64; SCENARIO_DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let mut d = [0.0; SCENARIO_DIM];
            for x in d.iter_mut() {
                *x = rng.random_range(-1.0..=1.0);
            }
            d
        })
        .collect()
}

/// Moves each coordinate by `delta * direction * |value|` (by `delta * direction`
/// where the value is zero) and clips to the admissible interval.
pub fn perturb(
    base: &[f64; SCENARIO_DIM],
    direction: &[f64; SCENARIO_DIM],
    delta: f64,
) -> [f64; SCENARIO_DIM] {
    let bounds = Scenario::coordinate_bounds();
    let mut z = *base;
    for i in 0..SCENARIO_DIM {
        let scale = if base[i] != 0.0 { base[i].abs() } else { 1.0 };
        z[i] = (base[i] + delta * direction[i] * scale).clamp(bounds[i].0, bounds[i].1);
    }
    z
}

/// Why a perturbed scenario is rejected, or `None` if the fixed pair stays feasible.
fn sample_failure(
    z: &[f64; SCENARIO_DIM],
    eps: SafetyDistances,
    dwell_delta: f64,
) -> Option<String> {
    let sc = match Scenario::from_coordinates(z) {
        Ok(sc) => sc,
        Err(_) => return Some("invalid".into()),
    };
    let dc = match derive_constants(&sc, dwell_delta) {
        Ok(dc) => dc,
        Err(_) => return Some("constants".into()),
    };
    let rep = check_sigma_rob(&sc, &dc);
    if let Some(a) = rep.failed_assumptions().first() {
        return Some(a.to_string());
    }
    if !in_cz(eps, &sc, &dc).member() {
        return Some("C_Z".into());
    }
    None
}

fn failures_at(
    base: &[f64; SCENARIO_DIM],
    dirs: &[[f64; SCENARIO_DIM]],
    eps: SafetyDistances,
    delta: f64,
    cfg: &ProbeConfig,
) -> Vec<Option<String>> {
    map_ordered(cfg.execution, dirs, |d| {
        sample_failure(&perturb(base, d, delta), eps, cfg.dwell_delta)
    })
}

/// Samples perturbed scenarios within relative radius `delta` and checks that
/// each stays robustly admissible with `eps` still feasible. The certified
/// radius comes from bisection on the all-samples-pass predicate, with one
/// set of directions scaled to every tested radius.
pub fn robustness_probe(
    scenario: &Scenario,
    eps: SafetyDistances,
    delta: f64,
    cfg: &ProbeConfig,
) -> Result<RobustnessResult, AnalysisError> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(AnalysisError::Precondition(format!(
            "delta = {delta} must be nonnegative"
        )));
    }
    let dc = derive_constants(scenario, cfg.dwell_delta)
        .map_err(|e| AnalysisError::Precondition(e.to_string()))?;
    let rep = check_sigma_rob(scenario, &dc);
    if !rep.in_sigma_rob() {
        let failed: Vec<String> = rep
            .failed_assumptions()
            .iter()
            .map(|a| a.to_string())
            .collect();
        return Err(AnalysisError::Precondition(format!(
            "scenario is not robustly admissible: {} fails",
            failed.join(", ")
        )));
    }
    let membership = in_cz(eps, scenario, &dc);
    if !membership.member() {
        return Err(AnalysisError::Precondition(format!(
            "({}, {}) is not a feasible controller pair for this scenario",
            eps.eps_minus, eps.eps_plus
        )));
    }

    let base = scenario.to_coordinates();
    let dirs = unit_directions(cfg.samples, cfg.seed);
    let at_delta = failures_at(&base, &dirs, eps, delta, cfg);
    let mut failures = BTreeMap::new();
    for why in at_delta.iter().flatten() {
        *failures.entry(why.clone()).or_insert(0) += 1;
    }
    let failed: usize = failures.values().sum();
    let pass_fraction = if dirs.is_empty() {
        1.0
    } else {
        (dirs.len() - failed) as f64 / dirs.len() as f64
    };

    let certified_delta = if failed == 0 {
        delta
    } else {
        let all_pass = |d: f64| {
            failures_at(&base, &dirs, eps, d, cfg)
                .iter()
                .all(Option::is_none)
        };
        let (mut lo, mut hi) = (0.0, delta);
        for _ in 0..cfg.bisection_depth {
            let mid = 0.5 * (lo + hi);
            if all_pass(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    Ok(RobustnessResult {
        delta,
        samples: dirs.len(),
        pass_fraction,
        certified_delta,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub grid: usize,
    /// `q` strictly increases between every pair of consecutive grid points.
    pub monotone: bool,
    /// First consecutive pair `(eps_i, eps_{i+1})` without strict increase.
    pub violation: Option<(f64, f64)>,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Numerator of `q'` at `M2/M1`.
    pub q1_at_lower: f64,
    /// `p (zeta + 1) M1 - (beta_A zeta + beta_S) / N`; `q1'` has its sign.
    pub q1_slope_factor: f64,
}

impl MonotonicityReport {
    pub fn sufficient_conditions_hold(&self) -> bool {
        self.q1_at_lower > 0.0 && self.q1_slope_factor > 0.0
    }

    pub fn passed(&self) -> bool {
        self.monotone && self.sufficient_conditions_hold()
    }
}

/// Numerator `q1` of `q' = q1 / q2^2`, with `q2` the denominator of `q`.
pub fn q_derivative_numerator(eps: f64, dc: &DerivedConstants, scenario: &Scenario) -> f64 {
    let e = scenario.params();
    let (p, n, r0) = (e.p, dc.n, scenario.init().r0);
    let z = e.beta_a * dc.zeta + e.beta_s;
    let q2 = dc.exit_rate_s + dc.m1 * eps - dc.m2;
    (p * z * (1.0 - r0 / n - 2.0 * eps / (p * n))
        + p * (dc.zeta + 1.0) * (2.0 * dc.m1 * eps - dc.m2))
        * q2
        - p * z * dc.m1 * eps * (1.0 - r0 / n - eps / (p * n))
        - p * dc.m1 * (dc.zeta + 1.0) * eps * (dc.m1 * eps - dc.m2)
}

/// Index `i` of the first pair with `values[i + 1] <= values[i]`.
pub fn first_non_increase(values: &[f64]) -> Option<usize> {
    values.windows(2).position(|w| !(w[1] > w[0]))
}

/// Evaluates `q` on `grid` evenly spaced points of `[M2/M1, phi+]`, endpoints
/// included, and checks strict increase plus the two sufficient conditions.
pub fn q_monotonicity_check(
    scenario: &Scenario,
    dc: &DerivedConstants,
    grid: usize,
) -> MonotonicityReport {
    let grid = grid.max(2);
    let lo = dc.eps_lower();
    let hi = dc.phi_plus;
    let eps: Vec<f64> = (0..grid)
        .map(|i| {
            if i + 1 == grid {
                hi
            } else {
                lo + (hi - lo) * (i as f64 / (grid - 1) as f64)
            }
        })
        .collect();
    let q: Vec<f64> = eps
        .iter()
        .map(|&x| q_eval(x, dc, scenario).unwrap_or(f64::NAN))
        .collect();
    let violation = first_non_increase(&q).map(|i| (eps[i], eps[i + 1]));
    let e = scenario.params();
    MonotonicityReport {
        grid,
        monotone: violation.is_none(),
        violation,
        q_lower: q[0],
        q_upper: q[grid - 1],
        q1_at_lower: q_derivative_numerator(lo, dc, scenario),
        q1_slope_factor: e.p * (dc.zeta + 1.0) * dc.m1 - (e.beta_a * dc.zeta + e.beta_s) / dc.n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps_minus: f64,
    pub outcome: Result<RunReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub eps_plus: f64,
    pub rows: Vec<SweepRow>,
}

/// One closed-loop run per switch-off distance, rows in input order.
pub fn sweep_eps_minus(
    scenario: &Scenario,
    eps_plus: f64,
    eps_minus_list: &[f64],
    cfg: &SimConfig,
) -> SweepResult {
    sweep_eps_minus_with(
        Execution::default(),
        scenario,
        eps_plus,
        eps_minus_list,
        cfg,
    )
}

pub fn sweep_eps_minus_with(
    exec: Execution,
    scenario: &Scenario,
    eps_plus: f64,
    eps_minus_list: &[f64],
    cfg: &SimConfig,
) -> SweepResult {
    let rows = map_ordered(exec, eps_minus_list, |&eps_minus| {
        let outcome =
            ControllerParams::for_scenario(scenario, SafetyDistances::new(eps_minus, eps_plus))
                .map_err(|e| e.to_string())
                .and_then(|cp| {
                    simulate(scenario, Some(&cp), cfg)
                        .map(|(_, report)| report)
                        .map_err(|e| e.to_string())
                });
        SweepRow { eps_minus, outcome }
    });
    SweepResult { eps_plus, rows }
}
