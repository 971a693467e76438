//! Bang-bang funnel controller: the switching law, the feasible set of safety
//! distances, a constructive search for a feasible pair, and dwell-time bounds.

use serde::Serialize;
use thiserror::Error;

use crate::constants::{check_sigma, Assumption, DerivedConstants};
use crate::model::{Input, Scenario};

/// Default number of interior grid points in [`find_feasible_eps`].
pub const DEFAULT_FEASIBLE_GRID: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error(
        "safety distances must be positive, got eps_minus = {eps_minus}, eps_plus = {eps_plus}"
    )]
    NonPositiveDistance { eps_minus: f64, eps_plus: f64 },
    #[error("ordering violated: eps_minus = {eps_minus} must be below phi+ - eps_plus = {upper}")]
    Ordering { eps_minus: f64, upper: f64 },
    #[error("q undefined at eps = {eps}: denominator {denominator} is not positive")]
    NonPositiveDenominator { eps: f64, denominator: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
}

/// A candidate pair `(eps_minus, eps_plus)`, not yet checked against a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyDistances {
    pub eps_minus: f64,
    pub eps_plus: f64,
}

impl SafetyDistances {
    pub fn new(eps_minus: f64, eps_plus: f64) -> Self {
        Self {
            eps_minus,
            eps_plus,
        }
    }
}

/// Validated switching thresholds. Switch-on happens at `phi_plus - eps_plus`,
/// switch-off at `phi_minus + eps_minus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerParams {
    eps_plus: f64,
    eps_minus: f64,
    phi_plus: f64,
    phi_minus: f64,
}

impl ControllerParams {
    pub fn new(phi_plus: f64, eps: SafetyDistances) -> Result<Self, ControllerError> {
        let SafetyDistances {
            eps_minus,
            eps_plus,
        } = eps;
        if !(eps_minus > 0.0 && eps_plus > 0.0) {
            return Err(ControllerError::NonPositiveDistance {
                eps_minus,
                eps_plus,
            });
        }
        let phi_minus = 0.0;
        if !(phi_minus + eps_minus < phi_plus - eps_plus) {
            return Err(ControllerError::Ordering {
                eps_minus,
                upper: phi_plus - eps_plus,
            });
        }
        Ok(Self {
            eps_plus,
            eps_minus,
            phi_plus,
            phi_minus,
        })
    }

    pub fn for_scenario(
        scenario: &Scenario,
        eps: SafetyDistances,
    ) -> Result<Self, ControllerError> {
        Self::new(scenario.phi_plus(), eps)
    }

    pub fn eps_plus(&self) -> f64 {
        self.eps_plus
    }

    pub fn eps_minus(&self) -> f64 {
        self.eps_minus
    }

    pub fn phi_plus(&self) -> f64 {
        self.phi_plus
    }

    pub fn phi_minus(&self) -> f64 {
        self.phi_minus
    }

    pub fn distances(&self) -> SafetyDistances {
        SafetyDistances::new(self.eps_minus, self.eps_plus)
    }

    /// `phi+ - eps+`.
    pub fn upper_threshold(&self) -> f64 {
        self.phi_plus - self.eps_plus
    }

    /// `phi- + eps-`.
    pub fn lower_threshold(&self) -> f64 {
        self.phi_minus + self.eps_minus
    }
}

/// Left limit `u(t-)` of the input; starts switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControllerState {
    pub u_prev: Input,
}

/// One evaluation of the switching law. Ties at either threshold fire.
pub fn control_update(i_s: f64, state: &mut ControllerState, cp: &ControllerParams) -> Input {
    let u = if i_s >= cp.upper_threshold() {
        Input::On
    } else if i_s <= cp.lower_threshold() {
        Input::Off
    } else {
        state.u_prev
    };
    state.u_prev = u;
    u
}

/// The function whose value at `eps = phi+ - eps+` must stay below `phi+`.
pub fn q_eval(
    eps: f64,
    dc: &DerivedConstants,
    scenario: &Scenario,
) -> Result<f64, ControllerError> {
    let e = scenario.params();
    let p = e.p;
    let n = dc.n;
    let r0 = scenario.init().r0;
    let slope = dc.m1 * eps - dc.m2;
    let denominator = dc.exit_rate_s + slope;
    if !(denominator > 0.0) {
        return Err(ControllerError::NonPositiveDenominator { eps, denominator });
    }
    let z = e.beta_a * dc.zeta + e.beta_s;
    let numerator =
        p * z * eps * (1.0 - r0 / n - eps / (p * n)) + p * slope * (dc.zeta + 1.0) * eps;
    Ok(numerator / denominator)
}

/// Whether `eps` lies in `[M2/M1, phi+]`, the interval on which `q` is analysed.
pub fn q_in_domain(eps: f64, dc: &DerivedConstants) -> bool {
    eps >= dc.eps_lower() && eps <= dc.phi_plus
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzReport {
    pub eps: SafetyDistances,
    pub phi_plus: f64,
    pub positive: bool,
    /// `eps- < phi+ - eps+`.
    pub ordering: bool,
    /// `eps+ < phi+ - M2/M1`.
    pub a4: bool,
    pub a4_bound: f64,
    /// `q(phi+ - eps+) < phi+`.
    pub a5: bool,
    /// `q(phi+ - eps+)`, or `None` where the denominator is not positive.
    pub q_value: Option<f64>,
    pub q_in_domain: bool,
}

impl CzReport {
    pub fn member(&self) -> bool {
        self.positive && self.ordering && self.a4 && self.a5
    }

    /// Smallest slack over all strict inequalities, in individuals.
    pub fn margin(&self) -> f64 {
        let q = self.q_value.unwrap_or(f64::INFINITY);
        let upper = self.phi_plus - self.eps.eps_plus;
        [
            self.eps.eps_minus,
            self.eps.eps_plus,
            upper - self.eps.eps_minus,
            self.a4_bound - self.eps.eps_plus,
            self.phi_plus - q,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Membership of `(eps-, eps+)` in the feasible controller set of `scenario`.
pub fn in_cz(eps: SafetyDistances, scenario: &Scenario, dc: &DerivedConstants) -> CzReport {
    let phi_plus = dc.phi_plus;
    let upper = phi_plus - eps.eps_plus;
    let a4_bound = phi_plus - dc.eps_lower();
    let q_value = q_eval(upper, dc, scenario).ok();
    CzReport {
        eps,
        phi_plus,
        positive: eps.eps_minus > 0.0 && eps.eps_plus > 0.0,
        ordering: eps.eps_minus < upper,
        a4: eps.eps_plus < a4_bound,
        a4_bound,
        a5: q_value.is_some_and(|q| q < phi_plus),
        q_value,
        q_in_domain: q_in_domain(upper, dc),
    }
}

/// Scans `resolution` interior points of `(M2/M1, phi+)` and builds a feasible pair
/// from the largest `eps` with `q(eps) < phi+`.
pub fn find_feasible_eps(
    scenario: &Scenario,
    dc: &DerivedConstants,
    resolution: usize,
) -> Result<ControllerParams, ControllerError> {
    let lo = dc.eps_lower();
    let hi = dc.phi_plus;
    let steps = resolution as f64 + 1.0;
    let grid: Vec<f64> = (1..=resolution)
        .map(|i| lo + (hi - lo) * (i as f64 / steps))
        .collect();
    feasible_eps_from_candidates(scenario, dc, &grid)
}

/// As [`find_feasible_eps`] with explicit candidate values of `phi+ - eps+`.
/// Candidates outside `(M2/M1, phi+)` are ignored.
pub fn feasible_eps_from_candidates(
    scenario: &Scenario,
    dc: &DerivedConstants,
    candidates: &[f64],
) -> Result<ControllerParams, ControllerError> {
    let report = check_sigma(scenario, dc);
    if !report.in_sigma() {
        let failed: Vec<String> = report
            .failed_assumptions()
            .iter()
            .map(Assumption::to_string)
            .collect();
        return Err(ControllerError::Infeasible(failed.join(", ")));
    }
    let lo = dc.eps_lower();
    let hi = dc.phi_plus;
    let best = candidates
        .iter()
        .copied()
        .filter(|&eps| eps > lo && eps < hi)
        .filter(|&eps| q_eval(eps, dc, scenario).is_ok_and(|q| q < hi))
        .fold(None, |acc: Option<f64>, eps| {
            Some(acc.map_or(eps, |a| a.max(eps)))
        });
    let Some(eps) = best else {
        return Err(ControllerError::Infeasible(
            "no grid point satisfies q(eps) < phi+ (numerical trouble)".into(),
        ));
    };
    let pair = SafetyDistances::new(eps / 2.0, hi - eps);
    let membership = in_cz(pair, scenario, dc);
    if !membership.member() {
        return Err(ControllerError::Infeasible(format!(
            "constructed pair ({}, {}) rejected by membership test",
            pair.eps_minus, pair.eps_plus
        )));
    }
    ControllerParams::new(hi, pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwellBounds {
    /// Minimum duration of a distancing phase (switch-on to switch-off), days.
    pub down_bound: f64,
    /// Minimum duration of a relaxed phase, days; non-positive means no information.
    pub up_bound: f64,
}

impl DwellBounds {
    pub fn up_informative(&self) -> bool {
        self.up_bound > 0.0
    }
}

/// Dwell-time lower bounds; `ia_at_switch` is `I_A` at the switch-off instant.
pub fn dwell_lower_bounds(
    cp: &ControllerParams,
    dc: &DerivedConstants,
    ia_at_switch: f64,
) -> DwellBounds {
    let upper = cp.upper_threshold();
    let em = cp.eps_minus();
    DwellBounds {
        down_bound: (upper / em).ln() / dc.exit_rate_s,
        up_bound: (upper * upper / (em * em + ia_at_switch * ia_at_switch)).ln() / dc.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{derive_constants, DEFAULT_DWELL_DELTA};
    use crate::model::{CapacityPolicy, EpidemicParams, InitialState};
    use proptest::prelude::*;

    fn example() -> (Scenario, DerivedConstants) {
        let sc = Scenario::example_city();
        let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        (sc, dc)
    }

    fn pair1() -> ControllerParams {
        ControllerParams::new(44.0, SafetyDistances::new(8.0, 10.0)).unwrap()
    }

    #[test]
    fn switching_law_branches() {
        let cp = pair1();
        let mut st = ControllerState::default();
        assert_eq!(control_update(34.0, &mut st, &cp), Input::On);
        assert_eq!(control_update(8.0, &mut st, &cp), Input::Off);
        let mut held = ControllerState { u_prev: Input::On };
        assert_eq!(control_update(20.0, &mut held, &cp), Input::On);
        let mut held = ControllerState { u_prev: Input::Off };
        assert_eq!(control_update(20.0, &mut held, &cp), Input::Off);
        assert_eq!(ControllerState::default().u_prev, Input::Off);
    }

    #[test]
    fn params_enforce_ordering_and_positivity() {
        assert!(matches!(
            ControllerParams::new(44.0, SafetyDistances::new(34.0, 10.0)),
            Err(ControllerError::Ordering { .. })
        ));
        assert!(matches!(
            ControllerParams::new(44.0, SafetyDistances::new(0.0, 10.0)),
            Err(ControllerError::NonPositiveDistance { .. })
        ));
        assert_eq!(pair1().phi_minus(), 0.0);
    }

    #[test]
    fn q_at_left_end_equals_m3() {
        let (sc, dc) = example();
        let q = q_eval(dc.eps_lower(), &dc, &sc).unwrap();
        assert!((q - dc.m3).abs() <= 1e-9 * dc.m3);
    }

    #[test]
    fn q_vanishes_at_zero() {
        let (sc, dc) = example();
        assert_eq!(q_eval(0.0, &dc, &sc).unwrap(), 0.0);
        assert!(!q_in_domain(0.0, &dc));
    }

    #[test]
    fn q_rejects_nonpositive_denominator() {
        let (sc, mut dc) = example();
        dc.m2 = 1.0;
        assert!(matches!(
            q_eval(0.0, &dc, &sc),
            Err(ControllerError::NonPositiveDenominator { .. })
        ));
    }

    #[test]
    fn q_at_34_for_example_city() {
        // Independent re-evaluation of the closed form with the constants inlined.
        let (sc, dc) = example();
        let (p, n, r0) = (0.02, 1e5, 1e4);
        let z = 0.37 * dc.zeta + 0.43;
        let eps = 34.0;
        let slope = dc.m1 * eps - dc.m2;
        let expected = (p * z * eps * (1.0 - r0 / n - eps / (p * n))
            + p * slope * (dc.zeta + 1.0) * eps)
            / (0.085 / 0.85 + slope);
        let q = q_eval(eps, &dc, &sc).unwrap();
        assert!((q - expected).abs() < 1e-12 * expected);
        assert!((q - 82.7599).abs() < 1e-3);
    }

    #[test]
    fn membership_rejects_bad_ordering() {
        let (sc, dc) = example();
        let rep = in_cz(SafetyDistances::new(34.0, 10.0), &sc, &dc);
        assert!(!rep.ordering && !rep.member());
    }

    #[test]
    fn a4_boundary_is_excluded() {
        let (sc, dc) = example();
        let eps_plus = 44.0 - dc.eps_lower();
        let rep = in_cz(SafetyDistances::new(0.01, eps_plus), &sc, &dc);
        assert!(!rep.a4);
    }

    #[test]
    fn published_pairs_satisfy_ordering_and_a4_but_not_a5() {
        let (sc, dc) = example();
        for em in [8.0, 20.0] {
            let rep = in_cz(SafetyDistances::new(em, 10.0), &sc, &dc);
            assert!(rep.ordering && rep.a4);
            // q(34) is about 82.8 > 44.
            assert!(!rep.a5);
            assert!(rep.q_value.unwrap() > 44.0);
        }
    }

    #[test]
    fn feasible_pair_is_member() {
        let (sc, dc) = example();
        let cp = find_feasible_eps(&sc, &dc, DEFAULT_FEASIBLE_GRID).unwrap();
        let rep = in_cz(cp.distances(), &sc, &dc);
        assert!(rep.member());
        assert!(rep.q_in_domain);
        assert!((cp.eps_minus() * 2.0 - cp.upper_threshold()).abs() < 1e-12);
    }

    #[test]
    fn single_point_near_left_end() {
        let (sc, dc) = example();
        let eps = dc.eps_lower() + 1e-9;
        let cp = feasible_eps_from_candidates(&sc, &dc, &[eps]).unwrap();
        assert!((cp.eps_plus() - (44.0 - dc.eps_lower())).abs() < 1e-6);
    }

    #[test]
    fn a3_failure_is_infeasible() {
        let init = InitialState::example_city();
        let cap = CapacityPolicy {
            n_icu: 0.4,
            xi: 0.1,
        };
        let sc = Scenario::new(EpidemicParams::example_city(), init, cap).unwrap();
        let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        let err = find_feasible_eps(&sc, &dc, 100).unwrap_err();
        assert_eq!(err.to_string(), "infeasible: A3");
    }

    #[test]
    fn dwell_bounds_for_first_pair() {
        let (_, dc) = example();
        let b = dwell_lower_bounds(&pair1(), &dc, 49.0);
        assert!((b.down_bound - 10.0 * (34.0f64 / 8.0).ln()).abs() < 1e-12);
        assert!((b.down_bound - 14.469).abs() < 1e-3);
        assert!((b.up_bound - (1156.0f64 / 2465.0).ln() / 0.477).abs() < 1e-12);
        assert!(!b.up_informative());
    }

    #[test]
    fn dwell_bound_at_ratio_e() {
        let (_, dc) = example();
        let em = 1.0;
        let cp = ControllerParams::new(44.0, SafetyDistances::new(em, 44.0 - std::f64::consts::E))
            .unwrap();
        let b = dwell_lower_bounds(&cp, &dc, 0.0);
        assert!((b.down_bound - 10.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hysteresis_holds_between_thresholds(em in 0.1f64..20.0, gap in 0.1f64..20.0, frac in 0.001f64..0.999, on in any::<bool>()) {
            let cp = ControllerParams::new(44.0, SafetyDistances::new(em, 44.0 - em - gap)).unwrap();
            let i_s = em + frac * gap;
            let prev = if on { Input::On } else { Input::Off };
            let mut st = ControllerState { u_prev: prev };
            prop_assert_eq!(control_update(i_s, &mut st, &cp), prev);
        }

        #[test]
        fn switching_is_monotone_in_level(em in 0.1f64..20.0, gap in 0.1f64..20.0, a in 0.0f64..50.0, b in 0.0f64..50.0, on in any::<bool>()) {
            let cp = ControllerParams::new(44.0, SafetyDistances::new(em, 44.0 - em - gap)).unwrap();
            let prev = if on { Input::On } else { Input::Off };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ulo = control_update(lo, &mut ControllerState { u_prev: prev }, &cp);
            let uhi = control_update(hi, &mut ControllerState { u_prev: prev }, &cp);
            prop_assert!(ulo.as_u8() <= uhi.as_u8());
        }

        #[test]
        fn down_bound_is_positive(em in 0.01f64..40.0, frac in 0.0f64..0.99) {
            let (_, dc) = example();
            let eps_plus = (44.0 - em) * frac + 1e-9;
            if let Ok(cp) = ControllerParams::new(44.0, SafetyDistances::new(em, eps_plus)) {
                prop_assert!(dwell_lower_bounds(&cp, &dc, 0.0).down_bound > 0.0);
            }
        }

        #[test]
        fn membership_is_open(dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
            let (sc, dc) = example();
            let cp = find_feasible_eps(&sc, &dc, 2_000).unwrap();
            let base = in_cz(cp.distances(), &sc, &dc);
            let margin = base.margin();
            prop_assert!(margin > 0.0);
            // q has slope below 3 on the domain, so a move of r changes the
            // slack of every inequality by at most 4r.
            let r = margin / 8.0;
            let moved = SafetyDistances::new(cp.eps_minus() + r * dx, cp.eps_plus() + r * dy);
            prop_assert!(in_cz(moved, &sc, &dc).member());
        }
    }
}
