//! Derived constants of a scenario and the admissibility conditions A1–A3 and A6.

use serde::Serialize;
use thiserror::Error;

use crate::model::Scenario;

/// Default positive floor in the dwell-time growth rate `mu`.
pub const DEFAULT_DWELL_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstantsError {
    #[error("zeta undefined: IS0 = {0}")]
    NoSymptomaticCases(f64),
    #[error("rates undefined: rho = {0} must be below 1")]
    CertainDeath(f64),
    #[error("S_min undefined: min(alpha_A, alpha_S) = {0}")]
    NoRecovery(f64),
    #[error("S_min undefined: R0 = {0}")]
    NoRecovered(f64),
    #[error("zeta undefined: B = {0} is not positive")]
    NonPositiveB(f64),
    #[error("dwell delta must be positive, got {0}")]
    NonPositiveDelta(f64),
}

/// Every derived quantity the analysis needs, computed once per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub n: f64,
    pub phi_plus: f64,
    pub s_min: f64,
    pub beta_tilde: f64,
    pub a: f64,
    pub b: f64,
    pub zeta: f64,
    pub k_psi_bar: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub mu: f64,
    /// `K_psi_bar * psi_bar`, the lower bound of the population response.
    pub psi_floor: f64,
    /// `alpha_S / (1 - rho)`.
    pub exit_rate_s: f64,
}

impl DerivedConstants {
    /// Lower bound on the ICU threshold demanded by A3.
    pub fn a3_bound(&self) -> f64 {
        let ratio = self.m2 / self.m1;
        if ratio.is_nan() || self.m3.is_nan() {
            f64::NAN
        } else {
            ratio.max(self.m3)
        }
    }

    /// Left end `M2 / M1` of the feasibility interval for the switch-on level.
    pub fn eps_lower(&self) -> f64 {
        self.m2 / self.m1
    }
}

/// Computes the derived constants literally from their defining formulas.
pub fn derive_constants(
    scenario: &Scenario,
    dwell_delta: f64,
) -> Result<DerivedConstants, ConstantsError> {
    let e = scenario.params();
    let z0 = scenario.init();
    if !(dwell_delta > 0.0) {
        return Err(ConstantsError::NonPositiveDelta(dwell_delta));
    }
    if !(z0.is0 > 0.0) {
        return Err(ConstantsError::NoSymptomaticCases(z0.is0));
    }
    if !(e.rho < 1.0) {
        return Err(ConstantsError::CertainDeath(e.rho));
    }
    let alpha_min = e.alpha_a.min(e.alpha_s);
    if !(alpha_min > 0.0) {
        return Err(ConstantsError::NoRecovery(alpha_min));
    }
    if !(z0.r0 > 0.0) {
        return Err(ConstantsError::NoRecovered(z0.r0));
    }

    let n = scenario.population();
    let phi_plus = scenario.phi_plus();
    let p = e.p;
    let exit_rate_s = e.symptomatic_exit_rate();
    let beta_max = e.beta_a.max(e.beta_s);

    let s_min = z0.s0 * (-(beta_max * (n - z0.r0)) / (alpha_min * z0.r0)).exp();
    let k_psi_bar = 1.0 - e.gamma_k * (e.rho * e.alpha_a / (1.0 - e.rho));
    let psi_floor = k_psi_bar * e.psi_bar;
    let beta_tilde = p * e.beta_s + (1.0 - p) * e.beta_a;

    // The S_min term vanishes exactly when alpha_S / (1 - rho) == alpha_A,
    // which also keeps 0 * N / 0 out of A when S_min underflows.
    let rate_gap = exit_rate_s - e.alpha_a;
    let gap_term = if rate_gap == 0.0 {
        0.0
    } else {
        rate_gap * n / (psi_floor * s_min)
    };
    let a = (1.0 - p) * e.beta_a - p * e.beta_s + gap_term;
    let b = positive_root(a, p * (1.0 - p) * e.beta_a * e.beta_s);
    if !(b > 0.0) {
        return Err(ConstantsError::NonPositiveB(b));
    }
    let zeta = (z0.ia0 / z0.is0).max((1.0 - p) * e.beta_s / b);

    let m1 = psi_floor * beta_tilde * (1.0 - z0.r0 / n) - e.alpha_a;
    let m2 = (1.0 + psi_floor) * beta_tilde / (p * n) - e.rho * e.alpha_s / ((1.0 - e.rho) * n);
    let m3 = p * (e.beta_a * zeta + e.beta_s) * (1.0 - z0.r0 / n - m2 / (p * n * m1)) * m2
        / (exit_rate_s * m1);

    let mu = ((1.0 + p) / 2.0 * e.beta_s + p / 2.0 * e.beta_a - exit_rate_s)
        .max((2.0 - p) / 2.0 * e.beta_a + (1.0 - p) / 2.0 * e.beta_s - e.alpha_a)
        .max(dwell_delta);

    Ok(DerivedConstants {
        n,
        phi_plus,
        s_min,
        beta_tilde,
        a,
        b,
        zeta,
        k_psi_bar,
        m1,
        m2,
        m3,
        mu,
        psi_floor,
        exit_rate_s,
    })
}

/// `-a/2 + sqrt(a^2/4 + c)` for `c >= 0`, evaluated without cancellation.
fn positive_root(a: f64, c: f64) -> f64 {
    let h = a / 2.0;
    if h > 0.0 {
        // c / (h + sqrt(h^2 + c)), factored so that h^2 cannot overflow.
        c / (h * (1.0 + (1.0 + (c / h) / h).sqrt()))
    } else {
        -h + (h * h + c).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Assumption {
    A1,
    A2,
    A3,
    A6,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Assumption::A1 => "A1",
            Assumption::A2 => "A2",
            Assumption::A3 => "A3",
            Assumption::A6 => "A6",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Less,
    LessEq,
    Greater,
    GreaterEq,
}

impl Relation {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Less => lhs < rhs,
            Relation::LessEq => lhs <= rhs,
            Relation::Greater => lhs > rhs,
            Relation::GreaterEq => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessEq => "<=",
            Relation::Greater => ">",
            Relation::GreaterEq => ">=",
        }
    }
}

/// One sub-condition with the two values compared.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub assumption: Assumption,
    pub name: &'static str,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub holds: bool,
    /// Set when the comparison is undefined and treated as holding.
    pub vacuous: bool,
    pub note: Option<String>,
}

impl Check {
    pub fn compare(
        assumption: Assumption,
        name: &'static str,
        lhs: f64,
        relation: Relation,
        rhs: f64,
    ) -> Self {
        Self {
            assumption,
            name,
            lhs,
            relation,
            rhs,
            holds: relation.holds(lhs, rhs),
            vacuous: false,
            note: None,
        }
    }

    fn undefined(
        assumption: Assumption,
        name: &'static str,
        relation: Relation,
        why: String,
    ) -> Self {
        Self {
            assumption,
            name,
            lhs: f64::NAN,
            relation,
            rhs: f64::NAN,
            holds: false,
            vacuous: false,
            note: Some(why),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<Check>,
}

impl AssumptionReport {
    pub fn evaluated(&self, a: Assumption) -> bool {
        self.checks.iter().any(|c| c.assumption == a)
    }

    /// True iff `a` was evaluated and every one of its sub-conditions holds.
    pub fn holds(&self, a: Assumption) -> bool {
        self.evaluated(a)
            && self
                .checks
                .iter()
                .filter(|c| c.assumption == a)
                .all(|c| c.holds)
    }

    pub fn in_sigma(&self) -> bool {
        self.holds(Assumption::A1) && self.holds(Assumption::A2) && self.holds(Assumption::A3)
    }

    pub fn in_sigma_rob(&self) -> bool {
        self.in_sigma() && self.holds(Assumption::A6)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.holds)
    }

    pub fn failed_assumptions(&self) -> Vec<Assumption> {
        let mut v: Vec<_> = self.failed().map(|c| c.assumption).collect();
        v.dedup();
        v
    }
}

/// Evaluates A1–A3.
pub fn check_sigma(scenario: &Scenario, dc: &DerivedConstants) -> AssumptionReport {
    AssumptionReport {
        checks: sigma_checks(scenario, Ok(dc)),
    }
}

/// Evaluates A1–A3 and A6.
pub fn check_sigma_rob(scenario: &Scenario, dc: &DerivedConstants) -> AssumptionReport {
    let mut checks = sigma_checks(scenario, Ok(dc));
    checks.extend(a6_checks(scenario, Ok(dc)));
    AssumptionReport { checks }
}

/// Derives the constants and evaluates A1–A3 and A6. Conditions that need a
/// constant which cannot be derived are reported as failed with the reason.
pub fn assess(
    scenario: &Scenario,
    dwell_delta: f64,
) -> (Option<DerivedConstants>, AssumptionReport) {
    let derived = derive_constants(scenario, dwell_delta);
    let dc = derived.as_ref().map_err(|e| e.to_string());
    let mut checks = sigma_checks(scenario, dc.clone());
    checks.extend(a6_checks(scenario, dc));
    (derived.ok(), AssumptionReport { checks })
}

fn sigma_checks(scenario: &Scenario, dc: Result<&DerivedConstants, String>) -> Vec<Check> {
    use Assumption::*;
    use Relation::*;
    let e = scenario.params();
    let z0 = scenario.init();
    let mut out = vec![
        Check::compare(A1, "p > 0", e.p, Greater, 0.0),
        Check::compare(A1, "rho < 1", e.rho, Less, 1.0),
        Check::compare(A1, "alpha_A > 0", e.alpha_a, Greater, 0.0),
        Check::compare(
            A1,
            "alpha_A <= alpha_S/(1-rho)",
            e.alpha_a,
            LessEq,
            e.alpha_s / (1.0 - e.rho),
        ),
    ];
    let denom = e.rho * e.alpha_a;
    if denom == 0.0 {
        out.push(Check {
            assumption: A1,
            name: "gamma_K < (1-rho)/(rho*alpha_A)",
            lhs: e.gamma_k,
            relation: Less,
            rhs: f64::INFINITY,
            holds: true,
            vacuous: true,
            note: Some("rho * alpha_A = 0: bound is infinite".into()),
        });
    } else {
        out.push(Check::compare(
            A1,
            "gamma_K < (1-rho)/(rho*alpha_A)",
            e.gamma_k,
            Less,
            (1.0 - e.rho) / denom,
        ));
    }
    match &dc {
        Ok(dc) => out.push(Check::compare(A1, "M1 > 0", dc.m1, Greater, 0.0)),
        Err(why) => out.push(Check::undefined(A1, "M1 > 0", Greater, why.clone())),
    }

    out.push(Check::compare(A2, "S0 > 0", z0.s0, Greater, 0.0));
    out.push(Check::compare(A2, "R0 > 0", z0.r0, Greater, 0.0));
    out.push(Check::compare(A2, "IS0 > 0", z0.is0, Greater, 0.0));
    out.push(Check::compare(
        A2,
        "IA0 >= (1-p)/p*IS0",
        z0.ia0,
        GreaterEq,
        (1.0 - e.p) / e.p * z0.is0,
    ));

    match &dc {
        Ok(dc) => {
            out.push(Check::compare(
                A3,
                "phi+ > M2/M1",
                dc.phi_plus,
                Greater,
                dc.m2 / dc.m1,
            ));
            out.push(Check::compare(A3, "phi+ > M3", dc.phi_plus, Greater, dc.m3));
        }
        Err(why) => {
            out.push(Check::undefined(A3, "phi+ > M2/M1", Greater, why.clone()));
            out.push(Check::undefined(A3, "phi+ > M3", Greater, why.clone()));
        }
    }
    out
}

fn a6_checks(scenario: &Scenario, dc: Result<&DerivedConstants, String>) -> Vec<Check> {
    use Assumption::A6;
    use Relation::Greater;
    const FIRST: &str = "(1/M2 - (1-rho)/alpha_S)(pN M1 - p R0 M1 - M2) > 1";
    const SECOND: &str = "pN M1 (zeta+1) > beta_A zeta + beta_S";
    let dc = match dc {
        Ok(dc) => dc,
        Err(why) => {
            return vec![
                Check::undefined(A6, FIRST, Greater, why.clone()),
                Check::undefined(A6, SECOND, Greater, why),
            ]
        }
    };
    let e = scenario.params();
    let p = e.p;
    let n = dc.n;
    let r0 = scenario.init().r0;
    let first = if dc.m2 > 0.0 {
        let lhs = (1.0 / dc.m2 - 1.0 / dc.exit_rate_s) * (p * n * dc.m1 - p * r0 * dc.m1 - dc.m2);
        Check::compare(A6, FIRST, lhs, Greater, 1.0)
    } else {
        Check::undefined(
            A6,
            FIRST,
            Greater,
            format!("M2 = {} is not positive", dc.m2),
        )
    };
    let second = Check::compare(
        A6,
        SECOND,
        p * n * dc.m1 * (dc.zeta + 1.0),
        Greater,
        e.beta_a * dc.zeta + e.beta_s,
    );
    vec![first, second]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CapacityPolicy, EpidemicParams, InitialState};
    use proptest::prelude::*;

    fn example() -> (Scenario, DerivedConstants) {
        let sc = Scenario::example_city();
        let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        (sc, dc)
    }

    fn with_params(f: impl FnOnce(&mut EpidemicParams)) -> Scenario {
        let mut e = EpidemicParams::example_city();
        f(&mut e);
        Scenario::new(
            e,
            InitialState::example_city(),
            CapacityPolicy::example_city(),
        )
        .unwrap()
    }

    fn with_init(f: impl FnOnce(&mut InitialState)) -> Scenario {
        let mut i = InitialState::example_city();
        f(&mut i);
        Scenario::new(
            EpidemicParams::example_city(),
            i,
            CapacityPolicy::example_city(),
        )
        .unwrap()
    }

    #[test]
    fn example_city_constants() {
        let (_, dc) = example();
        assert!((dc.k_psi_bar - (1.0 - 0.15 * 0.1 / 0.85)).abs() < 1e-15);
        assert!((dc.k_psi_bar - 0.982353).abs() < 1e-6);
        assert!((dc.beta_tilde - 0.3712).abs() < 1e-12);
        assert!((dc.exit_rate_s - 0.1).abs() < 1e-15);
        assert_eq!(dc.n, 1e5);
        assert_eq!(dc.phi_plus, 44.0);
        // S_min term cancels exactly: alpha_S / (1 - rho) == alpha_A in f64.
        assert!((dc.a - 0.354).abs() < 1e-12);
        assert!((dc.zeta - 49.0).abs() < 1e-9);
        assert!(((1.0 - 0.02) * 0.43 / dc.b - 49.0).abs() < 1e-9);
        assert!((dc.mu - 0.477).abs() < 1e-12);
        assert!(dc.s_min > 0.0 && dc.s_min < 1e-14);
    }

    #[test]
    fn gain_floor_is_one_without_feedback() {
        let dc = derive_constants(&with_params(|e| e.gamma_k = 0.0), 1e-6).unwrap();
        assert_eq!(dc.k_psi_bar, 1.0);
        let dc = derive_constants(&with_params(|e| e.rho = 0.0), 1e-6).unwrap();
        assert_eq!(dc.k_psi_bar, 1.0);
    }

    #[test]
    fn b_and_zeta_invariants() {
        let (sc, dc) = example();
        assert!(dc.b > 0.0);
        assert!(dc.zeta >= sc.init().ia0 / sc.init().is0);
        assert!(dc.zeta >= (1.0 - 0.02) * 0.43 / dc.b);
        assert!(dc.s_min <= sc.init().s0);
    }

    #[test]
    fn positive_root_matches_direct_form() {
        for (a, c) in [
            (0.354f64, 0.00312f64),
            (-2.0, 0.5),
            (0.0, 0.25),
            (1e-3, 1.0),
        ] {
            let direct = -a / 2.0 + (a * a / 4.0 + c).sqrt();
            assert!((positive_root(a, c) - direct).abs() <= 1e-14 * direct.abs().max(1.0));
        }
        // Limit form stays finite and positive where the direct form cancels to 0.
        let b = positive_root(1e20, 0.003);
        assert!(b > 0.0 && (b - 0.003 / 1e20).abs() < 1e-35);
        assert!(positive_root(1e300, 0.003) > 0.0);
    }

    #[test]
    fn derive_reports_preconditions() {
        let err = derive_constants(&with_init(|i| i.is0 = 0.0), 1e-6).unwrap_err();
        assert_eq!(err, ConstantsError::NoSymptomaticCases(0.0));
        assert!(err.to_string().contains("IS0 = 0"));
        assert!(matches!(
            derive_constants(&with_params(|e| e.rho = 1.0), 1e-6),
            Err(ConstantsError::CertainDeath(_))
        ));
        assert!(matches!(
            derive_constants(&with_init(|i| i.r0 = 0.0), 1e-6),
            Err(ConstantsError::NoRecovered(_))
        ));
        assert!(matches!(
            derive_constants(&with_params(|e| e.alpha_a = 0.0), 1e-6),
            Err(ConstantsError::NoRecovery(_))
        ));
        assert!(matches!(
            derive_constants(&with_params(|e| e.p = 0.0), 1e-6),
            Err(ConstantsError::NonPositiveB(_))
        ));
        assert!(matches!(
            derive_constants(&Scenario::example_city(), 0.0),
            Err(ConstantsError::NonPositiveDelta(_))
        ));
    }

    #[test]
    fn example_city_is_in_sigma_rob() {
        let (sc, dc) = example();
        let rep = check_sigma_rob(&sc, &dc);
        for c in &rep.checks {
            assert!(
                c.holds,
                "{} failed: {} {} {}",
                c.name,
                c.lhs,
                c.relation.symbol(),
                c.rhs
            );
        }
        assert!(rep.in_sigma() && rep.in_sigma_rob());
        assert!(!check_sigma(&sc, &dc).evaluated(Assumption::A6));
    }

    #[test]
    fn a2_accepts_exact_equality() {
        let (sc, dc) = example();
        let rep = check_sigma(&sc, &dc);
        let c = rep
            .checks
            .iter()
            .find(|c| c.name == "IA0 >= (1-p)/p*IS0")
            .unwrap();
        assert_eq!(c.lhs, 49.0);
        assert!((c.rhs - 49.0).abs() < 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn a2_fails_one_below_boundary() {
        let sc = with_init(|i| {
            i.ia0 = 48.0;
            i.s0 += 1.0;
        });
        let dc = derive_constants(&sc, 1e-6).unwrap();
        let rep = check_sigma(&sc, &dc);
        assert!(!rep.holds(Assumption::A2));
        assert!(rep.holds(Assumption::A1));
    }

    #[test]
    fn zero_symptomatic_share_fails_a1() {
        let (_, rep) = assess(&with_params(|e| e.p = 0.0), 1e-6);
        assert!(!rep.holds(Assumption::A1));
        assert!(rep.checks.iter().any(|c| c.name == "p > 0" && !c.holds));
        assert!(!rep.in_sigma());
    }

    #[test]
    fn zero_death_rate_bound_is_vacuous() {
        let sc = with_params(|e| e.rho = 0.0);
        let (_, rep) = assess(&sc, 1e-6);
        let c = rep
            .checks
            .iter()
            .find(|c| c.name.starts_with("gamma_K"))
            .unwrap();
        assert!(c.holds && c.vacuous);
    }

    #[test]
    fn a3_bound_literal_value() {
        let (_, dc) = example();
        let bound = dc.a3_bound();
        assert!(bound < 44.0);
        assert!((dc.eps_lower() - 0.139_288_870_167_303).abs() < 1e-9);
        assert!((dc.m3 - 0.465_300_248_476_288).abs() < 1e-9);
        assert_eq!(bound, dc.m3);
    }

    #[test]
    fn a6_second_inequality_sides() {
        let (sc, dc) = example();
        let rep = check_sigma_rob(&sc, &dc);
        let c = rep
            .checks
            .iter()
            .find(|c| c.name.starts_with("pN M1"))
            .unwrap();
        assert!((c.rhs - (0.37 * dc.zeta + 0.43)).abs() < 1e-12);
        assert!((c.rhs - 18.56).abs() < 1e-6);
        assert!((c.lhs - 0.02 * 1e5 * dc.m1 * (dc.zeta + 1.0)).abs() < 1e-9);
        assert!(c.holds);
    }

    #[test]
    fn a6_first_factor_zero_fails() {
        // Constants with alpha_S / (1 - rho) == M2 make the first factor vanish.
        let (sc, mut dc) = example();
        dc.m2 = dc.exit_rate_s;
        let rep = check_sigma_rob(&sc, &dc);
        let c = rep
            .checks
            .iter()
            .find(|c| c.name.starts_with("(1/M2"))
            .unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(!c.holds);
        assert!(!rep.in_sigma_rob());
    }

    #[test]
    fn derivation_is_deterministic() {
        let (sc, dc) = example();
        let again = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
        assert_eq!(format!("{dc:?}"), format!("{again:?}"));
    }

    proptest! {
        #[test]
        fn population_scaling(k in 0.25f64..4.0) {
            let (sc, dc) = example();
            let mut init = *sc.init();
            init.s0 *= k;
            init.ia0 *= k;
            init.is0 *= k;
            init.r0 *= k;
            let cap = CapacityPolicy { n_icu: sc.capacity().n_icu * k, xi: sc.capacity().xi };
            let scaled = Scenario::new(*sc.params(), init, cap).unwrap();
            let dk = derive_constants(&scaled, DEFAULT_DWELL_DELTA).unwrap();
            let rel = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1e-300);
            prop_assert!(rel(dk.n, k * dc.n));
            prop_assert!(rel(dk.phi_plus, k * dc.phi_plus));
            prop_assert!(rel(dk.s_min, k * dc.s_min));
            prop_assert!(rel(dk.m2, dc.m2 / k));
            prop_assert!(rel(dk.m1, dc.m1));
            for (x, y) in [(dk.beta_tilde, dc.beta_tilde), (dk.a, dc.a), (dk.b, dc.b),
                           (dk.zeta, dc.zeta), (dk.k_psi_bar, dc.k_psi_bar), (dk.mu, dc.mu)] {
                prop_assert!(rel(x, y));
            }
            // M3 is proportional to M2/M1 up to an O(M2/(pN M1)) correction.
            prop_assert!((dk.m3 * k / dc.m3 - 1.0).abs() < 1e-2);
        }
    }
}
