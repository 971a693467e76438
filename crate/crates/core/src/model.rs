//! SIRASD compartments, epidemic parameters and the controlled right-hand side.
//!
//! Time is measured in days and every rate is per day.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{name} = {value} is not finite")]
    NotFinite { name: &'static str, value: f64 },
    #[error("ICU threshold (1 + xi) * n_icu = {0} must be positive")]
    NonPositiveCapacity(f64),
    #[error("total population N = {0} must be positive")]
    EmptyPopulation(f64),
    #[error("living population N - D = {0} is not positive")]
    DegeneratePopulation(f64),
}

/// Binary policy input: `Off` means no distancing, `On` means distancing enacted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Input {
    #[default]
    Off,
    On,
}

impl Input {
    pub fn as_f64(self) -> f64 {
        match self {
            Input::Off => 0.0,
            Input::On => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Input::Off => 0,
            Input::On => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Input::Off),
            1 => Some(Input::On),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Input::Off => Input::On,
            Input::On => Input::Off,
        }
    }
}

/// Epidemic and population-response rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicParams {
    pub beta_a: f64,
    pub beta_s: f64,
    pub alpha_a: f64,
    pub alpha_s: f64,
    /// Proportion of infections that develop symptoms.
    pub p: f64,
    /// Probability that a symptomatic case dies before recovering.
    pub rho: f64,
    pub gamma_0: f64,
    pub gamma_1: f64,
    /// Strictest achievable isolation level.
    pub psi_bar: f64,
    pub gamma_k: f64,
}

impl EpidemicParams {
    /// Rates used in the `example_city` study.
    pub fn example_city() -> Self {
        Self {
            beta_a: 0.37,
            beta_s: 0.43,
            alpha_a: 0.1,
            alpha_s: 0.085,
            p: 0.02,
            rho: 0.15,
            gamma_0: 1.0,
            gamma_1: 1.0,
            psi_bar: 0.31,
            gamma_k: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("beta_A", self.beta_a),
            ("beta_S", self.beta_s),
            ("alpha_A", self.alpha_a),
            ("alpha_S", self.alpha_s),
            ("p", self.p),
            ("rho", self.rho),
            ("gamma_0", self.gamma_0),
            ("gamma_1", self.gamma_1),
            ("psi_bar", self.psi_bar),
            ("gamma_K", self.gamma_k),
        ];
        for (name, value) in fields {
            in_range(name, value, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Outflow rate of the symptomatic compartment, `alpha_S / (1 - rho)`.
    pub fn symptomatic_exit_rate(&self) -> f64 {
        self.alpha_s / (1.0 - self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub s0: f64,
    pub ia0: f64,
    pub is0: f64,
    pub r0: f64,
    pub d0: f64,
    pub psi0: f64,
}

impl InitialState {
    pub fn example_city() -> Self {
        Self {
            s0: 0.9e5 - 50.0,
            ia0: 49.0,
            is0: 1.0,
            r0: 0.1e5,
            d0: 0.0,
            psi0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("S0", self.s0),
            ("IA0", self.ia0),
            ("IS0", self.is0),
            ("R0", self.r0),
            ("D0", self.d0),
        ] {
            in_range(name, value, 0.0, f64::INFINITY)?;
        }
        in_range("psi0", self.psi0, 0.0, 1.0)
    }

    pub fn population(&self) -> f64 {
        self.s0 + self.ia0 + self.is0 + self.r0 + self.d0
    }
}

/// ICU capacity and tolerance; the controlled threshold is `(1 + xi) * n_icu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityPolicy {
    pub n_icu: f64,
    pub xi: f64,
}

impl CapacityPolicy {
    pub fn example_city() -> Self {
        Self {
            n_icu: 40.0,
            xi: 0.1,
        }
    }

    pub fn phi_plus(&self) -> f64 {
        (1.0 + self.xi) * self.n_icu
    }

    pub fn phi_minus(&self) -> f64 {
        0.0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        in_range("n_icu", self.n_icu, 0.0, f64::INFINITY)?;
        in_range("xi", self.xi, 0.0, f64::INFINITY)?;
        let phi = self.phi_plus();
        if phi > 0.0 {
            Ok(())
        } else {
            Err(ModelError::NonPositiveCapacity(phi))
        }
    }
}

/// A complete, validated system description. The population `N` is fixed
/// at construction from the initial compartments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    params: EpidemicParams,
    init: InitialState,
    capacity: CapacityPolicy,
    population: f64,
}

/// Number of coordinates in the flattened parameter tuple.
pub const SCENARIO_DIM: usize = 18;

/// Coordinate names of [`Scenario::to_coordinates`], in order.
pub const SCENARIO_COORDINATES: [&str; SCENARIO_DIM] = [
    "alpha_A", "alpha_S", "beta_A", "beta_S", "rho", "p", "gamma_0", "gamma_1", "psi_bar",
    "gamma_K", "xi", "n_icu", "S0", "IA0", "IS0", "R0", "D0", "psi0",
];

impl Scenario {
    pub fn new(
        params: EpidemicParams,
        init: InitialState,
        capacity: CapacityPolicy,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        init.validate()?;
        capacity.validate()?;
        let population = init.population();
        if !(population > 0.0) {
            return Err(ModelError::EmptyPopulation(population));
        }
        Ok(Self {
            params,
            init,
            capacity,
            population,
        })
    }

    pub fn example_city() -> Self {
        Self::new(
            EpidemicParams::example_city(),
            InitialState::example_city(),
            CapacityPolicy::example_city(),
        )
        .expect("bundled scenario is valid")
    }

    pub fn params(&self) -> &EpidemicParams {
        &self.params
    }

    pub fn init(&self) -> &InitialState {
        &self.init
    }

    pub fn capacity(&self) -> &CapacityPolicy {
        &self.capacity
    }

    pub fn population(&self) -> f64 {
        self.population
    }

    pub fn phi_plus(&self) -> f64 {
        self.capacity.phi_plus()
    }

    /// State at `t = 0`.
    pub fn initial_state(&self) -> State {
        State {
            t: 0.0,
            s: self.init.s0,
            i_a: self.init.ia0,
            i_s: self.init.is0,
            r: self.init.r0,
            d: self.init.d0,
            psi: self.init.psi0,
        }
    }

    /// Flattens to the 18-tuple `(alpha_A, alpha_S, beta_A, beta_S, rho, p,
    /// gamma_0, gamma_1, psi_bar, gamma_K, xi, n_icu, S0, IA0, IS0, R0, D0, psi0)`.
    pub fn to_coordinates(&self) -> [f64; SCENARIO_DIM] {
        let (e, i, c) = (&self.params, &self.init, &self.capacity);
        [
            e.alpha_a, e.alpha_s, e.beta_a, e.beta_s, e.rho, e.p, e.gamma_0, e.gamma_1, e.psi_bar,
            e.gamma_k, c.xi, c.n_icu, i.s0, i.ia0, i.is0, i.r0, i.d0, i.psi0,
        ]
    }

    pub fn from_coordinates(z: &[f64; SCENARIO_DIM]) -> Result<Self, ModelError> {
        let params = EpidemicParams {
            alpha_a: z[0],
            alpha_s: z[1],
            beta_a: z[2],
            beta_s: z[3],
            rho: z[4],
            p: z[5],
            gamma_0: z[6],
            gamma_1: z[7],
            psi_bar: z[8],
            gamma_k: z[9],
        };
        let capacity = CapacityPolicy {
            xi: z[10],
            n_icu: z[11],
        };
        let init = InitialState {
            s0: z[12],
            ia0: z[13],
            is0: z[14],
            r0: z[15],
            d0: z[16],
            psi0: z[17],
        };
        Self::new(params, init, capacity)
    }

    /// Admissible interval of each coordinate of [`Self::to_coordinates`].
    pub fn coordinate_bounds() -> [(f64, f64); SCENARIO_DIM] {
        let mut bounds = [(0.0, f64::INFINITY); SCENARIO_DIM];
        for b in bounds.iter_mut().take(10) {
            *b = (0.0, 1.0);
        }
        bounds[17] = (0.0, 1.0);
        bounds
    }
}

/// Point on a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub t: f64,
    pub s: f64,
    pub i_a: f64,
    pub i_s: f64,
    pub r: f64,
    pub d: f64,
    pub psi: f64,
}

impl State {
    pub fn to_array(&self) -> [f64; 6] {
        [self.s, self.i_a, self.i_s, self.r, self.d, self.psi]
    }

    pub fn from_array(t: f64, y: &[f64; 6]) -> Self {
        Self {
            t,
            s: y[0],
            i_a: y[1],
            i_s: y[2],
            r: y[3],
            d: y[4],
            psi: y[5],
        }
    }

    /// `S + I_A + I_S + R + D`.
    pub fn total(&self) -> f64 {
        self.s + self.i_a + self.i_s + self.r + self.d
    }
}

/// Time derivative of the six state components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub s: f64,
    pub i_a: f64,
    pub i_s: f64,
    pub r: f64,
    pub d: f64,
    pub psi: f64,
}

impl StateDerivative {
    pub fn to_array(&self) -> [f64; 6] {
        [self.s, self.i_a, self.i_s, self.r, self.d, self.psi]
    }

    pub fn compartment_sum(&self) -> f64 {
        self.s + self.i_a + self.i_s + self.r + self.d
    }
}

/// Population-response gain `K_psi = 1 - gamma_K * rho * alpha_A / (1 - rho) * I_A / (N - D)`.
pub fn response_gain(params: &EpidemicParams, i_a: f64, living: f64) -> f64 {
    1.0 - params.gamma_k * (params.rho * params.alpha_a / (1.0 - params.rho)) * i_a / living
}

/// Controlled SIRASD dynamics.
pub fn vector_field(
    state: &State,
    u: Input,
    params: &EpidemicParams,
    population: f64,
) -> Result<StateDerivative, ModelError> {
    let y = state.to_array();
    let mut dy = [0.0; 6];
    rhs(&y, u, params, population, &mut dy)?;
    Ok(StateDerivative {
        s: dy[0],
        i_a: dy[1],
        i_s: dy[2],
        r: dy[3],
        d: dy[4],
        psi: dy[5],
    })
}

/// Array form of [`vector_field`] used by the integrator.
pub(crate) fn rhs(
    y: &[f64; 6],
    u: Input,
    params: &EpidemicParams,
    population: f64,
    dy: &mut [f64; 6],
) -> Result<(), ModelError> {
    let [s, i_a, i_s, _r, d, psi] = *y;
    let living = population - d;
    if !(living > 0.0) {
        return Err(ModelError::DegeneratePopulation(living));
    }
    let e = params;
    let force = (e.beta_a * psi * i_a + e.beta_s * psi * i_s) * s / living;
    let exit_s = e.symptomatic_exit_rate();
    let k_psi = response_gain(e, i_a, living);
    let uf = u.as_f64();

    dy[0] = -force;
    dy[1] = (1.0 - e.p) * force - e.alpha_a * i_a;
    dy[2] = e.p * force - exit_s * i_s;
    dy[3] = e.alpha_a * i_a + e.alpha_s * i_s;
    dy[4] = e.rho * e.alpha_s / (1.0 - e.rho) * i_s;
    dy[5] = e.gamma_0 * (1.0 - psi) * (1.0 - uf) + e.gamma_1 * (k_psi * e.psi_bar - psi) * uf;
    Ok(())
}

fn in_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NotFinite { name, value });
    }
    if value < lo || value > hi {
        return Err(ModelError::OutOfRange {
            name,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}
