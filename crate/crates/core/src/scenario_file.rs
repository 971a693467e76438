//! Scenario files: one scenario per TOML document, with optional
//! `[controller]` and `[sim]` tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::SafetyDistances;
use crate::model::{CapacityPolicy, EpidemicParams, InitialState, ModelError, Scenario};
use crate::simulator::SimConfig;

/// Scenarios shipped with the crate, addressed as `@name`.
pub const BUNDLED: &[(&str, &str)] = &[(
    "example_city",
    include_str!("../scenarios/example_city.toml"),
)];

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown bundled scenario @{0}")]
    UnknownBundled(String),
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: {source}")]
    Invalid { origin: String, source: ModelError },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_time_tol: Option<f64>,
}

impl SimOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, cfg: &mut SimConfig) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.horizon, self.horizon);
        set(&mut cfg.output_dt, self.output_dt);
        set(&mut cfg.rtol, self.rtol);
        set(&mut cfg.atol, self.atol);
        set(&mut cfg.event_time_tol, self.event_time_tol);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub controller: Option<SafetyDistances>,
    pub sim: SimOverrides,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    eps_plus: f64,
    eps_minus: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(rename = "beta_A")]
    beta_a: f64,
    #[serde(rename = "beta_S")]
    beta_s: f64,
    #[serde(rename = "alpha_A")]
    alpha_a: f64,
    #[serde(rename = "alpha_S")]
    alpha_s: f64,
    p: f64,
    rho: f64,
    gamma_0: f64,
    gamma_1: f64,
    psi_bar: f64,
    #[serde(rename = "gamma_K")]
    gamma_k: f64,
    #[serde(rename = "S0")]
    s0: f64,
    #[serde(rename = "IA0")]
    ia0: f64,
    #[serde(rename = "IS0")]
    is0: f64,
    #[serde(rename = "R0")]
    r0: f64,
    #[serde(rename = "D0")]
    d0: f64,
    psi0: f64,
    n_icu: f64,
    xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    controller: Option<RawController>,
    #[serde(default, skip_serializing_if = "SimOverrides::is_empty")]
    sim: SimOverrides,
}

impl ScenarioFile {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            controller: None,
            sim: SimOverrides::default(),
        }
    }

    /// Parses a document; `origin` names it in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioFileError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| ScenarioFileError::Parse {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let scenario = Scenario::new(
            EpidemicParams {
                beta_a: raw.beta_a,
                beta_s: raw.beta_s,
                alpha_a: raw.alpha_a,
                alpha_s: raw.alpha_s,
                p: raw.p,
                rho: raw.rho,
                gamma_0: raw.gamma_0,
                gamma_1: raw.gamma_1,
                psi_bar: raw.psi_bar,
                gamma_k: raw.gamma_k,
            },
            InitialState {
                s0: raw.s0,
                ia0: raw.ia0,
                is0: raw.is0,
                r0: raw.r0,
                d0: raw.d0,
                psi0: raw.psi0,
            },
            CapacityPolicy {
                n_icu: raw.n_icu,
                xi: raw.xi,
            },
        )
        .map_err(|source| ScenarioFileError::Invalid {
            origin: origin.to_string(),
            source,
        })?;
        Ok(Self {
            scenario,
            controller: raw
                .controller
                .map(|c| SafetyDistances::new(c.eps_minus, c.eps_plus)),
            sim: raw.sim,
        })
    }

    /// Reads a file, or a bundled scenario when `source` is `@name`.
    pub fn load(source: &str) -> Result<Self, ScenarioFileError> {
        if let Some(name) = source.strip_prefix('@') {
            let text =
                bundled(name).ok_or_else(|| ScenarioFileError::UnknownBundled(name.to_string()))?;
            return Self::parse(text, source);
        }
        let path = Path::new(source);
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioFileError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, source)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioFileError> {
        let e = self.scenario.params();
        let x = self.scenario.init();
        let c = self.scenario.capacity();
        let raw = RawFile {
            beta_a: e.beta_a,
            beta_s: e.beta_s,
            alpha_a: e.alpha_a,
            alpha_s: e.alpha_s,
            p: e.p,
            rho: e.rho,
            gamma_0: e.gamma_0,
            gamma_1: e.gamma_1,
            psi_bar: e.psi_bar,
            gamma_k: e.gamma_k,
            s0: x.s0,
            ia0: x.ia0,
            is0: x.is0,
            r0: x.r0,
            d0: x.d0,
            psi0: x.psi0,
            n_icu: c.n_icu,
            xi: c.xi,
            controller: self.controller.map(|d| RawController {
                eps_plus: d.eps_plus,
                eps_minus: d.eps_minus,
            }),
            sim: self.sim,
        };
        toml::to_string(&raw).map_err(|e| ScenarioFileError::Serialize(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), ScenarioFileError> {
        std::fs::write(path, self.to_toml()?).map_err(|e| ScenarioFileError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}
