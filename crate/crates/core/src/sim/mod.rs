//! Scenario configuration and synthetic-cohort generation.
//!
//! A [`ScenarioSpec`] declares one simulation cell: the covariate table with
//! per-model coefficients, the treatment effect and its effect modifiers, the
//! calibration targets, and the cohort size. Specs load from TOML; the eight
//! study cells (two scenarios by four settings) ship as checked-in fixtures.

mod generate;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

pub use generate::{
    calibrate_intercept, gen_covariates, gen_nco, gen_outcome, gen_treatment, generate, true_ite,
    Intercepts, SimDataset,
};

/// Treatment-effect regime of a simulation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// Heterogeneous benefit via treatment-covariate interactions.
    TrueHte,
    /// Constant log-odds treatment effect; all interactions zero.
    NoHte,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::TrueHte => "hte",
            Scenario::NoHte => "nohte",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hte" => Ok(Scenario::TrueHte),
            "nohte" => Ok(Scenario::NoHte),
            other => Err(Error::config(format!(
                "unknown scenario `{other}` (expected `hte` or `nohte`)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Robustness variant of a simulation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Primary,
    WeakerConfounding,
    SmallSample,
    RelaxedNco,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Primary => "primary",
            Setting::WeakerConfounding => "weak-confounding",
            Setting::SmallSample => "small-n",
            Setting::RelaxedNco => "relaxed-nco",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(Setting::Primary),
            "weak-confounding" => Ok(Setting::WeakerConfounding),
            "small-n" => Ok(Setting::SmallSample),
            "relaxed-nco" => Ok(Setting::RelaxedNco),
            other => Err(Error::config(format!(
                "unknown setting `{other}` (expected `primary`, `weak-confounding`, \
                 `small-n`, or `relaxed-nco`)"
            ))),
        }
    }

    /// Cohort size this setting prescribes.
    pub fn expected_n(self) -> usize {
        match self {
            Setting::SmallSample => 5_000,
            _ => 20_000,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Marginal distribution of one covariate.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateKind {
    Binary { prevalence: f64 },
    Continuous { mean: f64, sd: f64 },
}

/// One covariate with its coefficient in each of the three generating models.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    /// False only for the unmeasured confounder.
    pub measured: bool,
    pub beta_treatment: f64,
    pub beta_outcome: f64,
    pub beta_nco: f64,
}

/// Calibration targets for the three generated variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Targets {
    pub treated: f64,
    pub outcome: f64,
    pub nco: f64,
}

/// Complete declarative description of one simulation cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub setting: Setting,
    pub n: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub targets: Targets,
    /// Main treatment effect on the outcome log-odds.
    pub treatment_effect: f64,
    pub covariates: Vec<Covariate>,
    /// Effect modifiers: (covariate index, interaction coefficient).
    pub interactions: Vec<(usize, f64)>,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let spec = raw.into_spec()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Stable identifier for this (scenario, setting) cell, e.g. `hte-primary`.
    pub fn cell_id(&self) -> String {
        format!("{}-{}", self.scenario, self.setting)
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    /// Column index of the unmeasured confounder.
    pub fn u_index(&self) -> usize {
        self.covariates
            .iter()
            .position(|c| !c.measured)
            .expect("validated spec has exactly one unmeasured covariate")
    }

    pub fn measured_indices(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| self.covariates[j].measured)
            .collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn treatment_betas(&self) -> Vec<f64> {
        self.covariates.iter().map(|c| c.beta_treatment).collect()
    }

    pub fn outcome_betas(&self) -> Vec<f64> {
        self.covariates.iter().map(|c| c.beta_outcome).collect()
    }

    pub fn nco_betas(&self) -> Vec<f64> {
        self.covariates.iter().map(|c| c.beta_nco).collect()
    }

    /// Checks structural invariants; every failure names the violated rule.
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::config("covariate list is empty"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.covariates {
            if c.name.is_empty() {
                return Err(Error::config("covariate with empty name"));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!(
                    "duplicate covariate name `{}`",
                    c.name
                )));
            }
            match c.kind {
                CovariateKind::Binary { prevalence } => {
                    if !(prevalence > 0.0 && prevalence < 1.0) {
                        return Err(Error::config(format!(
                            "covariate `{}`: binary prevalence must lie in (0, 1), got {prevalence}",
                            c.name
                        )));
                    }
                }
                CovariateKind::Continuous { sd, .. } => {
                    if sd <= 0.0 || sd.is_nan() {
                        return Err(Error::config(format!(
                            "covariate `{}`: continuous sd must be positive, got {sd}",
                            c.name
                        )));
                    }
                }
            }
        }
        let unmeasured = self.covariates.iter().filter(|c| !c.measured).count();
        if unmeasured != 1 {
            return Err(Error::config(format!(
                "exactly one covariate must be unmeasured, found {unmeasured}"
            )));
        }
        for (&t, label) in [
            (&self.targets.treated, "treated"),
            (&self.targets.outcome, "outcome"),
            (&self.targets.nco, "nco"),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config(format!(
                    "target `{label}` must lie in (0, 1), got {t}"
                )));
            }
        }
        if self.n != self.setting.expected_n() {
            return Err(Error::config(format!(
                "setting `{}` requires n = {}, got {}",
                self.setting,
                self.setting.expected_n(),
                self.n
            )));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        for &(idx, _) in &self.interactions {
            if idx >= self.p() {
                return Err(Error::config("interaction references unknown covariate"));
            }
        }
        let any_nonzero = self.interactions.iter().any(|&(_, b)| b != 0.0);
        match self.scenario {
            Scenario::NoHte if any_nonzero => Err(Error::config(
                "nohte scenario requires all interaction coefficients to be zero",
            )),
            Scenario::TrueHte if !any_nonzero => Err(Error::config(
                "hte scenario requires at least one nonzero interaction coefficient",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    targets: RawTargets,
    outcome_model: RawOutcomeModel,
    covariate: Vec<RawCovariate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: String,
    setting: String,
    n: usize,
    replications: usize,
    master_seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargets {
    treated: f64,
    outcome: f64,
    nco: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutcomeModel {
    treatment_effect: f64,
    #[serde(default)]
    interactions: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCovariate {
    name: String,
    kind: String,
    prevalence: Option<f64>,
    mean: Option<f64>,
    sd: Option<f64>,
    #[serde(default = "default_true")]
    measured: bool,
    #[serde(default)]
    treatment: f64,
    #[serde(default)]
    outcome: f64,
    #[serde(default)]
    nco: f64,
}

fn default_true() -> bool {
    true
}

impl RawConfig {
    fn into_spec(self) -> Result<ScenarioSpec> {
        let covariates = self
            .covariate
            .into_iter()
            .map(|raw| {
                let kind = match raw.kind.as_str() {
                    "binary" => {
                        if raw.mean.is_some() || raw.sd.is_some() {
                            return Err(Error::config(format!(
                                "covariate `{}`: binary kind takes no mean/sd",
                                raw.name
                            )));
                        }
                        CovariateKind::Binary {
                            prevalence: raw.prevalence.ok_or_else(|| {
                                Error::config(format!(
                                    "covariate `{}`: binary kind requires `prevalence`",
                                    raw.name
                                ))
                            })?,
                        }
                    }
                    "continuous" => {
                        if raw.prevalence.is_some() {
                            return Err(Error::config(format!(
                                "covariate `{}`: continuous kind takes no prevalence",
                                raw.name
                            )));
                        }
                        CovariateKind::Continuous {
                            mean: raw.mean.ok_or_else(|| {
                                Error::config(format!(
                                    "covariate `{}`: continuous kind requires `mean`",
                                    raw.name
                                ))
                            })?,
                            sd: raw.sd.ok_or_else(|| {
                                Error::config(format!(
                                    "covariate `{}`: continuous kind requires `sd`",
                                    raw.name
                                ))
                            })?,
                        }
                    }
                    other => {
                        return Err(Error::config(format!(
                            "covariate `{}`: unknown kind `{other}`",
                            raw.name
                        )))
                    }
                };
                Ok(Covariate {
                    name: raw.name,
                    kind,
                    measured: raw.measured,
                    beta_treatment: raw.treatment,
                    beta_outcome: raw.outcome,
                    beta_nco: raw.nco,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let find = |name: &str| covariates.iter().position(|c| c.name == name);
        let interactions = self
            .outcome_model
            .interactions
            .iter()
            .map(|(name, &beta)| {
                find(name).map(|idx| (idx, beta)).ok_or_else(|| {
                    Error::config(format!("interaction key `{name}` names no covariate"))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ScenarioSpec {
            scenario: Scenario::parse(&self.scenario.kind)?,
            setting: Setting::parse(&self.scenario.setting)?,
            n: self.scenario.n,
            replications: self.scenario.replications,
            master_seed: self.scenario.master_seed,
            targets: Targets {
                treated: self.targets.treated,
                outcome: self.targets.outcome,
                nco: self.targets.nco,
            },
            treatment_effect: self.outcome_model.treatment_effect,
            covariates,
            interactions,
        })
    }
}

/// Checked-in configs for the eight study cells.
pub mod fixtures {
    use super::*;

    macro_rules! fixture {
        ($name:literal) => {
            (
                $name,
                include_str!(concat!("../../../../fixtures/", $name, ".toml")),
            )
        };
    }

    /// (cell id, TOML text) for every shipped fixture.
    pub const ALL: [(&str, &str); 8] = [
        fixture!("hte-primary"),
        fixture!("hte-weak-confounding"),
        fixture!("hte-small-n"),
        fixture!("hte-relaxed-nco"),
        fixture!("nohte-primary"),
        fixture!("nohte-weak-confounding"),
        fixture!("nohte-small-n"),
        fixture!("nohte-relaxed-nco"),
    ];

    /// Loads the fixture for a (scenario, setting) cell.
    pub fn load(scenario: Scenario, setting: Setting) -> Result<ScenarioSpec> {
        let id = format!("{scenario}-{setting}");
        let (_, text) = ALL
            .iter()
            .find(|(name, _)| *name == id)
            .ok_or_else(|| Error::config(format!("no fixture for cell `{id}`")))?;
        ScenarioSpec::from_toml_str(text)
    }

    /// All eight parsed fixtures in declaration order.
    pub fn load_all() -> Result<Vec<ScenarioSpec>> {
        ALL.iter()
            .map(|(_, text)| ScenarioSpec::from_toml_str(text))
            .collect()
    }
}
