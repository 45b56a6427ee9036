//! Experiment configuration: a TOML document describing the loop, the run
//! parameters, the analyses to perform and where to write results.

use std::collections::BTreeSet;
use std::path::Path;

use ergoloop::agents::{AffineIfsAgent, AgentModel, ProbabilityLaw, SigmoidBernoulliAgent};
use ergoloop::analysis::{InitialCondition, POLE_ORDER_MAX, THEOREM1_M_MAX};
use ergoloop::closed_loop::ClosedLoop;
use ergoloop::control::{
    lag_controller, pi_controller, Controller, LinearController, MemorylessGainController,
    ModeSelector, ProbabilityMap, StateSpace, SwitchedController, SwitchingRule,
};
use ergoloop::filters::{Filter, LinearFilter, MovingAverageFilter};
use ergoloop::numerics::Matrix;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub system: SystemConfig,
    #[serde(default, rename = "variant")]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub initial: Vec<InitialConfig>,
    pub initial_sweep: Option<SweepConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub reference: f64,
    pub agents: Vec<AgentConfig>,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    pub map: Option<MapConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentConfig {
    Binary {
        #[serde(default = "one")]
        count: usize,
    },
    Sigmoid {
        #[serde(default = "one")]
        count: usize,
        orientation: Orientation,
        base: f64,
        amplitude: f64,
        slope: f64,
        threshold: f64,
    },
    Affine {
        #[serde(default = "one")]
        count: usize,
        matrix: Vec<Vec<f64>>,
        offsets: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerConfig {
    Gain {
        gain: f64,
    },
    Pi {
        kappa: f64,
        alpha: f64,
    },
    Lag {
        kappa: f64,
        alpha: f64,
        beta: f64,
    },
    StateSpace(StateSpaceConfig),
    Switched {
        modes: Vec<StateSpaceConfig>,
        rule: RuleConfig,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpaceConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RuleConfig {
    External {
        sequence: Vec<usize>,
    },
    StateDependent {
        normal: Vec<f64>,
        offset: f64,
    },
    Randomized {
        normal: Vec<f64>,
        offset: f64,
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FilterConfig {
    #[default]
    Identity,
    MovingAverage {
        coefficients: Vec<f64>,
        #[serde(default)]
        warm_start: f64,
    },
    /// A moving average in state-space form.
    FirStateSpace { coefficients: Vec<f64> },
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<Vec<f64>>,
        d: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapConfig {
    Identity,
    Clamp { lo: f64, hi: f64 },
    AffineClamp { alpha: f64, beta: f64, epsilon: f64 },
}

/// Replaces parts of the base system; each variant is analysed separately.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub controller: Option<ControllerConfig>,
    pub filter: Option<FilterConfig>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> usize {
    1000
}

fn default_realizations() -> usize {
    1000
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: default_horizon(),
            realizations: default_realizations(),
            seed: 0,
        }
    }
}

/// One initial condition. Give either the full agent state `x` or, for
/// scalar agents, `active = n` to start the first `n` agents at 1.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub label: Option<String>,
    pub x: Option<Vec<f64>>,
    pub active: Option<usize>,
    pub controller: Option<Vec<f64>>,
}

/// `active = from, from + step, ..., to`, labelled by the count.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub from: usize,
    pub to: usize,
    #[serde(default = "one")]
    pub step: usize,
    pub controller: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub certificates: Option<Vec<CertificateRequest>>,
    pub m_max: Option<usize>,
    pub k_max: Option<usize>,
    pub ic_test: Option<IcTestConfig>,
    pub lemma1: Option<Lemma1Config>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateRequest {
    FiniteChain,
    Theorem1,
    Theorem3,
    Lemma1,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcTestConfig {
    pub a: String,
    pub b: String,
    /// 1-based agent index.
    #[serde(default = "one")]
    pub agent: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Config {
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub lyapunov: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    /// Write one mean-trajectory CSV per initial condition.
    #[serde(default = "yes")]
    pub trajectories: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            trajectories: true,
        }
    }
}

/// Mode matrices with one Lyapunov matrix per mode.
pub type SwitchedSystem = (Vec<Matrix>, Vec<Matrix>);

/// A parsed configuration with the digest of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub digest: String,
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            digest: digest(text),
        })
    }
}

/// A named loop ready to run.
#[derive(Debug, Clone)]
pub struct System {
    pub name: Option<String>,
    pub closed_loop: ClosedLoop,
}

fn invalid(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{what}: {e}"))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| invalid(what, e))
}

fn state_space(s: &StateSpaceConfig) -> Result<StateSpace, CliError> {
    let a = matrix(&s.a, "controller a")?;
    StateSpace::new(
        a.into_dmatrix(),
        nalgebra::DVector::from_column_slice(&s.b),
        nalgebra::RowDVector::from_row_slice(&s.c),
        s.d,
    )
    .map_err(|e| invalid("controller", e))
}

impl AgentConfig {
    fn count(&self) -> usize {
        match self {
            AgentConfig::Binary { count }
            | AgentConfig::Sigmoid { count, .. }
            | AgentConfig::Affine { count, .. } => *count,
        }
    }

    fn build(&self) -> Result<AgentModel, CliError> {
        let model = match self {
            AgentConfig::Binary { .. } => AgentModel::BinaryFlip,
            AgentConfig::Sigmoid {
                orientation,
                base,
                amplitude,
                slope,
                threshold,
                ..
            } => {
                let agent = match orientation {
                    Orientation::Increasing => {
                        SigmoidBernoulliAgent::increasing(*base, *amplitude, *slope, *threshold)
                    }
                    Orientation::Decreasing => {
                        SigmoidBernoulliAgent::decreasing(*base, *amplitude, *slope, *threshold)
                    }
                };
                AgentModel::Sigmoid(agent.map_err(|e| invalid("sigmoid agent", e))?)
            }
            AgentConfig::Affine {
                matrix: a,
                offsets,
                probabilities,
                ..
            } => {
                let floor = probabilities.iter().cloned().fold(f64::INFINITY, f64::min);
                AgentModel::AffineIfs(
                    AffineIfsAgent::new(
                        matrix(a, "affine agent matrix")?,
                        offsets.clone(),
                        ProbabilityLaw::Constant(probabilities.clone()),
                        floor,
                    )
                    .map_err(|e| invalid("affine agent", e))?,
                )
            }
        };
        Ok(model)
    }
}

impl ControllerConfig {
    pub fn build(&self) -> Result<Controller, CliError> {
        let err = |e| invalid("controller", e);
        Ok(match self {
            ControllerConfig::Gain { gain } => {
                Controller::Gain(MemorylessGainController::new(*gain).map_err(err)?)
            }
            ControllerConfig::Pi { kappa, alpha } => {
                Controller::Linear(pi_controller(*kappa, *alpha).map_err(err)?)
            }
            ControllerConfig::Lag { kappa, alpha, beta } => {
                Controller::Linear(lag_controller(*kappa, *alpha, *beta).map_err(err)?)
            }
            ControllerConfig::StateSpace(s) => {
                Controller::Linear(LinearController::new(state_space(s)?))
            }
            ControllerConfig::Switched { modes, rule } => {
                let modes = modes
                    .iter()
                    .map(state_space)
                    .collect::<Result<Vec<_>, _>>()?;
                let rule = match rule {
                    RuleConfig::External { sequence } => SwitchingRule::External(sequence.clone()),
                    RuleConfig::StateDependent { normal, offset } => {
                        SwitchingRule::StateDependent(ModeSelector::HalfSpace {
                            normal: normal.clone(),
                            offset: *offset,
                        })
                    }
                    RuleConfig::Randomized {
                        normal,
                        offset,
                        epsilon,
                    } => SwitchingRule::Randomized {
                        selector: ModeSelector::HalfSpace {
                            normal: normal.clone(),
                            offset: *offset,
                        },
                        epsilon: *epsilon,
                    },
                };
                Controller::Switched(SwitchedController::new(modes, rule).map_err(err)?)
            }
        })
    }
}

impl FilterConfig {
    pub fn build(&self) -> Result<Filter, CliError> {
        let err = |e| invalid("filter", e);
        Ok(match self {
            FilterConfig::Identity => Filter::identity(),
            FilterConfig::MovingAverage {
                coefficients,
                warm_start,
            } => Filter::MovingAverage(
                MovingAverageFilter::with_warm_start(coefficients.clone(), *warm_start)
                    .map_err(err)?,
            ),
            FilterConfig::FirStateSpace { coefficients } => {
                Filter::Linear(LinearFilter::from_moving_average(
                    &MovingAverageFilter::new(coefficients.clone()).map_err(err)?,
                ))
            }
            FilterConfig::Linear { a, b, c, d } => {
                let c = if c.iter().all(Vec::is_empty) {
                    nalgebra::DMatrix::zeros(a.len(), 0)
                } else {
                    matrix(c, "filter c")?.into_dmatrix()
                };
                Filter::Linear(
                    LinearFilter::new(
                        matrix(a, "filter a")?.into_dmatrix(),
                        nalgebra::DVector::from_column_slice(b),
                        c,
                        nalgebra::RowDVector::from_row_slice(d),
                    )
                    .map_err(err)?,
                )
            }
        })
    }
}

impl MapConfig {
    fn build(&self) -> ProbabilityMap {
        match *self {
            MapConfig::Identity => ProbabilityMap::Identity,
            MapConfig::Clamp { lo, hi } => ProbabilityMap::Clamp { lo, hi },
            MapConfig::AffineClamp {
                alpha,
                beta,
                epsilon,
            } => ProbabilityMap::AffineClamp {
                alpha,
                beta,
                epsilon,
            },
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.system.agents.is_empty() || self.system.agents.iter().any(|a| a.count() == 0) {
            return Err(CliError::Config(
                "system needs at least one agent per group".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            if v.name.is_empty() || !names.insert(v.name.as_str()) {
                return Err(CliError::Config(format!(
                    "variant name {:?} is empty or repeated",
                    v.name
                )));
            }
        }
        if let Some(s) = &self.initial_sweep {
            if s.step == 0 || s.from > s.to {
                return Err(CliError::Config(
                    "initial_sweep needs from <= to and step > 0".into(),
                ));
            }
        }
        for ic in &self.initial {
            if ic.x.is_some() == ic.active.is_some() {
                return Err(CliError::Config(
                    "each initial condition needs exactly one of x or active".into(),
                ));
            }
        }
        let labels = self.initial_conditions_unchecked();
        let mut seen = BTreeSet::new();
        for ic in &labels {
            if !seen.insert(ic.label.clone()) {
                return Err(CliError::Config(format!(
                    "initial condition label {:?} repeated",
                    ic.label
                )));
            }
        }
        if let Some(t) = &self.analysis.ic_test {
            for l in [&t.a, &t.b] {
                if !seen.contains(l) {
                    return Err(CliError::Config(format!(
                        "ic_test names unknown initial condition {l:?}"
                    )));
                }
            }
            if t.agent == 0 {
                return Err(CliError::Config("ic_test agent index is 1-based".into()));
            }
        }
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.system.agents.iter().map(AgentConfig::count).sum()
    }

    fn agents(&self) -> Result<Vec<AgentModel>, CliError> {
        let mut out = Vec::with_capacity(self.agent_count());
        for group in &self.system.agents {
            let model = group.build()?;
            out.extend(std::iter::repeat_n(model, group.count()));
        }
        Ok(out)
    }

    /// The base system when there are no variants, otherwise one system per
    /// variant.
    pub fn systems(&self) -> Result<Vec<System>, CliError> {
        let agents = self.agents()?;
        let map = self.system.map.as_ref().map(MapConfig::build);
        let build = |name: Option<String>,
                     controller: &ControllerConfig,
                     filter: &FilterConfig,
                     reference: f64| {
            ClosedLoop::new(
                agents.clone(),
                controller.build()?,
                map,
                filter.build()?,
                reference,
            )
            .map(|closed_loop| System { name, closed_loop })
            .map_err(|e| invalid("system", e))
        };
        if self.variants.is_empty() {
            return Ok(vec![build(
                None,
                &self.system.controller,
                &self.system.filter,
                self.system.reference,
            )?]);
        }
        self.variants
            .iter()
            .map(|v| {
                build(
                    Some(v.name.clone()),
                    v.controller.as_ref().unwrap_or(&self.system.controller),
                    v.filter.as_ref().unwrap_or(&self.system.filter),
                    v.reference.unwrap_or(self.system.reference),
                )
            })
            .collect()
    }

    fn initial_conditions_unchecked(&self) -> Vec<InitialCondition> {
        let n = self.agent_count();
        let active = |k: usize| {
            (0..n)
                .map(|i| if i < k { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let mut out = Vec::new();
        for (i, ic) in self.initial.iter().enumerate() {
            let x0 =
                ic.x.clone()
                    .unwrap_or_else(|| active(ic.active.unwrap_or(0)));
            let label = ic.label.clone().unwrap_or_else(|| format!("ic{}", i + 1));
            let mut c = InitialCondition::new(label, x0);
            if let Some(xc) = &ic.controller {
                c = c.with_controller_state(xc.clone());
            }
            out.push(c);
        }
        if let Some(s) = &self.initial_sweep {
            for k in (s.from..=s.to).step_by(s.step) {
                let mut c = InitialCondition::new(k.to_string(), active(k));
                if let Some(xc) = &s.controller {
                    c = c.with_controller_state(xc.clone());
                }
                out.push(c);
            }
        }
        out
    }

    /// Listed initial conditions followed by the sweep; defaults to every
    /// agent coordinate at zero.
    pub fn initial_conditions(&self, state_len: usize) -> Result<Vec<InitialCondition>, CliError> {
        let ics = self.initial_conditions_unchecked();
        if ics.is_empty() {
            return Ok(vec![InitialCondition::new("zero", vec![0.0; state_len])]);
        }
        if let Some(bad) = ics.iter().find(|ic| ic.x0.len() != state_len) {
            return Err(CliError::Config(format!(
                "initial condition {:?} has {} coordinates, the agents have {state_len}",
                bad.label,
                bad.x0.len()
            )));
        }
        Ok(ics)
    }

    pub fn certificates(&self) -> Vec<CertificateRequest> {
        let mut list = self.analysis.certificates.clone().unwrap_or_else(|| {
            vec![
                CertificateRequest::FiniteChain,
                CertificateRequest::Theorem1,
                CertificateRequest::Theorem3,
            ]
        });
        list.sort();
        list.dedup();
        list
    }

    pub fn m_max(&self) -> usize {
        self.analysis.m_max.unwrap_or(THEOREM1_M_MAX)
    }

    pub fn k_max(&self) -> usize {
        self.analysis.k_max.unwrap_or(POLE_ORDER_MAX)
    }

    pub fn lemma1_matrices(&self) -> Result<Option<SwitchedSystem>, CliError> {
        let Some(l) = &self.analysis.lemma1 else {
            return Ok(None);
        };
        let conv = |ms: &[Vec<Vec<f64>>], what: &str| {
            ms.iter()
                .map(|m| matrix(m, what))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Some((
            conv(&l.matrices, "lemma1 matrix")?,
            conv(&l.lyapunov, "lemma1 lyapunov")?,
        )))
    }
}
