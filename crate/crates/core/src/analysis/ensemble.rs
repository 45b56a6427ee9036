//! Monte Carlo ensembles of independent realisations.
//!
//! Realisation `r` of initial condition `i` draws from the ChaCha stream
//! `(master_seed, (i << 32) | r)`. Realisations run in parallel in fixed-size
//! batches and are merged in index order, so results are bit-identical for
//! any thread count.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::closed_loop::{stream, ClosedLoop, StepObserver, StepView};
use crate::error::{Error, Result};

/// Realisations simulated concurrently before each ordered merge.
const BATCH: usize = 64;

/// Starting point of a group of realisations.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub label: String,
    pub x0: Vec<f64>,
    /// Controller state; the loop's template state when absent.
    pub xc0: Option<Vec<f64>>,
}

impl InitialCondition {
    pub fn new(label: impl Into<String>, x0: Vec<f64>) -> Self {
        InitialCondition {
            label: label.into(),
            x0,
            xc0: None,
        }
    }

    pub fn with_controller_state(mut self, xc0: Vec<f64>) -> Self {
        self.xc0 = Some(xc0);
        self
    }
}

/// Mean and standard error over realisations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Agents sharing the same initial value, and the statistics of their
/// averaged time-average.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub initial_value: f64,
    pub agents: Vec<usize>,
    pub estimate: Estimate,
}

/// Ensemble means of the signals at every time index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    /// First controller state coordinate; empty for memoryless controllers.
    pub xc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStats {
    pub label: String,
    /// Per state coordinate time-average statistics.
    pub agents: Vec<Estimate>,
    /// Groups by initial value, ordered by that value.
    pub groups: Vec<GroupStats>,
    pub trajectories: Trajectories,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub realizations: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub conditions: Vec<ConditionStats>,
}

/// Per-realisation accumulator: time sums and the three traced signals.
struct Accumulator {
    sums: Vec<f64>,
    y: Vec<f64>,
    x1: Vec<f64>,
    xc: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize, len: usize, with_xc: bool) -> Self {
        Accumulator {
            sums: vec![0.0; n],
            y: vec![0.0; len],
            x1: vec![0.0; len],
            xc: if with_xc { vec![0.0; len] } else { vec![] },
        }
    }
}

impl StepObserver for Accumulator {
    fn observe(&mut self, v: &StepView<'_>) {
        for (s, x) in self.sums.iter_mut().zip(v.x) {
            *s += x;
        }
        self.y[v.k] = v.signals.y;
        self.x1[v.k] = v.x[0];
        if !self.xc.is_empty() {
            self.xc[v.k] = v.xc[0];
        }
    }

    fn observe_repeated(&mut self, v: &StepView<'_>, times: usize) {
        for (s, x) in self.sums.iter_mut().zip(v.x) {
            *s += x * times as f64;
        }
        let range = v.k + 1..v.k + 1 + times;
        self.y[range.clone()].fill(v.signals.y);
        self.x1[range.clone()].fill(v.x[0]);
        if !self.xc.is_empty() {
            self.xc[range].fill(v.xc[0]);
        }
    }
}

fn estimate(sum: f64, sum_sq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let stderr = if n > 1 {
        let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Estimate { mean, stderr }
}

/// Runs `realizations` independent copies of the loop from every initial
/// condition and summarises time-averages `(1 / (horizon + 1)) sum_k x_i(k)`.
pub fn ensemble(
    lp: &ClosedLoop,
    initial_conditions: &[InitialCondition],
    realizations: usize,
    horizon: usize,
    master_seed: u64,
) -> Result<EnsembleStats> {
    if realizations == 0 {
        return Err(Error::Validation(
            "an ensemble needs at least one realisation".into(),
        ));
    }
    if initial_conditions.len() as u64 > u32::MAX as u64 || realizations as u64 > u32::MAX as u64 {
        return Err(Error::Validation(
            "ensemble too large for stream numbering".into(),
        ));
    }
    let n = lp.state_len();
    let len = horizon + 1;
    let norm = 1.0 / len as f64;
    let mut conditions = Vec::with_capacity(initial_conditions.len());
    for (ic_index, ic) in initial_conditions.iter().enumerate() {
        let start = match &ic.xc0 {
            Some(xc) => lp.initial_state_with_controller(ic.x0.clone(), xc)?,
            None => lp.initial_state(ic.x0.clone())?,
        };
        let with_xc = !start.controller.state().is_empty();

        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        let groups = group_agents(lp, &ic.x0);
        let mut g_sum = vec![0.0; groups.len()];
        let mut g_sq = vec![0.0; groups.len()];
        let mut traj = Accumulator::new(0, len, with_xc);

        for batch_start in (0..realizations).step_by(BATCH) {
            let batch_end = (batch_start + BATCH).min(realizations);
            let results: Vec<Result<Accumulator>> = (batch_start..batch_end)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream(master_seed, ((ic_index as u64) << 32) | r as u64);
                    let mut acc = Accumulator::new(n, len, with_xc);
                    lp.run(start.clone(), horizon, &mut rng, &mut acc)?;
                    Ok(acc)
                })
                .collect();
            for acc in results {
                let acc = acc?;
                let averages: Vec<f64> = acc.sums.iter().map(|s| s * norm).collect();
                for i in 0..n {
                    sum[i] += averages[i];
                    sum_sq[i] += averages[i] * averages[i];
                }
                for (g, (_, members)) in groups.iter().enumerate() {
                    let v =
                        members.iter().map(|&i| averages[i]).sum::<f64>() / members.len() as f64;
                    g_sum[g] += v;
                    g_sq[g] += v * v;
                }
                for k in 0..len {
                    traj.y[k] += acc.y[k];
                    traj.x1[k] += acc.x1[k];
                }
                for (t, v) in traj.xc.iter_mut().zip(&acc.xc) {
                    *t += v;
                }
            }
        }

        let r = realizations as f64;
        let scale = |v: Vec<f64>| v.into_iter().map(|s| s / r).collect::<Vec<f64>>();
        conditions.push(ConditionStats {
            label: ic.label.clone(),
            agents: (0..n)
                .map(|i| estimate(sum[i], sum_sq[i], realizations))
                .collect(),
            groups: groups
                .into_iter()
                .enumerate()
                .map(|(g, (value, agents))| GroupStats {
                    initial_value: value,
                    agents,
                    estimate: estimate(g_sum[g], g_sq[g], realizations),
                })
                .collect(),
            trajectories: Trajectories {
                y: scale(traj.y),
                x1: scale(traj.x1),
                xc: scale(traj.xc),
            },
        });
    }
    Ok(EnsembleStats {
        realizations,
        horizon,
        master_seed,
        conditions,
    })
}

/// Scalar agents grouped by initial value; vector agents contribute their
/// first coordinate's value as key and all coordinates as members.
fn group_agents(lp: &ClosedLoop, x0: &[f64]) -> Vec<(f64, Vec<usize>)> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in 0..lp.agents().len() {
        let span = lp.agent_span(i);
        let key = x0[span.start];
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.extend(span),
            None => groups.push((key, span.collect())),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl EnsembleStats {
    pub fn condition(&self, ic: usize) -> Result<&ConditionStats> {
        self.conditions.get(ic).ok_or_else(|| {
            Error::Lookup(format!(
                "initial condition {ic} of {}",
                self.conditions.len()
            ))
        })
    }

    /// `ic,group,agent_mean,stderr,R,horizon`, one row per group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ic,group,agent_mean,stderr,R,horizon\n");
        for c in &self.conditions {
            for g in &c.groups {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.label,
                    g.initial_value,
                    fmt_float(g.estimate.mean),
                    fmt_float(g.estimate.stderr),
                    self.realizations,
                    self.horizon
                );
            }
        }
        out
    }

    /// `k,y,x_1,xc` ensemble-mean trajectories of one initial condition.
    pub fn trajectories_csv(&self, ic: usize) -> Result<String> {
        let t = &self.condition(ic)?.trajectories;
        let mut out = String::from(if t.xc.is_empty() {
            "k,y,x_1\n"
        } else {
            "k,y,x_1,xc\n"
        });
        for k in 0..t.y.len() {
            let _ = write!(out, "{k},{},{}", fmt_float(t.y[k]), fmt_float(t.x1[k]));
            if let Some(xc) = t.xc.get(k) {
                let _ = write!(out, ",{}", fmt_float(*xc));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Which statistic of an initial condition to compare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupSelector {
    /// A single state coordinate.
    Agent(usize),
    /// The agents that started at this value.
    InitialValue(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selector {
    pub ic: usize,
    pub group: GroupSelector,
}

impl Selector {
    pub fn agent(ic: usize, agent: usize) -> Self {
        Selector {
            ic,
            group: GroupSelector::Agent(agent),
        }
    }

    pub fn initial_value(ic: usize, value: f64) -> Self {
        Selector {
            ic,
            group: GroupSelector::InitialValue(value),
        }
    }

    fn resolve(&self, stats: &EnsembleStats) -> Result<Estimate> {
        let c = stats.condition(self.ic)?;
        match self.group {
            GroupSelector::Agent(i) => c
                .agents
                .get(i)
                .copied()
                .ok_or_else(|| Error::Lookup(format!("agent coordinate {i}"))),
            GroupSelector::InitialValue(v) => c
                .groups
                .iter()
                .find(|g| g.initial_value == v)
                .map(|g| g.estimate)
                .ok_or_else(|| {
                    Error::Lookup(format!("no agent of condition {} started at {v}", self.ic))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcVerdict {
    NonErgodic,
    ConsistentWithErgodic,
    Inconclusive,
}

impl IcVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            IcVerdict::NonErgodic => "non-ergodic",
            IcVerdict::ConsistentWithErgodic => "consistent-with-ergodic",
            IcVerdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcTest {
    pub verdict: IcVerdict,
    pub difference: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
}

/// Compares two long-run averages: non-ergodic when they differ by more than
/// `threshold` plus three combined standard errors, consistent with
/// ergodicity when they differ by less than `threshold`.
pub fn ic_dependence_test(
    stats: &EnsembleStats,
    a: Selector,
    b: Selector,
    threshold: f64,
) -> Result<IcTest> {
    let ea = a.resolve(stats)?;
    let eb = b.resolve(stats)?;
    let difference = ea.mean - eb.mean;
    let verdict = if difference.abs() > threshold + 3.0 * (ea.stderr + eb.stderr) {
        IcVerdict::NonErgodic
    } else if difference.abs() < threshold {
        IcVerdict::ConsistentWithErgodic
    } else {
        IcVerdict::Inconclusive
    };
    Ok(IcTest {
        verdict,
        difference,
        stderr_a: ea.stderr,
        stderr_b: eb.stderr,
    })
}
