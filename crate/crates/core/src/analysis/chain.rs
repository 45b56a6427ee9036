//! Exact analysis of loops whose joint state lives on a finite set.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_traits::{One, Signed, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::certificate::{Certificate, CertificateKind, Evidence, Verdict};
use crate::agents::{AgentModel, ProbabilityLaw};
use crate::closed_loop::ClosedLoop;
use crate::control::{Controller, ProbabilityMap};
use crate::error::{Error, Result};
use crate::filters::{sum_alphabet, Filter};
use crate::numerics::rational::{self, Rational};
use crate::numerics::Matrix;

/// Largest number of joint states a chain may have.
pub const STATE_BUDGET: u128 = 1_000_000;
/// Largest total number of joint branch outcomes enumerated over all rows.
pub const OUTCOME_BUDGET: u128 = 100_000_000;
/// Largest linear system solved densely for stationary or absorption
/// probabilities.
pub const DENSE_SOLVE_LIMIT: usize = 4096;

const STOCHASTIC_TOL: f64 = 1e-12;

/// A joint discrete state: agent values and, for a moving-average filter,
/// the past aggregates `y(k-1), ..., y(k-M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub agents: Vec<f64>,
    pub buffer: Vec<f64>,
}

/// Finite Markov chain with sparse rows. States are ordered
/// lexicographically, agent 1 most significant, then the filter buffer.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    states: Vec<ChainState>,
    rows: Vec<Vec<(usize, f64)>>,
    exact: Option<Vec<Vec<(usize, Rational)>>>,
}

fn check_row(i: usize, row: &[(usize, f64)], n: usize) -> Result<()> {
    let mut sum = 0.0;
    for &(j, p) in row {
        if j >= n {
            return Err(Error::Dimension(format!(
                "row {i} points at state {j} of {n}"
            )));
        }
        if !(p >= 0.0) {
            return Err(Error::Validation(format!(
                "negative transition probability in row {i}"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Validation(format!("row {i} sums to {sum}")));
    }
    Ok(())
}

impl FiniteChain {
    /// Chain from explicit rows; labels are the state indices.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            check_row(i, row, n)?;
        }
        let states = (0..n)
            .map(|i| ChainState {
                agents: vec![i as f64],
                buffer: vec![],
            })
            .collect();
        Ok(FiniteChain {
            states,
            rows,
            exact: None,
        })
    }

    /// Chain from a dense row-stochastic matrix.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        m.require_square()?;
        let rows = (0..m.rows())
            .map(|i| {
                (0..m.cols())
                    .filter(|&j| m.get(i, j) != 0.0)
                    .map(|j| (j, m.get(i, j)))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn exact_row(&self, i: usize) -> Option<&[(usize, Rational)]> {
        self.exact.as_ref().map(|rows| rows[i].as_slice())
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn exact_probability(&self, i: usize, j: usize) -> Option<Rational> {
        let row = self.exact_row(i)?;
        Some(
            row.iter()
                .find(|e| e.0 == j)
                .map_or_else(Rational::zero, |e| e.1.clone()),
        )
    }

    /// Index of the state with the given agent values and filter buffer.
    pub fn find(&self, agents: &[f64], buffer: &[f64]) -> Option<usize> {
        self.states
            .iter()
            .position(|s| s.agents == agents && s.buffer == buffer)
    }

    /// Dense transition matrix; limited to [`DENSE_SOLVE_LIMIT`] states.
    pub fn transition_matrix(&self) -> Result<Matrix> {
        let n = self.len();
        if n > DENSE_SOLVE_LIMIT {
            return Err(Error::Budget {
                needed: n as u128,
                budget: DENSE_SOLVE_LIMIT as u128,
            });
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[(i, j)] += p;
            }
        }
        Matrix::from_dmatrix(m)
    }

    /// Successor of state `i` for a uniform draw, by inverse CDF over the row.
    pub fn next_state(&self, i: usize, draw: f64) -> usize {
        let row = &self.rows[i];
        let mut acc = 0.0;
        for &(j, p) in row {
            acc += p;
            if draw < acc {
                return j;
            }
        }
        row.iter().rev().find(|e| e.1 > 0.0).map_or(i, |e| e.0)
    }
}

/// Rational description of a loop, available when every parameter is an
/// exact rational and every branch law is constant or binary-flip.
struct ExactModel {
    reference: Rational,
    coefficients: Vec<Rational>,
    gain: ExactGain,
    map: ExactMap,
    agents: Vec<ExactAgent>,
}

enum ExactGain {
    Absolute(Rational),
    Linear(Rational),
}

enum ExactMap {
    Identity,
    Clamp(Rational, Rational),
    AffineClamp(Rational, Rational, Rational),
}

enum ExactAgent {
    Flip,
    Constant(Vec<(Rational, Rational)>),
}

impl ExactModel {
    fn try_new(lp: &ClosedLoop, coefficients: &[f64]) -> Option<Self> {
        let q = |v: f64| rational::from_f64(v).ok();
        let gain = match lp.controller() {
            Controller::Gain(g) => ExactGain::Absolute(q(g.gain())?),
            Controller::Linear(c) if c.system().order() == 0 => ExactGain::Linear(q(c.system().d)?),
            _ => return None,
        };
        let map = match *lp.probability_map() {
            ProbabilityMap::Identity => ExactMap::Identity,
            ProbabilityMap::Clamp { lo, hi } => ExactMap::Clamp(q(lo)?, q(hi)?),
            ProbabilityMap::AffineClamp {
                alpha,
                beta,
                epsilon,
            } => ExactMap::AffineClamp(q(alpha)?, q(beta)?, q(epsilon)?),
        };
        let agents = lp
            .agents()
            .iter()
            .map(|a| match a {
                AgentModel::BinaryFlip => Some(ExactAgent::Flip),
                AgentModel::AffineIfs(ifs) => match ifs.law() {
                    ProbabilityLaw::Constant(p) => {
                        let pairs = ifs
                            .offsets()
                            .iter()
                            .zip(p)
                            .map(|(b, &p)| Some((q(b[0])?, q(p)?)))
                            .collect::<Option<Vec<_>>>()?;
                        Some(ExactAgent::Constant(pairs))
                    }
                    _ => None,
                },
                AgentModel::Sigmoid(_) => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(ExactModel {
            reference: q(lp.reference())?,
            coefficients: coefficients.iter().map(|&c| q(c)).collect::<Option<_>>()?,
            gain,
            map,
            agents,
        })
    }

    fn signal(&self, y: &Rational, buffer: &[Rational]) -> Rational {
        let yhat: Rational = std::iter::once(y)
            .chain(buffer)
            .zip(&self.coefficients)
            .map(|(v, c)| v * c)
            .sum();
        let e = &self.reference - yhat;
        let raw = match &self.gain {
            ExactGain::Absolute(g) => g * e.abs(),
            ExactGain::Linear(d) => d * e,
        };
        match &self.map {
            ExactMap::Identity => raw,
            ExactMap::Clamp(lo, hi) => raw.max(lo.clone()).min(hi.clone()),
            ExactMap::AffineClamp(alpha, beta, eps) => (alpha * raw.abs() + beta)
                .max(eps.clone())
                .min(Rational::one() - eps),
        }
    }

    fn distribution(
        &self,
        agent: usize,
        x: &Rational,
        pi: &Rational,
    ) -> Result<Vec<(Rational, Rational)>> {
        match &self.agents[agent] {
            ExactAgent::Flip => {
                if pi.is_negative() || pi > &Rational::one() {
                    return Err(Error::SignalRange {
                        k: None,
                        pi: rational::to_f64(pi),
                    });
                }
                Ok(vec![
                    (x.clone(), Rational::one() - pi),
                    (Rational::one() - x, pi.clone()),
                ])
            }
            ExactAgent::Constant(pairs) => Ok(pairs.clone()),
        }
    }
}

/// Mixed-radix digit lookup for a float value in a sorted alphabet.
fn digit(alphabet: &[f64], v: f64) -> Result<usize> {
    let tol = 1e-9 * v.abs().max(1.0);
    alphabet
        .iter()
        .position(|&a| (a - v).abs() <= tol)
        .ok_or_else(|| Error::Validation(format!("value {v} outside the enumerated alphabet")))
}

/// Builds the transition structure of a loop with finite alphabets.
///
/// Rows are exact rationals when every parameter is rational and every
/// branch law is binary-flip or constant; otherwise probabilities are
/// floating point.
pub fn build_finite_chain(lp: &ClosedLoop) -> Result<FiniteChain> {
    let coefficients = match lp.filter() {
        Filter::MovingAverage(f) => f.coefficients().to_vec(),
        Filter::Linear(_) => {
            return Err(Error::Unsupported(
                "filter with continuous state has no finite chain".into(),
            ))
        }
    };
    match lp.controller() {
        Controller::Gain(_) => {}
        Controller::Linear(c) if c.system().order() == 0 => {}
        Controller::Linear(_) => {
            return Err(Error::Unsupported(
                "controller state is unbounded; no finite chain exists".into(),
            ))
        }
        Controller::Switched(_) => {
            return Err(Error::Unsupported(
                "switched controller in a finite chain".into(),
            ))
        }
    }
    let alphabets = lp
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| match (a.dim(), a.alphabet()) {
            (1, Some(v)) => Ok(v),
            _ => Err(Error::Unsupported(format!(
                "agent {} has no finite alphabet",
                i + 1
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let memory = coefficients.len() - 1;
    let exact = ExactModel::try_new(lp, &coefficients);

    let y_alphabet: Vec<f64> = if memory == 0 {
        vec![]
    } else {
        let exact_alphabets = alphabets
            .iter()
            .map(|a| a.iter().map(|&v| rational::from_f64(v)).collect())
            .collect::<Result<Vec<Vec<Rational>>>>();
        match exact_alphabets {
            Ok(ea) => sum_alphabet(&ea)?.iter().map(rational::to_f64).collect(),
            Err(_) => float_sums(&alphabets),
        }
    };

    let mut radices: Vec<usize> = alphabets.iter().map(Vec::len).collect();
    radices.extend(std::iter::repeat_n(y_alphabet.len(), memory));
    let total = radices
        .iter()
        .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
        .unwrap_or(u128::MAX);
    if total > STATE_BUDGET {
        return Err(Error::Budget {
            needed: total,
            budget: STATE_BUDGET,
        });
    }
    let per_row = alphabets
        .iter()
        .try_fold(1u128, |acc, a| acc.checked_mul(a.len() as u128))
        .unwrap_or(u128::MAX);
    if per_row.saturating_mul(total) > OUTCOME_BUDGET {
        return Err(Error::Budget {
            needed: per_row.saturating_mul(total),
            budget: OUTCOME_BUDGET,
        });
    }
    let n = total as usize;
    let n_agents = alphabets.len();
    let mut weights = vec![0usize; radices.len()];
    let mut w = 1;
    for (slot, &r) in weights.iter_mut().zip(&radices).rev() {
        *slot = w;
        w *= r;
    }

    let mut states = Vec::with_capacity(n);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut exact_rows = exact.as_ref().map(|_| Vec::with_capacity(n));
    let mut digits = vec![0usize; radices.len()];
    for _ in 0..n {
        let agents: Vec<f64> = (0..n_agents).map(|i| alphabets[i][digits[i]]).collect();
        let buffer: Vec<f64> = digits[n_agents..].iter().map(|&d| y_alphabet[d]).collect();
        let y: f64 = agents.iter().sum();
        // next buffer: y shifts in, oldest value drops
        let buffer_index: usize = if memory == 0 {
            0
        } else {
            let mut idx = digit(&y_alphabet, y)? * weights[n_agents];
            for j in 1..memory {
                idx += digits[n_agents + j - 1] * weights[n_agents + j];
            }
            idx
        };

        if let (Some(model), Some(exact_rows)) = (&exact, exact_rows.as_mut()) {
            let xs: Vec<Rational> = agents
                .iter()
                .map(|&v| rational::from_f64(v))
                .collect::<Result<_>>()?;
            let bs: Vec<Rational> = buffer
                .iter()
                .map(|&v| rational::from_f64(v))
                .collect::<Result<_>>()?;
            let y_exact: Rational = xs.iter().sum();
            let pi = model.signal(&y_exact, &bs);
            let mut partial: BTreeMap<usize, Rational> =
                BTreeMap::from([(buffer_index, Rational::one())]);
            for (i, x) in xs.iter().enumerate() {
                let dist = model.distribution(i, x, &pi)?;
                let mut next = BTreeMap::new();
                for (idx, p) in &partial {
                    for (v, q) in &dist {
                        if q.is_zero() {
                            continue;
                        }
                        let d = digit(&alphabets[i], rational::to_f64(v))?;
                        *next
                            .entry(idx + d * weights[i])
                            .or_insert_with(Rational::zero) += p * q;
                    }
                }
                partial = next;
            }
            let row: Vec<(usize, Rational)> = partial.into_iter().collect();
            rows.push(row.iter().map(|(j, p)| (*j, rational::to_f64(p))).collect());
            exact_rows.push(row);
        } else {
            let mut filter = lp.filter().clone();
            if let Filter::MovingAverage(f) = &mut filter {
                f.set_buffer(&buffer)?;
            }
            let e = lp.reference() - filter.step(y);
            let mut controller = lp.controller().clone();
            let pi = lp.probability_map().apply(controller.step(e, 0.0)?);
            let mut partial: BTreeMap<usize, f64> = BTreeMap::from([(buffer_index, 1.0)]);
            for (i, (agent, &x)) in lp.agents().iter().zip(&agents).enumerate() {
                let dist = agent.next_value_distribution(x, pi)?;
                let mut next = BTreeMap::new();
                for (idx, p) in &partial {
                    for &(v, q) in &dist {
                        if q <= 0.0 {
                            continue;
                        }
                        let d = digit(&alphabets[i], v)?;
                        *next.entry(idx + d * weights[i]).or_insert(0.0) += p * q;
                    }
                }
                partial = next;
            }
            rows.push(partial.into_iter().collect());
        }
        states.push(ChainState { agents, buffer });

        for pos in (0..radices.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < radices[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
    for (i, row) in rows.iter().enumerate() {
        check_row(i, row, n)?;
    }
    Ok(FiniteChain {
        states,
        rows,
        exact: exact_rows,
    })
}

fn float_sums(alphabets: &[Vec<f64>]) -> Vec<f64> {
    let mut sums = vec![0.0];
    for a in alphabets {
        let mut next: Vec<f64> = sums
            .iter()
            .flat_map(|s| a.iter().map(move |v| s + v))
            .collect();
        next.sort_by(f64::total_cmp);
        next.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(1.0));
        sums = next;
    }
    sums
}

/// Closed communicating classes, each sorted, ordered by smallest member.
pub fn recurrent_classes(chain: &FiniteChain) -> Vec<Vec<usize>> {
    let n = chain.len();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, row) in chain.rows.iter().enumerate() {
        for &(j, p) in row {
            if p > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            component[v.index()] = c;
        }
    }
    let mut classes: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter().all(|v| {
                chain.rows[v.index()]
                    .iter()
                    .all(|&(j, p)| p <= 0.0 || component[j] == *c)
            })
        })
        .map(|(_, scc)| {
            let mut members: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            members.sort_unstable();
            members
        })
        .collect();
    classes.sort();
    classes
}

fn dense_limit(n: usize) -> Result<()> {
    if n > DENSE_SOLVE_LIMIT {
        return Err(Error::Budget {
            needed: n as u128,
            budget: DENSE_SOLVE_LIMIT as u128,
        });
    }
    Ok(())
}

/// One stationary distribution per recurrent class, as full-length vectors
/// supported on the class.
pub fn stationary_measures(chain: &FiniteChain) -> Result<Vec<Vec<f64>>> {
    recurrent_classes(chain)
        .iter()
        .map(|class| {
            let m = class.len();
            dense_limit(m)?;
            let pos: BTreeMap<usize, usize> =
                class.iter().enumerate().map(|(k, &s)| (s, k)).collect();
            // (P' - I) mu = 0 with the last equation replaced by sum(mu) = 1
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (k, &s) in class.iter().enumerate() {
                a[(k, k)] -= 1.0;
                for &(j, p) in chain.row(s) {
                    if let Some(&kj) = pos.get(&j) {
                        a[(kj, k)] += p;
                    }
                }
            }
            a.row_mut(m - 1).fill(1.0);
            let mut rhs = DVector::zeros(m);
            rhs[m - 1] = 1.0;
            let mu = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Validation("singular stationary system".into()))?;
            let mut full = vec![0.0; chain.len()];
            for (k, &s) in class.iter().enumerate() {
                full[s] = mu[k].max(0.0);
            }
            Ok(full)
        })
        .collect()
}

/// Probabilities of ending in each recurrent class.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorption {
    pub classes: Vec<Vec<usize>>,
    pub probabilities: Vec<f64>,
}

impl Absorption {
    /// Probability of the class containing `state`.
    pub fn of_class_containing(&self, state: usize) -> Option<f64> {
        self.classes
            .iter()
            .position(|c| c.binary_search(&state).is_ok())
            .map(|k| self.probabilities[k])
    }
}

/// Solves `(I - Q) h = R 1_c` over the transient states reachable from
/// `start`.
pub fn absorption_probabilities(chain: &FiniteChain, start: usize) -> Result<Absorption> {
    if start >= chain.len() {
        return Err(Error::Lookup(format!("state {start} of {}", chain.len())));
    }
    let classes = recurrent_classes(chain);
    let mut class_of = vec![None; chain.len()];
    for (c, members) in classes.iter().enumerate() {
        for &s in members {
            class_of[s] = Some(c);
        }
    }
    let mut probabilities = vec![0.0; classes.len()];
    if let Some(c) = class_of[start] {
        probabilities[c] = 1.0;
        return Ok(Absorption {
            classes,
            probabilities,
        });
    }

    let mut transient: Vec<usize> = Vec::new();
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        transient.push(s);
        for &(j, p) in chain.row(s) {
            if p > 0.0 && class_of[j].is_none() && seen.insert(j) {
                stack.push(j);
            }
        }
    }
    transient.sort_unstable();
    let t = transient.len();
    dense_limit(t)?;
    let pos: BTreeMap<usize, usize> = transient.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut a = DMatrix::<f64>::identity(t, t);
    let mut rhs = DMatrix::<f64>::zeros(t, classes.len());
    for (k, &s) in transient.iter().enumerate() {
        for &(j, p) in chain.row(s) {
            if let Some(&kj) = pos.get(&j) {
                a[(k, kj)] -= p;
            } else if let Some(c) = class_of[j] {
                rhs[(k, c)] += p;
            }
        }
    }
    let h = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Validation("transient states never leave".into()))?;
    let k0 = pos[&start];
    for c in 0..classes.len() {
        probabilities[c] = h[(k0, c)];
    }
    Ok(Absorption {
        classes,
        probabilities,
    })
}

/// Ergodic iff there is exactly one recurrent class.
pub fn chain_ergodicity_verdict(chain: &FiniteChain) -> Certificate {
    let count = recurrent_classes(chain).len();
    let (verdict, reasons) = match count {
        1 => (Verdict::ErgodicCertified, vec![]),
        0 => (
            Verdict::Inconclusive,
            vec!["no recurrent class found".to_string()],
        ),
        _ => (Verdict::NonErgodicCertified, vec![]),
    };
    Certificate {
        kind: CertificateKind::FiniteChain,
        verdict,
        evidence: Evidence::FiniteChain {
            states: chain.len(),
            recurrent_classes: count,
            exact: chain.is_exact(),
        },
        reasons,
    }
}
