//! Stochastic agent families.
//!
//! Every agent consumes exactly one uniform draw in `[0, 1)` per step. The
//! draw is supplied by the caller, so stepping is a pure function and a loop
//! trajectory is reproducible from its seed.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::{spectral, Matrix};

/// Tolerance on the sum of a branch probability vector.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Binary agent that toggles its state with probability `pi`.
pub fn binary_flip_step(x: f64, pi: f64, draw: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::SignalRange { k: None, pi });
    }
    Ok(if draw < pi { 1.0 - x } else { x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Increasing,
    Decreasing,
}

/// Memoryless Bernoulli agent whose activation probability is a logistic
/// function of the broadcast signal.
///
/// Increasing: `base + amplitude * s(pi)`. Decreasing:
/// `base + amplitude - amplitude * s(pi)`, where
/// `s(pi) = 1 / (1 + exp(-slope * (pi - threshold)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidBernoulliAgent {
    base: f64,
    amplitude: f64,
    slope: f64,
    threshold: f64,
    orientation: Orientation,
}

impl SigmoidBernoulliAgent {
    pub fn new(
        base: f64,
        amplitude: f64,
        slope: f64,
        threshold: f64,
        orientation: Orientation,
    ) -> Result<Self> {
        let finite = [base, amplitude, slope, threshold]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("sigmoid agent parameters".into()));
        }
        if base <= 0.0 || amplitude < 0.0 || base + amplitude >= 1.0 {
            return Err(Error::Validation(format!(
                "sigmoid agent needs 0 < base and base + amplitude < 1 (base={base}, amplitude={amplitude})"
            )));
        }
        Ok(SigmoidBernoulliAgent {
            base,
            amplitude,
            slope,
            threshold,
            orientation,
        })
    }

    pub fn increasing(base: f64, amplitude: f64, slope: f64, threshold: f64) -> Result<Self> {
        Self::new(base, amplitude, slope, threshold, Orientation::Increasing)
    }

    pub fn decreasing(base: f64, amplitude: f64, slope: f64, threshold: f64) -> Result<Self> {
        Self::new(base, amplitude, slope, threshold, Orientation::Decreasing)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn prob_active(&self, pi: f64) -> f64 {
        let s = 1.0 / (1.0 + (-self.slope * (pi - self.threshold)).exp());
        match self.orientation {
            Orientation::Increasing => self.base + self.amplitude * s,
            Orientation::Decreasing => (self.base + self.amplitude) - self.amplitude * s,
        }
    }

    /// Smallest probability either outcome can have over all signals.
    pub fn floor(&self) -> f64 {
        self.base.min(1.0 - self.base - self.amplitude)
    }

    pub fn step(&self, pi: f64, draw: f64) -> f64 {
        if draw < self.prob_active(pi) {
            1.0
        } else {
            0.0
        }
    }
}

type LawFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;

/// Branch-selection law of an affine IFS agent, `(x, pi) -> p`.
#[derive(Clone)]
pub enum ProbabilityLaw {
    /// Fixed probabilities, independent of state and signal.
    Constant(Vec<f64>),
    /// Two branches, `[1 - p, p]` with `p` the sigmoid activation probability.
    Sigmoid(SigmoidBernoulliAgent),
    /// User-supplied Lipschitz map.
    Custom(Arc<LawFn>),
}

impl ProbabilityLaw {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        ProbabilityLaw::Custom(Arc::new(f))
    }

    pub fn probabilities(&self, x: &[f64], pi: f64) -> Vec<f64> {
        match self {
            ProbabilityLaw::Constant(p) => p.clone(),
            ProbabilityLaw::Sigmoid(s) => {
                let p = s.prob_active(pi);
                vec![1.0 - p, p]
            }
            ProbabilityLaw::Custom(f) => f(x, pi),
        }
    }

    /// True when the law ignores `x` and `pi`.
    pub fn is_constant(&self) -> bool {
        matches!(self, ProbabilityLaw::Constant(_))
    }
}

impl fmt::Debug for ProbabilityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbabilityLaw::Constant(p) => f.debug_tuple("Constant").field(p).finish(),
            ProbabilityLaw::Sigmoid(s) => f.debug_tuple("Sigmoid").field(s).finish(),
            ProbabilityLaw::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn check_probabilities(p: &[f64], branches: usize, floor: f64) -> Result<()> {
    if p.len() != branches {
        return Err(Error::Validation(format!(
            "law returned {} probabilities for {branches} branches",
            p.len()
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "branch probabilities sum to {sum}"
        )));
    }
    if let Some(min) = p.iter().copied().reduce(f64::min) {
        if min < floor {
            return Err(Error::Validation(format!(
                "branch probability {min} below declared floor {floor}"
            )));
        }
    }
    Ok(())
}

/// Agent following `x <- A x + b_j`, branch `j` chosen from a state- and
/// signal-dependent law whose probabilities never drop below `floor`.
#[derive(Debug, Clone)]
pub struct AffineIfsAgent {
    a: Matrix,
    offsets: Vec<DVector<f64>>,
    law: ProbabilityLaw,
    floor: f64,
}

impl AffineIfsAgent {
    pub fn new(a: Matrix, offsets: Vec<Vec<f64>>, law: ProbabilityLaw, floor: f64) -> Result<Self> {
        a.require_square()?;
        let dim = a.rows();
        if offsets.is_empty() {
            return Err(Error::Validation(
                "affine agent needs at least one offset".into(),
            ));
        }
        if let Some(bad) = offsets.iter().find(|b| b.len() != dim) {
            return Err(Error::Dimension(format!(
                "offset of length {} for a state of dimension {dim}",
                bad.len()
            )));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine agent offsets".into()));
        }
        if !(floor > 0.0) || floor * offsets.len() as f64 > 1.0 + PROBABILITY_SUM_TOL {
            return Err(Error::Validation(format!(
                "floor {floor} must be positive and at most 1/{}",
                offsets.len()
            )));
        }
        if !spectral::is_schur(&a, 0.0)? {
            return Err(Error::Validation(
                "affine agent state matrix is not Schur".into(),
            ));
        }
        match &law {
            ProbabilityLaw::Constant(p) => check_probabilities(p, offsets.len(), floor)?,
            ProbabilityLaw::Sigmoid(s) => {
                if offsets.len() != 2 {
                    return Err(Error::Validation(
                        "sigmoid law needs exactly two offsets".into(),
                    ));
                }
                if s.floor() < floor {
                    return Err(Error::Validation(format!(
                        "sigmoid law reaches {} below declared floor {floor}",
                        s.floor()
                    )));
                }
            }
            ProbabilityLaw::Custom(_) => {}
        }
        Ok(AffineIfsAgent {
            a,
            offsets: offsets.into_iter().map(DVector::from_vec).collect(),
            law,
            floor,
        })
    }

    /// The two-branch zero-matrix embedding of a sigmoid agent, offsets
    /// `{0, 1}`.
    pub fn from_sigmoid(agent: SigmoidBernoulliAgent) -> Self {
        AffineIfsAgent {
            a: Matrix::zeros(1, 1),
            offsets: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)],
            law: ProbabilityLaw::Sigmoid(agent),
            floor: agent.floor(),
        }
    }

    /// Zero-matrix form of a binary-flip agent: offsets `{0, 1}`, with
    /// `P(next = 1) = x (1 - pi) + (1 - x) pi`. The law reaches zero at
    /// `pi = 0`, so the declared floor is zero.
    pub fn binary_flip_embedding() -> Self {
        AffineIfsAgent {
            a: Matrix::zeros(1, 1),
            offsets: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)],
            law: ProbabilityLaw::custom(|x, pi| {
                let p = x[0] * (1.0 - pi) + (1.0 - x[0]) * pi;
                vec![1.0 - p, p]
            }),
            floor: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn offsets(&self) -> &[DVector<f64>] {
        &self.offsets
    }

    pub fn law(&self) -> &ProbabilityLaw {
        &self.law
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Validated branch probabilities at `(x, pi)`.
    pub fn probabilities(&self, x: &[f64], pi: f64) -> Result<Vec<f64>> {
        let p = self.law.probabilities(x, pi);
        check_probabilities(&p, self.offsets.len(), self.floor)?;
        Ok(p)
    }

    /// Inverse-CDF branch choice in declared offset order.
    pub fn select_branch(&self, x: &[f64], pi: f64, draw: f64) -> Result<usize> {
        let p = self.probabilities(x, pi)?;
        Ok(inverse_cdf(&p, draw))
    }

    pub fn apply_branch(&self, x: &[f64], branch: usize) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let next = self.a.as_dmatrix() * x + &self.offsets[branch];
        next.as_slice().to_vec()
    }

    /// One step: returns the new state and the chosen branch.
    pub fn step(&self, x: &[f64], pi: f64, draw: f64) -> Result<(Vec<f64>, usize)> {
        let j = self.select_branch(x, pi, draw)?;
        Ok((self.apply_branch(x, j), j))
    }

    /// True when the state matrix is identically zero, so the state
    /// alphabet is exactly the offset set.
    pub fn has_zero_matrix(&self) -> bool {
        self.a.as_dmatrix().iter().all(|v| *v == 0.0)
    }
}

/// Index of the first cumulative probability exceeding `draw`; the last
/// index absorbs rounding in the tail.
pub fn inverse_cdf(p: &[f64], draw: f64) -> usize {
    let mut acc = 0.0;
    for (j, pj) in p.iter().enumerate() {
        acc += pj;
        if draw < acc {
            return j;
        }
    }
    p.len() - 1
}

/// One member of the population.
#[derive(Debug, Clone)]
pub enum AgentModel {
    BinaryFlip,
    Sigmoid(SigmoidBernoulliAgent),
    AffineIfs(AffineIfsAgent),
}

impl AgentModel {
    pub fn dim(&self) -> usize {
        match self {
            AgentModel::AffineIfs(a) => a.dim(),
            _ => 1,
        }
    }

    /// Advances one agent, writing the new state into `next`. Returns the
    /// branch index taken (the new value for the binary families).
    pub fn step(&self, x: &[f64], next: &mut [f64], pi: f64, draw: f64) -> Result<usize> {
        match self {
            AgentModel::BinaryFlip => {
                next[0] = binary_flip_step(x[0], pi, draw)?;
                Ok(next[0] as usize)
            }
            AgentModel::Sigmoid(s) => {
                next[0] = s.step(pi, draw);
                Ok(next[0] as usize)
            }
            AgentModel::AffineIfs(a) => {
                let (v, j) = a.step(x, pi, draw)?;
                next.copy_from_slice(&v);
                Ok(j)
            }
        }
    }

    /// True when the step at `(x, pi)` leaves `x` unchanged with certainty.
    pub fn is_stationary_at(&self, _x: &[f64], pi: f64) -> bool {
        match self {
            AgentModel::BinaryFlip => pi == 0.0,
            _ => false,
        }
    }

    /// Finite set of values a scalar agent can take, if it has one.
    pub fn alphabet(&self) -> Option<Vec<f64>> {
        match self {
            AgentModel::BinaryFlip | AgentModel::Sigmoid(_) => Some(vec![0.0, 1.0]),
            AgentModel::AffineIfs(a) if a.dim() == 1 && a.has_zero_matrix() => {
                let mut v: Vec<f64> = a.offsets().iter().map(|b| b[0]).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                Some(v)
            }
            AgentModel::AffineIfs(_) => None,
        }
    }

    /// Distribution of the next scalar value as `(value, probability)` pairs.
    pub fn next_value_distribution(&self, x: f64, pi: f64) -> Result<Vec<(f64, f64)>> {
        match self {
            AgentModel::BinaryFlip => {
                if !(0.0..=1.0).contains(&pi) {
                    return Err(Error::SignalRange { k: None, pi });
                }
                Ok(vec![(x, 1.0 - pi), (1.0 - x, pi)])
            }
            AgentModel::Sigmoid(s) => {
                let p = s.prob_active(pi);
                Ok(vec![(0.0, 1.0 - p), (1.0, p)])
            }
            AgentModel::AffineIfs(a) if a.dim() == 1 && a.has_zero_matrix() => {
                let p = a.probabilities(&[x], pi)?;
                Ok(a.offsets().iter().map(|b| b[0]).zip(p).collect())
            }
            AgentModel::AffineIfs(_) => Err(Error::Unsupported(
                "affine agent with non-zero state matrix has no finite alphabet".into(),
            )),
        }
    }
}

/// Total resource use `y = sum_i x_i`, summing every component of vector
/// states.
pub fn aggregate(states: &[f64]) -> f64 {
    states.iter().sum()
}
