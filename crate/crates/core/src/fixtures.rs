//! Reference loops used by the examples, the acceptance suite and the
//! cross-validation tests.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::Rng;

use crate::agents::{AffineIfsAgent, AgentModel, ProbabilityLaw, SigmoidBernoulliAgent};
use crate::closed_loop::{ClosedLoop, LoopState};
use crate::control::{
    lag_controller, pi_controller, Controller, LinearController, MemorylessGainController,
    StateSpace,
};
use crate::error::Result;
use crate::filters::{Filter, LinearFilter, MovingAverageFilter};
use crate::numerics::spectral::eigenvalues;
use crate::numerics::Matrix;

/// Two binary-flip agents, `pi = |e| / 2`, no filter, `r = 1`.
pub fn example_one() -> Result<ClosedLoop> {
    example_two(2, 1.0)
}

/// `n` binary-flip agents, `pi = |e| / n`, no filter.
pub fn example_two(n: usize, reference: f64) -> Result<ClosedLoop> {
    ClosedLoop::new(
        vec![AgentModel::BinaryFlip; n],
        Controller::Gain(MemorylessGainController::new(1.0 / n as f64)?),
        None,
        Filter::identity(),
        reference,
    )
}

/// Two agents that activate as `pi` grows past 5, two that deactivate as
/// it grows past 1.
pub fn sigmoid_agents() -> Result<Vec<AgentModel>> {
    let inc = SigmoidBernoulliAgent::increasing(0.02, 0.95, 100.0, 5.0)?;
    let dec = SigmoidBernoulliAgent::decreasing(0.03, 0.95, 100.0, 1.0)?;
    Ok([inc, inc, dec, dec]
        .into_iter()
        .map(AgentModel::Sigmoid)
        .collect())
}

pub const PIVSLAG_KAPPA: f64 = 0.1;
pub const PIVSLAG_PI_ALPHA: f64 = -4.0;
pub const PIVSLAG_LAG_ALPHA: f64 = -4.01;
pub const PIVSLAG_LAG_BETA: f64 = 0.99;

fn sigmoid_loop(controller: LinearController, filter: Filter) -> Result<ClosedLoop> {
    ClosedLoop::new(
        sigmoid_agents()?,
        Controller::Linear(controller),
        None,
        filter,
        2.0,
    )
}

fn half_half() -> Result<MovingAverageFilter> {
    MovingAverageFilter::new(vec![0.5, 0.5])
}

/// Sigmoid agents, FIR `(1/2, 1/2)`, PI controller, `r = 2`.
pub fn pivslag_pi() -> Result<ClosedLoop> {
    sigmoid_loop(
        pi_controller(PIVSLAG_KAPPA, PIVSLAG_PI_ALPHA)?,
        Filter::MovingAverage(half_half()?),
    )
}

/// As [`pivslag_pi`] with the integrator pole moved to `0.99`.
pub fn pivslag_lag() -> Result<ClosedLoop> {
    sigmoid_loop(
        lag_controller(PIVSLAG_KAPPA, PIVSLAG_LAG_ALPHA, PIVSLAG_LAG_BETA)?,
        Filter::MovingAverage(half_half()?),
    )
}

pub const SCHUR_KAPPA: f64 = 0.5;
pub const SCHUR_LAG_BETA: f64 = 0.5;

/// Sigmoid agents, state-space FIR `(1/2, 1/2)`, lag `kappa = 0.5` with
/// pole at `0.5`.
/// Every block is Schur and every branch has probability at least 0.02.
pub fn schur_loop() -> Result<ClosedLoop> {
    sigmoid_loop(
        lag_controller(SCHUR_KAPPA, PIVSLAG_LAG_ALPHA, SCHUR_LAG_BETA)?,
        Filter::Linear(LinearFilter::from_moving_average(&half_half()?)),
    )
}

/// Smallest modulus allowed for a random eigenvalue.
const MIN_MODULUS: f64 = 0.15;
/// Smallest distance between two random eigenvalues of different blocks.
const MIN_SEPARATION: f64 = 0.08;

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn signed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = uniform(rng, lo, hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect()
}

/// Random Schur matrix of size 1 or 2 with eigenvalue moduli in
/// `[0.15, 0.85]`, conjugated by a well-conditioned change of basis.
fn random_schur<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::from_element(1, 1, signed(rng, MIN_MODULUS, 0.85));
    }
    let core = if rng.random_bool(0.5) {
        let rho = uniform(rng, MIN_MODULUS, 0.85);
        let theta = uniform(rng, 0.4, 2.7);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                rho * theta.cos(),
                -rho * theta.sin(),
                rho * theta.sin(),
                rho * theta.cos(),
            ],
        )
    } else {
        let l1 = signed(rng, MIN_MODULUS, 0.85);
        let l2 = signed(rng, MIN_MODULUS, 0.85);
        DMatrix::from_row_slice(2, 2, &[l1, 0.0, 0.0, l2])
    };
    let t = DMatrix::identity(2, 2) + DMatrix::from_fn(2, 2, |_, _| uniform(rng, -0.3, 0.3));
    let t_inv = t
        .clone()
        .try_inverse()
        .expect("perturbed identity is invertible");
    t * core * t_inv
}

fn well_separated(blocks: &[&DMatrix<f64>]) -> bool {
    let mut all: Vec<Complex64> = Vec::new();
    for b in blocks {
        let Ok(m) = Matrix::from_dmatrix((*b).clone()) else {
            return false;
        };
        let Ok(ev) = eigenvalues(&m) else {
            return false;
        };
        all.extend(ev);
    }
    all.iter().all(|l| l.norm() >= MIN_MODULUS)
        && all
            .iter()
            .enumerate()
            .all(|(i, a)| all[i + 1..].iter().all(|b| (a - b).norm() > MIN_SEPARATION))
}

/// A random loop whose agents, filter and controller are all affine, with
/// a random initial state. Agents carry constant branch probabilities, so
/// the broadcast signal never influences them. Component eigenvalues are
/// kept away from zero and from each other, which keeps the computed
/// spectrum of the augmented matrix well conditioned.
pub fn random_affine_loop<R: Rng>(rng: &mut R) -> Result<(ClosedLoop, LoopState)> {
    loop {
        let n_agents = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..n_agents).map(|_| rng.random_range(1..=2)).collect();
        let agent_mats: Vec<DMatrix<f64>> = dims.iter().map(|&d| random_schur(rng, d)).collect();
        let nf = rng.random_range(1..=2);
        let memory = rng.random_range(0..=2);
        let af = random_schur(rng, nf);
        let nc = rng.random_range(1..=2);
        let ac = random_schur(rng, nc);

        let mut blocks: Vec<&DMatrix<f64>> = agent_mats.iter().collect();
        blocks.push(&af);
        blocks.push(&ac);
        if !well_separated(&blocks) {
            continue;
        }

        let mut agents = Vec::with_capacity(n_agents);
        for (a, &d) in agent_mats.iter().zip(&dims) {
            let branches = rng.random_range(2..=3);
            let offsets: Vec<Vec<f64>> = (0..branches).map(|_| random_vec(rng, d)).collect();
            let weights: Vec<f64> = (0..branches).map(|_| uniform(rng, 0.2, 1.0)).collect();
            let total: f64 = weights.iter().sum();
            let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let floor = p.iter().cloned().fold(f64::INFINITY, f64::min);
            agents.push(AgentModel::AffineIfs(AffineIfsAgent::new(
                Matrix::from_dmatrix(a.clone())?,
                offsets,
                ProbabilityLaw::Constant(p),
                floor,
            )?));
        }

        let filter = LinearFilter::new(
            af,
            DVector::from_vec(random_vec(rng, nf)),
            DMatrix::from_fn(nf, memory, |_, _| uniform(rng, -1.0, 1.0)),
            RowDVector::from_vec(random_vec(rng, nf)),
        )?
        .with_state(&random_vec(rng, nf), &random_vec(rng, memory))?;

        let system = StateSpace::new(
            ac,
            DVector::from_vec(random_vec(rng, nc)),
            RowDVector::from_vec(random_vec(rng, nc)),
            uniform(rng, -1.0, 1.0),
        )?;
        let controller = LinearController::new(system).with_state(&random_vec(rng, nc))?;

        let lp = ClosedLoop::new(
            agents,
            Controller::Linear(controller),
            None,
            Filter::Linear(filter),
            uniform(rng, -2.0, 2.0),
        )?;
        let x0 = random_vec(rng, dims.iter().sum());
        let state = lp.initial_state(x0)?;
        return Ok((lp, state));
    }
}
