//! Controllers mapping the error `e` to the broadcast signal `pi`.
//!
//! All controllers emit `pi(k)` from the state at time `k` before advancing
//! their state, so `pi(k) = C x_c(k) + D e(k)` and
//! `x_c(k+1) = A x_c(k) + B e(k)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::agents::inverse_cdf;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// State-space realisation `(A, B, C, D)` of a single-input single-output
/// linear system. `A` may be 0x0 for a static gain.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>, d: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "controller blocks A {}x{}, B {}x1, C 1x{} are inconsistent",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        let all = a
            .iter()
            .chain(b.iter())
            .chain(c.iter())
            .chain(std::iter::once(&d));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controller blocks".into()));
        }
        Ok(StateSpace { a, b, c, d })
    }

    /// Builds a realisation from `Matrix` blocks, `b` n x 1, `c` 1 x n, `d` 1 x 1.
    pub fn from_blocks(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Self> {
        if b.cols() != 1 || c.rows() != 1 || d.rows() != 1 || d.cols() != 1 {
            return Err(Error::Dimension(
                "controller must be single-input single-output".into(),
            ));
        }
        Self::new(
            a.as_dmatrix().clone(),
            b.as_dmatrix().column(0).into_owned(),
            c.as_dmatrix().row(0).into_owned(),
            d.get(0, 0),
        )
    }

    pub fn static_gain(d: f64) -> Result<Self> {
        Self::new(
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            RowDVector::zeros(0),
            d,
        )
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    fn output(&self, x: &DVector<f64>, e: f64) -> f64 {
        self.c.dot(&x.transpose()) + self.d * e
    }

    fn advance(&self, x: &DVector<f64>, e: f64) -> DVector<f64> {
        &self.a * x + &self.b * e
    }
}

/// Linear time-invariant controller with its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearController {
    system: StateSpace,
    state: DVector<f64>,
}

impl LinearController {
    pub fn new(system: StateSpace) -> Self {
        let n = system.order();
        LinearController {
            system,
            state: DVector::zeros(n),
        }
    }

    pub fn with_state(mut self, state: &[f64]) -> Result<Self> {
        self.set_state(state)?;
        Ok(self)
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.system.order() {
            return Err(Error::Dimension(format!(
                "controller state of length {} for order {}",
                state.len(),
                self.system.order()
            )));
        }
        self.state = DVector::from_column_slice(state);
        Ok(())
    }

    pub fn system(&self) -> &StateSpace {
        &self.system
    }

    pub fn state(&self) -> &[f64] {
        self.state.as_slice()
    }

    /// Emits `pi(k)` and advances the state.
    pub fn step(&mut self, e: f64) -> f64 {
        let pi = self.system.output(&self.state, e);
        self.state = self.system.advance(&self.state, e);
        pi
    }
}

/// Proportional-integral controller `kappa (1 - alpha z^-1) / (1 - z^-1)`,
/// realised as an integrator of `e` with output gain `kappa (1 - alpha)`.
pub fn pi_controller(kappa: f64, alpha: f64) -> Result<LinearController> {
    if kappa == 0.0 {
        return Err(Error::Validation("PI gain kappa must be non-zero".into()));
    }
    lag_realisation(kappa, alpha, 1.0)
}

/// Lag compensator `kappa (1 - alpha z^-1) / (1 - beta z^-1)` with `|beta| < 1`.
pub fn lag_controller(kappa: f64, alpha: f64, beta: f64) -> Result<LinearController> {
    if !(beta.abs() < 1.0) {
        return Err(Error::Validation(format!(
            "lag pole beta={beta} must lie strictly inside the unit circle"
        )));
    }
    lag_realisation(kappa, alpha, beta)
}

fn lag_realisation(kappa: f64, alpha: f64, beta: f64) -> Result<LinearController> {
    let system = StateSpace::new(
        DMatrix::from_element(1, 1, beta),
        DVector::from_element(1, 1.0),
        RowDVector::from_element(1, kappa * (beta - alpha)),
        kappa,
    )?;
    Ok(LinearController::new(system))
}

/// Memoryless controller `pi = g |e|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemorylessGainController {
    gain: f64,
}

impl MemorylessGainController {
    pub fn new(gain: f64) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Validation(format!("gain {gain} must be positive")));
        }
        Ok(MemorylessGainController { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn step(&self, e: f64) -> f64 {
        self.gain * e.abs()
    }
}

type SelectorFn = dyn Fn(&[f64]) -> usize + Send + Sync;

/// State-dependent mode choice `u(x_c)`.
#[derive(Clone)]
pub enum ModeSelector {
    /// Mode 1 when `normal . x >= offset`, mode 0 otherwise.
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
    },
    Custom(Arc<SelectorFn>),
}

impl ModeSelector {
    pub fn select(&self, x: &[f64]) -> usize {
        match self {
            ModeSelector::HalfSpace { normal, offset } => {
                let s: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                usize::from(s >= *offset)
            }
            ModeSelector::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for ModeSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeSelector::HalfSpace { normal, offset } => f
                .debug_struct("HalfSpace")
                .field("normal", normal)
                .field("offset", offset)
                .finish(),
            ModeSelector::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SwitchingRule {
    /// Prescribed mode sequence `sigma(0), sigma(1), ...`.
    External(Vec<usize>),
    /// `sigma(k) = u(x_c(k))`.
    StateDependent(ModeSelector),
    /// `u(x_c)` is preferred, every other mode keeps probability `epsilon`.
    Randomized {
        selector: ModeSelector,
        epsilon: f64,
    },
}

/// Switched linear controller over modes sharing one state dimension.
#[derive(Debug, Clone)]
pub struct SwitchedController {
    modes: Vec<StateSpace>,
    rule: SwitchingRule,
    state: DVector<f64>,
    position: usize,
}

impl SwitchedController {
    pub fn new(modes: Vec<StateSpace>, rule: SwitchingRule) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::Validation("switched controller needs a mode".into()))?;
        let n = first.order();
        if modes.iter().any(|m| m.order() != n) {
            return Err(Error::Dimension(
                "switched modes differ in state dimension".into(),
            ));
        }
        let ns = modes.len();
        match &rule {
            SwitchingRule::External(seq) if seq.iter().any(|&i| i >= ns) => {
                return Err(Error::Validation(
                    "switching sequence names an unknown mode".into(),
                ));
            }
            SwitchingRule::Randomized { epsilon, .. }
                if !(*epsilon > 0.0) || *epsilon * ns as f64 > 1.0 =>
            {
                return Err(Error::Validation(format!(
                    "mode floor {epsilon} must lie in (0, 1/{ns}]"
                )));
            }
            _ => {}
        }
        Ok(SwitchedController {
            modes,
            rule,
            state: DVector::zeros(n),
            position: 0,
        })
    }

    pub fn with_state(mut self, state: &[f64]) -> Result<Self> {
        self.set_state(state)?;
        Ok(self)
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state.len() {
            return Err(Error::Dimension("switched controller state length".into()));
        }
        self.state = DVector::from_column_slice(state);
        Ok(())
    }

    pub fn modes(&self) -> &[StateSpace] {
        &self.modes
    }

    pub fn state(&self) -> &[f64] {
        self.state.as_slice()
    }

    pub fn uses_draw(&self) -> bool {
        matches!(self.rule, SwitchingRule::Randomized { .. })
    }

    /// Mode probabilities under the randomized rule at the current state.
    pub fn mode_probabilities(&self) -> Option<Vec<f64>> {
        match &self.rule {
            SwitchingRule::Randomized { selector, epsilon } => {
                let ns = self.modes.len();
                let preferred = selector.select(self.state.as_slice()).min(ns - 1);
                let mut p = vec![*epsilon; ns];
                p[preferred] = 1.0 - epsilon * (ns - 1) as f64;
                Some(p)
            }
            _ => None,
        }
    }

    fn select_mode(&mut self, draw: f64) -> Result<usize> {
        let ns = self.modes.len();
        let mode = match &self.rule {
            SwitchingRule::External(seq) => {
                let m = *seq
                    .get(self.position)
                    .ok_or(Error::InputExhausted(self.position))?;
                self.position += 1;
                m
            }
            SwitchingRule::StateDependent(selector) => selector.select(self.state.as_slice()),
            SwitchingRule::Randomized { .. } => {
                let p = self.mode_probabilities().expect("randomized rule");
                inverse_cdf(&p, draw)
            }
        };
        if mode >= ns {
            return Err(Error::Validation(format!(
                "selector chose mode {mode} of {ns}"
            )));
        }
        Ok(mode)
    }

    /// Selects a mode, emits `pi(k)` and advances. `draw` is read only by the
    /// randomized rule.
    pub fn step(&mut self, e: f64, draw: f64) -> Result<(f64, usize)> {
        let mode = self.select_mode(draw)?;
        let sys = &self.modes[mode];
        let pi = sys.output(&self.state, e);
        self.state = sys.advance(&self.state, e);
        Ok((pi, mode))
    }
}

/// Output map `C_p` applied after the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbabilityMap {
    Identity,
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `alpha |raw| + beta`, clamped into `[epsilon, 1 - epsilon]`.
    AffineClamp {
        alpha: f64,
        beta: f64,
        epsilon: f64,
    },
}

impl ProbabilityMap {
    pub fn apply(&self, raw: f64) -> f64 {
        match *self {
            ProbabilityMap::Identity => raw,
            ProbabilityMap::Clamp { lo, hi } => raw.max(lo).min(hi),
            ProbabilityMap::AffineClamp {
                alpha,
                beta,
                epsilon,
            } => (alpha * raw.abs() + beta).max(epsilon).min(1.0 - epsilon),
        }
    }

    /// Interval that contains every output, if bounded.
    pub fn range(&self) -> Option<(f64, f64)> {
        match *self {
            ProbabilityMap::Identity => None,
            ProbabilityMap::Clamp { lo, hi } => Some((lo, hi)),
            ProbabilityMap::AffineClamp { epsilon, .. } => Some((epsilon, 1.0 - epsilon)),
        }
    }
}

/// Any controller the loop can host.
#[derive(Debug, Clone)]
pub enum Controller {
    Linear(LinearController),
    Gain(MemorylessGainController),
    Switched(SwitchedController),
}

impl Controller {
    pub fn state(&self) -> &[f64] {
        match self {
            Controller::Linear(c) => c.state(),
            Controller::Gain(_) => &[],
            Controller::Switched(c) => c.state(),
        }
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        match self {
            Controller::Linear(c) => c.set_state(state),
            Controller::Switched(c) => c.set_state(state),
            Controller::Gain(_) if state.is_empty() => Ok(()),
            Controller::Gain(_) => Err(Error::Dimension(
                "memoryless controller has no state".into(),
            )),
        }
    }

    pub fn uses_draw(&self) -> bool {
        matches!(self, Controller::Switched(c) if c.uses_draw())
    }

    /// True when the controller carries no state between steps.
    pub fn is_memoryless(&self) -> bool {
        self.state().is_empty()
    }

    pub fn step(&mut self, e: f64, draw: f64) -> Result<f64> {
        match self {
            Controller::Linear(c) => Ok(c.step(e)),
            Controller::Gain(c) => Ok(c.step(e)),
            Controller::Switched(c) => c.step(e, draw).map(|(pi, _)| pi),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::spectral::{is_schur, spectral_radius};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_matrix(v: f64) -> Matrix {
        Matrix::scalar(v).unwrap()
    }

    /// Direct recursion pi(k) = pi(k-1) + kappa (e(k) - alpha e(k-1)),
    /// seeded with pi(-1) = c x_c(0) and e(-1) = 0.
    fn pid_recursion(kappa: f64, alpha: f64, pi_prev: f64, inputs: &[f64]) -> Vec<f64> {
        let mut pi = pi_prev;
        let mut e_prev = 0.0;
        inputs
            .iter()
            .map(|&e| {
                pi += kappa * (e - alpha * e_prev);
                e_prev = e;
                pi
            })
            .collect()
    }

    #[test]
    fn proportional_only() {
        let mut c = LinearController::new(
            StateSpace::from_blocks(
                &scalar_matrix(0.0),
                &scalar_matrix(0.0),
                &scalar_matrix(0.0),
                &scalar_matrix(0.3),
            )
            .unwrap(),
        );
        for e in [1.0, -2.0, 0.5] {
            assert_eq!(c.step(e), 0.3 * e);
        }
        let mut g = LinearController::new(StateSpace::static_gain(0.3).unwrap());
        assert_eq!(g.step(2.0), 0.6);
        assert!(g.state().is_empty());
    }

    #[test]
    fn pi_unit_step() {
        let mut c = pi_controller(0.1, -4.0).unwrap();
        let out: Vec<f64> = (0..3).map(|_| c.step(1.0)).collect();
        for (got, want) in out.iter().zip([0.1, 0.6, 1.1]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_realisation_blocks() {
        let c = pi_controller(0.1, -4.0).unwrap();
        assert!((c.system().c[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.system().d, 0.1);
        assert_eq!(c.system().a[(0, 0)], 1.0);
        let a = Matrix::from_dmatrix(c.system().a.clone()).unwrap();
        assert!(!is_schur(&a, 1e-6).unwrap());
        assert_eq!(spectral_radius(&a).unwrap(), 1.0);

        let cancelled = pi_controller(0.2, 1.0).unwrap();
        assert_eq!(cancelled.system().c[0], 0.0);
        assert!(pi_controller(0.0, 1.0).is_err());
    }

    #[test]
    fn pi_impulse_matches_recursion() {
        for (kappa, alpha) in [(0.1, -4.0), (0.7, 0.3), (-1.5, 2.0)] {
            let mut c = pi_controller(kappa, alpha).unwrap();
            let mut impulse = vec![0.0; 50];
            impulse[0] = 1.0;
            let got: Vec<f64> = impulse.iter().map(|&e| c.step(e)).collect();
            let want = pid_recursion(kappa, alpha, 0.0, &impulse);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lag_realisation_blocks() {
        let c = lag_controller(0.1, -4.01, 0.99).unwrap();
        assert!((c.system().c[0] - 0.5).abs() < 1e-12);
        assert_eq!(c.system().d, 0.1);
        let a = Matrix::from_dmatrix(c.system().a.clone()).unwrap();
        assert!(is_schur(&a, 1e-6).unwrap());
        assert!((spectral_radius(&a).unwrap() - 0.99).abs() < 1e-15);
        assert!(lag_controller(0.1, -4.0, 1.0).is_err());
        assert!(lag_controller(0.1, -4.0, -1.2).is_err());
    }

    #[test]
    fn lag_with_zero_pole_is_fir() {
        let (kappa, alpha) = (0.4, 0.25);
        let mut c = lag_controller(kappa, alpha, 0.0).unwrap();
        let inputs = [1.0, -2.0, 0.5, 3.0, 0.0];
        let mut prev = 0.0;
        for &e in &inputs {
            let want = kappa * e - kappa * alpha * prev;
            assert!((c.step(e) - want).abs() < 1e-12);
            prev = e;
        }
    }

    #[test]
    fn lag_step_response_reaches_dc_gain() {
        let (kappa, alpha, beta) = (0.1, -4.01, 0.99);
        let mut c = lag_controller(kappa, alpha, beta).unwrap();
        let mut pi = 0.0;
        for _ in 0..10_000 {
            pi = c.step(1.0);
        }
        // geometric series: kappa + kappa (beta - alpha) sum_k beta^k
        let dc = kappa * (1.0 - alpha) / (1.0 - beta);
        assert!((dc - 50.1).abs() < 1e-9);
        assert!((pi - dc).abs() < 1e-6);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(MemorylessGainController::new(0.5).unwrap().step(1.0), 0.5);
        assert_eq!(MemorylessGainController::new(0.01).unwrap().step(0.0), 0.0);
        assert_eq!(
            MemorylessGainController::new(0.01).unwrap().step(-50.0),
            0.5
        );
        assert!(MemorylessGainController::new(0.0).is_err());
    }

    fn mode(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::from_blocks(
            &scalar_matrix(a),
            &scalar_matrix(b),
            &scalar_matrix(c),
            &scalar_matrix(d),
        )
        .unwrap()
    }

    #[test]
    fn single_mode_switch_is_linear() {
        let sys = mode(0.8, 1.0, 0.3, 0.1);
        let mut lin = LinearController::new(sys.clone())
            .with_state(&[2.0])
            .unwrap();
        let selector = ModeSelector::HalfSpace {
            normal: vec![1.0],
            offset: 0.0,
        };
        let rules = [
            SwitchingRule::External(vec![0; 100]),
            SwitchingRule::Randomized {
                selector: ModeSelector::Custom(Arc::new(|_| 0)),
                epsilon: 1.0,
            },
        ];
        for rule in rules {
            let mut sw = SwitchedController::new(vec![sys.clone()], rule)
                .unwrap()
                .with_state(&[2.0])
                .unwrap();
            let mut l = lin.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                let e: f64 = rng.random_range(-1.0..1.0);
                assert_eq!(sw.step(e, rng.random()).unwrap().0, l.step(e));
            }
        }
        // two identical modes under the randomized rule
        let mut sw = SwitchedController::new(
            vec![sys.clone(), sys.clone()],
            SwitchingRule::Randomized {
                selector,
                epsilon: 0.05,
            },
        )
        .unwrap()
        .with_state(&[2.0])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let e: f64 = rng.random_range(-1.0..1.0);
            assert_eq!(sw.step(e, rng.random()).unwrap().0, lin.step(e));
        }
    }

    #[test]
    fn half_space_rule_tracks_sign_of_state() {
        let mut sw = SwitchedController::new(
            vec![mode(0.5, 1.0, 1.0, 0.0), mode(0.5, 1.0, 1.0, 0.0)],
            SwitchingRule::StateDependent(ModeSelector::HalfSpace {
                normal: vec![1.0],
                offset: 0.0,
            }),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = sw.state()[0];
            let (_, m) = sw.step(rng.random_range(-1.0..1.0), 0.0).unwrap();
            assert_eq!(m, usize::from(x >= 0.0));
        }
    }

    #[test]
    fn external_sequence_exhausts() {
        let mut sw = SwitchedController::new(
            vec![mode(0.5, 1.0, 1.0, 0.0)],
            SwitchingRule::External(vec![0, 0]),
        )
        .unwrap();
        assert!(sw.step(1.0, 0.0).is_ok());
        assert!(sw.step(1.0, 0.0).is_ok());
        assert_eq!(sw.step(1.0, 0.0), Err(Error::InputExhausted(2)));
        assert!(SwitchedController::new(
            vec![mode(0.5, 1.0, 1.0, 0.0)],
            SwitchingRule::External(vec![1])
        )
        .is_err());
    }

    #[test]
    fn randomized_rule_respects_floor() {
        let eps = 0.05;
        let mut sw = SwitchedController::new(
            vec![
                mode(0.0, 0.0, 0.0, 1.0),
                mode(0.0, 0.0, 0.0, 1.0),
                mode(0.0, 0.0, 0.0, 1.0),
            ],
            SwitchingRule::Randomized {
                selector: ModeSelector::Custom(Arc::new(|_| 0)),
                epsilon: eps,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            counts[sw.step(0.0, rng.random()).unwrap().1] += 1;
        }
        for c in counts {
            assert!(c as f64 / n as f64 >= eps / 2.0);
        }
        assert!(SwitchedController::new(
            vec![mode(0.0, 0.0, 0.0, 1.0)],
            SwitchingRule::Randomized {
                selector: ModeSelector::Custom(Arc::new(|_| 0)),
                epsilon: 0.0
            }
        )
        .is_err());
    }

    #[test]
    fn probability_map_examples() {
        let clamp = ProbabilityMap::Clamp { lo: 0.0, hi: 1.0 };
        assert_eq!(clamp.apply(1.7), 1.0);
        assert_eq!(clamp.apply(-0.2), 0.0);
        let affine = ProbabilityMap::AffineClamp {
            alpha: 0.01,
            beta: 0.01,
            epsilon: 0.01,
        };
        assert!((affine.apply(50.0) - 0.51).abs() < 1e-15);
        assert!((affine.apply(-500.0) - 0.99).abs() < 1e-15);
        assert_eq!(ProbabilityMap::Identity.apply(-3.0), -3.0);
    }

    proptest! {
        #[test]
        fn clamp_stays_in_range(raw in -1e6f64..1e6, lo in -1.0f64..0.5, width in 0.0f64..2.0) {
            let hi = lo + width;
            let out = ProbabilityMap::Clamp { lo, hi }.apply(raw);
            prop_assert!(out >= lo && out <= hi);
            let eps = 0.02;
            let out = ProbabilityMap::AffineClamp { alpha: 0.3, beta: 0.1, epsilon: eps }.apply(raw);
            prop_assert!(out >= eps && out <= 1.0 - eps);
        }

        #[test]
        fn pi_realisation_matches_recursion(
            kappa in -2.0f64..2.0,
            alpha in -5.0f64..5.0,
            x0 in -50.0f64..50.0,
            inputs in prop::collection::vec(-3.0f64..3.0, 1..60),
        ) {
            prop_assume!(kappa.abs() > 1e-3);
            let mut c = pi_controller(kappa, alpha).unwrap().with_state(&[x0]).unwrap();
            let pi_prev = c.system().c[0] * x0;
            let want = pid_recursion(kappa, alpha, pi_prev, &inputs);
            for (e, w) in inputs.iter().zip(want) {
                let got = c.step(*e);
                prop_assert!((got - w).abs() <= 1e-12 * (1.0 + w.abs()));
            }
        }
    }
}
