//! Assembly and stepping of the feedback loop, plus its augmented affine
//! form `xi(k+1) = A xi(k) + b_l` for fully linear/affine loops.
//!
//! Within step `k` signals are evaluated in a fixed order:
//! 1. `y(k) = sum_i x_i(k)`
//! 2. `yhat(k) = F(y(k))`
//! 3. `e(k) = r - yhat(k)`
//! 4. `pi(k) = C_p(C(e(k)))`
//! 5. every agent draws `x_i(k+1)` at `pi(k)`, in ascending index order.
//!
//! Randomness comes from one ChaCha stream per realisation. A randomized
//! switching rule reads one draw before the agents; each agent then reads
//! exactly one.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{aggregate, AgentModel};
use crate::control::{Controller, ProbabilityMap};
use crate::error::{Error, Result};
use crate::filters::{shift_input, shift_matrix, Filter};
use crate::numerics::{eigenvalues, ComplexScalar as Complex64, Matrix};

/// Upper bound on the number of joint branch offsets.
pub const OFFSET_BUDGET: u128 = 1_000_000;

/// Random stream for one realisation.
pub fn stream(master_seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signals {
    pub y: f64,
    pub yhat: f64,
    pub e: f64,
    pub pi: f64,
}

/// Mutable part of a realisation: agent states, controller and filter.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub k: usize,
    /// Agent states, concatenated in agent order.
    pub x: Vec<f64>,
    pub controller: Controller,
    pub filter: Filter,
}

impl LoopState {
    pub fn controller_state(&self) -> &[f64] {
        self.controller.state()
    }
}

/// Read-only view of one time index handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub k: usize,
    pub x: &'a [f64],
    pub signals: Signals,
    pub xc: &'a [f64],
    /// Branch taken by each agent from `k` to `k + 1`; absent at the horizon.
    pub branches: Option<&'a [usize]>,
}

/// Receives every time index of a run.
pub trait StepObserver {
    fn observe(&mut self, view: &StepView<'_>);

    /// Called once the loop has reached a fixed point: the same view repeats
    /// for `times` further indices.
    fn observe_repeated(&mut self, view: &StepView<'_>, times: usize) {
        for i in 1..=times {
            let v = StepView {
                k: view.k + i,
                ..*view
            };
            self.observe(&v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub signals: Signals,
    pub xc: Vec<f64>,
    pub branches: Option<Vec<usize>>,
}

/// Time-indexed record of a single realisation, `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub agent_dims: Vec<usize>,
}

impl StepObserver for Trace {
    fn observe(&mut self, view: &StepView<'_>) {
        self.records.push(TraceRecord {
            k: view.k,
            x: view.x.to_vec(),
            signals: view.signals,
            xc: view.xc.to_vec(),
            branches: view.branches.map(<[usize]>::to_vec),
        });
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["k".to_string()];
        for (i, &d) in self.agent_dims.iter().enumerate() {
            if d == 1 {
                cols.push(format!("x_{}", i + 1));
            } else {
                cols.extend((1..=d).map(|j| format!("x_{}_{j}", i + 1)));
            }
        }
        cols.extend(["y", "yhat", "e", "pi"].map(String::from));
        let nc = self.records.first().map_or(0, |r| r.xc.len());
        cols.extend((1..=nc).map(|j| format!("xc_{j}")));
        cols.join(",")
    }

    /// CSV body with a header row; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.k);
            let s = r.signals;
            let sig = [s.y, s.yhat, s.e, s.pi];
            let values = r.x.iter().chain(&sig).chain(&r.xc);
            for v in values {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// The assembled loop `(agents, C, C_p, F, r)`. Immutable; realisations
/// clone the controller and filter into their own [`LoopState`].
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    agents: Vec<AgentModel>,
    controller: Controller,
    map: ProbabilityMap,
    filter: Filter,
    reference: f64,
    spans: Vec<Range<usize>>,
}

impl ClosedLoop {
    pub fn new(
        agents: Vec<AgentModel>,
        controller: Controller,
        map: Option<ProbabilityMap>,
        filter: Filter,
        reference: f64,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Validation("a loop needs at least one agent".into()));
        }
        if !reference.is_finite() {
            return Err(Error::NonFinite("reference".into()));
        }
        let mut spans = Vec::with_capacity(agents.len());
        let mut start = 0;
        for a in &agents {
            spans.push(start..start + a.dim());
            start += a.dim();
        }
        let lp = ClosedLoop {
            agents,
            controller,
            map: map.unwrap_or(ProbabilityMap::Identity),
            filter,
            reference,
            spans,
        };
        lp.check_signal_range()?;
        Ok(lp)
    }

    /// Binary-flip agents need `pi` in `[0, 1]`: either the output map
    /// guarantees it or a memoryless gain is bounded over the reachable
    /// error set.
    fn check_signal_range(&self) -> Result<()> {
        if !self
            .agents
            .iter()
            .any(|a| matches!(a, AgentModel::BinaryFlip))
        {
            return Ok(());
        }
        if let Some((lo, hi)) = self.map.range() {
            if lo >= 0.0 && hi <= 1.0 {
                return Ok(());
            }
        }
        if let (Controller::Gain(g), ProbabilityMap::Identity) = (&self.controller, &self.map) {
            if let Some(bound) = self.error_bound() {
                if g.gain() * bound <= 1.0 {
                    return Ok(());
                }
            }
        }
        Err(Error::Validation(
            "binary agents need a controller output provably within [0, 1]".into(),
        ))
    }

    /// Bound on `|e|` from interval arithmetic over agent alphabets and a
    /// moving-average filter.
    fn error_bound(&self) -> Option<f64> {
        let (mut lo, mut hi) = (0.0, 0.0);
        for a in &self.agents {
            let alphabet = a.alphabet()?;
            lo += alphabet.first()?;
            hi += alphabet.last()?;
        }
        let Filter::MovingAverage(f) = &self.filter else {
            return None;
        };
        if f.buffer().any(|v| v < lo || v > hi) {
            return None;
        }
        let (mut ylo, mut yhi) = (0.0, 0.0);
        for &c in f.coefficients() {
            let (a, b) = (c * lo, c * hi);
            ylo += a.min(b);
            yhi += a.max(b);
        }
        Some(
            (self.reference - ylo)
                .abs()
                .max((self.reference - yhi).abs()),
        )
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn probability_map(&self) -> &ProbabilityMap {
        &self.map
    }

    pub fn filter(&self) -> &Filter {
        &self.filter
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn state_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn agent_dims(&self) -> Vec<usize> {
        self.agents.iter().map(AgentModel::dim).collect()
    }

    pub fn agent_span(&self, i: usize) -> Range<usize> {
        self.spans[i].clone()
    }

    pub fn with_controller(&self, controller: Controller) -> Result<Self> {
        ClosedLoop::new(
            self.agents.clone(),
            controller,
            Some(self.map),
            self.filter.clone(),
            self.reference,
        )
    }

    /// State at `k = 0` with the template controller and filter states.
    pub fn initial_state(&self, x0: Vec<f64>) -> Result<LoopState> {
        if x0.len() != self.state_len() {
            return Err(Error::Dimension(format!(
                "initial state of length {} for {} agent coordinates",
                x0.len(),
                self.state_len()
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial agent state".into()));
        }
        for (a, span) in self.agents.iter().zip(&self.spans) {
            if let (AgentModel::BinaryFlip, v) = (a, x0[span.start]) {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Validation(format!("binary agent started at {v}")));
                }
            }
        }
        Ok(LoopState {
            k: 0,
            x: x0,
            controller: self.controller.clone(),
            filter: self.filter.clone(),
        })
    }

    /// Initial state with an explicit controller state.
    pub fn initial_state_with_controller(&self, x0: Vec<f64>, xc0: &[f64]) -> Result<LoopState> {
        let mut s = self.initial_state(x0)?;
        s.controller.set_state(xc0)?;
        Ok(s)
    }

    /// Stages 1-4 of a step: advances filter and controller, returns the
    /// signals of time `s.k`.
    fn evaluate_signals<R: Rng>(&self, s: &mut LoopState, rng: &mut R) -> Result<Signals> {
        let y = aggregate(&s.x);
        let yhat = s.filter.step(y);
        let e = self.reference - yhat;
        let draw = if s.controller.uses_draw() {
            rng.random::<f64>()
        } else {
            0.0
        };
        let pi = self.map.apply(s.controller.step(e, draw)?);
        if !pi.is_finite() {
            return Err(Error::NonFinite(format!("broadcast signal at k={}", s.k)));
        }
        Ok(Signals { y, yhat, e, pi })
    }

    /// Stage 5: moves every agent. Returns whether each agent was certain to
    /// stay where it was.
    fn move_agents<R: Rng>(
        &self,
        s: &mut LoopState,
        pi: f64,
        rng: &mut R,
        next: &mut Vec<f64>,
        branches: &mut [usize],
    ) -> Result<bool> {
        next.clear();
        next.extend_from_slice(&s.x);
        let mut stationary = true;
        for (i, (agent, span)) in self.agents.iter().zip(&self.spans).enumerate() {
            let draw: f64 = rng.random();
            let x = &s.x[span.clone()];
            stationary &= agent.is_stationary_at(x, pi);
            branches[i] =
                agent
                    .step(x, &mut next[span.clone()], pi, draw)
                    .map_err(|err| match err {
                        Error::SignalRange { pi, .. } => Error::SignalRange { k: Some(s.k), pi },
                        other => other,
                    })?;
        }
        std::mem::swap(&mut s.x, next);
        s.k += 1;
        Ok(stationary)
    }

    /// One full step from `k` to `k + 1`. Returns the signals of time `k`
    /// and the branch index of every agent.
    pub fn step<R: Rng>(&self, s: &mut LoopState, rng: &mut R) -> Result<(Signals, Vec<usize>)> {
        let signals = self.evaluate_signals(s, rng)?;
        let mut branches = vec![0; self.agents.len()];
        let mut next = Vec::with_capacity(s.x.len());
        self.move_agents(s, signals.pi, rng, &mut next, &mut branches)?;
        Ok((signals, branches))
    }

    /// Runs `k = s.k ..= s.k + horizon`, reporting every index to `observer`.
    ///
    /// When a step leaves agents, filter and controller exactly where they
    /// were without consulting randomness, the rest of the run is constant
    /// and is reported in bulk through
    /// [`StepObserver::observe_repeated`].
    pub fn run<R: Rng, O: StepObserver>(
        &self,
        mut s: LoopState,
        horizon: usize,
        rng: &mut R,
        observer: &mut O,
    ) -> Result<LoopState> {
        let end = s.k + horizon;
        let mut next = Vec::with_capacity(s.x.len());
        let mut branches = vec![0; self.agents.len()];
        let mut x_now = Vec::with_capacity(s.x.len());
        while s.k <= end {
            let k = s.k;
            let xc_now = s.controller.state().to_vec();
            let filter_before = (!s.controller.uses_draw()).then(|| s.filter.clone());
            let signals = self.evaluate_signals(&mut s, rng)?;
            if k == end {
                observer.observe(&StepView {
                    k,
                    x: &s.x,
                    signals,
                    xc: &xc_now,
                    branches: None,
                });
                break;
            }
            x_now.clear();
            x_now.extend_from_slice(&s.x);
            let stationary = self.move_agents(&mut s, signals.pi, rng, &mut next, &mut branches)?;
            let view = StepView {
                k,
                x: &x_now,
                signals,
                xc: &xc_now,
                branches: Some(&branches),
            };
            observer.observe(&view);
            let frozen = stationary
                && filter_before.as_ref() == Some(&s.filter)
                && s.controller.state() == xc_now.as_slice();
            if frozen {
                let remaining = end - s.k;
                let mut repeat = view;
                if remaining > 0 {
                    observer.observe_repeated(&repeat, remaining);
                }
                repeat.k = end;
                repeat.branches = None;
                observer.observe(&repeat);
                s.k = end;
                break;
            }
        }
        Ok(s)
    }

    /// Trace of `horizon + 1` records, a pure function of the inputs.
    pub fn simulate(&self, initial: &LoopState, horizon: usize, seed: u64) -> Result<Trace> {
        let mut rng = stream(seed, 0);
        let mut trace = Trace {
            seed,
            records: Vec::with_capacity(horizon + 1),
            agent_dims: self.agent_dims(),
        };
        self.run(initial.clone(), horizon, &mut rng, &mut trace)?;
        Ok(trace)
    }
}

/// Index ranges of the blocks of the augmented state
/// `xi = [x, y, ytilde, z_f, yhat, e, z_c, q]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedLayout {
    pub x: Range<usize>,
    pub y: usize,
    pub ytilde: Range<usize>,
    pub zf: Range<usize>,
    pub yhat: usize,
    pub e: usize,
    pub zc: Range<usize>,
    pub q: usize,
    pub dim: usize,
}

impl AugmentedLayout {
    fn new(nx: usize, memory: usize, nf: usize, nc: usize) -> Self {
        let x = 0..nx;
        let y = nx;
        let ytilde = y + 1..y + 1 + memory;
        let zf = ytilde.end..ytilde.end + nf;
        let yhat = zf.end;
        let e = yhat + 1;
        let zc = e + 1..e + 1 + nc;
        let q = zc.end;
        AugmentedLayout {
            x,
            y,
            ytilde,
            zf,
            yhat,
            e,
            zc,
            q,
            dim: q + 1,
        }
    }
}

struct LinearParts<'a> {
    agents: Vec<&'a crate::agents::AffineIfsAgent>,
    filter: &'a crate::filters::LinearFilter,
    controller: &'a crate::control::StateSpace,
}

impl ClosedLoop {
    fn linear_parts(&self) -> Result<LinearParts<'_>> {
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                AgentModel::AffineIfs(a) => Ok(a),
                _ => Err(Error::Unsupported(format!(
                    "agent {} is not an affine IFS agent",
                    i + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let Filter::Linear(filter) = &self.filter else {
            return Err(Error::Unsupported(
                "filter is not in state-space form".into(),
            ));
        };
        let Controller::Linear(controller) = &self.controller else {
            return Err(Error::Unsupported(
                "controller is not linear time-invariant".into(),
            ));
        };
        if self.map != ProbabilityMap::Identity {
            return Err(Error::Unsupported(
                "nonlinear output map after the controller".into(),
            ));
        }
        Ok(LinearParts {
            agents,
            filter,
            controller: controller.system(),
        })
    }

    pub fn augmented_layout(&self) -> Result<AugmentedLayout> {
        let p = self.linear_parts()?;
        Ok(AugmentedLayout::new(
            self.state_len(),
            p.filter.memory(),
            p.filter.order(),
            p.controller.order(),
        ))
    }

    /// The matrix `A` of `xi(k+1) = A xi(k) + b_l`.
    pub fn augmented_matrix(&self) -> Result<Matrix> {
        let p = self.linear_parts()?;
        let lay = self.augmented_layout()?;
        let (bf, cf, af, df) = (p.filter.b(), p.filter.c(), p.filter.a(), p.filter.d());
        let (ac, bc, cc, dc) = (
            &p.controller.a,
            &p.controller.b,
            &p.controller.c,
            p.controller.d,
        );
        let nx = lay.x.len();
        let mut m = DMatrix::<f64>::zeros(lay.dim, lay.dim);

        let mut a_hat = DMatrix::<f64>::zeros(nx, nx);
        for (agent, span) in p.agents.iter().zip(&self.spans) {
            a_hat
                .view_mut((span.start, span.start), (span.len(), span.len()))
                .copy_from(agent.matrix().as_dmatrix());
        }
        let ones_a_hat = DMatrix::from_element(1, nx, 1.0) * &a_hat;
        m.view_mut((0, 0), (nx, nx)).copy_from(&a_hat);
        m.view_mut((lay.y, 0), (1, nx)).copy_from(&ones_a_hat);

        let mem = lay.ytilde.len();
        m.view_mut((lay.ytilde.start, lay.y), (mem, 1))
            .copy_from(&shift_input(mem));
        m.view_mut((lay.ytilde.start, lay.ytilde.start), (mem, mem))
            .copy_from(&shift_matrix(mem));

        let nf = lay.zf.len();
        m.view_mut((lay.zf.start, lay.y), (nf, 1)).copy_from(bf);
        m.view_mut((lay.zf.start, lay.ytilde.start), (nf, mem))
            .copy_from(cf);
        m.view_mut((lay.zf.start, lay.zf.start), (nf, nf))
            .copy_from(af);

        // yhat(k+1) = D^f z_f(k+1); e(k+1) = r - yhat(k+1)
        let df_bf = df * bf;
        let df_cf = df * cf;
        let df_af = df * af;
        for (row, sign) in [(lay.yhat, 1.0), (lay.e, -1.0)] {
            m[(row, lay.y)] = sign * df_bf[(0, 0)];
            m.view_mut((row, lay.ytilde.start), (1, mem))
                .copy_from(&(&df_cf * sign));
            m.view_mut((row, lay.zf.start), (1, nf))
                .copy_from(&(&df_af * sign));
        }

        let nc = lay.zc.len();
        m.view_mut((lay.zc.start, lay.e), (nc, 1)).copy_from(bc);
        m.view_mut((lay.zc.start, lay.zc.start), (nc, nc))
            .copy_from(ac);

        // q(k+1) = C^c z_c(k+1) + D^c e(k+1)
        m[(lay.q, lay.y)] = -dc * df_bf[(0, 0)];
        m.view_mut((lay.q, lay.ytilde.start), (1, mem))
            .copy_from(&(&df_cf * -dc));
        m.view_mut((lay.q, lay.zf.start), (1, nf))
            .copy_from(&(&df_af * -dc));
        m[(lay.q, lay.e)] = (cc * bc)[(0, 0)];
        m.view_mut((lay.q, lay.zc.start), (1, nc))
            .copy_from(&(cc * ac));

        Matrix::from_dmatrix(m)
    }

    /// Offset `b_l` for the joint branch choice `branches`.
    pub fn offset_for(&self, branches: &[usize]) -> Result<DVector<f64>> {
        let p = self.linear_parts()?;
        let lay = self.augmented_layout()?;
        if branches.len() != p.agents.len() {
            return Err(Error::Dimension("one branch index per agent".into()));
        }
        let mut b = DVector::zeros(lay.dim);
        for ((agent, span), &j) in p.agents.iter().zip(&self.spans).zip(branches) {
            let off = agent.offsets().get(j).ok_or_else(|| {
                Error::Lookup(format!(
                    "branch {j} of agent with {} offsets",
                    agent.offsets().len()
                ))
            })?;
            b.rows_mut(span.start, span.len()).copy_from(off);
        }
        b[lay.y] = b.rows(0, lay.x.len()).sum();
        b[lay.e] = self.reference;
        b[lay.q] = p.controller.d * self.reference;
        Ok(b)
    }

    /// Every offset `b_l`, joint branches in lexicographic order with the
    /// first agent most significant.
    pub fn offset_vectors(&self) -> Result<Vec<DVector<f64>>> {
        let p = self.linear_parts()?;
        let counts: Vec<usize> = p.agents.iter().map(|a| a.offsets().len()).collect();
        let total = counts
            .iter()
            .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
            .unwrap_or(u128::MAX);
        if total > OFFSET_BUDGET {
            return Err(Error::Budget {
                needed: total,
                budget: OFFSET_BUDGET,
            });
        }
        let mut out = Vec::with_capacity(total as usize);
        let mut idx = vec![0usize; counts.len()];
        loop {
            out.push(self.offset_for(&idx)?);
            let mut pos = counts.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < counts[pos] {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// Union of the component spectra: agent matrices, the delay-line shift,
    /// filter and controller state matrices, and one zero for each of the
    /// scalar rows `y`, `yhat`, `e`, `q`.
    pub fn component_spectrum(&self) -> Result<Vec<Complex64>> {
        let p = self.linear_parts()?;
        let mut out = Vec::new();
        for a in &p.agents {
            out.extend(eigenvalues(a.matrix())?);
        }
        let zero = Complex64::new(0.0, 0.0);
        out.extend(std::iter::repeat_n(zero, p.filter.memory() + 4));
        if p.filter.order() > 0 {
            out.extend(eigenvalues(&Matrix::from_dmatrix(p.filter.a().clone())?)?);
        }
        if p.controller.order() > 0 {
            out.extend(eigenvalues(&Matrix::from_dmatrix(p.controller.a.clone())?)?);
        }
        Ok(out)
    }

    /// `xi(k)` for a loop state at the start of step `k`.
    pub fn augmented_state(&self, s: &LoopState) -> Result<DVector<f64>> {
        let p = self.linear_parts()?;
        let lay = self.augmented_layout()?;
        let Filter::Linear(f) = &s.filter else {
            return Err(Error::Unsupported(
                "filter is not in state-space form".into(),
            ));
        };
        let Controller::Linear(c) = &s.controller else {
            return Err(Error::Unsupported(
                "controller is not linear time-invariant".into(),
            ));
        };
        let mut xi = DVector::zeros(lay.dim);
        xi.rows_mut(0, lay.x.len()).copy_from_slice(&s.x);
        xi[lay.y] = aggregate(&s.x);
        xi.rows_mut(lay.ytilde.start, lay.ytilde.len())
            .copy_from_slice(f.delay_line());
        xi.rows_mut(lay.zf.start, lay.zf.len())
            .copy_from_slice(f.state());
        let yhat = f.output();
        let e = self.reference - yhat;
        xi[lay.yhat] = yhat;
        xi[lay.e] = e;
        xi.rows_mut(lay.zc.start, lay.zc.len())
            .copy_from_slice(c.state());
        let zc = DVector::from_column_slice(c.state());
        xi[lay.q] = p.controller.c.dot(&zc.transpose()) + p.controller.d * e;
        Ok(xi)
    }
}
