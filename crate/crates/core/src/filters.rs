//! Filters `y -> yhat` between the aggregate and the controller.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::numerics::rational::{self, Rational};

/// Largest number of partial sums an exact output enumeration may build.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

/// Finite-memory moving average `yhat(k) = sum_j c_j y(k - j)`, `j = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverageFilter {
    coefficients: Vec<f64>,
    /// `y(k-1), ..., y(k-M)`, most recent first.
    buffer: VecDeque<f64>,
}

impl MovingAverageFilter {
    /// New filter with a zero-initialised buffer.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        Self::with_warm_start(coefficients, 0.0)
    }

    /// New filter whose buffer starts filled with `value`.
    pub fn with_warm_start(coefficients: Vec<f64>, value: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Validation(
                "moving average needs a coefficient".into(),
            ));
        }
        if coefficients
            .iter()
            .chain(std::iter::once(&value))
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("moving average".into()));
        }
        let memory = coefficients.len() - 1;
        Ok(MovingAverageFilter {
            coefficients,
            buffer: std::iter::repeat_n(value, memory).collect(),
        })
    }

    /// `F = 1`.
    pub fn identity() -> Self {
        MovingAverageFilter {
            coefficients: vec![1.0],
            buffer: VecDeque::new(),
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn memory(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffer(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    pub fn set_buffer(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.buffer.len() {
            return Err(Error::Dimension(format!(
                "buffer of length {} for memory {}",
                values.len(),
                self.buffer.len()
            )));
        }
        self.buffer = values.iter().copied().collect();
        Ok(())
    }

    /// Output for input `y` without touching the buffer.
    pub fn peek(&self, y: f64) -> f64 {
        let past: f64 = self.coefficients[1..]
            .iter()
            .zip(&self.buffer)
            .map(|(c, v)| c * v)
            .sum();
        self.coefficients[0] * y + past
    }

    pub fn step(&mut self, y: f64) -> f64 {
        let out = self.peek(y);
        if !self.buffer.is_empty() {
            self.buffer.pop_back();
            self.buffer.push_front(y);
        }
        out
    }

    pub fn exact_coefficients(&self) -> Result<Vec<Rational>> {
        self.coefficients
            .iter()
            .map(|&c| rational::from_f64(c))
            .collect()
    }
}

/// Linear filter with a tapped delay line:
/// `yhat(k) = D x_f(k)`, `x_f(k+1) = A x_f(k) + B y(k) + C ytilde(k)`,
/// `ytilde(k+1) = J y(k) + L ytilde(k)` with `(J, L)` the unit shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFilter {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    d: RowDVector<f64>,
    state: DVector<f64>,
    delay: DVector<f64>,
}

impl LinearFilter {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        d: RowDVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.nrows() != n || d.len() != n {
            return Err(Error::Dimension(format!(
                "filter blocks A {}x{}, B {}, C {}x{}, D {} are inconsistent",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.nrows(),
                c.ncols(),
                d.len()
            )));
        }
        let all = a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter blocks".into()));
        }
        let memory = c.ncols();
        Ok(LinearFilter {
            a,
            b,
            c,
            d,
            state: DVector::zeros(n),
            delay: DVector::zeros(memory),
        })
    }

    /// State-space form of a moving average: `A = 0`, `B = c_0`,
    /// `C = [c_1 .. c_M]`, `D = 1`. The output lags the direct form by one
    /// step since `yhat(k) = D x_f(k)` has no feedthrough.
    pub fn from_moving_average(f: &MovingAverageFilter) -> Self {
        let coeffs = f.coefficients();
        let memory = coeffs.len() - 1;
        let mut lf = LinearFilter {
            a: DMatrix::zeros(1, 1),
            b: DVector::from_element(1, coeffs[0]),
            c: DMatrix::from_row_slice(1, memory, &coeffs[1..]),
            d: RowDVector::from_element(1, 1.0),
            state: DVector::zeros(1),
            delay: DVector::zeros(memory),
        };
        lf.delay = DVector::from_iterator(memory, f.buffer());
        lf
    }

    pub fn with_state(mut self, state: &[f64], delay: &[f64]) -> Result<Self> {
        if state.len() != self.state.len() || delay.len() != self.delay.len() {
            return Err(Error::Dimension("filter initial state".into()));
        }
        self.state = DVector::from_column_slice(state);
        self.delay = DVector::from_column_slice(delay);
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &RowDVector<f64> {
        &self.d
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn memory(&self) -> usize {
        self.delay.len()
    }

    pub fn state(&self) -> &[f64] {
        self.state.as_slice()
    }

    pub fn delay_line(&self) -> &[f64] {
        self.delay.as_slice()
    }

    pub fn output(&self) -> f64 {
        self.d.dot(&self.state.transpose())
    }

    pub fn step(&mut self, y: f64) -> f64 {
        let out = self.output();
        self.state = &self.a * &self.state + &self.b * y + &self.c * &self.delay;
        let m = self.delay.len();
        if m > 0 {
            for i in (1..m).rev() {
                self.delay[i] = self.delay[i - 1];
            }
            self.delay[0] = y;
        }
        out
    }
}

/// The input column `J = e_1` of the delay line.
pub fn shift_input(memory: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(memory, 1);
    if memory > 0 {
        j[(0, 0)] = 1.0;
    }
    j
}

/// The down-shift `L` of the delay line.
pub fn shift_matrix(memory: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(memory, memory);
    for i in 1..memory {
        l[(i, i - 1)] = 1.0;
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    MovingAverage(MovingAverageFilter),
    Linear(LinearFilter),
}

impl Filter {
    pub fn identity() -> Self {
        Filter::MovingAverage(MovingAverageFilter::identity())
    }

    pub fn step(&mut self, y: f64) -> f64 {
        match self {
            Filter::MovingAverage(f) => f.step(y),
            Filter::Linear(f) => f.step(y),
        }
    }

    /// True for the memoryless identity filter.
    pub fn is_identity(&self) -> bool {
        matches!(self, Filter::MovingAverage(f) if f.memory() == 0 && f.coefficients()[0] == 1.0)
    }
}

fn checked_product(a: usize, b: usize) -> Result<()> {
    let needed = a as u128 * b as u128;
    if needed > ENUMERATION_BUDGET {
        return Err(Error::Budget {
            needed,
            budget: ENUMERATION_BUDGET,
        });
    }
    Ok(())
}

/// Every value `sum_i v_i` with `v_i` drawn from `alphabets[i]`, exactly.
pub fn sum_alphabet(alphabets: &[Vec<Rational>]) -> Result<BTreeSet<Rational>> {
    let mut sums: BTreeSet<Rational> = BTreeSet::from([rational::integer(0)]);
    for alphabet in alphabets {
        checked_product(sums.len(), alphabet.len())?;
        sums = sums
            .iter()
            .flat_map(|s| alphabet.iter().map(move |v| s + v))
            .collect();
    }
    Ok(sums)
}

/// Exact set of outputs `sum_j c_j v_j` over all `(M+1)`-tuples from
/// `alphabet`.
pub fn enumerate_outputs(
    f: &MovingAverageFilter,
    alphabet: &BTreeSet<Rational>,
) -> Result<BTreeSet<Rational>> {
    let coeffs = f.exact_coefficients()?;
    let tuples = (alphabet.len() as u128).checked_pow(coeffs.len() as u32);
    match tuples {
        Some(n) if n <= ENUMERATION_BUDGET => {}
        _ => {
            return Err(Error::Budget {
                needed: tuples.unwrap_or(u128::MAX),
                budget: ENUMERATION_BUDGET,
            })
        }
    }
    let scaled: Vec<Vec<Rational>> = coeffs
        .iter()
        .map(|c| alphabet.iter().map(|v| c * v).collect())
        .collect();
    sum_alphabet(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rational::{integer, ratio};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_half_average() {
        let mut f = MovingAverageFilter::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(f.step(2.0), 1.0);
        assert_eq!(f.step(4.0), 3.0);
    }

    #[test]
    fn identity_passes_through() {
        let mut f = MovingAverageFilter::new(vec![1.0]).unwrap();
        for y in [0.0, 3.5, -1.0] {
            assert_eq!(f.step(y), y);
        }
        assert!(Filter::MovingAverage(f).is_identity());
    }

    #[test]
    fn unit_dc_gain_settles() {
        let coeffs = vec![0.2, 0.3, 0.1, 0.4];
        let mut f = MovingAverageFilter::new(coeffs.clone()).unwrap();
        let mut out = 0.0;
        for _ in 0..coeffs.len() {
            out = f.step(7.0);
        }
        assert!((out - 7.0).abs() < 1e-12);
        let mut warm = MovingAverageFilter::with_warm_start(vec![0.5, 0.5], 3.0).unwrap();
        assert_eq!(warm.step(3.0), 3.0);
    }

    #[test]
    fn one_step_delay_filter() {
        let mut f = LinearFilter::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 0),
            RowDVector::from_element(1, 1.0),
        )
        .unwrap();
        let inputs = [3.0, -1.0, 2.5, 7.0];
        let outputs: Vec<f64> = inputs.iter().map(|&y| f.step(y)).collect();
        assert_eq!(outputs, vec![0.0, 3.0, -1.0, 2.5]);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut f = LinearFilter::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            DVector::from_column_slice(&[1.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.4]),
            RowDVector::from_row_slice(&[1.0, -1.0]),
        )
        .unwrap();
        for _ in 0..20 {
            assert_eq!(f.step(0.0), 0.0);
        }
    }

    #[test]
    fn rejects_inconsistent_blocks() {
        assert!(LinearFilter::new(
            DMatrix::zeros(2, 2),
            DVector::zeros(1),
            DMatrix::zeros(2, 1),
            RowDVector::zeros(2)
        )
        .is_err());
        assert!(MovingAverageFilter::new(vec![]).is_err());
    }

    #[test]
    fn state_space_embedding_matches_direct_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for memory in 0..5 {
            let coeffs: Vec<f64> = (0..=memory).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut direct = MovingAverageFilter::new(coeffs).unwrap();
            let mut embedded = LinearFilter::from_moving_average(&direct);
            let mut previous_direct: Option<f64> = None;
            for _ in 0..100 {
                let y: f64 = rng.random_range(-5.0..5.0);
                let lagged: f64 = embedded.step(y);
                if let Some(prev) = previous_direct {
                    assert!((lagged - prev).abs() < 1e-12);
                }
                previous_direct = Some(direct.step(y));
            }
        }
    }

    #[test]
    fn shift_pair_moves_the_delay_line() {
        let (j, l) = (shift_input(3), shift_matrix(3));
        let ytilde = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let next = &j * 9.0 + &l * &ytilde;
        assert_eq!(next.as_slice(), &[9.0, 1.0, 2.0]);
    }

    fn alphabet(values: &[i64]) -> BTreeSet<Rational> {
        values.iter().map(|&v| integer(v)).collect()
    }

    /// Brute force over every tuple, keeping a witness per output.
    fn outputs_with_witnesses(
        coeffs: &[Rational],
        alphabet: &BTreeSet<Rational>,
    ) -> std::collections::BTreeMap<Rational, Vec<Rational>> {
        let values: Vec<&Rational> = alphabet.iter().collect();
        let n = values.len();
        let mut out = std::collections::BTreeMap::new();
        for mut idx in 0..n.pow(coeffs.len() as u32) {
            let mut tuple = Vec::new();
            for _ in 0..coeffs.len() {
                tuple.push(values[idx % n].clone());
                idx /= n;
            }
            let s: Rational = coeffs.iter().zip(&tuple).map(|(c, v)| c * v).sum();
            out.entry(s).or_insert(tuple);
        }
        out
    }

    #[test]
    fn output_enumeration_examples() {
        let half = MovingAverageFilter::new(vec![0.5, 0.5]).unwrap();
        let got = enumerate_outputs(&half, &alphabet(&[0, 1, 2, 3, 4])).unwrap();
        let want: BTreeSet<Rational> = (0..=8).map(|n| ratio(n, 2)).collect();
        assert_eq!(got, want);

        let id = MovingAverageFilter::identity();
        assert_eq!(
            enumerate_outputs(&id, &alphabet(&[0, 1])).unwrap(),
            alphabet(&[0, 1])
        );

        let third = MovingAverageFilter::new(vec![1.0 / 3.0; 3]).unwrap();
        assert_eq!(
            enumerate_outputs(&third, &alphabet(&[0, 3])).unwrap(),
            alphabet(&[0, 1, 2, 3])
        );
    }

    #[test]
    fn enumeration_is_witnessed_and_bounded() {
        let f = MovingAverageFilter::new(vec![0.25, 0.5, 0.25]).unwrap();
        let a = alphabet(&[0, 1, 3, 7]);
        let got = enumerate_outputs(&f, &a).unwrap();
        let coeffs = f.exact_coefficients().unwrap();
        let brute = outputs_with_witnesses(&coeffs, &a);
        assert!(got.len() <= a.len().pow(3));
        assert_eq!(got, brute.keys().cloned().collect());
        for (value, tuple) in &brute {
            let s: Rational = coeffs.iter().zip(tuple).map(|(c, v)| c * v).sum();
            assert_eq!(&s, value);
        }
    }

    #[test]
    fn enumeration_errors() {
        let irrational =
            MovingAverageFilter::new(vec![std::f64::consts::FRAC_1_SQRT_2; 2]).unwrap();
        assert!(matches!(
            enumerate_outputs(&irrational, &alphabet(&[0, 1])),
            Err(Error::Representation(_))
        ));
        let long = MovingAverageFilter::new(vec![0.125; 8]).unwrap();
        let wide: BTreeSet<Rational> = (0..10).map(integer).collect();
        assert!(matches!(
            enumerate_outputs(&long, &wide),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn subset_sums_of_binary_agents() {
        let binary = vec![integer(0), integer(1)];
        let sums = sum_alphabet(&vec![binary; 100]).unwrap();
        assert_eq!(sums.len(), 101);
        assert_eq!(sums.iter().next_back(), Some(&integer(100)));
    }
}
