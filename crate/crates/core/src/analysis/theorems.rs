//! Sufficient conditions for ergodicity and for its failure.

use nalgebra::DMatrix;
use num_traits::Zero;

use super::certificate::{Certificate, CertificateKind, Evidence, Verdict};
use crate::agents::{AffineIfsAgent, AgentModel};
use crate::closed_loop::ClosedLoop;
use crate::control::{Controller, ProbabilityMap};
use crate::error::{Error, Result};
use crate::filters::{enumerate_outputs, sum_alphabet, Filter, LinearFilter};
use crate::numerics::rational::{self, group_generator, Rational};
use crate::numerics::spectral::{
    contraction_index, eigenvalues, product_contraction_index, root_of_unity_order,
    spectral_radius, verify_lmi,
};
use crate::numerics::{ComplexScalar, Matrix};

/// Default search bound for `||A^m|| < 1` on the augmented matrix.
pub const THEOREM1_M_MAX: usize = 5000;
/// Default cap on the order of a rational pole.
pub const POLE_ORDER_MAX: usize = 1024;
/// Points per axis of the floor spot-check grid.
pub const FLOOR_GRID: usize = 21;

const UNIT_CIRCLE_TOL: f64 = 1e-9;
const MULTIPLICITY_TOL: f64 = 1e-6;

fn affine_agent(agent: &AgentModel) -> AffineIfsAgent {
    match agent {
        AgentModel::BinaryFlip => AffineIfsAgent::binary_flip_embedding(),
        AgentModel::Sigmoid(s) => AffineIfsAgent::from_sigmoid(*s),
        AgentModel::AffineIfs(a) => a.clone(),
    }
}

/// Interval of states the agent can visit: the segment spanned by the
/// fixed points `(I - A)^-1 b_j` of its branches.
fn state_hull(agent: &AffineIfsAgent) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = agent.dim();
    let lu = (DMatrix::identity(n, n) - agent.matrix().as_dmatrix()).lu();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for b in agent.offsets() {
        let fixed = lu.solve(b)?;
        for i in 0..n {
            lo[i] = lo[i].min(fixed[i]);
            hi[i] = hi[i].max(fixed[i]);
        }
    }
    Some((lo, hi))
}

/// Smallest branch probability over the grid, with where it occurs.
fn grid_minimum(agent: &AffineIfsAgent) -> Option<(f64, Vec<f64>, f64)> {
    let (lo, hi) = state_hull(agent)?;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for i in 0..FLOOR_GRID {
        let t = i as f64 / (FLOOR_GRID - 1) as f64;
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + t * (b - a)).collect();
        for j in 0..FLOOR_GRID {
            let pi = j as f64 / (FLOOR_GRID - 1) as f64;
            let p = agent.law().probabilities(&x, pi);
            let min = p.iter().copied().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|b| min < b.0) {
                best = Some((min, x.clone(), pi));
            }
        }
    }
    best
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    parts.join(";")
}

/// Checks the hypotheses of the contraction-on-average argument:
/// Schur components, probability floors, and a power of the augmented
/// matrix with induced norm below one.
pub fn verify_theorem1(lp: &ClosedLoop, m_max: usize) -> Certificate {
    let mut reasons = Vec::new();
    let agents: Vec<AffineIfsAgent> = lp.agents().iter().map(affine_agent).collect();

    let radius = |m: &Matrix| spectral_radius(m).unwrap_or(f64::INFINITY);
    let agent_radius = agents
        .iter()
        .map(|a| radius(a.matrix()))
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
    let filter = match lp.filter() {
        Filter::MovingAverage(f) => Some(LinearFilter::from_moving_average(f)),
        Filter::Linear(f) => Some(f.clone()),
    };
    let filter_radius = filter
        .as_ref()
        .filter(|f| f.order() > 0)
        .map(|f| radius(&Matrix::from_dmatrix(f.a().clone()).expect("finite filter matrix")));
    let controller = match lp.controller() {
        Controller::Linear(c) => Some(c.clone()),
        _ => {
            reasons.push("controller is not linear time-invariant".to_string());
            None
        }
    };
    if *lp.probability_map() != ProbabilityMap::Identity {
        reasons.push("controller output passes through a nonlinear map".to_string());
    }
    let controller_radius = controller
        .as_ref()
        .filter(|c| c.system().order() > 0)
        .map(|c| {
            radius(&Matrix::from_dmatrix(c.system().a.clone()).expect("finite controller matrix"))
        });
    let mut all_schur = true;
    for (name, r) in [
        ("agent", agent_radius),
        ("filter", filter_radius),
        ("controller", controller_radius),
    ] {
        if let Some(r) = r {
            if r >= 1.0 {
                all_schur = false;
                reasons.push(format!("{name} state matrix has spectral radius {r}"));
            }
        }
    }

    let mut floor = 1.0;
    let mut floor_violation = None;
    for (i, agent) in agents.iter().enumerate() {
        floor *= agent.floor();
        let declared = agent.floor();
        let observed = grid_minimum(agent);
        let bad = match &observed {
            Some((min, _, _)) => declared <= 0.0 || *min < declared - 1e-12,
            None => true,
        };
        if bad && floor_violation.is_none() {
            let msg = match observed {
                Some((min, x, pi)) => format!(
                    "agent {} branch probability {min} at x={} pi={pi}",
                    i + 1,
                    fmt_point(&x)
                ),
                None => format!("agent {} has no bounded state hull", i + 1),
            };
            reasons.push(format!("probability floor violated: {msg}"));
            floor_violation = Some(msg);
        }
    }

    let mut index = None;
    if all_schur {
        if let (Some(filter), Some(controller)) = (&filter, &controller) {
            let affine = ClosedLoop::new(
                agents.into_iter().map(AgentModel::AffineIfs).collect(),
                Controller::Linear(controller.clone()),
                None,
                Filter::Linear(filter.clone()),
                lp.reference(),
            );
            match affine.and_then(|a| a.augmented_matrix()) {
                Ok(big) => match contraction_index(&big, m_max) {
                    Ok(Some(m)) => index = Some(m),
                    Ok(None) => reasons.push(format!(
                        "no power up to {m_max} of the augmented matrix contracts"
                    )),
                    Err(e) => reasons.push(e.to_string()),
                },
                Err(e) => reasons.push(e.to_string()),
            }
        }
    }

    let verdict = if reasons.is_empty() && index.is_some() {
        Verdict::ErgodicCertified
    } else {
        Verdict::Inconclusive
    };
    Certificate {
        kind: CertificateKind::Theorem1,
        verdict,
        evidence: Evidence::Theorem1 {
            agent_radius,
            filter_radius,
            controller_radius,
            floor: Some(floor),
            floor_violation,
            contraction_index: index,
            m_max,
        },
        reasons,
    }
}

/// Stability under arbitrary switching from a common family of Lyapunov
/// inequalities, with the product length that contracts.
pub fn verify_lemma1(mats: &[Matrix], lyap: &[Matrix], m_max: usize) -> Result<Certificate> {
    let feasible = verify_lmi(mats, lyap)?;
    let mut reasons = Vec::new();
    let mut index = None;
    if feasible {
        match product_contraction_index(mats, m_max) {
            Ok(Some(m)) => index = Some(m),
            Ok(None) => reasons.push(format!("no product length up to {m_max} contracts")),
            Err(e @ Error::Budget { .. }) => reasons.push(e.to_string()),
            Err(e) => return Err(e),
        }
    } else {
        reasons.push("Lyapunov inequalities are not satisfied".to_string());
    }
    Ok(Certificate {
        kind: CertificateKind::Lemma1,
        verdict: if feasible {
            Verdict::ErgodicCertified
        } else {
            Verdict::Inconclusive
        },
        evidence: Evidence::Lemma1 {
            lmi_feasible: feasible,
            contraction_index: index,
            m_max,
        },
        reasons,
    })
}

fn complex_rank(m: DMatrix<ComplexScalar>) -> usize {
    let scale = m.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let sv = m.svd(false, false).singular_values;
    sv.iter().filter(|s| **s > 1e-9 * scale).count()
}

fn shifted(a: &DMatrix<f64>, lambda: ComplexScalar) -> DMatrix<ComplexScalar> {
    let n = a.nrows();
    a.map(|v| ComplexScalar::new(v, 0.0)) - DMatrix::<ComplexScalar>::identity(n, n) * lambda
}

fn inconclusive_t3(
    reasons: Vec<String>,
    pole: Option<ComplexScalar>,
    order: Option<usize>,
) -> Certificate {
    Certificate {
        kind: CertificateKind::Theorem3,
        verdict: Verdict::Inconclusive,
        evidence: Evidence::Theorem3 {
            pole,
            pole_order: order,
            output_count: None,
            generator: None,
        },
        reasons,
    }
}

/// Certifies non-ergodicity from a rational controller pole on the unit
/// circle combined with a discrete set of reachable errors.
///
/// The pole must be a root of unity of order at most `k_max`, visible from
/// the controller's input and output, with every other mode marginally
/// stable and unit-circle modes semisimple. Irrational data yields a
/// representation error.
pub fn nonergodicity_certificate(lp: &ClosedLoop, k_max: usize) -> Result<Certificate> {
    let Filter::MovingAverage(filter) = lp.filter() else {
        return Ok(inconclusive_t3(
            vec!["filter is not a moving average".into()],
            None,
            None,
        ));
    };
    let Controller::Linear(controller) = lp.controller() else {
        return Ok(inconclusive_t3(
            vec!["controller has no linear part".into()],
            None,
            None,
        ));
    };
    let mut alphabets = Vec::with_capacity(lp.agents().len());
    for (i, agent) in lp.agents().iter().enumerate() {
        let Some(values) = agent.alphabet() else {
            return Ok(inconclusive_t3(
                vec![format!("agent {} has no finite alphabet", i + 1)],
                None,
                None,
            ));
        };
        alphabets.push(
            values
                .into_iter()
                .map(rational::from_f64)
                .collect::<Result<Vec<Rational>>>()?,
        );
    }
    let reference = rational::from_f64(lp.reference())?;

    let sys = controller.system();
    if sys.order() == 0 {
        return Ok(inconclusive_t3(
            vec!["controller has no poles".into()],
            None,
            None,
        ));
    }
    let a = &sys.a;
    let eig = eigenvalues(&Matrix::from_dmatrix(a.clone())?)?;
    if let Some(l) = eig.iter().find(|l| l.norm() > 1.0 + UNIT_CIRCLE_TOL) {
        return Ok(inconclusive_t3(
            vec![format!("controller mode {l} lies outside the unit circle")],
            None,
            None,
        ));
    }
    let n = a.nrows();
    let on_circle: Vec<ComplexScalar> = eig
        .iter()
        .copied()
        .filter(|l| (l.norm() - 1.0).abs() <= UNIT_CIRCLE_TOL)
        .collect();
    for &l in &on_circle {
        let multiplicity = eig
            .iter()
            .filter(|m| (**m - l).norm() <= MULTIPLICITY_TOL)
            .count();
        let geometric = n - complex_rank(shifted(a, l));
        if geometric < multiplicity {
            return Ok(inconclusive_t3(
                vec![format!("unit-circle mode {l} is not semisimple")],
                Some(l),
                None,
            ));
        }
    }
    let mut candidates: Vec<(usize, ComplexScalar)> = on_circle
        .iter()
        .filter_map(|&l| root_of_unity_order(l, k_max, UNIT_CIRCLE_TOL).map(|k| (k, l)))
        .collect();
    candidates.sort_by_key(|c| c.0);
    if candidates.is_empty() {
        let reason = if on_circle.is_empty() {
            "no controller pole on the unit circle".to_string()
        } else {
            format!("no unit-circle pole is a root of unity of order at most {k_max}")
        };
        return Ok(inconclusive_t3(vec![reason], None, None));
    }
    // the pole must survive in the transfer function
    let b = sys.b.map(|v| ComplexScalar::new(v, 0.0));
    let c = sys.c.map(|v| ComplexScalar::new(v, 0.0));
    let visible = candidates.iter().copied().find(|&(_, l)| {
        let s = shifted(a, l);
        let mut ctrb = DMatrix::zeros(n, n + 1);
        ctrb.view_mut((0, 0), (n, n)).copy_from(&s);
        ctrb.column_mut(n).copy_from(&b);
        let mut obsv = DMatrix::zeros(n + 1, n);
        obsv.view_mut((0, 0), (n, n)).copy_from(&s);
        obsv.row_mut(n).copy_from(&c);
        complex_rank(ctrb) == n && complex_rank(obsv) == n
    });
    let Some((order, pole)) = visible else {
        return Ok(inconclusive_t3(
            vec!["every unit-circle pole cancels in the controller transfer function".into()],
            Some(candidates[0].1),
            Some(candidates[0].0),
        ));
    };

    let outputs = enumerate_outputs(filter, &sum_alphabet(&alphabets)?)?;
    let errors: Vec<Rational> = outputs.iter().map(|yhat| &reference - yhat).collect();
    let g = group_generator(&errors);
    let mut reasons = Vec::new();
    let verdict = if g.is_zero() {
        reasons.push("every reachable error is zero; the error group is trivial".to_string());
        Verdict::Inconclusive
    } else {
        Verdict::NonErgodicCertified
    };
    Ok(Certificate {
        kind: CertificateKind::Theorem3,
        verdict,
        evidence: Evidence::Theorem3 {
            pole: Some(pole),
            pole_order: Some(order),
            output_count: Some(outputs.len()),
            generator: Some(g),
        },
        reasons,
    })
}
