//! Spectral tests, induced norms and contraction-index searches.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Margin used for strict definiteness tests.
pub const DEFINITENESS_MARGIN: f64 = 1e-10;

/// Upper bound on the number of index sequences a product search may visit.
pub const PRODUCT_BUDGET: u128 = 10_000_000;

pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    m.require_square()?;
    Ok(m.as_dmatrix()
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect())
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Schur stability with margin: spectral radius below `1 - tol`.
pub fn is_schur(m: &Matrix, tol: f64) -> Result<bool> {
    Ok(spectral_radius(m)? < 1.0 - tol)
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(m: &Matrix) -> f64 {
    norm2(m.as_dmatrix())
}

fn norm2(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Smallest `k <= m_max` with `||m^k|| < 1`.
pub fn contraction_index(m: &Matrix, m_max: usize) -> Result<Option<usize>> {
    m.require_square()?;
    let base = m.as_dmatrix();
    let mut power = base.clone();
    for k in 1..=m_max {
        if norm2(&power) < 1.0 {
            return Ok(Some(k));
        }
        power = base * &power;
    }
    Ok(None)
}

/// Smallest `m <= m_max` such that every product of `m` factors drawn from
/// `mats` has induced 2-norm below one.
///
/// Products are enumerated exhaustively. The budget is checked per length,
/// so a large `m_max` is fine as long as the search stops early; it fails
/// only when a length that must be visited has more than
/// [`PRODUCT_BUDGET`] sequences.
pub fn product_contraction_index(mats: &[Matrix], m_max: usize) -> Result<Option<usize>> {
    let dim = common_dimension(mats)?;
    let ns = mats.len() as u128;
    let factors: Vec<&DMatrix<f64>> = mats.iter().map(Matrix::as_dmatrix).collect();
    let mut count: u128 = 1;
    for len in 1..=m_max {
        count = count.saturating_mul(ns);
        if count > PRODUCT_BUDGET {
            return Err(Error::Budget {
                needed: count,
                budget: PRODUCT_BUDGET,
            });
        }
        if all_products_contract(&factors, &DMatrix::identity(dim, dim), len) {
            return Ok(Some(len));
        }
    }
    Ok(None)
}

fn all_products_contract(
    factors: &[&DMatrix<f64>],
    prefix: &DMatrix<f64>,
    remaining: usize,
) -> bool {
    if remaining == 0 {
        return norm2(prefix) < 1.0;
    }
    factors
        .iter()
        .all(|f| all_products_contract(factors, &(*f * prefix), remaining - 1))
}

fn common_dimension(mats: &[Matrix]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Dimension("empty matrix family".into()))?;
    first.require_square()?;
    let dim = first.rows();
    for m in mats {
        m.require_square()?;
        if m.rows() != dim {
            return Err(Error::Dimension(format!(
                "family mixes {dim}x{dim} and {0}x{0} matrices",
                m.rows()
            )));
        }
    }
    Ok(dim)
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetric_part(m).symmetric_eigenvalues();
    (eig.min(), eig.max())
}

pub fn is_positive_definite(m: &Matrix) -> Result<bool> {
    m.require_square()?;
    Ok(symmetric_extremes(m.as_dmatrix()).0 > DEFINITENESS_MARGIN)
}

/// Checks the switched-system Lyapunov inequalities
/// `A_i' P_j A_i - P_i < 0` for every pair `(i, j)`, with every `P_i > 0`.
pub fn verify_lmi(mats: &[Matrix], lyap: &[Matrix]) -> Result<bool> {
    if mats.len() != lyap.len() {
        return Err(Error::Dimension(format!(
            "{} system matrices but {} Lyapunov matrices",
            mats.len(),
            lyap.len()
        )));
    }
    let dim = common_dimension(mats)?;
    if common_dimension(lyap)? != dim {
        return Err(Error::Dimension(
            "Lyapunov matrices do not match system dimension".into(),
        ));
    }
    let lyap: Vec<DMatrix<f64>> = lyap
        .iter()
        .map(|p| symmetric_part(p.as_dmatrix()))
        .collect();
    if lyap
        .iter()
        .any(|p| symmetric_extremes(p).0 <= DEFINITENESS_MARGIN)
    {
        return Ok(false);
    }
    for (a, p_i) in mats.iter().map(Matrix::as_dmatrix).zip(&lyap) {
        for p_j in &lyap {
            let lhs = a.transpose() * p_j * a - p_i;
            if symmetric_extremes(&lhs).1 >= -DEFINITENESS_MARGIN {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Smallest `K <= k_max` with `lambda^K = 1`, both the unit-modulus check and
/// the power check taken to within `tol`.
pub fn root_of_unity_order(lambda: Complex64, k_max: usize, tol: f64) -> Option<usize> {
    if (lambda.norm() - 1.0).abs() >= tol {
        return None;
    }
    let one = Complex64::new(1.0, 0.0);
    let mut power = lambda;
    for k in 1..=k_max {
        if (power - one).norm() < tol {
            return Some(k);
        }
        power *= lambda;
    }
    None
}

/// Groups eigenvalues into clusters (single linkage at `radius`) and returns
/// each cluster's centroid and size, sorted by real then imaginary part.
///
/// A defective eigenvalue of multiplicity `m` comes back from a QR solver as
/// `m` points spread over roughly `eps^(1/m)`; their mean is accurate to
/// machine precision, so centroids are the stable quantity to compare.
pub fn eigenvalue_clusters(values: &[Complex64], radius: f64) -> Vec<(Complex64, usize)> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= radius {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Complex64, usize)> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        let g = groups.entry(r).or_insert((Complex64::new(0.0, 0.0), 0));
        g.0 += values[i];
        g.1 += 1;
    }
    let mut out: Vec<(Complex64, usize)> = groups
        .into_values()
        .map(|(sum, count)| (sum / count as f64, count))
        .collect();
    out.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    out
}

/// Multiset equality of two spectra up to `tol`, comparing cluster
/// centroids and sizes (see [`eigenvalue_clusters`]).
pub fn spectra_agree(a: &[Complex64], b: &[Complex64], radius: f64, tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let ca = eigenvalue_clusters(a, radius);
    let mut cb = eigenvalue_clusters(b, radius);
    for (centre, size) in ca {
        let hit = cb
            .iter()
            .position(|&(c, s)| s == size && (c - centre).norm() <= tol);
        match hit {
            Some(i) => {
                cb.swap_remove(i);
            }
            None => return false,
        }
    }
    cb.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn spectral_radius_examples() {
        assert!(close(
            spectral_radius(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap(),
            0.0,
            1e-10
        ));
        assert!(close(
            spectral_radius(&Matrix::identity(2).scale(0.5)).unwrap(),
            0.5,
            1e-10
        ));
        // characteristic polynomial z^2 + 1/4 has roots +-i/2
        assert!(close(
            spectral_radius(&m(&[&[0.0, 1.0], &[-0.25, 0.0]])).unwrap(),
            0.5,
            1e-10
        ));
        assert!(matches!(
            spectral_radius(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn schur_examples() {
        assert!(is_schur(&Matrix::identity(2).scale(0.99), 1e-6).unwrap());
        assert!(!is_schur(&Matrix::identity(1), 1e-6).unwrap());
        assert!(is_schur(&m(&[&[0.0, 1.0], &[0.0, 0.0]]), 1e-6).unwrap());
        assert!(is_schur(&Matrix::zeros(1, 2), 1e-6).is_err());
    }

    #[test]
    fn operator_norm_examples() {
        assert!(close(operator_norm(&Matrix::identity(3)), 1.0, 1e-12));
        assert!(close(
            operator_norm(&Matrix::diagonal(&[2.0, 0.5]).unwrap()),
            2.0,
            1e-12
        ));
        // m^T m = diag(0, 4)
        assert!(close(
            operator_norm(&m(&[&[0.0, 2.0], &[0.0, 0.0]])),
            2.0,
            1e-12
        ));
    }

    #[test]
    fn contraction_index_examples() {
        assert_eq!(
            contraction_index(&Matrix::identity(2).scale(0.5), 10).unwrap(),
            Some(1)
        );
        assert_eq!(
            contraction_index(&m(&[&[0.0, 10.0], &[0.0, 0.0]]), 10).unwrap(),
            Some(2)
        );
        assert_eq!(contraction_index(&Matrix::identity(1), 500).unwrap(), None);
    }

    #[test]
    fn product_contraction_examples() {
        let halves = [
            Matrix::identity(2).scale(0.5),
            Matrix::identity(2).scale(0.25),
        ];
        assert_eq!(product_contraction_index(&halves, 5).unwrap(), Some(1));

        let swap = [
            m(&[&[0.0, 1.0], &[0.0, 0.0]]),
            m(&[&[0.0, 0.0], &[1.0, 0.0]]),
        ];
        assert_eq!(product_contraction_index(&swap, 12).unwrap(), None);

        let rot = [Matrix::rotation(0.3).scale(0.9)];
        assert_eq!(product_contraction_index(&rot, 3).unwrap(), Some(1));
    }

    #[test]
    fn product_budget_is_enforced_lazily() {
        let stuck = [Matrix::identity(2), Matrix::identity(2).scale(0.5)];
        assert!(matches!(
            product_contraction_index(&stuck, 30),
            Err(Error::Budget { .. })
        ));
        // a family that contracts at length 1 never reaches the budget
        let fine = [
            Matrix::identity(2).scale(0.5),
            Matrix::identity(2).scale(0.5),
        ];
        assert_eq!(product_contraction_index(&fine, 64).unwrap(), Some(1));
    }

    #[test]
    fn lmi_examples() {
        let i2 = Matrix::identity(2);
        assert!(verify_lmi(&[i2.scale(0.5)], &[i2.clone()]).unwrap());
        assert!(!verify_lmi(&[i2.clone()], &[i2.clone()]).unwrap());
        let pair = [
            Matrix::diagonal(&[0.9, 0.1]).unwrap(),
            Matrix::diagonal(&[0.1, 0.9]).unwrap(),
        ];
        assert!(verify_lmi(&pair, &[i2.clone(), i2.clone()]).unwrap());
        // indefinite P
        let bad_p = Matrix::diagonal(&[1.0, -1.0]).unwrap();
        assert!(!verify_lmi(&[i2.scale(0.1)], &[bad_p]).unwrap());
        assert!(verify_lmi(&[i2.clone()], &[i2.clone(), i2.clone()]).is_err());
        assert!(verify_lmi(&[Matrix::identity(3)], &[i2]).is_err());
    }

    #[test]
    fn root_of_unity_examples() {
        assert_eq!(
            root_of_unity_order(Complex64::new(1.0, 0.0), 10, 1e-9),
            Some(1)
        );
        assert_eq!(
            root_of_unity_order(Complex64::new(-1.0, 0.0), 10, 1e-9),
            Some(2)
        );
        assert_eq!(
            root_of_unity_order(Complex64::from_polar(1.0, PI / 3.0), 10, 1e-9),
            Some(6)
        );
        assert_eq!(
            root_of_unity_order(Complex64::new(0.99, 0.0), 1024, 1e-9),
            None
        );
        // irrational angle: never returns within the cap
        assert_eq!(
            root_of_unity_order(Complex64::from_polar(1.0, 1.0), 1024, 1e-9),
            None
        );
    }

    #[test]
    fn jordan_block_centroid_is_accurate() {
        // nilpotent 3x3 Jordan block hidden by a similarity transform
        let j = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let t = m(&[&[1.0, 2.0, 0.5], &[0.3, 1.0, -1.0], &[0.0, 0.7, 1.0]]);
        let t_inv = t.as_dmatrix().clone().try_inverse().unwrap();
        let a = Matrix::from_dmatrix(t.as_dmatrix() * j.as_dmatrix() * t_inv).unwrap();
        let eig = eigenvalues(&a).unwrap();
        let clusters = eigenvalue_clusters(&eig, 1e-2);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].1, 3);
        assert!(clusters[0].0.norm() < 1e-12);
        let zeros = vec![Complex64::new(0.0, 0.0); 3];
        assert!(spectra_agree(&eig, &zeros, 1e-2, 1e-8));
    }

    #[test]
    fn spectra_agree_respects_multiplicity() {
        let c = |re: f64| Complex64::new(re, 0.0);
        assert!(spectra_agree(
            &[c(0.5), c(0.2)],
            &[c(0.2), c(0.5)],
            1e-3,
            1e-8
        ));
        assert!(!spectra_agree(
            &[c(0.5), c(0.5)],
            &[c(0.5), c(0.2)],
            1e-3,
            1e-8
        ));
        assert!(!spectra_agree(&[c(0.5)], &[c(0.5), c(0.2)], 1e-3, 1e-8));
        assert!(!spectra_agree(&[c(0.5)], &[c(0.5 + 1e-6)], 1e-9, 1e-8));
    }

    fn square(n: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, n * n)
            .prop_map(move |v| Matrix::from_row_slice(n, n, &v).unwrap())
    }

    proptest! {
        #[test]
        fn radius_never_exceeds_norm(a in (1usize..6).prop_flat_map(square)) {
            prop_assert!(spectral_radius(&a).unwrap() <= operator_norm(&a) * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn contraction_index_is_minimal(a in (1usize..5).prop_flat_map(square)) {
            if let Some(k) = contraction_index(&a, 60).unwrap() {
                prop_assert!(operator_norm(&a.pow(k as u32).unwrap()) < 1.0);
                for j in 1..k {
                    prop_assert!(operator_norm(&a.pow(j as u32).unwrap()) >= 1.0);
                }
            }
        }
    }
}
