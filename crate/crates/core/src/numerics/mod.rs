//! Matrix algebra, spectral tests and exact rationals shared by the
//! simulation and certificate code.

pub mod matrix;
pub mod rational;
pub mod spectral;

pub use matrix::Matrix;
pub use num_complex::Complex64 as ComplexScalar;
pub use rational::{group_generator, Rational};
pub use spectral::{
    contraction_index, eigenvalue_clusters, eigenvalues, is_positive_definite, is_schur,
    operator_norm, product_contraction_index, root_of_unity_order, spectra_agree, spectral_radius,
    verify_lmi,
};
