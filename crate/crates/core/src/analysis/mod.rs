//! Ergodicity verdicts: exact finite chains, Monte Carlo ensembles and the
//! sufficient-condition certificates.

pub mod certificate;
pub mod chain;
pub mod ensemble;
pub mod theorems;

pub use certificate::{Certificate, CertificateKind, Evidence, Verdict};
pub use chain::{
    absorption_probabilities, build_finite_chain, chain_ergodicity_verdict, recurrent_classes,
    stationary_measures, Absorption, ChainState, FiniteChain,
};
pub use ensemble::{
    ensemble, ic_dependence_test, ConditionStats, EnsembleStats, Estimate, GroupSelector,
    GroupStats, IcTest, IcVerdict, InitialCondition, Selector, Trajectories,
};
pub use theorems::{
    nonergodicity_certificate, verify_lemma1, verify_theorem1, POLE_ORDER_MAX, THEOREM1_M_MAX,
};
