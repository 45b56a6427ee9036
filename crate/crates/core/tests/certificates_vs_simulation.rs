//! Certificates agree with what ensembles of the same loops show.

use ergoloop::analysis::{
    ensemble, ic_dependence_test, nonergodicity_certificate, verify_theorem1, IcVerdict,
    InitialCondition, Selector, Verdict, POLE_ORDER_MAX, THEOREM1_M_MAX,
};
use ergoloop::closed_loop::ClosedLoop;
use ergoloop::fixtures::{pivslag_pi, schur_loop};

fn plus_minus_fifty(lp: &ClosedLoop, realizations: usize, horizon: usize) -> IcVerdict {
    let ics = [
        InitialCondition::new("xc=50", vec![0.0; 4]).with_controller_state(vec![50.0]),
        InitialCondition::new("xc=-50", vec![0.0; 4]).with_controller_state(vec![-50.0]),
    ];
    let stats = ensemble(lp, &ics, realizations, horizon, 11).unwrap();
    ic_dependence_test(&stats, Selector::agent(0, 0), Selector::agent(1, 0), 0.05)
        .unwrap()
        .verdict
}

#[test]
fn nonergodic_certificate_shows_in_ensemble() {
    let lp = pivslag_pi().unwrap();
    let cert = nonergodicity_certificate(&lp, POLE_ORDER_MAX).unwrap();
    assert_eq!(cert.verdict, Verdict::NonErgodicCertified);
    assert_eq!(plus_minus_fifty(&lp, 200, 3000), IcVerdict::NonErgodic);
}

#[test]
fn ergodic_certificate_shows_in_ensemble() {
    let lp = schur_loop().unwrap();
    let cert = verify_theorem1(&lp, THEOREM1_M_MAX);
    assert_eq!(cert.verdict, Verdict::ErgodicCertified, "{cert}");
    assert_eq!(
        plus_minus_fifty(&lp, 200, 3000),
        IcVerdict::ConsistentWithErgodic
    );
}
