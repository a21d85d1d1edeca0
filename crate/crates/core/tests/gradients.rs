use ficgan_core::gradcheck::{check_all, GENERATOR_TERMS, REL_TOL};

#[test]
fn every_loss_matches_central_differences() {
    let report = check_all(3, 6).unwrap();
    for t in &report.terms {
        println!("{:8} {:4} coords  max rel err {:.2e} ({})", t.term, t.coordinates, t.max_rel_err, t.worst_param);
    }
    assert_eq!(report.terms.len(), GENERATOR_TERMS.len() + 2);
    for t in &report.terms {
        assert!(t.passed(), "{} exceeds {REL_TOL}: {:?}", t.term, t);
    }
    assert!(report.verifier_isolated);
}
