use linkfact_bench::{dog, fixed_sweeps, gaussian, holdout_mask};

#[test]
fn fixtures_have_expected_shapes() {
    assert_eq!(gaussian().dim(), (50, 100));
    assert_eq!(dog().shape(), (400, 16));
}

#[test]
fn holdout_mask_hides_one_in_seven() {
    let mask = holdout_mask(7, 10);
    assert_eq!(mask.iter().filter(|&&v| v == 0.0).count(), 10);
}

#[test]
fn fixed_sweeps_run_to_the_budget() {
    let model = linkfact::nmf_mu(&gaussian(), 3, &fixed_sweeps(25)).unwrap();
    assert_eq!(model.iterations, 25);
}
