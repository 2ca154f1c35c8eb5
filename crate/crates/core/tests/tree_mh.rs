mod common;

#[test]
fn acceptance_ratios_match_brute_force() {
    let r = common::check_acceptance_ratios(21);
    assert!(r.compared > 500, "{r:?}");
    assert!(r.compared > r.both_rejected + 100, "{r:?}");
    assert_eq!(r.mismatches, 0, "{r:?}");
}

#[test]
fn enumerable_posterior_visits() {
    let v = common::check_enumerable_posterior(200_000, 5);
    assert_eq!(v.states, 15);
    assert!(v.max_z < 3.0, "{v:?}");
}

