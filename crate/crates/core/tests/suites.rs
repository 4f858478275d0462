use uconv_core::checks::{feasibility_suite, grad_suite, lengths_suite, oracle_suite, Outcome};

fn assert_all(outcomes: &[Outcome]) {
    for o in outcomes {
        println!("{} {}: {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| &o.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn gradients_match_finite_differences() {
    assert_all(&grad_suite(42).unwrap());
}

#[test]
fn stage_lengths() {
    assert_all(&lengths_suite(42, 1000).unwrap());
}

#[test]
fn ctc_oracles() {
    assert_all(&oracle_suite(42, 200, 100, 20).unwrap());
}

#[test]
fn feasibility_grid() {
    assert_all(&feasibility_suite().unwrap());
}
