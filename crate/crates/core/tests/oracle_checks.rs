use bonlab::checks::{
    check_distributions, check_lambda, check_rl_gradients, check_rlb_gradients, check_sft_gradients,
    check_unbiasedness,
};
use bonlab::oracle::OracleRecord;

fn assert_all_pass(records: &[OracleRecord]) {
    assert!(!records.is_empty());
    let failed: Vec<&OracleRecord> = records.iter().filter(|r| !r.pass).collect();
    let worst = records
        .iter()
        .map(|r| r.value / r.bound.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    assert!(failed.is_empty(), "{} failures (worst value/bound {worst}): {:?}", failed.len(), &failed[..failed.len().min(5)]);
}

#[test]
fn distributions_agree_with_enumeration() {
    assert_all_pass(&check_distributions(1000, 200).unwrap());
}

#[test]
fn rlb_gradients_match_finite_differences() {
    assert_all_pass(&check_rlb_gradients(2000, 100).unwrap());
}

#[test]
fn sft_gradients_match_finite_differences() {
    assert_all_pass(&check_sft_gradients(3000, 100).unwrap());
}

#[test]
fn rl_gradients_match_finite_differences() {
    assert_all_pass(&check_rl_gradients(4000, 50).unwrap());
}

#[test]
fn lambda_solver_and_calibration() {
    assert_all_pass(&check_lambda(1024, 5000, 20).unwrap());
}

#[test]
fn sampled_estimators_are_unbiased() {
    assert_all_pass(&check_unbiasedness(6000, 10_000, 4).unwrap());
}
