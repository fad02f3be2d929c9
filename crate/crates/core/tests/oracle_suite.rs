use contrastive_core::checks::{run_suite, SuiteOptions};

#[test]
fn full_oracle_suite_passes() {
    let results = run_suite(&SuiteOptions::default()).unwrap();
    for r in &results {
        println!("{r}");
    }
    assert!(results.iter().all(|r| r.passed()));
}
