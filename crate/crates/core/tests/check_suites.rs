use symmetria_core::checks::Suite;

#[test]
fn every_suite_passes() {
    for suite in Suite::ALL {
        let t0 = std::time::Instant::now();
        let rows = suite.run().unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            println!("{} {:<40} {:>10.3e} < {:.0e} {}", suite.name(), r.name, r.error, r.threshold, r.passed());
        }
        println!("{} took {:?}", suite.name(), t0.elapsed());
        assert!(rows.iter().all(|r| r.passed()), "{} failed", suite.name());
    }
}
