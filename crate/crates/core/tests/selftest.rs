use avhubert::selftest::run_all;

#[test]
fn oracle_suites_pass() {
    for r in run_all() {
        println!("{} {} {}", r.name, r.passed, r.detail);
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}
