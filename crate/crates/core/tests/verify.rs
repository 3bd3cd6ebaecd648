use std::time::Instant;

use cdoc_core::problems::{by_name, REGIMES};
use cdoc_core::verify::{run_suite, Suite, VerifyOptions};

#[test]
fn costate_suites_pass_on_every_registered_problem() {
    let start = Instant::now();
    for r in REGIMES {
        let prob = by_name(r.name).unwrap();
        let rep = run_suite(&prob, Suite::All, &VerifyOptions::default()).unwrap();
        let t1 = rep.theorem1.as_ref().unwrap();
        let gamma = rep.integral_form.as_ref().unwrap();
        let stm = rep.stm.as_ref().unwrap();
        println!(
            "{}: lambda {:.2e} mu {:.2e} integral {:.2e} stm {:.2e}",
            r.name, t1.max_lambda_error, t1.max_mu_error, gamma.max_rel_error, stm.max_rel_error
        );
        assert!(rep.probes.len() >= 5);
        assert!(t1.nodes.iter().filter(|&&k| k > 0 && k < 1000).count() >= 5);
        assert!(stm.per_probe.iter().all(|p| p.checks.len() >= 3));
        assert!(rep.passed, "{}: {rep:?}", r.name);
    }
    assert!(start.elapsed().as_secs_f64() < 30.0, "{:?}", start.elapsed());
}
