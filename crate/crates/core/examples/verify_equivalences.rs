//! Run the equivalence suites with a reduced number of trials.

use qronos::verify::{run_suite, Suite};

fn main() -> qronos::Result<()> {
    for suite in Suite::ALL {
        let r = run_suite(suite, 20, suite.default_tol(), 42)?;
        println!(
            "{:<14} {}  trials={:<3} checks={:<5} max_dev={:.2e}",
            suite.name(),
            if r.passed { "pass" } else { "FAIL" },
            r.trials,
            r.checks,
            r.max_deviation
        );
    }
    Ok(())
}
