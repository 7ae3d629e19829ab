//! Built-in verification scenarios shared by the CLI `selftest` subcommand
//! and the acceptance test suite.

/// Outcome of one verification scenario.
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} - {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}
