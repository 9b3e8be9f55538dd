use crate::config::RunConfig;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub computed: String,
    pub delta: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, expected: impl ToString, computed: impl ToString, delta: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            expected: expected.to_string(),
            computed: computed.to_string(),
            delta,
            tolerance,
            pass: delta <= tolerance,
        }
    }

    /// An exact comparison: `delta` is 0 when `equal`, else the floating gap
    /// (at least machine epsilon so the check cannot pass).
    pub fn exact(name: impl Into<String>, expected: impl ToString, computed: impl ToString, equal: bool, gap: f64) -> Self {
        let delta = if equal { 0.0 } else { gap.max(f64::EPSILON) };
        Self::new(name, expected, computed, delta, 0.0)
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub checks: Vec<Check>,
    pub counts: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<u128>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: &str, config: RunConfig) -> Self {
        Self {
            command: command.into(),
            config,
            checks: vec![],
            counts: BTreeMap::new(),
            details: None,
            timing_ms: None,
            pass: true,
        }
    }

    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn count(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.into()).or_default() += n;
    }

    pub fn finish(&mut self) {
        self.pass = self.checks.iter().all(|c| c.pass);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: computed {} expected {} |delta| {:.3e} tol {:.3e}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.computed,
                c.expected,
                c.delta,
                c.tolerance
            ));
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        out.push_str(&format!(
            "{}: {} checks, {} failed\n",
            self.command,
            self.checks.len(),
            failed
        ));
        out
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn fmt_c64(z: num_complex::Complex64) -> String {
    format!("{:.17e}{:+.17e}i", z.re, z.im)
}
