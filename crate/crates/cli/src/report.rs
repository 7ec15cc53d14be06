use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{Format, RunConfig};

pub const SCHEMA: &str = "curvlab-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equals,
}

/// One tolerance check. `pass` is recomputable from `value`, `relation` and
/// `tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, relation: Relation::AtMost, tolerance, pass: value <= tolerance }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, relation: Relation::AtLeast, tolerance, pass: value >= tolerance }
    }

    /// Boolean condition encoded as `value == 1`.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        let value = if ok { 1.0 } else { 0.0 };
        Check { name: name.into(), value, relation: Relation::Equals, tolerance: 1.0, pass: ok }
    }
}

/// Command result before it is wrapped in a [`Report`].
pub struct Outcome {
    pub payload: Value,
    pub checks: Vec<Check>,
    /// Lines for the pretty format.
    pub summary: Vec<String>,
    /// Native CSV, if the command has a tabular result.
    pub csv: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub timing_ms: u128,
    pub payload: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    pub fn new(config: RunConfig, outcome: &Outcome, timing_ms: u128) -> Self {
        Report {
            schema: SCHEMA,
            tool: "curvlab",
            version: env!("CARGO_PKG_VERSION"),
            command: config.subcommand.name(),
            config,
            timing_ms,
            payload: outcome.payload.clone(),
            checks: outcome.checks.clone(),
            pass: outcome.checks.iter().all(|c| c.pass),
        }
    }

    pub fn render(&self, format: Format, outcome: &Outcome) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Csv => outcome.csv.clone().unwrap_or_else(|| checks_csv(&self.checks)),
            Format::Pretty => self.pretty(outcome),
        }
    }

    fn pretty(&self, outcome: &Outcome) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "curvlab {} — {} ({} ms)", self.version, self.command, self.timing_ms);
        for line in &outcome.summary {
            let _ = writeln!(s, "  {line}");
        }
        if !self.checks.is_empty() {
            let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            let _ = writeln!(s);
            for c in &self.checks {
                let rel = match c.relation {
                    Relation::AtMost => "<=",
                    Relation::AtLeast => ">=",
                    Relation::Equals => "==",
                };
                let _ = writeln!(s, "  {} {:<width$}  {:>12.4e} {rel} {:<10.3e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
            }
        }
        let _ = writeln!(s, "\n  overall: {}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

fn checks_csv(checks: &[Check]) -> String {
    let mut s = String::from("name,value,relation,tolerance,pass\n");
    for c in checks {
        let rel = serde_json::to_value(c.relation).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(s, "{},{:e},{rel},{:e},{}", c.name, c.value, c.tolerance, c.pass);
    }
    s
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1e-9, 1e-8).pass);
        assert!(!Check::at_most("a", f64::NAN, 1e-8).pass);
        assert!(Check::at_least("b", 0.0, -1e-12).pass);
        assert!(!Check::holds("c", false).pass);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
    }
}
