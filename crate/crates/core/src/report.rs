//! Residual reports: one entry per certificate, aggregated per scenario.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        })
    }
}

/// Direction of the comparison between `residual` and `tolerance`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    #[default]
    AtMost,
    AtLeast,
    Above,
}

impl Bound {
    fn holds(self, residual: f64, tolerance: f64) -> bool {
        residual.is_finite()
            && match self {
                Bound::AtMost => residual <= tolerance,
                Bound::AtLeast => residual >= tolerance,
                Bound::Above => residual > tolerance,
            }
    }

    fn is_default(&self) -> bool {
        *self == Bound::AtMost
    }
}

/// Outcome of a single certificate.
///
/// `claim` names the identity being checked (for example
/// `"transnormal:piecewise-gradient"`), so a failure is traceable to the
/// statement it falsifies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub claim: String,
    pub status: Status,
    pub residual: f64,
    pub tolerance: f64,
    pub resolution: f64,
    #[serde(default, skip_serializing_if = "Bound::is_default")]
    pub bound: Bound,
    /// Negative controls carry `Some(Fail)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Status>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckEntry {
    /// PASS iff `residual` is finite and at most `tolerance`.
    pub fn new(name: &str, claim: &str, residual: f64, tolerance: f64, resolution: f64) -> Self {
        CheckEntry {
            name: name.into(),
            claim: claim.into(),
            status: Status::from_bool(Bound::AtMost.holds(residual, tolerance)),
            residual,
            tolerance,
            resolution,
            bound: Bound::AtMost,
            expected: None,
            details: BTreeMap::new(),
            note: None,
        }
    }

    /// PASS iff `residual` strictly exceeds `threshold` (separation checks).
    pub fn exceeds(name: &str, claim: &str, residual: f64, threshold: f64, resolution: f64) -> Self {
        CheckEntry::new(name, claim, residual, threshold, resolution).with_bound(Bound::Above)
    }

    /// PASS iff `residual >= threshold` (observed orders, populations).
    pub fn at_least(name: &str, claim: &str, residual: f64, threshold: f64, resolution: f64) -> Self {
        CheckEntry::new(name, claim, residual, threshold, resolution).with_bound(Bound::AtLeast)
    }

    fn with_bound(mut self, bound: Bound) -> Self {
        self.bound = bound;
        self.status = Status::from_bool(bound.holds(self.residual, self.tolerance));
        self
    }

    /// Re-evaluate against a new tolerance.
    pub fn set_tolerance(&mut self, tolerance: f64) {
        self.tolerance = tolerance;
        self.status = Status::from_bool(self.bound.holds(self.residual, tolerance));
    }

    pub fn expect(mut self, s: Status) -> Self {
        self.expected = Some(s);
        self
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Status equals the expected one (PASS unless declared otherwise).
    pub fn as_expected(&self) -> bool {
        self.status == self.expected.unwrap_or(Status::Pass)
    }

    /// A fixed-width human line: `PASS name residual=… tol=…`.
    pub fn line(&self) -> String {
        let tag = match self.expected {
            Some(Status::Fail) => " (negative control)",
            _ => "",
        };
        format!(
            "{} {}{} residual={:.3e} tol={:.1e} res={:.1e}",
            self.status, self.name, tag, self.residual, self.tolerance, self.resolution
        )
    }
}

/// Aggregated scenario report.
///
/// Everything except `generated_at` is a pure function of the scenario
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub checks: Vec<CheckEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl Report {
    pub fn new(scenario: &str) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            scenario: scenario.into(),
            checks: Vec::new(),
            metadata: BTreeMap::new(),
            generated_at: None,
        }
    }

    pub fn push(&mut self, e: CheckEntry) {
        self.checks.push(e);
    }

    pub fn extend(&mut self, es: impl IntoIterator<Item = CheckEntry>) {
        self.checks.extend(es);
    }

    pub fn meta(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckEntry::passed)
    }

    /// Every check, negative controls included, came out as declared.
    pub fn all_as_expected(&self) -> bool {
        self.checks.iter().all(CheckEntry::as_expected)
    }

    pub fn find(&self, name: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Copy with the timestamp removed, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> Report {
        let mut r = self.clone();
        r.generated_at = None;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_logic() {
        assert!(CheckEntry::new("a", "c", 1e-7, 1e-6, 1e-3).passed());
        assert!(!CheckEntry::new("a", "c", f64::NAN, 1e-6, 1e-3).passed());
        assert!(!CheckEntry::new("a", "c", 2e-6, 1e-6, 1e-3).passed());
        assert!(CheckEntry::exceeds("a", "c", 2e-2, 1e-2, 0.0).passed());
        assert!(!CheckEntry::exceeds("a", "c", 1e-2, 1e-2, 0.0).passed());
        assert!(CheckEntry::at_least("a", "c", 2.0, 2.0, 0.0).passed());
        let mut e = CheckEntry::exceeds("a", "c", 2e-2, 1e-2, 0.0);
        e.set_tolerance(3e-2);
        assert!(!e.passed());
    }

    #[test]
    fn timestamp_is_separate() {
        let mut r = Report::new("s");
        r.push(CheckEntry::new("a", "c", 0.0, 1.0, 1.0));
        let mut r2 = r.clone();
        r2.generated_at = Some("now".into());
        assert_ne!(r.to_json(), r2.to_json());
        assert_eq!(r.to_json(), r2.without_timestamp().to_json());
    }
}
