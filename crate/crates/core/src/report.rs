//! Suite reports: deterministic row-by-row records of every check.

use serde::Serialize;

use crate::fields::Window;

/// Row outcome. `Resolved` marks a row whose printed claim failed as written
/// and whose corrected form was established by the oracle.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum RowStatus {
    Pass,
    Fail,
    Inconclusive,
    Resolved,
}

impl RowStatus {
    pub fn tag(&self) -> &'static str {
        match self {
            RowStatus::Pass => "PASS",
            RowStatus::Fail => "FAIL",
            RowStatus::Inconclusive => "INCONCLUSIVE",
            RowStatus::Resolved => "RESOLVED",
        }
    }
}

/// One check row: inputs, expected and obtained values, and the fully
/// normalized difference on failure.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteRow {
    pub id: String,
    pub inputs: String,
    pub expected: String,
    pub got: String,
    pub status: RowStatus,
    pub truncated: bool,
    pub detail: String,
}

impl SuiteRow {
    pub fn pass(id: &str, inputs: &str, expected: &str) -> Self {
        SuiteRow {
            id: id.into(),
            inputs: inputs.into(),
            expected: expected.into(),
            got: expected.into(),
            status: RowStatus::Pass,
            truncated: false,
            detail: String::new(),
        }
    }

    pub fn with_truncated(mut self, truncated: bool) -> Self {
        self.truncated = truncated;
        self
    }

    pub fn fail(id: &str, inputs: &str, expected: &str, got: &str, detail: &str) -> Self {
        SuiteRow {
            id: id.into(),
            inputs: inputs.into(),
            expected: expected.into(),
            got: got.into(),
            status: RowStatus::Fail,
            truncated: false,
            detail: detail.into(),
        }
    }

    pub fn inconclusive(id: &str, inputs: &str, detail: &str) -> Self {
        SuiteRow {
            id: id.into(),
            inputs: inputs.into(),
            expected: String::new(),
            got: String::new(),
            status: RowStatus::Inconclusive,
            truncated: true,
            detail: detail.into(),
        }
    }

    pub fn resolved(id: &str, inputs: &str, expected: &str, got: &str, detail: &str) -> Self {
        SuiteRow {
            id: id.into(),
            inputs: inputs.into(),
            expected: expected.into(),
            got: got.into(),
            status: RowStatus::Resolved,
            truncated: false,
            detail: detail.into(),
        }
    }
}

/// A full suite run.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub window: Window,
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn new(suite: &str, window: Window) -> Self {
        SuiteReport {
            suite: suite.into(),
            window,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: SuiteRow) {
        self.rows.push(row);
    }

    pub fn passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| matches!(r.status, RowStatus::Pass | RowStatus::Resolved))
    }

    pub fn has_fail(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Fail)
    }

    pub fn has_inconclusive(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Inconclusive)
    }

    /// One line per row, fixed column order.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!(
            "suite {} | window z in [{}, {}], zeta <= {} | {}",
            self.suite,
            self.window.z_min,
            self.window.z_max,
            self.window.zeta_max,
            if self.passed() { "PASS" } else { "FAIL" }
        )];
        for r in &self.rows {
            lines.push(format!(
                "  [{}] {} | inputs: {} | expected: {} | got: {}{}{}",
                r.status.tag(),
                r.id,
                r.inputs,
                r.expected,
                r.got,
                if r.truncated { " | truncated" } else { "" },
                if r.detail.is_empty() {
                    String::new()
                } else {
                    format!(" | {}", r.detail)
                }
            ));
        }
        lines.join("\n")
    }
}

/// The top-level structured report of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub engine_version: String,
    pub window: Window,
    pub suites: Vec<SuiteReport>,
}

impl RunReport {
    pub fn new(window: Window) -> Self {
        RunReport {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            window,
            suites: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed())
    }

    pub fn has_inconclusive(&self) -> bool {
        self.suites.iter().any(|s| s.has_inconclusive())
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![format!(
            "engine {} | window z in [{}, {}], zeta <= {}",
            self.engine_version, self.window.z_min, self.window.z_max, self.window.zeta_max
        )];
        for s in &self.suites {
            lines.push(s.to_text());
        }
        lines.push(format!(
            "overall: {}",
            if self.all_passed() && !self.has_inconclusive() {
                "PASS"
            } else if self.has_inconclusive() {
                "INCONCLUSIVE"
            } else {
                "FAIL"
            }
        ));
        lines.join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}
