//! Reports: one entry per job, ordered by job id. Apart from `elapsed_ms`
//! the machine form depends only on the session and the cutoff.

use serde::{Deserialize, Serialize};

use crate::ring::{q_to_string, RatRepr, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

/// A nonvanishing residual: where it lives, its leading energy and a
/// rendering of the leading term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leading_energy: Option<RatRepr>,
    pub term: String,
}

impl ResidualSummary {
    pub fn new(label: impl Into<String>, leading_energy: Option<Q>, term: impl Into<String>) -> Self {
        ResidualSummary { label: label.into(), leading_energy: leading_energy.map(RatRepr), term: term.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub id: String,
    pub kind: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<ResidualSummary>,
    pub details: serde_json::Value,
    /// The job as read from the session.
    pub inputs: serde_json::Value,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cutoff: RatRepr,
    pub passed: bool,
    pub jobs: Vec<JobReport>,
}

impl Report {
    pub fn new(cutoff: Q, mut jobs: Vec<JobReport>) -> Self {
        jobs.sort_by(|a, b| a.id.cmp(&b.id));
        let passed = jobs.iter().all(|j| j.status == Status::Pass);
        Report { cutoff: RatRepr(cutoff), passed, jobs }
    }

    pub fn machine(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The machine form with timings zeroed.
    pub fn machine_untimed(&self) -> String {
        let mut r = self.clone();
        for j in r.jobs.iter_mut() {
            j.elapsed_ms = 0;
        }
        r.machine()
    }

    pub fn human(&self) -> String {
        let mut out = format!("cutoff {}\n", q_to_string(&self.cutoff.0));
        for j in &self.jobs {
            out.push_str(&j.human());
        }
        let failed = self.jobs.iter().filter(|j| j.status != Status::Pass).count();
        out.push_str(&format!(
            "{} job(s), {} passed, {} failed\n",
            self.jobs.len(),
            self.jobs.len() - failed,
            failed
        ));
        out
    }
}

impl JobReport {
    pub fn human(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Error => "ERROR",
        };
        let mut out = format!("[{tag}] {} ({}) {} ms\n", self.id, self.kind, self.elapsed_ms);
        if let Some(e) = &self.error {
            out.push_str(&format!("    error: {e}\n"));
        }
        if let serde_json::Value::Object(map) = &self.details {
            for (k, v) in map {
                out.push_str(&format!("    {k}: {}\n", render_value(v)));
            }
        }
        for r in &self.residuals {
            let e = r.leading_energy.as_ref().map(|e| format!(" at T^{}", q_to_string(&e.0))).unwrap_or_default();
            out.push_str(&format!("    residual {}{e}: {}\n", r.label, r.term));
        }
        out
    }
}

fn render_value(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(items) if items.is_empty() => "none".into(),
        serde_json::Value::Array(items) if items.iter().all(|x| x.is_string()) => {
            let parts: Vec<&str> = items.iter().filter_map(|x| x.as_str()).collect();
            if parts.len() > 1 {
                format!("\n        {}", parts.join("\n        "))
            } else {
                parts.join("")
            }
        }
        other => other.to_string(),
    }
}
