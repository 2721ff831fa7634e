use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Counters for one pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub documents_in: u64,
    pub documents_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    /// Removal reason code -> count.
    pub removed: BTreeMap<String, u64>,
}

impl StageStats {
    pub fn new(stage: impl Into<String>) -> Self {
        StageStats {
            stage: stage.into(),
            ..Default::default()
        }
    }

    pub fn record_in(&mut self, bytes: usize) {
        self.documents_in += 1;
        self.bytes_in += bytes as u64;
    }

    pub fn record_out(&mut self, bytes: usize) {
        self.documents_out += 1;
        self.bytes_out += bytes as u64;
    }

    pub fn record_removed(&mut self, reason_code: &str) {
        *self.removed.entry(reason_code.to_owned()).or_default() += 1;
    }

    /// In = out + removed, and out never exceeds in.
    pub fn reconciles(&self) -> bool {
        let removed: u64 = self.removed.values().sum();
        self.documents_out <= self.documents_in && removed == self.documents_in - self.documents_out
    }
}

/// Stage counters for a whole run, in stage order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub stages: Vec<StageStats>,
}

impl CorpusStats {
    pub fn push(&mut self, s: StageStats) {
        self.stages.push(s);
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Every stage reconciles and each stage consumes exactly what the
    /// previous one produced.
    pub fn reconciles(&self) -> bool {
        self.stages.iter().all(StageStats::reconciles)
            && self
                .stages
                .windows(2)
                .all(|w| w[0].documents_out == w[1].documents_in)
    }

    /// Combined reason histogram across stages.
    pub fn removal_histogram(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for (k, v) in &s.removed {
                *out.entry(format!("{}/{}", s.stage, k)).or_default() += v;
            }
        }
        out
    }

    /// Plain-text report: stage table followed by the reason histogram.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>10} {:>14} {:>14}",
            "stage", "docs_in", "docs_out", "bytes_in", "bytes_out"
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:<14} {:>10} {:>10} {:>14} {:>14}",
                s.stage, s.documents_in, s.documents_out, s.bytes_in, s.bytes_out
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:<44} {:>10}", "removal reason", "count");
        for (k, v) in self.removal_histogram() {
            let _ = writeln!(out, "{k:<44} {v:>10}");
        }
        out
    }
}
