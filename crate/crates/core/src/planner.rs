//! Privacy-constrained choice of partition point.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cost::{CostProfile, RuntimeBreakdown, FULL_ENCLAVE_LABEL};
use crate::error::{Error, Result};
use crate::privacy::{PrivacyReport, DEFAULT_SLACK, DEFAULT_THRESHOLD};

#[derive(Clone, Debug)]
pub struct PlanRequest {
    pub model_name: String,
    pub profile: CostProfile,
    pub privacy: PrivacyReport,
    pub threshold: f64,
    pub slack: f64,
}

impl PlanRequest {
    pub fn new(profile: CostProfile, privacy: PrivacyReport) -> Self {
        Self {
            model_name: profile.model_name.clone(),
            profile,
            privacy,
            threshold: DEFAULT_THRESHOLD,
            slack: DEFAULT_SLACK,
        }
    }

    pub fn with_threshold(mut self, threshold: f64, slack: f64) -> Self {
        self.threshold = threshold;
        self.slack = slack;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !(self.slack >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold {} / slack {}",
                self.threshold, self.slack
            )));
        }
        if self.privacy.per_point.is_empty() {
            return Err(Error::InvalidParameter("privacy report has no boundaries".into()));
        }
        let privacy: HashSet<&str> = self
            .privacy
            .per_point
            .iter()
            .map(|p| p.boundary_label.as_str())
            .collect();
        let profile: HashSet<&str> = self.profile.labels().collect();
        if privacy != profile || privacy.len() != self.privacy.per_point.len() {
            return Err(Error::InvalidParameter(
                "privacy report and cost profile cover different boundaries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullEnclaveReason {
    /// No boundary satisfies the privacy rule.
    NoPrivatePartition,
    /// Private boundaries exist but none beats running everything inside.
    NoSpeedup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Partition { boundary_label: String },
    FullEnclave { reason: FullEnclaveReason },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub boundary_label: String,
    pub breakdown: RuntimeBreakdown,
    pub mean_ssim: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub model_name: String,
    pub decision: Decision,
    pub breakdown: RuntimeBreakdown,
    pub full_enclave_seconds: f64,
    /// Absent when the plan is full-enclave execution.
    pub privacy_score_at_choice: Option<f64>,
    /// Every boundary in partition order.
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    total_partition_points: usize,
    optimal_point: &'a str,
    full_enclave_runtime_s: f64,
    partitioned_runtime_s: f64,
    speedup_percent: f64,
}

impl PartitionPlan {
    pub fn chosen_boundary(&self) -> Option<&str> {
        match &self.decision {
            Decision::Partition { boundary_label } => Some(boundary_label),
            Decision::FullEnclave { .. } => None,
        }
    }

    pub fn is_private_partition(&self) -> bool {
        !matches!(
            self.decision,
            Decision::FullEnclave {
                reason: FullEnclaveReason::NoPrivatePartition
            }
        )
    }

    pub fn feasible_labels(&self) -> Vec<&str> {
        self.alternatives
            .iter()
            .filter(|a| a.feasible)
            .map(|a| a.boundary_label.as_str())
            .collect()
    }

    /// One summary row: model, total partition points, optimal point,
    /// full-enclave runtime, partitioned runtime, speedup percent.
    pub fn write_summary_csv<W: Write>(plans: &[PartitionPlan], w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for plan in plans {
            writer.serialize(SummaryRow {
                model: &plan.model_name,
                total_partition_points: plan.alternatives.len(),
                optimal_point: plan.chosen_boundary().unwrap_or(FULL_ENCLAVE_LABEL),
                full_enclave_runtime_s: plan.full_enclave_seconds,
                partitioned_runtime_s: plan.breakdown.total_seconds,
                speedup_percent: plan.breakdown.speedup_percent(),
            })?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = Vec::new();
        Self::write_summary_csv(std::slice::from_ref(self), &mut out).expect("Vec write");
        String::from_utf8(out).expect("CSV is UTF-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Breakdown for every boundary in privacy-report order, paired with its score.
fn candidates(req: &PlanRequest) -> Result<Vec<(RuntimeBreakdown, f64)>> {
    req.privacy
        .per_point
        .iter()
        .map(|p| Ok((req.profile.breakdown(&p.boundary_label)?, p.mean_ssim)))
        .collect()
}

/// Feasible boundaries are the earliest one admitted by the selection rule
/// and every later one whose own score is within the threshold. Among those
/// the predicted total decides; on equal totals the deeper boundary wins, and
/// full-enclave execution wins over any boundary that does not beat it.
pub fn plan(req: &PlanRequest) -> Result<PartitionPlan> {
    req.validate()?;
    let rows = candidates(req)?;
    let ceiling = req.threshold + req.slack;

    let mut earliest = None;
    let mut later_ok = true;
    for i in (0..rows.len()).rev() {
        if rows[i].1 <= req.threshold && later_ok {
            earliest = Some(i);
        }
        later_ok &= rows[i].1 <= ceiling;
    }
    let feasible: Vec<bool> = (0..rows.len())
        .map(|i| earliest.is_some_and(|e| i >= e) && rows[i].1 <= req.threshold)
        .collect();

    let mut best: Option<usize> = None;
    for (i, (b, _)) in rows.iter().enumerate() {
        if feasible[i] && best.is_none_or(|j| b.total_seconds <= rows[j].0.total_seconds) {
            best = Some(i);
        }
    }
    Ok(assemble(req, rows, feasible, best))
}

/// Exhaustive reference for [`plan`]: every boundary is tested against the
/// rule by rescanning the whole curve, and every pair of feasible boundaries
/// is compared directly.
pub fn brute_force_plan(req: &PlanRequest) -> Result<PartitionPlan> {
    req.validate()?;
    let rows = candidates(req)?;
    let n = rows.len();
    let qualifies = |j: usize| {
        rows[j].1 <= req.threshold && (j + 1..n).all(|k| rows[k].1 <= req.threshold + req.slack)
    };
    let feasible: Vec<bool> = (0..n)
        .map(|i| rows[i].1 <= req.threshold && (0..=i).any(qualifies))
        .collect();
    let beats = |i: usize, j: usize| {
        let (a, b) = (rows[i].0.total_seconds, rows[j].0.total_seconds);
        a < b || (a == b && i > j)
    };
    let best = (0..n).find(|&i| feasible[i] && (0..n).all(|j| j == i || !feasible[j] || beats(i, j)));
    Ok(assemble(req, rows, feasible, best))
}

fn assemble(
    req: &PlanRequest,
    rows: Vec<(RuntimeBreakdown, f64)>,
    feasible: Vec<bool>,
    best: Option<usize>,
) -> PartitionPlan {
    let full = req.profile.full_enclave_breakdown();
    let (decision, breakdown, score) = match best {
        None => (
            Decision::FullEnclave {
                reason: FullEnclaveReason::NoPrivatePartition,
            },
            full,
            None,
        ),
        Some(i) if rows[i].0.total_seconds >= full.total_seconds => (
            Decision::FullEnclave {
                reason: FullEnclaveReason::NoSpeedup,
            },
            full,
            None,
        ),
        Some(i) => (
            Decision::Partition {
                boundary_label: rows[i].0.boundary_label.clone(),
            },
            rows[i].0.clone(),
            Some(rows[i].1),
        ),
    };
    PartitionPlan {
        model_name: req.model_name.clone(),
        decision,
        breakdown,
        full_enclave_seconds: req.profile.full_enclave_seconds,
        privacy_score_at_choice: score,
        alternatives: rows
            .into_iter()
            .zip(feasible)
            .map(|((breakdown, mean_ssim), feasible)| Alternative {
                boundary_label: breakdown.boundary_label.clone(),
                breakdown,
                mean_ssim,
                feasible,
            })
            .collect(),
    }
}
