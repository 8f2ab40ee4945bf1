//! Split execution with an audited trust boundary.
//!
//! The enclave is a logical phase: it alone sees the input and the critical
//! layers. Whatever the untrusted phase receives goes through the ledger,
//! which refuses any event that would break the boundary rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{predict, CostProfile, RuntimeBreakdown};
use crate::engine::forward;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::tensor::{Tensor, ELEMENT_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Tee,
    Untrusted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    ModelPartitionCritical,
    ModelPartitionNoncritical,
    Input,
    FeatureMap,
    Output,
}

impl Artifact {
    fn may_leave_tee(self) -> bool {
        matches!(self, Artifact::FeatureMap | Artifact::ModelPartitionNoncritical)
    }

    fn tee_only(self) -> bool {
        matches!(self, Artifact::Input | Artifact::ModelPartitionCritical)
    }
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Artifact::ModelPartitionCritical => "model_partition_critical",
            Artifact::ModelPartitionNoncritical => "model_partition_noncritical",
            Artifact::Input => "input",
            Artifact::FeatureMap => "feature_map",
            Artifact::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub step: u8,
    pub zone: Zone,
    pub artifact: Artifact,
    pub bytes: u64,
}

/// Append-only record of where each artifact lives at each framework step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustLedger {
    events: Vec<LedgerEvent>,
}

impl TrustLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Appends an event after checking it against the boundary rules.
    pub fn record(&mut self, event: LedgerEvent) -> Result<()> {
        if !(1..=6).contains(&event.step) {
            return Err(Error::LedgerViolation(format!("step {} outside 1..=6", event.step)));
        }
        if self.events.last().is_some_and(|e| e.step > event.step) {
            return Err(Error::LedgerViolation(format!(
                "step {} recorded after step {}",
                event.step,
                self.events.last().unwrap().step
            )));
        }
        if event.zone == Zone::Untrusted {
            if event.artifact.tee_only() {
                return Err(Error::LedgerViolation(format!(
                    "{} must never reach the untrusted zone",
                    event.artifact
                )));
            }
            if self.was_in_tee(event.artifact) && !event.artifact.may_leave_tee() {
                return Err(Error::LedgerViolation(format!(
                    "{} may not cross from the enclave",
                    event.artifact
                )));
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn was_in_tee(&self, artifact: Artifact) -> bool {
        self.events
            .iter()
            .any(|e| e.artifact == artifact && e.zone == Zone::Tee)
    }

    /// Events that move an artifact from the enclave to the untrusted zone.
    pub fn crossings(&self) -> Vec<&LedgerEvent> {
        self.events
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                e.zone == Zone::Untrusted
                    && self.events[..*i]
                        .iter()
                        .any(|p| p.artifact == e.artifact && p.zone == Zone::Tee)
            })
            .map(|(_, e)| e)
            .collect()
    }

    pub fn feature_map_crossings(&self) -> usize {
        self.crossings()
            .iter()
            .filter(|e| e.artifact == Artifact::FeatureMap)
            .count()
    }

    /// Re-checks every rule over the complete history.
    pub fn verify(&self) -> Result<()> {
        let mut replay = TrustLedger::new();
        for e in &self.events {
            replay.record(*e)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,zone,artifact,bytes\n");
        for e in &self.events {
            let zone = match e.zone {
                Zone::Tee => "tee",
                Zone::Untrusted => "untrusted",
            };
            out.push_str(&format!("{},{},{},{}\n", e.step, zone, e.artifact, e.bytes));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub output: Tensor,
    pub ledger: TrustLedger,
    pub breakdown: RuntimeBreakdown,
}

/// Runs the critical partition in the enclave phase, hands the feature map
/// and the non-critical partition to the untrusted phase, and runs the rest
/// there.
pub fn simulate_pipeline(
    model: &ModelGraph,
    boundary_label: &str,
    input: &Tensor,
    profile: &CostProfile,
) -> Result<PipelineRun> {
    input.expect_shape(model.input_shape())?;
    let assignment = model.assignment_for(boundary_label)?;
    let breakdown = predict(profile, &assignment)?;
    let layers = model.layers().len();
    let param_bytes = |range| model.parameter_count(range) * ELEMENT_BYTES;
    let mut ledger = TrustLedger::new();
    let mut log = |step, zone, artifact, bytes| {
        ledger.record(LedgerEvent {
            step,
            zone,
            artifact,
            bytes,
        })
    };

    // enclave phase
    log(2, Zone::Tee, Artifact::Input, input.byte_size())?;
    let (critical, noncritical) = model.split(boundary_label)?;
    log(3, Zone::Tee, Artifact::ModelPartitionCritical, param_bytes(0..assignment.boundary))?;
    log(3, Zone::Tee, Artifact::ModelPartitionNoncritical, param_bytes(assignment.boundary..layers))?;
    let feature_map = forward(&critical, input)?;
    log(4, Zone::Tee, Artifact::FeatureMap, feature_map.byte_size())?;
    log(5, Zone::Untrusted, Artifact::FeatureMap, feature_map.byte_size())?;

    // untrusted phase: only `feature_map` and `noncritical` are in scope
    let output = untrusted_phase(&noncritical, feature_map, &mut log, param_bytes(assignment.boundary..layers))?;

    ledger.verify()?;
    Ok(PipelineRun {
        output,
        ledger,
        breakdown,
    })
}

fn untrusted_phase(
    noncritical: &ModelGraph,
    feature_map: Tensor,
    log: &mut impl FnMut(u8, Zone, Artifact, u64) -> Result<()>,
    noncritical_bytes: u64,
) -> Result<Tensor> {
    log(6, Zone::Untrusted, Artifact::ModelPartitionNoncritical, noncritical_bytes)?;
    let output = forward(noncritical, &feature_map)?;
    log(6, Zone::Untrusted, Artifact::Output, output.byte_size())?;
    Ok(output)
}
