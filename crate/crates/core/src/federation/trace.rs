use serde::{Deserialize, Serialize};

use crate::privacy::Epsilon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Centralized,
    Selective,
    #[serde(rename = "fedavg")]
    FedAvg,
    NaiveSgd,
    #[serde(rename = "dp-fedavg")]
    DpFedAvg,
}

/// One line of a round trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u64,
    pub protocol: ProtocolKind,
    pub participants: Vec<usize>,
    /// Mean training loss of the participants, at the start of their round.
    pub loss: f64,
    /// Filled in by the harness on evaluation rounds.
    pub accuracy: Option<f64>,
    pub scalars_up: u64,
    pub scalars_down: u64,
    pub epsilon_so_far: Option<Epsilon>,
    /// Post-clip L2 norms of participant deltas (private rounds only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clipped_norms: Vec<f64>,
}

impl RoundTrace {
    pub fn new(
        round: u64,
        protocol: ProtocolKind,
        participants: Vec<usize>,
        loss: f64,
        scalars_up: u64,
        scalars_down: u64,
    ) -> Self {
        Self {
            round,
            protocol,
            participants,
            loss,
            accuracy: None,
            scalars_up,
            scalars_down,
            epsilon_so_far: None,
            clipped_norms: Vec::new(),
        }
    }
}

/// Scalars moved (uploaded, downloaded) in the traced rounds.
pub fn communication_cost<'a>(traces: impl IntoIterator<Item = &'a RoundTrace>) -> (u64, u64) {
    traces
        .into_iter()
        .fold((0, 0), |(u, d), t| (u + t.scalars_up, d + t.scalars_down))
}
