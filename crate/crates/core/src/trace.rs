//! Ordered log of formation events with cumulative signaling overhead and
//! social welfare, used for convergence and overhead curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Init,
    Switch,
    Merge,
    Try,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    /// Overhead of this event alone, in units of τ.
    pub overhead_tau: u64,
    /// Overhead accumulated up to and including this event.
    pub cumulative_overhead_tau: u64,
    /// Social welfare after the event.
    pub welfare: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: EventKind, overhead_tau: u64, welfare: f64) {
        let cumulative_overhead_tau = self.total_overhead_tau() + overhead_tau;
        self.events.push(TraceEvent {
            kind,
            overhead_tau,
            cumulative_overhead_tau,
            welfare,
        });
    }

    pub fn total_overhead_tau(&self) -> u64 {
        self.events.last().map_or(0, |e| e.cumulative_overhead_tau)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn final_welfare(&self) -> Option<f64> {
        self.events.last().map(|e| e.welfare)
    }

    /// Overhead that follows the initialization event(s).
    pub fn post_init_overhead_tau(&self) -> u64 {
        let init: u64 = self
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Init)
            .map(|e| e.overhead_tau)
            .sum();
        self.total_overhead_tau() - init
    }

    /// One line per event, for diagnostics.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, e) in self.events.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k:>6} {:<6} +{:<6} total {:<8} welfare {:.12}",
                format!("{:?}", e.kind).to_lowercase(),
                e.overhead_tau,
                e.cumulative_overhead_tau,
                e.welfare
            );
        }
        out
    }
}
