//! Execution metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTime {
    pub label: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub rows: usize,
    /// Emitted tuple width in value slots.
    pub width: usize,
    /// rows * width * 4.
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: String,
    pub seed: u64,
    pub stages: Vec<StageTime>,
    pub per_node: Vec<NodeMetrics>,
    /// One-hot lookups that missed the dictionary.
    pub unknown_categories: u64,
    pub total_ms: f64,
}

impl RunMetrics {
    pub fn total_bytes(&self) -> u64 {
        self.per_node.iter().map(|n| n.bytes).sum()
    }
}
