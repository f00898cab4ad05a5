use serde::{Deserialize, Serialize};

use crate::trainer::TrainConfig;

/// One recorded point of a learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: u64,
    pub j: Vec<f64>,
    pub total: f64,
    /// Expected rate of change of `total` per unit step size at this point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl Record {
    pub fn new(step: u64, j: Vec<f64>) -> Self {
        let total = j.iter().sum();
        Self {
            step,
            j,
            total,
            rate: None,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = Some(rate);
        self
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySource {
    Flow { system: String, start: Vec<f64> },
    Train { config: Box<TrainConfig>, seed: u64 },
}

/// Time-ordered performance records, from an exact flow or a stochastic run.
///
/// `eta` is the step size between consecutive records and is what normalized
/// progress divides by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub eta: f64,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn new(eta: f64, source: TrajectorySource) -> Self {
        Self {
            records: Vec::new(),
            eta,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of components `K`.
    pub fn components(&self) -> usize {
        self.records.first().map_or(0, |r| r.j.len())
    }

    pub fn first(&self) -> Option<&Record> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Forward-difference progress `(J(t+w) − J(t)) / (w·η)` for every `t` with `t + w` recorded.
    pub fn progress(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        if self.records.len() <= w {
            return Vec::new();
        }
        (0..self.records.len() - w)
            .map(|t| {
                let a = &self.records[t];
                let b = &self.records[t + w];
                let dt = (b.step - a.step) as f64 * self.eta;
                (b.total - a.total) / dt
            })
            .collect()
    }

    /// Recorded expected rates, if every record carries one.
    pub fn rates(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.rate).collect()
    }
}
