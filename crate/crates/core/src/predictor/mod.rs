//! Graph-gated recurrent forecaster used to compare input graphs.
//!
//! Each step propagates `[x_t | h_{t-1}]` over the graph, then applies a
//! gated recurrent update whose weights are shared by every node. The final
//! hidden state is read out to all horizons at once.

mod model;
mod train;

pub use model::{forward, loss_and_gradients, ModelParams, Sample, Tensor};
pub use train::{
    predict_test, train, train_with_stats, write_training_log, Checkpoint, EpochLog,
    PredictionBatch, TensorDump, TrainOutcome,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::NormScope;
use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;

/// Row-stochastic propagation operator. Row `i` lists the nodes whose
/// features node `i` aggregates, so messages flow from cause to effect.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl PropagationMatrix {
    /// Normalizes `adj` so each receiving node averages over its senders.
    /// The adjacency is indexed `[sender, receiver]`, hence the transpose.
    pub fn from_adjacency(adj: &AdjacencyMatrix) -> Result<Self> {
        let n = adj.n();
        let mut rows = Vec::with_capacity(n);
        for receiver in 0..n {
            let col = adj.weights.column(receiver);
            let total: f64 = col.sum();
            if !(total > 0.0) {
                return Err(Error::invalid(format!(
                    "node {} ({}) receives from no node; include self-loops in the adjacency",
                    receiver, adj.node_ids[receiver]
                )));
            }
            let row: Vec<(usize, f64)> = col
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(sender, w)| (sender, w / total))
                .collect();
            rows.push(row);
        }
        Ok(Self { n, rows })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, receiver: usize) -> &[(usize, f64)] {
        &self.rows[receiver]
    }

    /// Dense `[receiver, sender]` form.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[[i, j]] = w;
            }
        }
        out
    }

    /// `out[i] = sum_j P[i][j] * input[j]` over row-major `[n, width]` blocks.
    pub(crate) fn propagate(&self, input: &[f64], width: usize, out: &mut [f64]) {
        out.fill(0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let dst = &mut out[i * width..(i + 1) * width];
            for &(j, w) in row {
                let src = &input[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Adds `P^T * grad` into `out`.
    pub(crate) fn propagate_transpose_add(&self, grad: &[f64], width: usize, out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let src = &grad[i * width..(i + 1) * width];
            for &(j, w) in row {
                let dst = &mut out[j * width..(j + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

/// Shorthand for [`PropagationMatrix::from_adjacency`].
pub fn normalize_propagation(adj: &AdjacencyMatrix) -> Result<PropagationMatrix> {
    PropagationMatrix::from_adjacency(adj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Input window length in timesteps.
    pub input_window: usize,
    /// Forecast horizons in timesteps ahead of the last input step.
    pub horizons: Vec<usize>,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Spacing between evaluation instants on the test split; defaults to
    /// the largest horizon so targets never overlap.
    pub eval_stride: Option<usize>,
    pub normalization: NormScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_window: 12,
            horizons: vec![3, 6, 9, 12],
            hidden_dim: 32,
            learning_rate: 1e-3,
            max_epochs: 50,
            batch_size: 32,
            patience: 10,
            seed: 0,
            eval_stride: None,
            normalization: NormScope::PerSensor,
        }
    }
}

impl TrainConfig {
    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self, s_max: usize) -> Result<()> {
        if self.input_window < 1 {
            return Err(Error::Config("input_window must be at least 1".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("at least one horizon is required".into()));
        }
        if let Some(h) = self.horizons.iter().find(|h| **h < 1 || **h > s_max) {
            return Err(Error::Config(format!(
                "horizon {h} outside 1..={s_max} (s_max)"
            )));
        }
        if self.hidden_dim < 1 || self.batch_size < 1 {
            return Err(Error::Config("hidden_dim and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.eval_stride == Some(0) {
            return Err(Error::Config("eval_stride must be positive".into()));
        }
        Ok(())
    }
}
