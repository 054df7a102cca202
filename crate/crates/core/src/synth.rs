//! Synthetic road networks with planted causal structure and known delays.
//!
//! Root nodes follow a stationary AR(1) process around `base_speed`. Each
//! driven node is `base + sum beta * (x_cause(t - d) - base) + noise`, built
//! in topological order. Every planted edge gets a road link whose cost
//! makes the lag engine reproduce the planted delay.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DistanceTable, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::graph::{CausalEdge, CausalGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub cause: usize,
    pub effect: usize,
    /// Delay in timesteps.
    pub delay: usize,
    pub beta: f64,
}

/// Extra non-causal road link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub n_nodes: usize,
    /// Optional sensor ids; defaults to `n0`, `n1`, ...
    pub node_ids: Option<Vec<String>>,
    pub topology: Vec<Link>,
    pub planted_edges: Vec<PlantedEdge>,
    /// Standard deviation of the innovation added to driven nodes.
    pub noise_std: f64,
    pub base_speed: f64,
    /// Stationary standard deviation of root nodes.
    pub root_std: f64,
    /// AR(1) coefficient of root nodes.
    pub root_ar: f64,
    pub length: usize,
    pub burn_in: usize,
    pub sampling_interval: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_nodes: 3,
            node_ids: None,
            topology: Vec::new(),
            planted_edges: Vec::new(),
            noise_std: 0.5,
            base_speed: 60.0,
            root_std: 5.0,
            root_ar: 0.9,
            length: 2000,
            burn_in: 300,
            sampling_interval: 5.0,
            seed: 0,
        }
    }
}

impl Scenario {
    /// `n_nodes` in a line, each driving the next with the same delay.
    pub fn chain(n_nodes: usize, delay: usize, beta: f64, seed: u64) -> Self {
        let planted_edges = (1..n_nodes)
            .map(|j| PlantedEdge {
                cause: j - 1,
                effect: j,
                delay,
                beta,
            })
            .collect();
        Self {
            n_nodes,
            planted_edges,
            seed,
            ..Self::default()
        }
    }

    /// Random DAG with `n_edges` planted edges. Delays are drawn uniformly
    /// from `delays`; nodes are ordered by a random permutation so edge
    /// direction is not tied to node index.
    pub fn random_dag(n_nodes: usize, n_edges: usize, delays: RangeInclusive<usize>, beta: f64, seed: u64) -> Result<Self> {
        let max_edges = n_nodes * n_nodes.saturating_sub(1) / 2;
        if n_edges > max_edges {
            return Err(Error::Config(format!(
                "{n_edges} edges requested, a DAG on {n_nodes} nodes holds at most {max_edges}"
            )));
        }
        if delays.is_empty() || *delays.start() < 1 {
            return Err(Error::Config(format!("bad delay range {delays:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order: Vec<usize> = sample(&mut rng, n_nodes, n_nodes).into_vec();
        let pairs: Vec<(usize, usize)> = (0..n_nodes)
            .flat_map(|a| (a + 1..n_nodes).map(move |b| (a, b)))
            .collect();
        let mut picks = sample(&mut rng, pairs.len(), n_edges).into_vec();
        picks.sort_unstable();
        let planted_edges = picks
            .into_iter()
            .map(|p| {
                let (a, b) = pairs[p];
                PlantedEdge {
                    cause: order[a],
                    effect: order[b],
                    delay: rng.random_range(delays.clone()),
                    beta,
                }
            })
            .collect();
        Ok(Self {
            n_nodes,
            planted_edges,
            seed,
            ..Self::default()
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.node_ids
            .clone()
            .unwrap_or_else(|| (0..self.n_nodes).map(|i| format!("n{i}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes;
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
        }
        if let Some(ids) = &self.node_ids {
            if ids.len() != n {
                return Err(Error::Config(format!("{} node ids for {n} nodes", ids.len())));
            }
        }
        if self.length < 2 {
            return Err(Error::Config("length must be at least 2".into()));
        }
        let positive = [
            ("base_speed", self.base_speed),
            ("root_std", self.root_std),
            ("sampling_interval", self.sampling_interval),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if !(self.root_ar.abs() < 1.0) {
            return Err(Error::Config(format!("|root_ar| must be < 1, got {}", self.root_ar)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.planted_edges {
            if e.cause >= n || e.effect >= n || e.cause == e.effect {
                return Err(Error::Config(format!("bad planted edge {} -> {}", e.cause, e.effect)));
            }
            if !seen.insert((e.cause, e.effect)) {
                return Err(Error::Config(format!("duplicate planted edge {} -> {}", e.cause, e.effect)));
            }
            if e.delay < 1 {
                return Err(Error::Config(format!("edge {} -> {}: delay must be >= 1", e.cause, e.effect)));
            }
            if !(e.beta.abs() < 1.0) {
                return Err(Error::Config(format!(
                    "edge {} -> {}: |beta| must be < 1 for stationarity, got {}",
                    e.cause, e.effect, e.beta
                )));
            }
        }
        for l in &self.topology {
            if l.from >= n || l.to >= n || l.from == l.to || !(l.cost >= 0.0 && l.cost.is_finite()) {
                return Err(Error::Config(format!("bad topology link {} -> {} ({})", l.from, l.to, l.cost)));
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Kahn's algorithm over planted edges; fails on a cycle.
    fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.n_nodes;
        let mut indeg = vec![0usize; n];
        for e in &self.planted_edges {
            indeg[e.effect] += 1;
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for e in self.planted_edges.iter().filter(|e| e.cause == i) {
                indeg[e.effect] -= 1;
                if indeg[e.effect] == 0 {
                    ready.push(e.effect);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Config("planted edges contain a cycle".into()));
        }
        Ok(order)
    }

    /// Sets `noise_std` to `ratio` times the smallest noiseless signal
    /// standard deviation among driven nodes.
    pub fn calibrate_noise(&mut self, ratio: f64) -> Result<f64> {
        let mut quiet = self.clone();
        quiet.noise_std = 0.0;
        let data = quiet.generate()?;
        let driven: BTreeSet<usize> = self.planted_edges.iter().map(|e| e.effect).collect();
        let min_std = driven
            .iter()
            .map(|&j| population_std(data.series.series(j)))
            .fold(f64::INFINITY, f64::min);
        if !min_std.is_finite() {
            return Err(Error::Config("scenario has no driven nodes".into()));
        }
        self.noise_std = ratio * min_std;
        Ok(self.noise_std)
    }

    pub fn generate(&self) -> Result<SyntheticData> {
        self.validate()?;
        let order = self.topological_order()?;
        let (n, t) = (self.n_nodes, self.length);
        let total = t + self.burn_in;

        let mut root_rng = ChaCha8Rng::seed_from_u64(self.seed);
        root_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed);
        noise_rng.set_stream(2);
        let innov = Normal::new(0.0, self.root_std * (1.0 - self.root_ar * self.root_ar).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Config(e.to_string()))?;

        // deviations from base speed
        let mut dev = Array2::<f64>::zeros((n, total));
        for &j in &order {
            let parents: Vec<&PlantedEdge> = self.planted_edges.iter().filter(|e| e.effect == j).collect();
            if parents.is_empty() {
                let mut x = innov.sample(&mut root_rng) / (1.0 - self.root_ar * self.root_ar).sqrt();
                for k in 0..total {
                    if k > 0 {
                        x = self.root_ar * x + innov.sample(&mut root_rng);
                    }
                    dev[[j, k]] = x;
                }
            } else {
                for k in 0..total {
                    let mut v = 0.0;
                    for e in &parents {
                        if k >= e.delay {
                            v += e.beta * dev[[e.cause, k - e.delay]];
                        }
                    }
                    if self.noise_std > 0.0 {
                        v += noise.sample(&mut noise_rng);
                    }
                    dev[[j, k]] = v;
                }
            }
        }
        let values = Array2::from_shape_fn((n, t), |(i, k)| self.base_speed + dev[[i, k + self.burn_in]]);
        if let Some(((i, k), v)) = values.indexed_iter().find(|(_, v)| **v <= 0.0) {
            return Err(Error::Config(format!(
                "node {i} reaches non-positive speed {v} at step {k}; raise base_speed or lower root_std"
            )));
        }
        let ids = self.ids();
        let series = TimeSeriesMatrix::new(values, ids.clone(), self.sampling_interval)?;

        let mut distances = DistanceTable::new();
        for l in &self.topology {
            distances.insert(&ids[l.from], &ids[l.to], l.cost)?;
        }
        let mut truth_edges = Vec::with_capacity(self.planted_edges.len());
        for e in &self.planted_edges {
            let velocity = series.series(e.cause).iter().sum::<f64>() / t as f64;
            let cost = e.delay as f64 * (self.sampling_interval / 60.0) * velocity;
            distances.insert(&ids[e.cause], &ids[e.effect], cost)?;
            truth_edges.push(CausalEdge {
                cause: e.cause,
                effect: e.effect,
                lag: e.delay,
                f_stat: None,
                p_value: None,
            });
        }
        let truth = CausalGraph::new(ids, truth_edges)?;
        Ok(SyntheticData {
            series,
            distances,
            truth,
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::graph::write_json(self, path)
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub series: TimeSeriesMatrix,
    pub distances: DistanceTable,
    pub truth: CausalGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub precision: f64,
    pub recall: f64,
    /// Fraction of true positives whose detected lag equals the planted delay.
    pub lag_accuracy: f64,
    pub true_positives: usize,
    pub detected: usize,
    pub planted: usize,
}

/// Directed-edge precision and recall of `detected` against `truth`.
/// Precision and lag accuracy are 0 when there is nothing to score.
pub fn score_recovery(detected: &CausalGraph, truth: &CausalGraph) -> Result<Recovery> {
    if truth.n_edges() == 0 {
        return Err(Error::invalid("ground-truth graph has no edges"));
    }
    if detected.node_ids() != truth.node_ids() {
        return Err(Error::Shape("detected and truth graphs have different node ids".into()));
    }
    let mut tp = 0;
    let mut lag_hits = 0;
    for e in detected.edges() {
        if let Some(t) = truth.edge(e.cause, e.effect) {
            tp += 1;
            lag_hits += usize::from(t.lag == e.lag);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Recovery {
        precision: ratio(tp, detected.n_edges()),
        recall: ratio(tp, truth.n_edges()),
        lag_accuracy: ratio(lag_hits, tp),
        true_positives: tp,
        detected: detected.n_edges(),
        planted: truth.n_edges(),
    })
}
