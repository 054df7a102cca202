//! Road-network travel costs and spatial-temporal lags.
//!
//! The lag from source `i` to target `j` is the shortest road cost `i -> j`
//! divided by the average speed observed at `i`, expressed in whole sampling
//! steps.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DistanceTable, TimeSeriesMatrix};
use crate::error::{Error, Result};

/// Sentinel stored in [`LagMatrix`] for pairs without a usable lag.
pub const UNDEFINED_LAG: i64 = -1;

/// Directed road graph over the sensor set of a time-series matrix.
#[derive(Clone, Debug)]
pub struct RoadGraph {
    node_ids: Vec<String>,
    out_edges: Vec<Vec<(usize, f64)>>,
    n_edges: usize,
    dropped: usize,
}

impl RoadGraph {
    /// Graph from explicit `(from, to, cost)` index triples.
    pub fn from_edges(node_ids: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = node_ids.len();
        let mut out_edges = vec![Vec::new(); n];
        for &(u, v, c) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!("edge ({u},{v}) outside {n} nodes")));
            }
            if !(c >= 0.0) {
                return Err(Error::invalid(format!("edge ({u},{v}) has negative cost {c}")));
            }
            out_edges[u].push((v, c));
        }
        Ok(Self {
            node_ids,
            out_edges,
            n_edges: edges.len(),
            dropped: 0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Number of table records discarded because an endpoint is not a sensor.
    pub fn dropped_edges(&self) -> usize {
        self.dropped
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, f64)] {
        &self.out_edges[node]
    }
}

/// Restricts `table` to the sensors in `sensor_ids`, preserving their order.
pub fn build_road_graph(table: &DistanceTable, sensor_ids: &[String]) -> Result<RoadGraph> {
    if table.is_empty() {
        return Err(Error::invalid("distance table has no edges"));
    }
    let index: BTreeMap<&str, usize> = sensor_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut edges = Vec::with_capacity(table.len());
    let mut dropped = 0;
    for rec in table.records() {
        match (index.get(rec.from.as_str()), index.get(rec.to.as_str())) {
            (Some(&u), Some(&v)) => edges.push((u, v, rec.cost)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} distance records with endpoints outside the sensor set");
    }
    if edges.is_empty() {
        return Err(Error::invalid(
            "no distance records connect sensors of the speed matrix",
        ));
    }
    let mut graph = RoadGraph::from_edges(sensor_ids.to_vec(), &edges)?;
    graph.dropped = dropped;
    Ok(graph)
}

/// All-pairs minimum road cost. Unreachable pairs are `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub dist: Array2<f64>,
}

impl CostMatrix {
    pub fn n(&self) -> usize {
        self.dist.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.dist[[from, to]]
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties on node index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest costs by label-setting search.
pub fn shortest_costs_from(graph: &RoadGraph, source: usize) -> Vec<f64> {
    let n = graph.n_nodes();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        cost: 0.0,
        node: source,
    });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(next, w) in &graph.out_edges[node] {
            let cand = cost + w;
            if cand < dist[next] {
                dist[next] = cand;
                heap.push(Frontier {
                    cost: cand,
                    node: next,
                });
            }
        }
    }
    dist
}

/// One shortest-path search per source, run in parallel. The result does not
/// depend on scheduling since each row is computed independently.
pub fn all_pairs_shortest_costs(graph: &RoadGraph) -> CostMatrix {
    let n = graph.n_nodes();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| shortest_costs_from(graph, s))
        .collect();
    let mut dist = Array2::from_elem((n, n), f64::INFINITY);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, d) in row.into_iter().enumerate() {
            dist[[i, j]] = d;
        }
    }
    CostMatrix { dist }
}

/// Mean of the valid (non-zero) readings of `node`, or `None` when every
/// reading is missing.
pub fn average_velocity(matrix: &TimeSeriesMatrix, node: usize) -> Option<f64> {
    let (sum, count) = matrix
        .row(node)
        .iter()
        .zip(matrix.valid().row(node))
        .filter(|(_, ok)| **ok)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn node_velocities(matrix: &TimeSeriesMatrix) -> Vec<Option<f64>> {
    (0..matrix.n_sensors())
        .map(|i| average_velocity(matrix, i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagConfig {
    /// Converts `cost / velocity` into hours of travel.
    pub unit_scale: f64,
    /// Largest lag kept; longer travel times become undefined.
    pub s_max: usize,
    /// Use the reverse-direction cost when `i -> j` is unreachable but
    /// `j -> i` is not. Such entries are flagged in [`LagMatrix::fallback`].
    pub reverse_fallback: bool,
}

impl Default for LagConfig {
    fn default() -> Self {
        Self {
            unit_scale: 1.0,
            s_max: 12,
            reverse_fallback: true,
        }
    }
}

impl LagConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::Config(format!(
                "unit_scale must be positive, got {}",
                self.unit_scale
            )));
        }
        if self.s_max < 1 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Travel time from a source in fractional sampling steps, before rounding.
pub fn travel_steps(cost: f64, velocity: f64, sampling_interval: f64, unit_scale: f64) -> f64 {
    let hours = unit_scale * cost / velocity;
    hours * 60.0 / sampling_interval
}

/// Round half up to the nearest whole step.
fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Per-pair lags in timesteps; rows are sources, columns are targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LagMatrix {
    lags: Array2<i64>,
    fallback: Array2<bool>,
    s_max: usize,
}

impl LagMatrix {
    /// Matrix from explicit entries; `-1` marks undefined pairs.
    pub fn from_array(lags: Array2<i64>, s_max: usize) -> Result<Self> {
        let (n, m) = lags.dim();
        if n != m {
            return Err(Error::Shape(format!("lag matrix must be square, got {n}x{m}")));
        }
        for ((i, j), &s) in lags.indexed_iter() {
            if i == j && s != 0 {
                return Err(Error::invalid(format!("lag ({i},{i}) must be 0")));
            }
            if s != UNDEFINED_LAG && !(0..=s_max as i64).contains(&s) {
                return Err(Error::invalid(format!(
                    "lag ({i},{j}) = {s} outside [0, {s_max}]"
                )));
            }
        }
        Ok(Self {
            fallback: Array2::from_elem((n, n), false),
            lags,
            s_max,
        })
    }

    pub fn n(&self) -> usize {
        self.lags.nrows()
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    /// Raw entry, `-1` when undefined.
    pub fn raw(&self, source: usize, target: usize) -> i64 {
        self.lags[[source, target]]
    }

    pub fn get(&self, source: usize, target: usize) -> Option<usize> {
        let s = self.lags[[source, target]];
        (s >= 0).then_some(s as usize)
    }

    pub fn is_fallback(&self, source: usize, target: usize) -> bool {
        self.fallback[[source, target]]
    }

    pub fn lags(&self) -> &Array2<i64> {
        &self.lags
    }

    pub fn fallback(&self) -> &Array2<bool> {
        &self.fallback
    }

    /// Same defined pairs with every lag forced to zero (alignment ablation).
    pub fn without_alignment(&self) -> Self {
        Self {
            lags: self.lags.mapv(|s| if s >= 0 { 0 } else { s }),
            fallback: self.fallback.clone(),
            s_max: self.s_max,
        }
    }

    /// Number of off-diagonal pairs with a defined lag.
    pub fn n_defined_pairs(&self) -> usize {
        self.lags
            .indexed_iter()
            .filter(|((i, j), s)| i != j && **s >= 0)
            .count()
    }

    /// Counts of off-diagonal defined lags, indexed by lag value.
    pub fn histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.s_max + 1];
        for ((i, j), &s) in self.lags.indexed_iter() {
            if i != j && s >= 0 {
                hist[s as usize] += 1;
            }
        }
        hist
    }

    /// Dense CSV: header `source,<ids...>`, one row per source, `-1` for
    /// undefined pairs.
    pub fn write_csv(&self, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if ids.len() != self.n() {
            return Err(Error::Shape(format!("{} ids for {} lag rows", ids.len(), self.n())));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "source,{}", ids.join(",")).map_err(io)?;
        for (i, id) in ids.iter().enumerate() {
            let row: Vec<String> = self.lags.row(i).iter().map(|s| s.to_string()).collect();
            writeln!(out, "{id},{}", row.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Fractional travel steps before the cap, `None` for undefined pairs.
/// Entry flags report whether the reverse-direction cost was used.
pub fn raw_travel_steps(
    costs: &CostMatrix,
    velocities: &[Option<f64>],
    sampling_interval: f64,
    config: &LagConfig,
) -> Result<Array2<Option<(f64, bool)>>> {
    config.validate()?;
    if !(sampling_interval > 0.0 && sampling_interval.is_finite()) {
        return Err(Error::invalid(format!(
            "sampling interval must be positive, got {sampling_interval}"
        )));
    }
    let n = costs.n();
    if velocities.len() != n {
        return Err(Error::Shape(format!("{} velocities for {n} nodes", velocities.len())));
    }
    let mut out = Array2::from_elem((n, n), None);
    for i in 0..n {
        out[[i, i]] = Some((0.0, false));
        let Some(v) = velocities[i].filter(|v| *v > 0.0 && v.is_finite()) else {
            continue;
        };
        for j in 0..n {
            if i == j {
                continue;
            }
            let direct = costs.get(i, j);
            let (cost, flipped) = if direct.is_finite() {
                (direct, false)
            } else if config.reverse_fallback && costs.get(j, i).is_finite() {
                (costs.get(j, i), true)
            } else {
                continue;
            };
            out[[i, j]] = Some((
                travel_steps(cost, v, sampling_interval, config.unit_scale),
                flipped,
            ));
        }
    }
    Ok(out)
}

/// Whole-step lags, rounded half up. Pairs beyond `s_max`, unreachable pairs
/// and sources without a velocity get [`UNDEFINED_LAG`]; the diagonal is 0.
pub fn spatial_temporal_lags(
    costs: &CostMatrix,
    velocities: &[Option<f64>],
    sampling_interval: f64,
    config: &LagConfig,
) -> Result<LagMatrix> {
    let raw = raw_travel_steps(costs, velocities, sampling_interval, config)?;
    let n = costs.n();
    let mut lags = Array2::from_elem((n, n), UNDEFINED_LAG);
    let mut fallback = Array2::from_elem((n, n), false);
    for ((i, j), entry) in raw.indexed_iter() {
        if i == j {
            lags[[i, j]] = 0;
            continue;
        }
        if let Some((steps, flipped)) = entry {
            let s = round_half_up(*steps);
            if s <= config.s_max as i64 {
                lags[[i, j]] = s;
                fallback[[i, j]] = *flipped;
            }
        }
    }
    Ok(LagMatrix {
        lags,
        fallback,
        s_max: config.s_max,
    })
}

/// Summary of the uncapped lag distribution over off-diagonal pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagDistribution {
    pub n_pairs: usize,
    pub n_defined: usize,
    pub n_fallback: usize,
    pub fraction_le_6: f64,
    pub max_lag: Option<i64>,
    /// `histogram[s]` counts defined pairs with rounded lag `s`.
    pub histogram: Vec<usize>,
}

pub fn lag_distribution(
    costs: &CostMatrix,
    velocities: &[Option<f64>],
    sampling_interval: f64,
    config: &LagConfig,
) -> Result<LagDistribution> {
    let raw = raw_travel_steps(costs, velocities, sampling_interval, config)?;
    let n = costs.n();
    let mut lags = Vec::new();
    let mut n_fallback = 0;
    for ((i, j), entry) in raw.indexed_iter() {
        if i == j {
            continue;
        }
        if let Some((steps, flipped)) = entry {
            lags.push(round_half_up(*steps));
            n_fallback += usize::from(*flipped);
        }
    }
    let max_lag = lags.iter().copied().max();
    let mut histogram = vec![0; max_lag.map_or(0, |m| m as usize + 1)];
    for &s in &lags {
        histogram[s as usize] += 1;
    }
    let le6 = lags.iter().filter(|&&s| s <= 6).count();
    Ok(LagDistribution {
        n_pairs: n * n.saturating_sub(1),
        n_defined: lags.len(),
        n_fallback,
        fraction_le_6: if lags.is_empty() { 0.0 } else { le6 as f64 / lags.len() as f64 },
        max_lag,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    }

    #[test]
    fn road_graph_filters_unknown_endpoints() {
        let mut t = DistanceTable::new();
        t.insert("A", "B", 1.0).unwrap();
        let g = build_road_graph(&t, &ids(3)).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges(), g.dropped_edges()), (3, 1, 0));

        t.insert("A", "X", 1.0).unwrap();
        let g = build_road_graph(&t, &ids(3)).unwrap();
        assert_eq!(g.dropped_edges(), 1);
        assert_eq!(g.n_edges(), 1);

        assert!(build_road_graph(&DistanceTable::new(), &ids(3)).is_err());
    }

    #[test]
    fn chain_costs() {
        let g = RoadGraph::from_edges(ids(3), &[(0, 1, 2.0), (1, 2, 3.0)]).unwrap();
        let c = all_pairs_shortest_costs(&g);
        assert_eq!(c.get(0, 2), 5.0);
        assert_eq!(c.get(2, 0), f64::INFINITY);
        for i in 0..3 {
            assert_eq!(c.get(i, i), 0.0);
        }
    }

    #[test]
    fn velocity_ignores_missing() {
        let m = TimeSeriesMatrix::new(
            array![[60.0, 0.0, 30.0], [50.0, 50.0, 50.0], [0.0, 0.0, 0.0]],
            ids(3),
            5.0,
        )
        .unwrap();
        assert_eq!(average_velocity(&m, 0), Some(45.0));
        assert_eq!(average_velocity(&m, 1), Some(50.0));
        assert_eq!(average_velocity(&m, 2), None);
    }

    #[test]
    fn five_miles_at_sixty_is_one_step() {
        let costs = CostMatrix {
            dist: array![[0.0, 5.0], [f64::INFINITY, 0.0]],
        };
        let cfg = LagConfig {
            reverse_fallback: false,
            ..LagConfig::default()
        };
        let lags = spatial_temporal_lags(&costs, &[Some(60.0), Some(60.0)], 5.0, &cfg).unwrap();
        assert_eq!(lags.get(0, 1), Some(1));
        assert_eq!(lags.get(0, 0), Some(0));
        assert_eq!(lags.raw(1, 0), UNDEFINED_LAG);
    }

    #[test]
    fn reverse_fallback_is_flagged() {
        let costs = CostMatrix {
            dist: array![[0.0, 10.0], [f64::INFINITY, 0.0]],
        };
        let lags =
            spatial_temporal_lags(&costs, &[Some(60.0), Some(30.0)], 5.0, &LagConfig::default())
                .unwrap();
        // 10 miles at 30 mph = 20 min = 4 steps, borrowed from the 0 -> 1 cost
        assert_eq!(lags.get(1, 0), Some(4));
        assert!(lags.is_fallback(1, 0));
        assert!(!lags.is_fallback(0, 1));
    }

    #[test]
    fn cap_undefined_velocity_and_rounding() {
        let costs = CostMatrix {
            dist: array![[0.0, 65.0, 12.5], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
        };
        let cfg = LagConfig::default();
        let lags = spatial_temporal_lags(&costs, &[Some(60.0), None, Some(60.0)], 5.0, &cfg).unwrap();
        // 65 min = 13 steps > 12
        assert_eq!(lags.raw(0, 1), UNDEFINED_LAG);
        // 12.5 min = 2.5 steps rounds half up
        assert_eq!(lags.get(0, 2), Some(3));
        assert_eq!(lags.raw(1, 0), UNDEFINED_LAG);
        assert_eq!(lags.get(1, 1), Some(0));
    }

    #[test]
    fn non_positive_interval_rejected() {
        let costs = CostMatrix {
            dist: array![[0.0, 1.0], [1.0, 0.0]],
        };
        assert!(spatial_temporal_lags(&costs, &[Some(1.0), Some(1.0)], 0.0, &LagConfig::default()).is_err());
    }

    #[test]
    fn distribution_reports_uncapped_max() {
        let costs = CostMatrix {
            dist: array![[0.0, 65.0], [5.0, 0.0]],
        };
        let d = lag_distribution(&costs, &[Some(60.0), Some(60.0)], 5.0, &LagConfig::default()).unwrap();
        assert_eq!(d.max_lag, Some(13));
        assert_eq!(d.n_defined, 2);
        assert_eq!(d.fraction_le_6, 0.5);
    }
}
