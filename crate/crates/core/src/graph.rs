//! Directed STGC graph assembly and the comparison graphs.
//!
//! Edges always point from cause to effect. Adjacency matrices are indexed
//! `[cause, effect]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_pair, min_aligned_len};
use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::granger::{f_test, fit_restricted, fit_unrestricted, GrangerConfig, RegressionFit};
use crate::lag::{CostMatrix, LagMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct CausalEdge {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
    /// Test statistics; absent for edges that were not tested (random graphs,
    /// planted ground truth).
    pub f_stat: Option<f64>,
    pub p_value: Option<f64>,
}

/// Directed graph with edges sorted by `(cause, effect)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalGraph {
    node_ids: Vec<String>,
    edges: Vec<CausalEdge>,
}

impl CausalGraph {
    pub fn new(node_ids: Vec<String>, mut edges: Vec<CausalEdge>) -> Result<Self> {
        let n = node_ids.len();
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.cause >= n || e.effect >= n {
                return Err(Error::invalid(format!(
                    "edge {}->{} outside {n} nodes",
                    e.cause, e.effect
                )));
            }
            if e.cause == e.effect {
                return Err(Error::invalid(format!("self-edge on node {}", e.cause)));
            }
            if !seen.insert((e.cause, e.effect)) {
                return Err(Error::invalid(format!(
                    "duplicate edge {}->{}",
                    e.cause, e.effect
                )));
            }
        }
        edges.sort_by_key(|e| (e.cause, e.effect));
        Ok(Self { node_ids, edges })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[CausalEdge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, cause: usize, effect: usize) -> bool {
        self.edges
            .binary_search_by_key(&(cause, effect), |e| (e.cause, e.effect))
            .is_ok()
    }

    pub fn edge(&self, cause: usize, effect: usize) -> Option<&CausalEdge> {
        self.edges
            .binary_search_by_key(&(cause, effect), |e| (e.cause, e.effect))
            .ok()
            .map(|k| &self.edges[k])
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n()];
        for e in &self.edges {
            deg[e.effect] += 1;
        }
        deg
    }

    /// Fraction of the `n (n - 1)` possible directed edges present.
    pub fn density(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        self.edges.len() as f64 / (n * (n - 1)) as f64
    }

    /// Graph JSON document; `config` is echoed verbatim.
    pub fn to_file(&self, config: serde_json::Value) -> GraphFile {
        GraphFile {
            nodes: self.node_ids.clone(),
            directed: true,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    cause: self.node_ids[e.cause].clone(),
                    effect: self.node_ids[e.effect].clone(),
                    lag: e.lag,
                    f: e.f_stat,
                    p: e.p_value,
                })
                .collect(),
            config,
            version: crate::VERSION.to_string(),
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let index: BTreeMap<&str, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        if index.len() != file.nodes.len() {
            return Err(Error::invalid("graph file lists duplicate node ids"));
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("edge references unknown node '{id}'")))
        };
        let edges = file
            .edges
            .iter()
            .map(|r| {
                Ok(CausalEdge {
                    cause: lookup(&r.cause)?,
                    effect: lookup(&r.effect)?,
                    lag: r.lag,
                    f_stat: r.f,
                    p_value: r.p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.nodes.clone(), edges)
    }

    pub fn write_json(&self, config: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
        write_json(&self.to_file(config), path)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GraphFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_file(&file)
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// On-disk graph document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<String>,
    pub directed: bool,
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub cause: String,
    pub effect: String,
    pub lag: usize,
    pub f: Option<f64>,
    pub p: Option<f64>,
}

/// Why pairs were or were not tested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: usize,
    pub tested: usize,
    pub significant: usize,
    pub undefined_lag: usize,
    pub too_short: usize,
    pub degenerate: usize,
    pub ridge: usize,
}

#[derive(Clone, Debug)]
pub struct StgcBuild {
    pub graph: CausalGraph,
    pub stats: PairStats,
}

enum PairOutcome {
    UndefinedLag,
    TooShort,
    Degenerate,
    Tested {
        edge: Option<CausalEdge>,
        ridge: bool,
    },
}

/// Tests every ordered pair with a defined lag and keeps the significant ones
/// as `cause -> effect` edges.
///
/// `train` should be the normalized training split. With `top_k`, each effect
/// keeps only its `k` strongest causes, ranked by p-value, then lag, then
/// cause index.
pub fn build_stgc_graph(
    train: &TimeSeriesMatrix,
    lags: &LagMatrix,
    config: &GrangerConfig,
    top_k: Option<usize>,
) -> Result<StgcBuild> {
    config.validate()?;
    let n = train.n_sensors();
    if lags.n() != n {
        return Err(Error::Shape(format!(
            "lag matrix covers {} nodes, series has {n}",
            lags.n()
        )));
    }
    let t = train.n_steps();
    let m = config.var_order;

    // the restricted fit depends only on the effect and the lag
    let mut keys = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if let Some(s) = lags.get(i, j).filter(|_| i != j) {
                if t > s && t - s >= min_aligned_len(m) {
                    keys.insert((j, s));
                }
            }
        }
    }
    let keys: Vec<(usize, usize)> = keys.into_iter().collect();
    let fits: Vec<Option<RegressionFit>> = keys
        .par_iter()
        .map(|&(j, s)| fit_restricted(&train.series(j)[s..], m).ok())
        .collect();
    let restricted: BTreeMap<(usize, usize), Option<RegressionFit>> =
        keys.into_iter().zip(fits).collect();

    let outcomes: Vec<PairOutcome> = (0..n * n)
        .into_par_iter()
        .filter(|k| k / n != k % n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let Some(s) = lags.get(i, j) else {
                return PairOutcome::UndefinedLag;
            };
            let Some(fit_r) = restricted.get(&(j, s)) else {
                return PairOutcome::TooShort;
            };
            let Some(fit_r) = fit_r else {
                return PairOutcome::Degenerate;
            };
            let pair = match align_pair(train.series(i), train.series(j), s as i64) {
                Ok(p) => p,
                Err(_) => return PairOutcome::TooShort,
            };
            let fit_u = match fit_unrestricted(pair.effect, pair.cause, m) {
                Ok(f) => f,
                Err(_) => return PairOutcome::Degenerate,
            };
            match f_test(fit_r, &fit_u, m, config.significance) {
                Ok(res) => PairOutcome::Tested {
                    edge: res.significant.then_some(CausalEdge {
                        cause: i,
                        effect: j,
                        lag: s,
                        f_stat: Some(res.f_stat),
                        p_value: Some(res.p_value),
                    }),
                    ridge: res.ridge,
                },
                Err(_) => PairOutcome::Degenerate,
            }
        })
        .collect();

    let mut stats = PairStats {
        pairs: n * (n - 1),
        ..PairStats::default()
    };
    let mut edges = Vec::new();
    for outcome in outcomes {
        match outcome {
            PairOutcome::UndefinedLag => stats.undefined_lag += 1,
            PairOutcome::TooShort => stats.too_short += 1,
            PairOutcome::Degenerate => stats.degenerate += 1,
            PairOutcome::Tested { edge, ridge } => {
                stats.tested += 1;
                stats.ridge += usize::from(ridge);
                if let Some(e) = edge {
                    stats.significant += 1;
                    edges.push(e);
                }
            }
        }
    }
    if stats.tested == 0 {
        return Err(Error::EmptyGraph(format!(
            "no pair could be tested ({} undefined lag, {} too short, {} degenerate)",
            stats.undefined_lag, stats.too_short, stats.degenerate
        )));
    }
    if let Some(k) = top_k {
        edges = keep_top_k(edges, k);
    }
    let graph = CausalGraph::new(train.sensor_ids().to_vec(), edges)?;
    Ok(StgcBuild { graph, stats })
}

fn keep_top_k(edges: Vec<CausalEdge>, k: usize) -> Vec<CausalEdge> {
    let mut by_effect: BTreeMap<usize, Vec<CausalEdge>> = BTreeMap::new();
    for e in edges {
        by_effect.entry(e.effect).or_default().push(e);
    }
    let mut kept = Vec::new();
    for (_, mut incoming) in by_effect {
        incoming.sort_by(|a, b| {
            let pa = a.p_value.unwrap_or(1.0);
            let pb = b.p_value.unwrap_or(1.0);
            pa.total_cmp(&pb)
                .then(a.lag.cmp(&b.lag))
                .then(a.cause.cmp(&b.cause))
        });
        kept.extend(incoming.into_iter().take(k));
    }
    kept
}

/// Dense weighted adjacency indexed `[cause, effect]` (row sends to column).
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    pub node_ids: Vec<String>,
    pub weights: Array2<f64>,
    pub symmetric: bool,
}

impl AdjacencyMatrix {
    pub fn new(node_ids: Vec<String>, weights: Array2<f64>) -> Result<Self> {
        let (r, c) = weights.dim();
        if r != c || r != node_ids.len() {
            return Err(Error::Shape(format!(
                "{r}x{c} weights for {} nodes",
                node_ids.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("adjacency weight {w} outside [0, 1]")));
        }
        let symmetric = weights == weights.t();
        Ok(Self {
            node_ids,
            weights,
            symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    /// Number of nonzero off-diagonal entries.
    pub fn n_links(&self) -> usize {
        self.weights
            .indexed_iter()
            .filter(|((i, j), w)| i != j && **w != 0.0)
            .count()
    }

    /// Dense CSV with a header row of node ids and one row of weights per
    /// source node.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", self.node_ids.join(",")).map_err(io)?;
        for row in self.weights.rows() {
            let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
            writeln!(out, "{}", cells.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)?;
        let mut records = reader.records();
        let header: Vec<String> = match records.next() {
            Some(r) => r?.iter().map(|c| c.trim().to_string()).collect(),
            None => {
                return Err(Error::Parse {
                    path: shown,
                    line: 1,
                    msg: "empty adjacency file".into(),
                })
            }
        };
        let n = header.len();
        let mut weights = Array2::zeros((n, n));
        let mut rows = 0;
        for (k, rec) in records.enumerate() {
            let rec = rec?;
            let line = k + 2;
            if rows >= n || rec.len() != n {
                return Err(Error::Parse {
                    path: shown,
                    line,
                    msg: format!("adjacency must be {n}x{n}"),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                weights[[rows, j]] = cell.trim().parse().map_err(|_| Error::Parse {
                    path: shown.clone(),
                    line,
                    msg: format!("non-numeric weight '{cell}'"),
                })?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                path: shown,
                line: rows + 1,
                msg: format!("expected {n} rows of weights, found {rows}"),
            });
        }
        Self::new(header, weights)
    }
}

/// Binary adjacency with `1` at `[cause, effect]` for every edge.
pub fn to_adjacency(graph: &CausalGraph, add_self_loops: bool) -> AdjacencyMatrix {
    let n = graph.n();
    let mut w = Array2::zeros((n, n));
    for e in graph.edges() {
        w[[e.cause, e.effect]] = 1.0;
    }
    if add_self_loops {
        for i in 0..n {
            w[[i, i]] = 1.0;
        }
    }
    AdjacencyMatrix::new(graph.node_ids().to_vec(), w).expect("binary weights are valid")
}

/// Gaussian-kernel distance graph: `exp(-d^2 / sigma^2)` with `sigma` the
/// standard deviation of all finite off-diagonal costs, thresholded at
/// `kappa`. The diagonal is 1 and unreachable pairs are 0.
pub fn build_sd_graph(costs: &CostMatrix, node_ids: &[String], kappa: f64) -> Result<AdjacencyMatrix> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Config(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    let n = costs.n();
    let finite: Vec<f64> = costs
        .dist
        .indexed_iter()
        .filter(|((i, j), d)| i != j && d.is_finite())
        .map(|(_, d)| *d)
        .collect();
    if finite.is_empty() {
        return Err(Error::invalid("all pairwise distances are infinite"));
    }
    let mu = finite.iter().sum::<f64>() / finite.len() as f64;
    let sigma = (finite.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / finite.len() as f64).sqrt();
    let kernel = |d: f64| {
        if !d.is_finite() {
            0.0
        } else if d == 0.0 {
            1.0
        } else if sigma == 0.0 {
            0.0
        } else {
            (-(d * d) / (sigma * sigma)).exp()
        }
    };
    let mut w = Array2::zeros((n, n));
    for ((i, j), d) in costs.dist.indexed_iter() {
        w[[i, j]] = if i == j {
            1.0
        } else {
            let v = kernel(*d);
            if v < kappa {
                0.0
            } else {
                v
            }
        };
    }
    AdjacencyMatrix::new(node_ids.to_vec(), w)
}

/// Self-connections only.
pub fn identity_graph(node_ids: &[String]) -> Result<AdjacencyMatrix> {
    if node_ids.is_empty() {
        return Err(Error::invalid("identity graph needs at least one node"));
    }
    AdjacencyMatrix::new(node_ids.to_vec(), Array2::eye(node_ids.len()))
}

/// Random graph with the reference's in-degree sequence. Each effect draws
/// its causes uniformly without replacement from all other nodes. Lags come
/// from `lags` where defined, else 0.
pub fn random_graph_matching(
    reference: &CausalGraph,
    lags: Option<&LagMatrix>,
    seed: u64,
) -> Result<CausalGraph> {
    if reference.n_edges() == 0 {
        return Err(Error::invalid("reference graph has no edges"));
    }
    let n = reference.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(reference.n_edges());
    for (effect, &k) in reference.in_degrees().iter().enumerate() {
        if k > n - 1 {
            return Err(Error::invalid(format!(
                "node {effect} has in-degree {k} > {}",
                n - 1
            )));
        }
        if k == 0 {
            continue;
        }
        for pick in sample(&mut rng, n - 1, k) {
            let cause = if pick >= effect { pick + 1 } else { pick };
            let lag = lags.and_then(|l| l.get(cause, effect)).unwrap_or(0);
            edges.push(CausalEdge {
                cause,
                effect,
                lag,
                f_stat: None,
                p_value: None,
            });
        }
    }
    CausalGraph::new(reference.node_ids().to_vec(), edges)
}

/// Sensor coordinates keyed by id, as `(lon, lat)`.
pub fn load_coordinates(path: impl AsRef<Path>) -> Result<BTreeMap<String, (f64, f64)>> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let find = |names: &[&str]| {
        header
            .iter()
            .position(|h| names.contains(&h.to_ascii_lowercase().as_str()))
    };
    let (Some(id_col), Some(lon_col), Some(lat_col)) = (
        find(&["id", "sensor_id"]),
        find(&["lon", "longitude"]),
        find(&["lat", "latitude"]),
    ) else {
        return Err(Error::Parse {
            path: shown,
            line: 1,
            msg: "expected columns id, lon, lat".into(),
        });
    };
    let mut out = BTreeMap::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |col: usize| -> Result<f64> {
            rec.get(col)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: shown.clone(),
                    line,
                    msg: "non-numeric coordinate".into(),
                })
        };
        let id = rec.get(id_col).unwrap_or_default().to_string();
        out.insert(id, (num(lon_col)?, num(lat_col)?));
    }
    Ok(out)
}

/// GeoJSON FeatureCollection with one LineString per edge whose endpoints
/// both have coordinates. Returns the number of edges written.
pub fn write_geojson(
    graph: &CausalGraph,
    coords: &BTreeMap<String, (f64, f64)>,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let ids = graph.node_ids();
    let features: Vec<serde_json::Value> = graph
        .edges()
        .iter()
        .filter_map(|e| {
            let a = coords.get(&ids[e.cause])?;
            let b = coords.get(&ids[e.effect])?;
            Some(serde_json::json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[a.0, a.1], [b.0, b.1]],
                },
                "properties": {
                    "cause": ids[e.cause],
                    "effect": ids[e.effect],
                    "lag": e.lag,
                    "p": e.p_value,
                },
            }))
        })
        .collect();
    let count = features.len();
    write_json(
        &serde_json::json!({ "type": "FeatureCollection", "features": features }),
        path,
    )?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    fn edge(cause: usize, effect: usize) -> CausalEdge {
        CausalEdge {
            cause,
            effect,
            lag: 0,
            f_stat: None,
            p_value: None,
        }
    }

    #[test]
    fn adjacency_keeps_direction() {
        // ordering (B, A): B -> A
        let g = CausalGraph::new(vec!["B".into(), "A".into()], vec![edge(0, 1)]).unwrap();
        let a = to_adjacency(&g, true);
        assert_eq!(a.weights, array![[1.0, 1.0], [0.0, 1.0]]);
        assert!(!a.symmetric);

        let empty = CausalGraph::new(ids(3), vec![]).unwrap();
        assert_eq!(to_adjacency(&empty, true).weights, Array2::<f64>::eye(3));
        assert_eq!(to_adjacency(&empty, false).weights, Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn rejects_self_and_duplicate_edges() {
        assert!(CausalGraph::new(ids(2), vec![edge(0, 0)]).is_err());
        assert!(CausalGraph::new(ids(2), vec![edge(0, 1), edge(0, 1)]).is_err());
    }

    #[test]
    fn sd_kernel_values() {
        let inf = f64::INFINITY;
        // finite off-diagonal costs: 1, 3 -> sigma = 1
        let costs = CostMatrix {
            dist: array![[0.0, 1.0, inf], [3.0, 0.0, inf], [inf, inf, 0.0]],
        };
        let g = build_sd_graph(&costs, &ids(3), 0.0).unwrap();
        assert!((g.weights[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.weights[[1, 0]] - (-9.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.weights[[0, 2]], 0.0);
        assert_eq!(g.weights[[2, 2]], 1.0);

        let touching = CostMatrix {
            dist: array![[0.0, 0.0, 2.0], [1.0, 0.0, 4.0], [inf, inf, 0.0]],
        };
        assert_eq!(build_sd_graph(&touching, &ids(3), 0.5).unwrap().weights[[0, 1]], 1.0);

        let kept = build_sd_graph(&costs, &ids(3), 0.3679).unwrap();
        assert_eq!(kept.weights[[0, 1]], 0.0);
        let kept = build_sd_graph(&costs, &ids(3), 0.3678).unwrap();
        assert!(kept.weights[[0, 1]] > 0.0);

        let all_inf = CostMatrix {
            dist: array![[0.0, inf], [inf, 0.0]],
        };
        assert!(build_sd_graph(&all_inf, &ids(2), 0.1).is_err());
    }

    #[test]
    fn sd_kappa_one_leaves_diagonal() {
        let costs = CostMatrix {
            dist: array![[0.0, 2.0, 4.0], [2.0, 0.0, 1.0], [4.0, 1.0, 0.0]],
        };
        let g = build_sd_graph(&costs, &ids(3), 1.0).unwrap();
        assert_eq!(g.weights, Array2::<f64>::eye(3));
        assert!(g.symmetric);
    }

    #[test]
    fn identity_sizes() {
        assert_eq!(identity_graph(&ids(1)).unwrap().weights, array![[1.0]]);
        let g = identity_graph(&ids(3)).unwrap();
        assert_eq!(g.weights, Array2::<f64>::eye(3));
        assert_eq!(g.n_links(), 0);
    }

    #[test]
    fn random_graph_keeps_in_degrees() {
        // in-degrees (2, 0, 1)
        let reference =
            CausalGraph::new(ids(3), vec![edge(1, 0), edge(2, 0), edge(0, 2)]).unwrap();
        for seed in 0..20 {
            let r = random_graph_matching(&reference, None, seed).unwrap();
            assert_eq!(r.in_degrees(), vec![2, 0, 1]);
        }
        let a = random_graph_matching(&reference, None, 5).unwrap();
        let b = random_graph_matching(&reference, None, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_graphs_differ_across_seeds() {
        let n = 12;
        let edges: Vec<CausalEdge> = (1..n).map(|j| edge(0, j)).collect();
        let reference = CausalGraph::new(ids(n), edges).unwrap();
        let a = random_graph_matching(&reference, None, 1).unwrap();
        let b = random_graph_matching(&reference, None, 2).unwrap();
        assert_ne!(a.edges(), b.edges());
    }

    #[test]
    fn top_k_ordering() {
        let mk = |cause, lag, p| CausalEdge {
            cause,
            effect: 0,
            lag,
            f_stat: Some(1.0),
            p_value: Some(p),
        };
        let kept = keep_top_k(vec![mk(3, 2, 0.01), mk(1, 2, 0.01), mk(2, 1, 0.01), mk(4, 0, 0.001)], 3);
        let causes: Vec<usize> = kept.iter().map(|e| e.cause).collect();
        assert_eq!(causes, vec![4, 2, 1]);
        assert!(keep_top_k(vec![mk(1, 0, 0.01)], 0).is_empty());
    }

    #[test]
    fn graph_json_round_trip() {
        let g = CausalGraph::new(
            ids(3),
            vec![CausalEdge {
                cause: 2,
                effect: 0,
                lag: 4,
                f_stat: Some(12.5),
                p_value: Some(1e-6),
            }],
        )
        .unwrap();
        let file = g.to_file(serde_json::json!({"alpha": 0.05}));
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"cause\":\"n2\""));
        let back = CausalGraph::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
