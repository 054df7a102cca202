//! End-to-end graph discovery: road costs, lags, alignment and pairwise tests.

use crate::data::{zscore, DistanceTable, NormScope, NormStats, TimeSeriesMatrix};
use crate::error::Result;
use crate::granger::GrangerConfig;
use crate::graph::{build_stgc_graph, StgcBuild};
use crate::lag::{
    all_pairs_shortest_costs, build_road_graph, lag_distribution, node_velocities, spatial_temporal_lags, CostMatrix,
    LagConfig, LagDistribution, LagMatrix,
};

#[derive(Clone, Debug, Default)]
pub struct DiscoveryConfig {
    pub granger: GrangerConfig,
    pub lag: LagConfig,
    pub top_k: Option<usize>,
    pub normalization: NormScope,
    /// Test every pair at lag 0 instead of its travel-time lag.
    pub skip_alignment: bool,
}

#[derive(Clone, Debug)]
pub struct Discovery {
    pub build: StgcBuild,
    pub costs: CostMatrix,
    pub lags: LagMatrix,
    pub lag_distribution: LagDistribution,
    pub norm: NormStats,
}

/// Runs discovery on `series`, which should hold training data only.
/// Velocities come from the raw readings; tests run on z-scored values.
pub fn discover(series: &TimeSeriesMatrix, distances: &DistanceTable, config: &DiscoveryConfig) -> Result<Discovery> {
    let road = build_road_graph(distances, series.sensor_ids())?;
    let costs = all_pairs_shortest_costs(&road);
    let velocities = node_velocities(series);
    let interval = series.sampling_interval();
    let mut lags = spatial_temporal_lags(&costs, &velocities, interval, &config.lag)?;
    let lag_distribution = lag_distribution(&costs, &velocities, interval, &config.lag)?;
    if config.skip_alignment {
        lags = lags.without_alignment();
    }
    let norm = NormStats::fit(series, config.normalization)?;
    let z = zscore(series, &norm)?;
    let build = build_stgc_graph(&z, &lags, &config.granger, config.top_k)?;
    log::info!(
        "{} nodes, {} of {} pairs tested, {} edges",
        series.n_sensors(),
        build.stats.tested,
        build.stats.pairs,
        build.graph.n_edges()
    );
    Ok(Discovery {
        build,
        costs,
        lags,
        lag_distribution,
        norm,
    })
}
