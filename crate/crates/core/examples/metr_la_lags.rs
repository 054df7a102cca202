//! Lag distribution of a real sensor network.
//!
//! cargo run --release --example metr_la_lags -- speeds.csv distances.csv [unit_scale]
//!
//! Distances in meters need a unit scale of 1/1609.34 to turn them into miles.

use stgc::data::{load_distance_table, load_speed_matrix};
use stgc::lag::{all_pairs_shortest_costs, build_road_graph, lag_distribution, node_velocities, LagConfig};

fn main() -> stgc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: {} SPEEDS.csv DISTANCES.csv [UNIT_SCALE]", args[0]);
        std::process::exit(2);
    }
    let unit_scale = args.get(3).map_or(Ok(1.0), |s| s.parse::<f64>()).unwrap_or_else(|e| {
        eprintln!("bad unit scale: {e}");
        std::process::exit(2);
    });

    let speeds = load_speed_matrix(&args[1], 5.0)?;
    let table = load_distance_table(&args[2])?;
    let road = build_road_graph(&table, speeds.sensor_ids())?;
    println!(
        "{} sensors, {} steps, {} road links ({} dropped)",
        speeds.n_sensors(),
        speeds.n_steps(),
        road.n_edges(),
        road.dropped_edges()
    );

    let costs = all_pairs_shortest_costs(&road);
    let cfg = LagConfig {
        unit_scale,
        ..Default::default()
    };
    let dist = lag_distribution(&costs, &node_velocities(&speeds), speeds.sampling_interval(), &cfg)?;
    println!(
        "{} of {} pairs reachable, {} via reverse cost",
        dist.n_defined, dist.n_pairs, dist.n_fallback
    );
    println!("fraction with lag <= 6: {:.3}", dist.fraction_le_6);
    println!("largest lag: {:?}", dist.max_lag);
    for (s, count) in dist.histogram.iter().enumerate().take(cfg.s_max + 1) {
        println!("  {s:>3} {count}");
    }
    Ok(())
}
