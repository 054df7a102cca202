//! Road costs to travel-time lags on a small directed network.

use ndarray::Array2;

use stgc::data::{DistanceTable, TimeSeriesMatrix};
use stgc::lag::{all_pairs_shortest_costs, build_road_graph, node_velocities, spatial_temporal_lags, LagConfig};

fn main() -> stgc::Result<()> {
    let ids: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();

    // costs in miles; D is reachable only from C
    let mut table = DistanceTable::new();
    table.insert("A", "B", 2.5)?;
    table.insert("B", "C", 5.0)?;
    table.insert("A", "C", 9.0)?;
    table.insert("C", "D", 12.0)?;

    // average speeds of 30, 60, 45 and 50 mph over two readings
    let speeds = Array2::from_shape_vec((4, 2), vec![30.0, 30.0, 55.0, 65.0, 45.0, 45.0, 50.0, 50.0])
        .expect("4x2");
    let series = TimeSeriesMatrix::new(speeds, ids.clone(), 5.0)?;

    let road = build_road_graph(&table, &ids)?;
    let costs = all_pairs_shortest_costs(&road);
    let velocities = node_velocities(&series);
    let lags = spatial_temporal_lags(&costs, &velocities, 5.0, &LagConfig::default())?;

    println!("shortest costs (rows are sources):");
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = (0..4).map(|j| format!("{:>6.1}", costs.get(i, j))).collect();
        println!("  {id} {}", row.join(" "));
    }
    println!("lags in 5-minute steps (-1 = undefined, * = reverse cost used):");
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = (0..4)
            .map(|j| {
                let mark = if lags.is_fallback(i, j) { "*" } else { " " };
                format!("{:>3}{mark}", lags.raw(i, j))
            })
            .collect();
        println!("  {id} {}", row.join(" "));
    }
    println!("lag histogram: {:?}", lags.histogram());
    Ok(())
}
