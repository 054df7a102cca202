//! The three comparison graphs: Gaussian road distance, identity and
//! degree-matched random.

use stgc::graph::{build_sd_graph, identity_graph, random_graph_matching};
use stgc::lag::{all_pairs_shortest_costs, build_road_graph};
use stgc::synth::Scenario;

fn main() -> stgc::Result<()> {
    let scenario = Scenario::random_dag(8, 10, 2..=4, 0.8, 3)?;
    let data = scenario.generate()?;
    let ids = data.series.sensor_ids().to_vec();

    let costs = all_pairs_shortest_costs(&build_road_graph(&data.distances, &ids)?);
    for kappa in [0.0, 0.1, 0.5, 0.9] {
        let sd = build_sd_graph(&costs, &ids, kappa)?;
        println!("sd kappa {kappa:.1}: {} off-diagonal links", sd.n_links());
    }

    let eye = identity_graph(&ids)?;
    println!("identity: {} off-diagonal links", eye.n_links());

    // here the planted graph stands in for a discovered one
    let reference = &data.truth;
    println!("reference in-degrees {:?}", reference.in_degrees());
    for seed in 0..3 {
        let g = random_graph_matching(reference, None, seed)?;
        let edges: Vec<String> = g.edges().iter().map(|e| format!("{}->{}", e.cause, e.effect)).collect();
        println!("random seed {seed}: {}", edges.join(" "));
    }
    Ok(())
}
