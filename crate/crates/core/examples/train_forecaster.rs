//! Train the graph-gated forecaster with the planted graph and with the
//! identity graph, then compare test errors per horizon.

use serde_json::json;

use stgc::data::chronological_split;
use stgc::eval::{compare, MetricsReport};
use stgc::graph::{identity_graph, to_adjacency};
use stgc::predictor::{predict_test, train, PropagationMatrix, TrainConfig};
use stgc::synth::Scenario;

fn main() -> stgc::Result<()> {
    let mut scenario = Scenario::random_dag(10, 12, 4..=8, 0.9, 21)?;
    scenario.length = 1500;
    let data = scenario.generate()?;
    let ids = data.series.sensor_ids().to_vec();
    let splits = chronological_split(&data.series, [0.7, 0.1, 0.2])?;

    let config = TrainConfig {
        hidden_dim: 16,
        learning_rate: 5e-3,
        max_epochs: 10,
        patience: 3,
        ..Default::default()
    };

    let graphs = [
        ("planted", to_adjacency(&data.truth, true)),
        ("identity", identity_graph(&ids)?),
    ];
    let mut reports = Vec::new();
    for (label, adj) in graphs {
        let prop = PropagationMatrix::from_adjacency(&adj)?;
        let outcome = train(&prop, &splits, &config)?;
        let last = outcome.log.last().expect("at least one epoch");
        println!(
            "{label}: {} epochs, best {}, final val mse {:.4}",
            outcome.log.len(),
            outcome.best_epoch,
            last.val_mse
        );
        let batch = predict_test(&outcome.params, &prop, &splits.test, &outcome.stats, &config)?;
        reports.push(MetricsReport::from_predictions(label, &batch, 5.0, json!({}))?);
    }
    print!("{}", compare(&reports)?.render_text());
    Ok(())
}
