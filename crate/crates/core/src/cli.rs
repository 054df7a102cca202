//! `stgc` command-line front end.
//!
//! Every subcommand reads an optional JSON [`RunConfig`], applies flag
//! overrides on top, and echoes the resolved configuration plus the crate
//! version into each JSON artifact it writes. Progress goes to stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{chronological_split, load_distance_table, load_speed_matrix, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::eval::{compare, per_node_metrics, write_node_metrics_csv, MetricsReport};
use crate::granger::GrangerConfig;
use crate::graph::{
    build_sd_graph, identity_graph, load_coordinates, random_graph_matching, to_adjacency, write_geojson,
    write_json, AdjacencyMatrix, CausalGraph,
};
use crate::lag::{all_pairs_shortest_costs, build_road_graph, LagConfig};
use crate::pipeline::{discover, DiscoveryConfig};
use crate::predictor::{predict_test, train, Checkpoint, PropagationMatrix, TrainConfig};
use crate::synth::{score_recovery, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrangerSection {
    pub var_order: usize,
    pub alpha: f64,
    /// Keep at most this many causes per effect, strongest first.
    pub top_k: Option<usize>,
}

impl Default for GrangerSection {
    fn default() -> Self {
        let g = GrangerConfig::default();
        Self {
            var_order: g.var_order,
            alpha: g.significance,
            top_k: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdSection {
    pub kappa: f64,
}

impl Default for SdSection {
    fn default() -> Self {
        Self { kappa: 0.1 }
    }
}

/// Single source of truth for a run. Flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub speeds: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub coordinates: Option<PathBuf>,
    /// Minutes between readings.
    pub sampling_interval: f64,
    pub granger: GrangerSection,
    pub lag: LagConfig,
    pub sd: SdSection,
    pub train: TrainConfig,
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            speeds: None,
            distances: None,
            coordinates: None,
            sampling_interval: 5.0,
            granger: GrangerSection::default(),
            lag: LagConfig::default(),
            sd: SdSection::default(),
            train: TrainConfig::default(),
            split: [0.7, 0.1, 0.2],
        }
    }
}

impl RunConfig {
    pub fn granger_config(&self) -> GrangerConfig {
        GrangerConfig {
            var_order: self.granger.var_order,
            significance: self.granger.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.granger_config().validate()?;
        self.lag.validate()?;
        self.train.validate(self.lag.s_max)?;
        if !(0.0..=1.0).contains(&self.sd.kappa) {
            return Err(Error::Config(format!("sd.kappa must lie in [0, 1], got {}", self.sd.kappa)));
        }
        if !(self.sampling_interval > 0.0 && self.sampling_interval.is_finite()) {
            return Err(Error::Config(format!(
                "sampling_interval must be positive, got {}",
                self.sampling_interval
            )));
        }
        Ok(())
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn speeds_path(&self) -> Result<&Path> {
        self.speeds
            .as_deref()
            .ok_or_else(|| Error::Config("no speed file given (--speeds or config 'speeds')".into()))
    }

    fn distances_path(&self) -> Result<&Path> {
        self.distances
            .as_deref()
            .ok_or_else(|| Error::Config("no distance file given (--distances or config 'distances')".into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "stgc", version, about = "Spatial-temporal Granger causality graphs for traffic sensor networks")]
pub struct Cli {
    /// Worker threads for pairwise tests and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the STGC graph from speeds and road distances.
    BuildGraph(BuildGraphArgs),
    /// Build a comparison graph: Gaussian distance, identity or random.
    Baseline(BaselineArgs),
    /// Train the forecaster on one graph and evaluate it on the test split.
    TrainEval(TrainEvalArgs),
    /// Tabulate several metric reports.
    Compare(CompareArgs),
    /// Generate a synthetic dataset from a scenario file.
    Synth(SynthArgs),
    /// Score a detected graph against a ground-truth graph.
    Score(ScoreArgs),
}

#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub speeds: Option<PathBuf>,
    #[arg(long)]
    pub distances: Option<PathBuf>,
    #[arg(long)]
    pub coordinates: Option<PathBuf>,
    /// Minutes between readings.
    #[arg(long)]
    pub sampling_interval: Option<f64>,
    #[arg(long)]
    pub var_order: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub s_max: Option<usize>,
    #[arg(long)]
    pub unit_scale: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Comma-separated horizons in timesteps.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub split: Option<Vec<f64>>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if self.speeds.is_some() {
            cfg.speeds = self.speeds.clone();
        }
        if self.distances.is_some() {
            cfg.distances = self.distances.clone();
        }
        if self.coordinates.is_some() {
            cfg.coordinates = self.coordinates.clone();
        }
        set!(self.sampling_interval, cfg.sampling_interval);
        set!(self.var_order, cfg.granger.var_order);
        set!(self.alpha, cfg.granger.alpha);
        if self.top_k.is_some() {
            cfg.granger.top_k = self.top_k;
        }
        set!(self.s_max, cfg.lag.s_max);
        set!(self.unit_scale, cfg.lag.unit_scale);
        set!(self.kappa, cfg.sd.kappa);
        set!(self.window, cfg.train.input_window);
        set!(self.horizons, cfg.train.horizons);
        set!(self.hidden_dim, cfg.train.hidden_dim);
        set!(self.lr, cfg.train.learning_rate);
        set!(self.epochs, cfg.train.max_epochs);
        set!(self.patience, cfg.train.patience);
        set!(self.batch_size, cfg.train.batch_size);
        set!(self.seed, cfg.train.seed);
        if let Some(s) = &self.split {
            let [a, b, c] = s[..] else {
                return Err(Error::Config(format!("--split takes 3 fractions, got {}", s.len())));
            };
            cfg.split = [a, b, c];
        }
        cfg.validate()?;
        for path in [&cfg.speeds, &cfg.distances, &cfg.coordinates].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Test every pair at lag 0 (ablation).
    #[arg(long)]
    pub no_align: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Sd,
    Identity,
    Random,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Reference graph whose in-degrees a random graph matches.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Number of random graphs.
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    /// Seed of the first random graph; later graphs use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainEvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Graph JSON (edges get self-loops) or adjacency CSV.
    #[arg(long)]
    pub graph: PathBuf,
    /// Label in the report; defaults to the graph file stem.
    #[arg(long)]
    pub label: Option<String>,
    /// Replicate number for reports averaged by `compare`.
    #[arg(long)]
    pub replicate: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sets the noise level to this fraction of the weakest driven signal.
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub detected: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Write the scores here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::BuildGraph(a) => cmd_build_graph(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::TrainEval(a) => cmd_train_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Score(a) => cmd_score(&a),
    })
}

/// Process exit status for a result: 0 success, 1 computation error, 2 input
/// or configuration error.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_input_error() => 2,
        Err(_) => 1,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_speeds(cfg: &RunConfig) -> Result<TimeSeriesMatrix> {
    load_speed_matrix(cfg.speeds_path()?, cfg.sampling_interval)
}

pub fn cmd_build_graph(args: &BuildGraphArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let speeds = load_speeds(&cfg)?;
    let distances = load_distance_table(cfg.distances_path()?)?;
    let splits = chronological_split(&speeds, cfg.split)?;
    let dcfg = DiscoveryConfig {
        granger: cfg.granger_config(),
        lag: cfg.lag.clone(),
        top_k: cfg.granger.top_k,
        normalization: cfg.train.normalization,
        skip_alignment: args.no_align,
    };
    log::info!(
        "discovering on {} training steps of {} sensors",
        splits.train.n_steps(),
        splits.train.n_sensors()
    );
    let found = discover(&splits.train, &distances, &dcfg)?;
    let graph = &found.build.graph;

    create_dir(&args.out_dir)?;
    let mut echo = cfg.echo();
    echo["no_align"] = json!(args.no_align);
    graph.write_json(echo.clone(), args.out_dir.join("graph.json"))?;
    found.lags.write_csv(speeds.sensor_ids(), args.out_dir.join("lags.csv"))?;
    let summary = json!({
        "nodes": graph.n(),
        "edges": graph.n_edges(),
        "density": graph.density(),
        "lag_histogram": found.lags.histogram(),
        "pairs": found.build.stats,
        "lag_distribution": found.lag_distribution,
        "config": echo,
        "version": crate::VERSION,
    });
    write_json(&summary, args.out_dir.join("summary.json"))?;
    if let Some(path) = &cfg.coordinates {
        let coords = load_coordinates(path)?;
        let written = write_geojson(graph, &coords, args.out_dir.join("graph.geojson"))?;
        log::info!("{written} edges with coordinates exported");
    }
    eprintln!(
        "graph: {} nodes, {} edges, density {:.4}",
        graph.n(),
        graph.n_edges(),
        graph.density()
    );
    Ok(())
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    create_dir(&args.out_dir)?;
    let mut echo = cfg.echo();
    echo["baseline"] = json!(format!("{:?}", args.kind).to_lowercase());
    let mut written = Vec::new();
    match args.kind {
        BaselineKind::Identity => {
            let ids = load_speeds(&cfg)?.sensor_ids().to_vec();
            let path = args.out_dir.join("identity.csv");
            identity_graph(&ids)?.write_csv(&path)?;
            written.push(path);
        }
        BaselineKind::Sd => {
            let ids = load_speeds(&cfg)?.sensor_ids().to_vec();
            let table = load_distance_table(cfg.distances_path()?)?;
            let costs = all_pairs_shortest_costs(&build_road_graph(&table, &ids)?);
            let path = args.out_dir.join("sd.csv");
            let adj = build_sd_graph(&costs, &ids, cfg.sd.kappa)?;
            log::info!("sd graph keeps {} links", adj.n_links());
            adj.write_csv(&path)?;
            written.push(path);
        }
        BaselineKind::Random => {
            let reference_path = args
                .reference
                .as_deref()
                .ok_or_else(|| Error::Config("random baseline needs --reference".into()))?;
            let reference = CausalGraph::read_json(reference_path)?;
            echo["reference"] = json!(reference_path);
            for seed in args.first_seed..args.first_seed + args.count {
                let g = random_graph_matching(&reference, None, seed)?;
                let mut e = echo.clone();
                e["random_seed"] = json!(seed);
                let path = args.out_dir.join(format!("random_{seed}.json"));
                g.write_json(e, &path)?;
                written.push(path);
            }
        }
    }
    let summary = json!({
        "files": written,
        "config": echo,
        "version": crate::VERSION,
    });
    write_json(&summary, args.out_dir.join("baseline_summary.json"))?;
    eprintln!("wrote {} graph file(s) to {}", written.len(), args.out_dir.display());
    Ok(())
}

/// Reads a graph file in either supported format and returns the adjacency
/// with self-loops on every node, reordered to `ids`.
pub fn load_graph_adjacency(path: &Path, ids: &[String]) -> Result<AdjacencyMatrix> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut adj = if is_json {
        to_adjacency(&CausalGraph::read_json(path)?, true)
    } else {
        AdjacencyMatrix::read_csv(path)?
    };
    if adj.node_ids != ids {
        let mut order = Vec::with_capacity(ids.len());
        for id in ids {
            let k = adj.node_ids.iter().position(|x| x == id).ok_or_else(|| {
                Error::invalid(format!("{}: sensor '{id}' missing from graph", path.display()))
            })?;
            order.push(k);
        }
        if adj.n() != ids.len() {
            return Err(Error::invalid(format!(
                "{}: graph has {} nodes, data has {}",
                path.display(),
                adj.n(),
                ids.len()
            )));
        }
        let w = ndarray::Array2::from_shape_fn((ids.len(), ids.len()), |(i, j)| adj.weights[[order[i], order[j]]]);
        adj = AdjacencyMatrix::new(ids.to_vec(), w)?;
    }
    for i in 0..adj.n() {
        adj.weights[[i, i]] = 1.0;
    }
    Ok(adj)
}

pub fn cmd_train_eval(args: &TrainEvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if !args.graph.exists() {
        return Err(Error::io(
            &args.graph,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let speeds = load_speeds(&cfg)?;
    let adj = load_graph_adjacency(&args.graph, speeds.sensor_ids())?;
    let prop = PropagationMatrix::from_adjacency(&adj)?;
    let splits = chronological_split(&speeds, cfg.split)?;
    let label = args.label.clone().unwrap_or_else(|| {
        args.graph
            .file_stem()
            .map_or_else(|| "graph".into(), |s| s.to_string_lossy().into_owned())
    });

    eprintln!("training on '{label}' ({} links)", adj.n_links());
    let outcome = train(&prop, &splits, &cfg.train)?;
    let batch = predict_test(&outcome.params, &prop, &splits.test, &outcome.stats, &cfg.train)?;

    let mut echo = cfg.echo();
    echo["graph"] = json!(args.graph);
    let mut report = MetricsReport::from_predictions(&label, &batch, speeds.sampling_interval(), echo)?;
    report.replicate = args.replicate;
    report.check_invariants()?;

    create_dir(&args.out_dir)?;
    report.write_json(args.out_dir.join("report.json"))?;
    write_node_metrics_csv(&per_node_metrics(&batch), args.out_dir.join("node_metrics.csv"))?;
    outcome.write_log_csv(args.out_dir.join("training_log.csv"))?;
    Checkpoint::new(&outcome.params, &outcome.stats, &cfg.train).write_json(args.out_dir.join("checkpoint.json"))?;
    for r in &report.records {
        eprintln!(
            "{label} {:>4} min: MAE {:.4} MAPE {:.4} RMSE {:.4}",
            r.horizon_minutes, r.mae, r.mape, r.rmse
        );
    }
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(MetricsReport::read_json)
        .collect::<Result<Vec<_>>>()?;
    let table = compare(&reports)?;
    create_dir(&args.out_dir)?;
    let text = table.render_text();
    std::fs::write(args.out_dir.join("comparison.txt"), &text).map_err(|e| Error::io(args.out_dir.join("comparison.txt"), e))?;
    table.write_csv(args.out_dir.join("comparison.csv"))?;
    print!("{text}");
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut scenario = Scenario::read_json(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(ratio) = args.noise_ratio {
        let std = scenario.calibrate_noise(ratio)?;
        log::info!("noise_std set to {std}");
    }
    let data = scenario.generate()?;
    create_dir(&args.out_dir)?;
    data.series.write_csv(args.out_dir.join("speeds.csv"))?;
    data.distances.write_csv(args.out_dir.join("distances.csv"))?;
    data.truth.write_json(
        json!({ "scenario": scenario, "version": crate::VERSION }),
        args.out_dir.join("truth.json"),
    )?;
    scenario.write_json(args.out_dir.join("scenario.json"))?;
    eprintln!(
        "synthetic dataset: {} nodes, {} steps, {} planted edges",
        data.series.n_sensors(),
        data.series.n_steps(),
        data.truth.n_edges()
    );
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let detected = CausalGraph::read_json(&args.detected)?;
    let truth = CausalGraph::read_json(&args.truth)?;
    let scores = score_recovery(&detected, &truth)?;
    let doc = json!({
        "detected": args.detected,
        "truth": args.truth,
        "scores": scores,
        "version": crate::VERSION,
    });
    match &args.out {
        Some(path) => write_json(&doc, path)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}
