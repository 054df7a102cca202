//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any gated criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use stgc::align::align_pair;
use stgc::data::{chronological_split, load_distance_table, load_speed_matrix, DatasetSplit};
use stgc::eval::{compute_metrics, MetricsReport};
use stgc::granger::{f_upper_tail, fit_restricted, fit_unrestricted, test_aligned, GrangerConfig};
use stgc::graph::{identity_graph, random_graph_matching, to_adjacency, AdjacencyMatrix};
use stgc::lag::{
    all_pairs_shortest_costs, build_road_graph, lag_distribution, node_velocities, LagConfig, RoadGraph,
};
use stgc::pipeline::{discover, DiscoveryConfig};
use stgc::predictor::{loss_and_gradients, predict_test, train, ModelParams, PropagationMatrix, Sample, TrainConfig};
use stgc::synth::{score_recovery, Recovery, Scenario};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: Option<bool>,
    detail: String,
    elapsed: Duration,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- recovery

/// Chain of five nodes for even seeds, eight-node DAG for odd seeds. Delays
/// of 7..=9 steps keep every two-hop travel time beyond the 12-step cap, so
/// only direct neighbours are ever tested.
fn recovery_scenario(seed: u64, root_ar: f64, noise_ratio: f64) -> Scenario {
    let mut sc = if seed.is_multiple_of(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sc = Scenario::chain(5, 7, 0.9, seed);
        for e in &mut sc.planted_edges {
            e.delay = rng.random_range(7..=9);
        }
        sc
    } else {
        Scenario::random_dag(8, 8, 7..=9, 0.9, seed).unwrap()
    };
    sc.root_ar = root_ar;
    sc.length = 2000;
    sc.calibrate_noise(noise_ratio).unwrap();
    sc
}

fn recover(sc: &Scenario, var_order: usize, skip_alignment: bool) -> Recovery {
    let data = sc.generate().unwrap();
    let cfg = DiscoveryConfig {
        granger: GrangerConfig {
            var_order,
            significance: 0.05,
        },
        skip_alignment,
        ..DiscoveryConfig::default()
    };
    let found = discover(&data.series, &data.distances, &cfg).unwrap();
    score_recovery(&found.build.graph, &data.truth).unwrap()
}

fn criterion_1() -> (Option<bool>, String) {
    let (mut p, mut r, mut l) = (vec![], vec![], vec![]);
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..20 {
        let sc = recovery_scenario(seed, 0.95, 0.1);
        // noise relative to the noiseless signal of every driven node
        let quiet = Scenario {
            noise_std: 0.0,
            ..sc.clone()
        }
        .generate()
        .unwrap();
        for e in &sc.planted_edges {
            let s = quiet.series.series(e.effect);
            let mu = s.iter().sum::<f64>() / s.len() as f64;
            let sd = (s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
            worst_ratio = worst_ratio.max(sc.noise_std / sd);
        }
        let rec = recover(&sc, 5, false);
        p.push(rec.precision);
        r.push(rec.recall);
        l.push(rec.lag_accuracy);
    }
    let (mp, mr, ml) = (median(p), median(r), median(l));
    let ok = mp >= 0.9 && mr >= 0.9 && ml >= 0.9 && worst_ratio <= 0.1 + 1e-12;
    (
        Some(ok),
        format!("median precision {mp:.3}, recall {mr:.3}, lag accuracy {ml:.3}; max noise/signal {worst_ratio:.3}"),
    )
}

fn criterion_2() -> (Option<bool>, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = GrangerConfig::default();
    let t = 500;
    let mut accepted = 0;
    let pairs = 2000;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lag = rng.random_range(0..=12);
        let pair = align_pair(&x, &y, lag).unwrap();
        accepted += usize::from(test_aligned(&pair, &cfg).unwrap().significant);
    }
    let rate = accepted as f64 / pairs as f64;
    (
        Some((0.035..=0.065).contains(&rate)),
        format!("acceptance rate {rate:.4} over {pairs} pairs (band [0.035, 0.065])"),
    )
}

fn criterion_3() -> (Option<bool>, String) {
    let (mut aligned, mut unaligned) = (vec![], vec![]);
    for seed in 0..20 {
        let sc = recovery_scenario(1000 + seed, 0.5, 0.3);
        aligned.push(recover(&sc, 3, false).recall);
        unaligned.push(recover(&sc, 3, true).recall);
    }
    let (a, u) = (median(aligned), median(unaligned));
    (
        Some(a > u),
        format!("median recall aligned {a:.3} vs lag forced to 0 {u:.3} (m = 3, delays 7..=9)"),
    )
}

// ---------------------------------------------------------- shortest paths

fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut d = Array2::from_elem((n, n), f64::INFINITY);
    for i in 0..n {
        d[[i, i]] = 0.0;
    }
    for &(u, v, c) in edges {
        if c < d[[u, v]] {
            d[[u, v]] = c;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[[i, k]] + d[[k, j]];
                if via < d[[i, j]] {
                    d[[i, j]] = via;
                }
            }
        }
    }
    d
}

fn criterion_4() -> (Option<bool>, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let density: f64 = rng.random_range(0.05..0.5);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random_bool(density) {
                    // multiples of 1/8 keep every path sum exact
                    let cost = rng.random_range(0..=800) as f64 / 8.0;
                    edges.push((u, v, cost));
                }
            }
        }
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let road = RoadGraph::from_edges(ids, &edges).unwrap();
        let got = all_pairs_shortest_costs(&road).dist;
        if got != floyd_warshall(n, &edges) {
            mismatches += 1;
        }
    }
    (Some(mismatches == 0), format!("{mismatches} of 100 random graphs differ from the cubic oracle"))
}

// ------------------------------------------------------------ F tail oracle

/// Unnormalized F density after `x = u^2`, `u = v / (1 - v)`.
fn f_integrand(v: f64, d1: f64, d2: f64) -> f64 {
    if v <= 0.0 || v >= 1.0 {
        return 0.0;
    }
    let u = v / (1.0 - v);
    let x = u * u;
    let log_density = (d1 / 2.0 - 1.0) * x.ln() - (d1 + d2) / 2.0 * (1.0 + d1 * x / d2).ln();
    log_density.exp() * 2.0 * u / ((1.0 - v) * (1.0 - v))
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // split into pieces so narrow peaks near the ends are not skipped
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, 1e-12, 40)
        })
        .sum()
}

fn f_tail_oracle(f: f64, d1: f64, d2: f64) -> f64 {
    let g = |v: f64| f_integrand(v, d1, d2);
    let total = integrate(&g, 0.0, 1.0);
    let u = f.sqrt();
    let vf = u / (1.0 + u);
    integrate(&g, vf, 1.0) / total
}

fn criterion_5() -> (Option<bool>, String) {
    let points: [(f64, usize, usize); 12] = [
        (1.0, 2, 10),
        (2.5, 3, 20),
        (0.5, 5, 100),
        (4.0, 2, 2),
        (3.1, 5, 1000),
        (1.8, 10, 50),
        (6.0, 3, 30),
        (0.2, 4, 8),
        (2.0, 5, 1980),
        (10.0, 3, 5),
        (1.05, 12, 12),
        (3.5, 7, 60),
    ];
    let mut worst: f64 = 0.0;
    for (f, d1, d2) in points {
        let diff = (f_upper_tail(f, d1, d2) - f_tail_oracle(f, d1 as f64, d2 as f64)).abs();
        worst = worst.max(diff);
    }
    let mut monotone = true;
    for (_, d1, d2) in points {
        let mut last = f_upper_tail(0.0, d1, d2);
        for k in 1..=1000 {
            let p = f_upper_tail(k as f64 * 0.02, d1, d2);
            if p > last {
                monotone = false;
            }
            last = p;
        }
    }
    (
        Some(worst <= 2e-3 && monotone),
        format!("max |p - oracle| {worst:.2e} over 12 points (tolerance 2e-3); monotone on 1000-point grids: {monotone}"),
    )
}

// -------------------------------------------------------------------- OLS

fn criterion_6() -> (Option<bool>, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut nest_fail, mut opt_fail, mut checks) = (0, 0, 0);
    for _ in 0..1000 {
        let m = rng.random_range(1..=6);
        let len = 11 * m + rng.random_range(0..200);
        let coupling: f64 = rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = vec![0.0; len];
        for t in 0..len {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[t] = e + if t > 0 { 0.4 * y[t - 1] + coupling * x[t - 1] } else { 0.0 };
        }
        let r = fit_restricted(&y, m).unwrap();
        let u = fit_unrestricted(&y, &x, m).unwrap();
        if u.rss > r.rss {
            nest_fail += 1;
        }
        for (fit, xs) in [(&r, None), (&u, Some(&x[..]))] {
            let base = fit.rss_with(&fit.coefficients, &y, xs, m);
            for k in 0..fit.coefficients.len() {
                for delta in [1e-3, -1e-3] {
                    let mut c = fit.coefficients.clone();
                    c[k] += delta;
                    checks += 1;
                    if fit.rss_with(&c, &y, xs, m) < base {
                        opt_fail += 1;
                    }
                }
            }
        }
    }
    (
        Some(nest_fail == 0 && opt_fail == 0),
        format!("{nest_fail} nesting violations in 1000 fits; {opt_fail} of {checks} perturbations lowered rss"),
    )
}

// --------------------------------------------------------------- gradients

fn criterion_7() -> (Option<bool>, String) {
    let (n, w, h, k) = (4, 5, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut adj = Array2::eye(n);
    for (c, e) in [(0, 1), (1, 2), (3, 2), (2, 0)] {
        adj[[c, e]] = rng.random_range(0.3..1.0);
    }
    let prop = PropagationMatrix::from_adjacency(&AdjacencyMatrix::new(ids, adj).unwrap()).unwrap();
    let mut params = ModelParams::init(h, k, 7);
    for v in params.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    let batch: Vec<Sample> = (0..3)
        .map(|_| Sample {
            window: Array2::from_shape_fn((w, n), |_| rng.random_range(-1.5..1.5)),
            targets: Array2::from_shape_fn((k, n), |_| rng.random_range(-1.0..1.0)),
            mask: Array2::from_shape_fn((k, n), |(a, b)| (a + b) % 5 != 3),
        })
        .collect();
    let (_, grad) = loss_and_gradients(&params, &prop, &batch).unwrap();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += step;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= step;
        let lp = loss_and_gradients(&plus, &prop, &batch).unwrap().0;
        let lm = loss_and_gradients(&minus, &prop, &batch).unwrap().0;
        let fd = (lp - lm) / (2.0 * step);
        let g = grad.as_slice()[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (
        Some(worst <= 1e-4),
        format!("max relative error {worst:.2e} over {} parameters (tolerance 1e-4)", params.len()),
    )
}

// ----------------------------------------------------------------- metrics

/// Reports from a few short training runs, used when criterion 9 is skipped.
fn small_reports() -> Vec<MetricsReport> {
    let mut sc = Scenario::random_dag(8, 8, 2..=4, 0.9, 5).unwrap();
    sc.length = 800;
    let data = sc.generate().unwrap();
    let splits = chronological_split(&data.series, [0.7, 0.1, 0.2]).unwrap();
    let ids = data.series.sensor_ids().to_vec();
    let mut out = Vec::new();
    for seed in 0..2 {
        let cfg = TrainConfig {
            hidden_dim: 8,
            max_epochs: 3,
            seed,
            ..comparison_train_config(seed)
        };
        out.push(evaluate("planted", &to_adjacency(&data.truth, true), &splits, &cfg));
        out.push(evaluate("identity", &identity_graph(&ids).unwrap(), &splits, &cfg));
    }
    out
}

fn criterion_8(reports: &[MetricsReport]) -> (Option<bool>, String) {
    let fallback;
    let reports = if reports.is_empty() {
        fallback = small_reports();
        &fallback[..]
    } else {
        reports
    };
    let m = compute_metrics(&[2.0, 4.0], &[1.0, 6.0], &[true, true]).unwrap();
    let exact = (m.mae - 1.5).abs() <= 1e-12 && (m.mape - 0.5).abs() <= 1e-12 && (m.rmse - 2.5f64.sqrt()).abs() <= 1e-12;
    let records = reports.iter().map(|r| r.records.len()).sum::<usize>();
    let dominated = reports.iter().all(|r| r.records.iter().all(|x| x.rmse >= x.mae));
    (
        Some(exact && dominated && records > 0),
        format!(
            "hand example mae {} mape {} rmse {:.6}; rmse >= mae on all {records} records of {} reports: {dominated}",
            m.mae,
            m.mape,
            m.rmse,
            reports.len()
        ),
    )
}

// ------------------------------------------------------- graph comparison

const CMP_NODES: usize = 20;
const CMP_EDGES: usize = 22;
const CMP_LENGTH: usize = 2000;
const CMP_TRAIN_SEEDS: u64 = 5;
const CMP_RANDOM_GRAPHS: u64 = 10;

fn comparison_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        input_window: 12,
        horizons: vec![3, 6, 9, 12],
        hidden_dim: 16,
        learning_rate: 5e-3,
        max_epochs: 12,
        batch_size: 32,
        patience: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn evaluate(label: &str, adj: &AdjacencyMatrix, splits: &DatasetSplit, cfg: &TrainConfig) -> MetricsReport {
    let prop = PropagationMatrix::from_adjacency(adj).unwrap();
    let out = train(&prop, splits, cfg).unwrap();
    let batch = predict_test(&out.params, &prop, &splits.test, &out.stats, cfg).unwrap();
    MetricsReport::from_predictions(label, &batch, splits.test.sampling_interval(), serde_json::Value::Null).unwrap()
}

fn criterion_9(reports: &mut Vec<MetricsReport>) -> (Option<bool>, String) {
    let mut sc = Scenario::random_dag(CMP_NODES, CMP_EDGES, 6..=9, 0.9, 99).unwrap();
    sc.root_ar = 0.9;
    sc.length = CMP_LENGTH;
    sc.calibrate_noise(0.1).unwrap();
    let data = sc.generate().unwrap();
    let splits = chronological_split(&data.series, [0.7, 0.1, 0.2]).unwrap();
    let found = discover(&splits.train, &data.distances, &DiscoveryConfig::default()).unwrap();
    let stgc = &found.build.graph;
    let ids = data.series.sensor_ids().to_vec();
    let stgc_adj = to_adjacency(stgc, true);
    let identity = identity_graph(&ids).unwrap();

    let mae = |r: &MetricsReport, h: usize| r.record(h).unwrap().mae;
    let mut rows = Vec::new();
    for seed in 0..CMP_TRAIN_SEEDS {
        let cfg = comparison_train_config(seed);
        let s = evaluate("stgc", &stgc_adj, &splits, &cfg);
        let i = evaluate("identity", &identity, &splits, &cfg);
        let mut rand_mae = [0.0, 0.0];
        for g in 0..CMP_RANDOM_GRAPHS {
            let rg = random_graph_matching(stgc, Some(&found.lags), 100 * seed + g).unwrap();
            let r = evaluate("random", &to_adjacency(&rg, true), &splits, &cfg);
            rand_mae[0] += mae(&r, 9) / CMP_RANDOM_GRAPHS as f64;
            rand_mae[1] += mae(&r, 12) / CMP_RANDOM_GRAPHS as f64;
            reports.push(r);
        }
        rows.push([mae(&s, 9), mae(&s, 12), mae(&i, 9), mae(&i, 12), rand_mae[0], rand_mae[1]]);
        reports.push(s);
        reports.push(i);
    }
    let col = |c: usize| median(rows.iter().map(|r| r[c]).collect());
    let (s9, s12, i9, i12, r9, r12) = (col(0), col(1), col(2), col(3), col(4), col(5));
    let ok = s9 <= i9 && s9 <= r9 && s12 <= i12 && s12 <= r12;
    (
        Some(ok),
        format!(
            "median MAE h9: stgc {s9:.4} identity {i9:.4} random {r9:.4}; h12: stgc {s12:.4} identity {i12:.4} random {r12:.4} ({} stgc edges, {} planted)",
            stgc.n_edges(),
            data.truth.n_edges()
        ),
    )
}

// ---------------------------------------------------- lag distribution

fn criterion_10() -> (Option<bool>, String) {
    let Some(dir) = std::env::var_os("METR_LA_DIR").map(PathBuf::from) else {
        return (None, "not run: set METR_LA_DIR to a directory with speeds.csv and distances.csv".into());
    };
    let speeds = match load_speed_matrix(dir.join("speeds.csv"), 5.0) {
        Ok(s) => s,
        Err(e) => return (None, format!("not run: {e}")),
    };
    let table = match load_distance_table(dir.join("distances.csv")) {
        Ok(t) => t,
        Err(e) => return (None, format!("not run: {e}")),
    };
    let road = build_road_graph(&table, speeds.sensor_ids()).unwrap();
    let costs = all_pairs_shortest_costs(&road);
    // the published distances are in meters; METR_LA_UNIT_SCALE=0.000621371 converts them
    let unit_scale = std::env::var("METR_LA_UNIT_SCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(LagConfig::default().unit_scale);
    let cfg = LagConfig {
        unit_scale,
        ..LagConfig::default()
    };
    let dist = lag_distribution(&costs, &node_velocities(&speeds), 5.0, &cfg).unwrap();
    (
        None,
        format!(
            "{} sensors, unit scale {unit_scale}: {} of {} pairs defined, fraction with lag <= 6: {:.4}, max lag {:?}",
            speeds.n_sensors(),
            dist.n_defined,
            dist.n_pairs,
            dist.fraction_le_6,
            dist.max_lag
        ),
    )
}

fn main() {
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.strip_prefix("criterion=").and_then(|v| v.parse().ok()))
        .collect();
    let wanted = |id: u32| filter.is_empty() || filter.contains(&id);
    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> (Option<bool>, String)| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let (pass, detail) = f();
        let o = Outcome {
            id,
            name,
            pass,
            detail,
            elapsed: start.elapsed(),
        };
        println!("{}", line(&o));
        outcomes.push(o);
    };
    run(1, "causal recovery", &mut criterion_1);
    run(2, "null calibration", &mut criterion_2);
    run(3, "alignment ablation", &mut criterion_3);
    run(4, "shortest-path oracle", &mut criterion_4);
    run(5, "F-distribution tail", &mut criterion_5);
    run(6, "OLS nesting and optimality", &mut criterion_6);
    run(7, "gradient check", &mut criterion_7);
    run(9, "graph comparison", &mut || criterion_9(&mut reports));
    run(8, "metric identities", &mut || criterion_8(&reports));
    run(10, "lag distribution", &mut criterion_10);

    let limits: [(u32, u64); 3] = [(1, 60), (2, 30), (9, 900)];
    let mut failed = false;
    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &outcomes {
        let over = limits
            .iter()
            .find(|(id, _)| *id == o.id)
            .is_some_and(|(_, secs)| o.elapsed > Duration::from_secs(*secs));
        if o.pass == Some(false) || over {
            failed = true;
        }
        println!("{}{}", line(o), if over { " [over time budget]" } else { "" });
    }
    if failed {
        std::process::exit(1);
    }
}

fn line(o: &Outcome) -> String {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "INFO",
    };
    format!(
        "criterion {:>2} {tag} {:<28} {} ({:.1}s)",
        o.id,
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    )
}
