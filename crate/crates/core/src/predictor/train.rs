use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Evaluator, ModelParams};
use super::{PropagationMatrix, TrainConfig};
use crate::data::{zscore, DatasetSplit, NormStats, TimeSeriesMatrix};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 5.0;
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation error.
    pub params: ModelParams,
    pub stats: NormStats,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn write_log_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_training_log(&self.log, path)
    }
}

pub fn write_training_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, e.val_mse));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Normalized series laid out time-major (`[steps, nodes]`) for cheap window
/// slicing.
struct Prepared {
    n: usize,
    t: usize,
    z: Vec<f64>,
    mask: Vec<bool>,
}

impl Prepared {
    fn new(matrix: &TimeSeriesMatrix, stats: &NormStats) -> Result<Self> {
        let norm = zscore(matrix, stats)?;
        Ok(Self {
            n: norm.n_sensors(),
            t: norm.n_steps(),
            z: norm.values().t().iter().copied().collect(),
            mask: norm.valid().t().iter().copied().collect(),
        })
    }

    fn n_windows(&self, window: usize, max_h: usize) -> usize {
        (self.t + 1).saturating_sub(window + max_h)
    }

    fn window(&self, start: usize, window: usize) -> &[f64] {
        &self.z[start * self.n..(start + window) * self.n]
    }

    /// Node-major `[nodes, horizons]` targets for the window starting at
    /// `start`.
    fn targets(&self, start: usize, window: usize, horizons: &[usize], targets: &mut [f64], mask: &mut [bool]) {
        let k = horizons.len();
        for (hk, &h) in horizons.iter().enumerate() {
            let row = (start + window - 1 + h) * self.n;
            for i in 0..self.n {
                targets[i * k + hk] = self.z[row + i];
                mask[i * k + hk] = self.mask[row + i];
            }
        }
    }
}

fn masked_mse(params: &ModelParams, prop: &PropagationMatrix, data: &Prepared, cfg: &TrainConfig) -> f64 {
    let w = cfg.input_window;
    let starts: Vec<usize> = (0..data.n_windows(w, cfg.max_horizon())).collect();
    let k = cfg.horizons.len();
    let parts: Vec<(f64, usize)> = starts
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut ev = Evaluator::new(params, prop, w);
            let mut tgt = vec![0.0; data.n * k];
            let mut mask = vec![false; data.n * k];
            let (mut sse, mut count) = (0.0, 0);
            for &s in chunk {
                data.targets(s, w, &cfg.horizons, &mut tgt, &mut mask);
                let pred = ev.predict(data.window(s, w));
                for ((p, t), m) in pred.iter().zip(&tgt).zip(&mask) {
                    if *m {
                        sse += (p - t) * (p - t);
                        count += 1;
                    }
                }
            }
            (sse, count)
        })
        .collect();
    let (sse, count) = parts
        .iter()
        .fold((0.0, 0), |(a, b), (s, c)| (a + s, b + c));
    if count == 0 {
        f64::NAN
    } else {
        sse / count as f64
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Trains on the normalized training split with Adam and early stopping on
/// validation MSE. Normalization statistics come from the training split.
pub fn train(prop: &PropagationMatrix, splits: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    let stats = NormStats::fit(&splits.train, config.normalization)?;
    train_with_stats(prop, splits, config, stats)
}

pub fn train_with_stats(
    prop: &PropagationMatrix,
    splits: &DatasetSplit,
    config: &TrainConfig,
    stats: NormStats,
) -> Result<TrainOutcome> {
    config.validate(usize::MAX)?;
    if splits.train.n_sensors() != prop.n() {
        return Err(Error::Shape(format!(
            "{} sensors, propagation over {} nodes",
            splits.train.n_sensors(),
            prop.n()
        )));
    }
    let (w, max_h, k) = (config.input_window, config.max_horizon(), config.horizons.len());
    let train_data = Prepared::new(&splits.train, &stats)?;
    let val_data = Prepared::new(&splits.val, &stats)?;
    let n_train = train_data.n_windows(w, max_h);
    if n_train == 0 {
        return Err(Error::invalid(format!(
            "training split has {} steps, needs at least window + max horizon = {}",
            train_data.t,
            w + max_h
        )));
    }
    if val_data.n_windows(w, max_h) == 0 {
        return Err(Error::invalid(format!(
            "validation split has {} steps, needs at least window + max horizon = {}",
            val_data.t,
            w + max_h
        )));
    }

    let mut params = ModelParams::init(config.hidden_dim, k, config.seed);
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut grad = vec![0.0; params.len()];
    let mut tgt = vec![0.0; prop.n() * k];
    let mut mask = vec![false; prop.n() * k];

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut ep_sse, mut ep_count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let (mut sse, mut count) = (0.0, 0usize);
            {
                let mut ev = Evaluator::new(&params, prop, w);
                for &s in batch {
                    train_data.targets(s, w, &config.horizons, &mut tgt, &mut mask);
                    let (e, c) = ev.accumulate(train_data.window(s, w), &tgt, &mask, &mut grad);
                    sse += e;
                    count += c;
                }
            }
            if !sse.is_finite() {
                log_divergence(&log);
                return Err(Error::Diverged { epoch });
            }
            if count == 0 {
                continue;
            }
            ep_sse += sse;
            ep_count += count;
            let scale = 1.0 / count as f64;
            let mut norm = 0.0;
            for g in grad.iter_mut() {
                *g *= scale;
                norm += *g * *g;
            }
            let norm = norm.sqrt();
            if norm > CLIP_NORM {
                let c = CLIP_NORM / norm;
                grad.iter_mut().for_each(|g| *g *= c);
            }
            adam.update(params.as_mut_slice(), &grad, config.learning_rate);
        }
        let train_mse = if ep_count > 0 { ep_sse / ep_count as f64 } else { f64::NAN };
        let val_mse = masked_mse(&params, prop, &val_data, config);
        log.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6}");
        if !params.is_finite() || (ep_count > 0 && !train_mse.is_finite()) {
            log_divergence(&log);
            return Err(Error::Diverged { epoch });
        }
        if val_mse < best.0 {
            best = (val_mse, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.2);
                break;
            }
        }
    }
    let (_, params, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        stats,
        log,
        best_epoch,
    })
}

fn log_divergence(log: &[EpochLog]) {
    log::error!("training diverged; log so far:");
    for e in log {
        log::error!("  epoch {} train {} val {}", e.epoch, e.train_mse, e.val_mse);
    }
}

/// Predictions and ground truth in original units, one `[nodes, instants]`
/// matrix per horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub horizons: Vec<usize>,
    pub sensor_ids: Vec<String>,
    pub predicted: Vec<Array2<f64>>,
    pub truth: Vec<Array2<f64>>,
    pub mask: Vec<Array2<bool>>,
}

impl PredictionBatch {
    pub fn n_instants(&self) -> usize {
        self.predicted.first().map_or(0, |p| p.ncols())
    }
}

/// Slides over `test` with stride `config.eval_stride` (default: the largest
/// horizon, so targets never overlap) and inverse-normalizes predictions.
pub fn predict_test(
    params: &ModelParams,
    prop: &PropagationMatrix,
    test: &TimeSeriesMatrix,
    stats: &NormStats,
    config: &TrainConfig,
) -> Result<PredictionBatch> {
    let (w, max_h, k) = (config.input_window, config.max_horizon(), config.horizons.len());
    if params.n_out() != k {
        return Err(Error::Shape(format!(
            "model has {} outputs, config lists {k} horizons",
            params.n_out()
        )));
    }
    if test.n_sensors() != prop.n() {
        return Err(Error::Shape(format!(
            "{} sensors, propagation over {} nodes",
            test.n_sensors(),
            prop.n()
        )));
    }
    if test.n_steps() < w + max_h {
        return Err(Error::invalid(format!(
            "test split has {} steps, needs at least window + max horizon = {}",
            test.n_steps(),
            w + max_h
        )));
    }
    let data = Prepared::new(test, stats)?;
    let stride = config.eval_stride.unwrap_or(max_h);
    let starts: Vec<usize> = (0..data.n_windows(w, max_h)).step_by(stride).collect();
    let n = data.n;

    let preds: Vec<Vec<f64>> = starts
        .par_chunks(EVAL_CHUNK)
        .flat_map_iter(|chunk| {
            let mut ev = Evaluator::new(params, prop, w);
            chunk
                .iter()
                .map(|&s| ev.predict(data.window(s, w)).to_vec())
                .collect::<Vec<_>>()
        })
        .collect();

    let cols = starts.len();
    let mut predicted = vec![Array2::zeros((n, cols)); k];
    let mut truth = vec![Array2::zeros((n, cols)); k];
    let mut mask = vec![Array2::from_elem((n, cols), false); k];
    for (c, (&s, pred)) in starts.iter().zip(&preds).enumerate() {
        for (hk, &h) in config.horizons.iter().enumerate() {
            let t = s + w - 1 + h;
            for i in 0..n {
                predicted[hk][[i, c]] = stats.denormalize_value(i, pred[i * k + hk]);
                truth[hk][[i, c]] = test.values()[[i, t]];
                mask[hk][[i, c]] = test.is_valid(i, t);
            }
        }
    }
    Ok(PredictionBatch {
        horizons: config.horizons.clone(),
        sensor_ids: test.sensor_ids().to_vec(),
        predicted,
        truth,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Shape-tagged JSON dump of a trained model and its normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: String,
    pub hidden_dim: usize,
    pub input_window: usize,
    pub horizons: Vec<usize>,
    pub norm: NormStats,
    pub tensors: Vec<TensorDump>,
}

const CHECKPOINT_FORMAT: &str = "stgc-predictor-v1";

impl Checkpoint {
    pub fn new(params: &ModelParams, stats: &NormStats, config: &TrainConfig) -> Self {
        let tensors = params
            .layout()
            .into_iter()
            .map(|t| TensorDump {
                name: t.name.to_string(),
                data: params.as_slice()[t.offset..t.offset + t.len()].to_vec(),
                shape: t.shape,
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: crate::VERSION.into(),
            hidden_dim: params.hidden(),
            input_window: config.input_window,
            horizons: config.horizons.clone(),
            norm: stats.clone(),
            tensors,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("unknown checkpoint format '{}'", self.format)));
        }
        let template = ModelParams::zeros(self.hidden_dim, self.horizons.len());
        let layout = template.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, expected {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        let mut data = Vec::with_capacity(template.len());
        for (want, got) in layout.iter().zip(&self.tensors) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.len() {
                return Err(Error::Shape(format!(
                    "tensor '{}' {:?} does not match expected '{}' {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            data.extend_from_slice(&got.data);
        }
        ModelParams::from_flat(self.hidden_dim, self.horizons.len(), data)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{chronological_split, NormScope};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn constant(n: usize, t: usize) -> TimeSeriesMatrix {
        let values = Array2::from_shape_fn((n, t), |(i, _)| 40.0 + 5.0 * i as f64);
        TimeSeriesMatrix::new(values, ids(n), 5.0).unwrap()
    }

    /// Node 1 follows node 0 two steps later; node 0 is a slow sinusoid.
    fn linear_system(t: usize) -> TimeSeriesMatrix {
        let src: Vec<f64> = (0..t + 2)
            .map(|k| 50.0 + 10.0 * (k as f64 * 0.21).sin() + 4.0 * (k as f64 * 0.057).cos())
            .collect();
        let values = Array2::from_shape_fn((2, t), |(i, k)| if i == 0 { src[k + 2] } else { src[k] });
        TimeSeriesMatrix::new(values, ids(2), 5.0).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            input_window: 6,
            horizons: vec![1, 3],
            hidden_dim: 6,
            learning_rate: 5e-3,
            max_epochs: 10,
            batch_size: 16,
            patience: 10,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn test_length_contract() {
        let cfg = TrainConfig {
            horizons: vec![12],
            ..TrainConfig::default()
        };
        let params = ModelParams::zeros(4, 1);
        let prop = PropagationMatrix::identity(3);
        let stats = NormStats::new(vec![0.0; 3], vec![1.0; 3], NormScope::PerSensor).unwrap();
        assert!(predict_test(&params, &prop, &constant(3, 23), &stats, &cfg).is_err());
        let batch = predict_test(&params, &prop, &constant(3, 24), &stats, &cfg).unwrap();
        assert_eq!(batch.n_instants(), 1);
    }

    #[test]
    fn constant_series_predicted_exactly_by_bias() {
        // with the normalization centred on each constant, the zero model
        // already predicts the readout bias of 0, i.e. the constant itself
        let m = constant(3, 40);
        let stats = NormStats::new(vec![40.0, 45.0, 50.0], vec![1.0; 3], NormScope::PerSensor).unwrap();
        let cfg = TrainConfig {
            horizons: vec![3, 6],
            ..TrainConfig::default()
        };
        let params = ModelParams::zeros(4, 2);
        let prop = PropagationMatrix::identity(3);
        let batch = predict_test(&params, &prop, &m, &stats, &cfg).unwrap();
        for (p, t) in batch.predicted.iter().zip(&batch.truth) {
            assert_eq!(p, t);
        }
        assert_eq!(batch.n_instants(), 4);
    }

    #[test]
    fn noiseless_system_validation_improves_each_epoch() {
        let m = linear_system(1200);
        let splits = chronological_split(&m, [0.7, 0.1, 0.2]).unwrap();
        let adj = crate::graph::AdjacencyMatrix::new(
            ids(2),
            ndarray::array![[1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        let prop = PropagationMatrix::from_adjacency(&adj).unwrap();
        let out = train(&prop, &splits, &small_config()).unwrap();
        assert_eq!(out.log.len(), 10);
        for pair in out.log.windows(2) {
            assert!(pair[1].val_mse < pair[0].val_mse, "{:?}", out.log);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible_and_zero_lr_is_inert() {
        let m = linear_system(600);
        let splits = chronological_split(&m, [0.7, 0.1, 0.2]).unwrap();
        let prop = PropagationMatrix::identity(2);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..small_config()
        };
        let a = train(&prop, &splits, &cfg).unwrap();
        let b = train(&prop, &splits, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);

        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let out = train(&prop, &splits, &frozen).unwrap();
        assert_eq!(out.params, ModelParams::init(frozen.hidden_dim, 2, frozen.seed));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = ModelParams::init(3, 2, 1);
        let stats = NormStats::new(vec![1.0, 2.0], vec![0.5, 0.25], NormScope::Global).unwrap();
        let ck = Checkpoint::new(&params, &stats, &small_config());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.write_json(&path).unwrap();
        let back = Checkpoint::read_json(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), params);

        let mut bad = ck.clone();
        bad.tensors[0].shape = vec![1, 1];
        assert!(bad.params().is_err());
    }

    #[test]
    fn training_log_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = [EpochLog {
            epoch: 1,
            train_mse: 0.5,
            val_mse: 0.25,
        }];
        write_training_log(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,train_mse,val_mse\n1,0.5,0.25\n");
    }
}
