//! Sliding-window dataset, mini-batch Adam training with early stopping and
//! restarts, and prediction with the trained model.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::huber_loss;
use super::network::GruNetwork;
use crate::disturbance::{DisturbanceSeries, SeriesKind};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// One epoch is one sampled mini-batch and one optimizer step.
    pub max_epochs: usize,
    pub patience: usize,
    /// Input samples per window.
    pub window: usize,
    pub layers: usize,
    pub hidden: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// In normalized units.
    pub huber_delta: f64,
    pub restarts: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 64,
            max_epochs: 500,
            patience: 50,
            window: 5,
            layers: 3,
            hidden: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            huber_delta: 1.0,
            restarts: 5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("huber_delta", self.huber_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("{name} must be in (0, 1)")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("window", self.window),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("restarts", self.restarts),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be > 0")));
            }
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Validation("patience must be < max_epochs".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Per-axis z-score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: Vector3<f64>,
    /// Population standard deviation, or 1 for a constant axis.
    pub scale: Vector3<f64>,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: Vector3::zeros(),
            scale: Vector3::repeat(1.0),
        }
    }

    pub fn fit(samples: &[Vector3<f64>]) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<Vector3<f64>>() / n;
        let var = samples
            .iter()
            .map(|s| (s - mean).component_mul(&(s - mean)))
            .sum::<Vector3<f64>>()
            / n;
        let scale = var.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Normalization { mean, scale }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.mean).component_div(&self.scale)
    }

    pub fn invert(&self, z: &Vector3<f64>) -> Vector3<f64> {
        z.component_mul(&self.scale) + self.mean
    }
}

/// A network together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: GruNetwork,
    pub norm: Normalization,
    pub window: usize,
}

impl TrainedModel {
    /// One-step prediction from the last `window` raw samples of `history`.
    pub fn predict_next(&self, history: &[Vector3<f64>]) -> Vector3<f64> {
        assert!(history.len() >= self.window, "history shorter than window");
        let window: Vec<DVector<f64>> = history[history.len() - self.window..]
            .iter()
            .map(|x| DVector::from_column_slice(self.norm.apply(x).as_slice()))
            .collect();
        let y = self.net.forward_window(&window);
        self.norm.invert(&Vector3::new(y[0], y[1], y[2]))
    }

    /// Autoregressive rollout: each prediction is appended to the window and
    /// the oldest sample dropped.
    pub fn predict_series(
        &self,
        seed_window: &[Vector3<f64>],
        horizon_steps: usize,
        dt: f64,
        t0: f64,
    ) -> DisturbanceSeries {
        assert!(horizon_steps >= 1);
        let mut history = seed_window[seed_window.len() - self.window..].to_vec();
        let mut out = Vec::with_capacity(horizon_steps);
        for _ in 0..horizon_steps {
            let next = self.predict_next(&history);
            history.remove(0);
            history.push(next);
            out.push(next);
        }
        DisturbanceSeries::new(out, dt, t0, SeriesKind::Predicted)
    }
}

/// Stops once the best loss has not improved for `patience` observations.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Record one epoch loss; `false` means stop now.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best < self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartLog {
    /// Summed Huber loss of each epoch's mini-batch, before its update.
    pub epoch_losses: Vec<f64>,
    pub epochs_run: usize,
    pub best_loss: f64,
    /// Mean per-window loss over the whole dataset with the final parameters.
    pub final_loss: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub restarts: Vec<RestartLog>,
    pub selected: usize,
    pub wall_time: Duration,
}

impl TrainingLog {
    pub fn selected_log(&self) -> &RestartLog {
        &self.restarts[self.selected]
    }

    pub fn final_loss(&self) -> f64 {
        self.selected_log().final_loss
    }
}

/// Normalized `(window → next sample)` pairs.
struct Dataset {
    x: Vec<Vector3<f64>>,
    window: usize,
}

impl Dataset {
    fn len(&self) -> usize {
        self.x.len() - self.window
    }

    /// `window` input matrices (3 × B) and the 3 × B target for the given
    /// target indices into `x`.
    fn batch(&self, targets: &[usize]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let b = targets.len();
        let inputs = (0..self.window)
            .map(|t| DMatrix::from_fn(3, b, |i, j| self.x[targets[j] - self.window + t][i]))
            .collect();
        let y = DMatrix::from_fn(3, b, |i, j| self.x[targets[j]][i]);
        (inputs, y)
    }

    fn mean_loss(&self, net: &GruNetwork, delta: f64) -> f64 {
        let all: Vec<usize> = (self.window..self.x.len()).collect();
        let mut total = 0.0;
        for chunk in all.chunks(256) {
            let (inputs, y) = self.batch(chunk);
            let pred = net.forward_batch(&inputs);
            total += (pred - y)
                .iter()
                .map(|&r| huber_loss(r, delta))
                .sum::<f64>();
        }
        total / all.len() as f64
    }
}

struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(indices: Vec<usize>, mut rng: ChaCha8Rng) -> Self {
        let mut order = indices;
        order.shuffle(&mut rng);
        BatchSampler {
            order,
            cursor: 0,
            rng,
        }
    }

    /// Next `size` indices of the current permutation, reshuffling when exhausted.
    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn train_once(data: &Dataset, cfg: &TrainConfig, restart: u64) -> (GruNetwork, RestartLog) {
    let start = Instant::now();
    let mut init_rng = stream_rng(cfg.seed, Stream::WeightInit, &[restart]);
    let mut net = GruNetwork::glorot(3, cfg.hidden, cfg.layers, 3, &mut init_rng);
    let mut sampler = BatchSampler::new(
        (data.window..data.x.len()).collect(),
        stream_rng(cfg.seed, Stream::BatchShuffle, &[restart]),
    );
    let adam = cfg.adam();
    let mut state = AdamState::new(net.tensors().iter().map(|t| t.len()));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut losses = Vec::new();
    for _ in 0..cfg.max_epochs {
        let (inputs, y) = data.batch(&sampler.next(cfg.batch_size));
        let (loss, grad) = net.loss_and_gradient(&inputs, &y, cfg.huber_delta);
        losses.push(loss);
        if !loss.is_finite() {
            break;
        }
        adam_step(net.tensors_mut(), grad.tensors(), &mut state, &adam);
        if !stopper.observe(loss) {
            break;
        }
    }
    let final_loss = if net.is_finite() {
        data.mean_loss(&net, cfg.huber_delta)
    } else {
        f64::NAN
    };
    let log = RestartLog {
        epochs_run: losses.len(),
        best_loss: stopper.best(),
        epoch_losses: losses,
        final_loss,
        wall_time: start.elapsed(),
    };
    (net, log)
}

/// Train `cfg.restarts` networks on one-step-ahead windows of `series` and
/// keep the one with the lowest final dataset loss.
pub fn train(series: &DisturbanceSeries, cfg: &TrainConfig) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    if series.len() < cfg.window + 1 {
        return Err(Error::InsufficientData {
            needed: cfg.window + 1,
            got: series.len(),
        });
    }
    let start = Instant::now();
    let norm = Normalization::fit(&series.samples);
    let data = Dataset {
        x: series.samples.iter().map(|s| norm.apply(s)).collect(),
        window: cfg.window,
    };
    debug_assert!(data.len() >= 1);

    let mut best: Option<(usize, GruNetwork)> = None;
    let mut logs = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let (net, log) = train_once(&data, cfg, r as u64);
        let better = match &best {
            None => true,
            Some((i, _)) => {
                let current: &RestartLog = &logs[*i];
                log.final_loss < current.final_loss || !current.final_loss.is_finite()
            }
        };
        if better {
            best = Some((r, net));
        }
        logs.push(log);
    }
    let (selected, net) = best.expect("restarts > 0");
    Ok((
        TrainedModel {
            net,
            norm,
            window: cfg.window,
        },
        TrainingLog {
            restarts: logs,
            selected,
            wall_time: start.elapsed(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 16,
            layers: 2,
            restarts: 2,
            max_epochs: 300,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn sinusoid(n: usize, period: f64) -> DisturbanceSeries {
        let samples = (0..n)
            .map(|i| {
                let p = 2.0 * PI * i as f64 / period;
                Vector3::new(
                    1e-4 * p.sin(),
                    1e-4 * (p + 1.0).sin(),
                    5e-5 * (p + 2.0).sin(),
                )
            })
            .collect();
        DisturbanceSeries::new(samples, 1.0, 0.0, SeriesKind::Estimated)
    }

    #[test]
    fn validation_messages() {
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert_eq!(
            cfg.validate().unwrap_err().to_string(),
            "invalid configuration: learning_rate must be > 0"
        );
        let cfg = TrainConfig {
            patience: 500,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn too_short_series_is_rejected() {
        let s = sinusoid(5, 100.0);
        assert!(matches!(
            train(&s, &small_cfg()),
            Err(Error::InsufficientData { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn normalization_round_trip() {
        let s = sinusoid(200, 50.0);
        let norm = Normalization::fit(&s.samples);
        for x in &s.samples {
            assert!((norm.invert(&norm.apply(x)) - x).amax() < 1e-12 * x.amax().max(1e-4));
        }
        let flat = Normalization::fit(&[Vector3::new(2.0, 2.0, 2.0); 4]);
        assert_eq!(flat.scale, Vector3::repeat(1.0));
    }

    #[test]
    fn early_stopping_waits_exactly_patience() {
        let mut stop = EarlyStopping::new(50);
        let mut epochs = 0;
        // improving for 10 epochs, then flat
        for e in 1..=1000 {
            epochs = e;
            let loss = if e <= 10 { 1.0 / e as f64 } else { 0.1 };
            if !stop.observe(loss) {
                break;
            }
        }
        assert_eq!(epochs, 10 + 50);
    }

    #[test]
    fn sampler_visits_every_index_per_pass() {
        let mut s = BatchSampler::new((5..25).collect(), stream_rng(1, Stream::BatchShuffle, &[]));
        let mut seen: Vec<usize> = (0..4).flat_map(|_| s.next(5)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (5..25).collect::<Vec<_>>());
    }

    #[test]
    fn constant_series_is_learned() {
        let c = Vector3::new(2e-4, -1e-4, 3e-5);
        let s = DisturbanceSeries::new(vec![c; 100], 1.0, 0.0, SeriesKind::Estimated);
        let (model, _) = train(&s, &small_cfg()).unwrap();
        let p = model.predict_next(&s.samples[..5]);
        assert!((p - c).amax() < 1e-3 * c.amax().max(1.0));
    }

    #[test]
    fn zero_network_predicts_training_mean() {
        let s = sinusoid(300, 60.0);
        let model = TrainedModel {
            net: GruNetwork::zeros(3, 4, 1, 3),
            norm: Normalization::fit(&s.samples),
            window: 5,
        };
        let out = model.predict_series(&s.samples[..5], 10, 1.0, 5.0);
        assert_eq!(out.len(), 10);
        for p in &out.samples {
            assert!((p - model.norm.mean).amax() < 1e-20);
        }
        let one = model.predict_series(&s.samples[..5], 1, 1.0, 5.0);
        assert_eq!(one.samples[0], model.predict_next(&s.samples[..5]));
    }

    #[test]
    fn training_is_deterministic_and_loss_improves() {
        let s = sinusoid(400, 100.0);
        let cfg = TrainConfig {
            max_epochs: 60,
            patience: 20,
            ..small_cfg()
        };
        let (m1, l1) = train(&s, &cfg).unwrap();
        let (m2, l2) = train(&s, &cfg).unwrap();
        assert_eq!(m1, m2);
        for (a, b) in l1.restarts.iter().zip(&l2.restarts) {
            assert_eq!(a.epoch_losses, b.epoch_losses);
            assert_eq!(a.final_loss, b.final_loss);
        }
        assert_eq!(l1.selected, l2.selected);
        for r in &l1.restarts {
            assert!(r.best_loss <= r.epoch_losses[0]);
        }
        let chosen = l1.final_loss();
        assert!(l1.restarts.iter().all(|r| chosen <= r.final_loss));
    }
}
