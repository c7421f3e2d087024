//! Full-batch Adam training with per-epoch capture.
//!
//! One epoch is one forward pass over the whole dataset, one backward pass and
//! one Adam step. A snapshot is emitted after the step at epoch 1 and at every
//! epoch divisible by `capture_every`. It holds the post-step weights and
//! biases, the gradients used by the step, per-neuron mean activations of the
//! post-step network over the training set, and the loss measured before the
//! step.

use serde::{Deserialize, Serialize};

use crate::netcore::{ArchitectureSpec, GradientSet, NetworkState, Point};
use crate::runstore::{EpochSnapshot, LayerCapture, RunWriter};
use crate::shapegen::{self, ShapeKind, DEFAULT_SAMPLES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("invalid Adam parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub shape: ShapeKind,
    pub learning_rate: f64,
    pub epochs: u32,
    pub data_seed: u64,
    pub init_seed: u64,
    pub samples: usize,
    pub adam: AdamParams,
    pub capture_every: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Spiral,
            learning_rate: 0.01,
            epochs: 1000,
            data_seed: 42,
            init_seed: 7,
            samples: DEFAULT_SAMPLES,
            adam: AdamParams::default(),
            capture_every: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.capture_every == 0 {
            return Err(Error::invalid("capture_every must be at least 1"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples must be at least 1"));
        }
        self.adam.validate()
    }

    pub fn is_capture_epoch(&self, epoch: u32) -> bool {
        epoch == 1 || epoch.is_multiple_of(self.capture_every)
    }

    pub fn expected_snapshots(&self) -> u64 {
        (1..=self.epochs)
            .filter(|&e| self.is_capture_epoch(e))
            .count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(spec: &ArchitectureSpec) -> Self {
        Self {
            m: GradientSet::zeros(spec),
            v: GradientSet::zeros(spec),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update over flat slices at step `t` (already incremented).
pub fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: &AdamParams,
) {
    let bc1 = 1.0 - hp.beta1.powf(t as f64);
    let bc2 = 1.0 - hp.beta2.powf(t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

pub fn adam_step(
    net: &mut NetworkState,
    grads: &GradientSet,
    opt: &mut OptimizerState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if !grads.congruent_with(net) || !opt.m.congruent_with(net) || !opt.v.congruent_with(net) {
        return Err(Error::invalid("gradient or optimizer state shape mismatch"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            step: opt.t + 1,
        });
    }
    opt.t += 1;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let (g, m, v) = (&grads.layers[l], &mut opt.m.layers[l], &mut opt.v.layers[l]);
        adam_update_slice(
            &mut layer.weights,
            &g.weights,
            &mut m.weights,
            &mut v.weights,
            opt.t,
            lr,
            hp,
        );
        adam_update_slice(
            &mut layer.biases,
            &g.biases,
            &mut m.biases,
            &mut v.biases,
            opt.t,
            lr,
            hp,
        );
    }
    if !net.is_finite() {
        return Err(Error::NonFinite {
            what: "parameter",
            step: opt.t,
        });
    }
    Ok(())
}

/// Per-layer, per-neuron mean post-activation over `points`.
pub fn probe_activations(net: &NetworkState, points: &[Point]) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::invalid("probe batch is empty"));
    }
    let trace = net.forward_batch(points)?;
    let n = points.len();
    Ok(trace.activations[1..]
        .iter()
        .map(|m| {
            let dim = m.len() / n;
            let mut sums = vec![0.0; dim];
            for row in m.chunks_exact(dim) {
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
            }
            sums.into_iter().map(|s| s / n as f64).collect()
        })
        .collect())
}

/// Receives snapshots as training produces them.
pub trait SnapshotSink {
    fn accept(&mut self, snapshot: EpochSnapshot) -> Result<()>;

    /// Whether snapshots need real probe activations.
    fn wants_activations(&self) -> bool {
        true
    }
}

impl SnapshotSink for Vec<EpochSnapshot> {
    fn accept(&mut self, snapshot: EpochSnapshot) -> Result<()> {
        self.push(snapshot);
        Ok(())
    }
}

impl<W: std::io::Write + std::io::Seek> SnapshotSink for RunWriter<W> {
    fn accept(&mut self, snapshot: EpochSnapshot) -> Result<()> {
        self.write_snapshot(&snapshot)
    }
}

impl<S: SnapshotSink + ?Sized> SnapshotSink for &mut S {
    fn accept(&mut self, snapshot: EpochSnapshot) -> Result<()> {
        (**self).accept(snapshot)
    }

    fn wants_activations(&self) -> bool {
        (**self).wants_activations()
    }
}

/// Discards snapshots; skips the probe pass entirely.
pub struct NullSink;

impl SnapshotSink for NullSink {
    fn accept(&mut self, _: EpochSnapshot) -> Result<()> {
        Ok(())
    }

    fn wants_activations(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: NetworkState,
    /// Loss before the first step.
    pub initial_loss: f64,
    /// Loss of the final network on the training set.
    pub final_loss: f64,
    pub snapshots: u64,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn capture(
    epoch: u32,
    loss: f64,
    net: &NetworkState,
    grads: &GradientSet,
    probe: &[Vec<f64>],
) -> EpochSnapshot {
    let layers = net
        .layers
        .iter()
        .zip(&grads.layers)
        .zip(probe)
        .map(|((l, g), a)| LayerCapture {
            weights: to_f32(&l.weights),
            biases: to_f32(&l.biases),
            weight_grads: to_f32(&g.weights),
            bias_grads: to_f32(&g.biases),
            activation_means: to_f32(a),
        })
        .collect();
    EpochSnapshot {
        epoch,
        loss,
        layers,
    }
}

pub fn train<S: SnapshotSink>(config: &RunConfig, sink: S) -> Result<TrainOutcome> {
    train_with(config, &ArchitectureSpec::default(), sink)
}

pub fn train_with<S: SnapshotSink>(
    config: &RunConfig,
    arch: &ArchitectureSpec,
    mut sink: S,
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    let data = shapegen::generate(config.shape, config.samples, config.data_seed)?;
    let mut net = NetworkState::init(arch, config.init_seed);
    let mut opt = OptimizerState::new(arch);
    let probe_needed = sink.wants_activations();

    let mut initial_loss = f64::NAN;
    let mut emitted = 0u64;
    for epoch in 1..=config.epochs {
        let abort = |e: Error| Error::TrainingAborted {
            epoch,
            source: Box::new(e),
        };
        let (loss, grads) = net.loss_and_gradient(&data.points).map_err(abort)?;
        if !loss.is_finite() {
            return Err(abort(Error::NonFinite {
                what: "loss",
                step: opt.t,
            }));
        }
        if epoch == 1 {
            initial_loss = loss;
        }
        adam_step(
            &mut net,
            &grads,
            &mut opt,
            config.learning_rate,
            &config.adam,
        )
        .map_err(abort)?;
        if config.is_capture_epoch(epoch) {
            let probe = if probe_needed {
                probe_activations(&net, &data.points).map_err(abort)?
            } else {
                net.layers.iter().map(|l| vec![0.0; l.out_dim]).collect()
            };
            sink.accept(capture(epoch, loss, &net, &grads, &probe))
                .map_err(abort)?;
            emitted += 1;
        }
    }
    let final_loss = crate::netcore::mse(&data.points, &net.reconstruct(&data.points)?)?;
    Ok(TrainOutcome {
        network: net,
        initial_loss,
        final_loss,
        snapshots: emitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(epochs: u32, capture_every: u32) -> RunConfig {
        RunConfig {
            epochs,
            capture_every,
            samples: 40,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let spec = ArchitectureSpec::default();
        let mut net = NetworkState::init(&spec, 3);
        let before = net.clone();
        let mut opt = OptimizerState::new(&spec);
        adam_step(
            &mut net,
            &GradientSet::zeros(&spec),
            &mut opt,
            0.01,
            &AdamParams::default(),
        )
        .unwrap();
        assert_eq!(opt.t, 1);
        for (a, b) in net.layers.iter().zip(&before.layers) {
            for (x, y) in a
                .weights
                .iter()
                .chain(&a.biases)
                .zip(b.weights.iter().chain(&b.biases))
            {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn first_step_closed_form() {
        let hp = AdamParams::default();
        let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
        adam_update_slice(&mut p, &[1.0], &mut m, &mut v, 1, 0.001, &hp);
        // m̂ = v̂ = 1 after bias correction.
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!(((0.5 - p[0]) - 0.000999999990).abs() < 1e-12);
    }

    #[test]
    fn second_step_with_constant_gradient() {
        let hp = AdamParams::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update_slice(&mut p, &[1.0], &mut m, &mut v, 1, 0.001, &hp);
        let after_one = p[0];
        adam_update_slice(&mut p, &[1.0], &mut m, &mut v, 2, 0.001, &hp);
        let step2 = after_one - p[0];
        // Oracle: m = 1 − β1², v = 1 − β2², so m̂ = v̂ = 1 again.
        let m2 = (1.0 - 0.9f64) * (1.0 + 0.9);
        let v2 = (1.0 - 0.999f64) * (1.0 + 0.999);
        let oracle = 0.001 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + 1e-8);
        assert!((step2 - oracle).abs() < 1e-15);
        assert!(step2 > 0.0009 && step2 <= 0.001);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let spec = ArchitectureSpec::default();
        let mut net = NetworkState::init(&spec, 3);
        let mut g = GradientSet::zeros(&spec);
        g.layers[2].biases[0] = f64::NAN;
        let mut opt = OptimizerState::new(&spec);
        assert!(matches!(
            adam_step(&mut net, &g, &mut opt, 0.01, &AdamParams::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn snapshot_counts() {
        let mut sink = Vec::new();
        train(&quick(1, 1), &mut sink).unwrap();
        assert_eq!(sink.len(), 1);

        let cfg = quick(10, 3);
        let mut sink = Vec::new();
        let out = train(&cfg, &mut sink).unwrap();
        let epochs: Vec<u32> = sink.iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![1, 3, 6, 9]);
        assert_eq!(out.snapshots, 4);
        assert_eq!(cfg.expected_snapshots(), 4);
    }

    #[test]
    fn training_is_deterministic() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let x = train(&quick(5, 1), &mut a).unwrap();
        let y = train(&quick(5, 1), &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(x.final_loss, y.final_loss);
    }

    #[test]
    fn invalid_configs() {
        assert!(train(
            &RunConfig {
                epochs: 0,
                ..quick(1, 1)
            },
            NullSink
        )
        .is_err());
        assert!(train(
            &RunConfig {
                learning_rate: 0.0,
                ..quick(1, 1)
            },
            NullSink
        )
        .is_err());
        assert!(train(
            &RunConfig {
                capture_every: 0,
                ..quick(1, 1)
            },
            NullSink
        )
        .is_err());
    }

    #[test]
    fn sink_failure_aborts_with_epoch() {
        struct FailAt(u32);
        impl SnapshotSink for FailAt {
            fn accept(&mut self, s: EpochSnapshot) -> Result<()> {
                if s.epoch >= self.0 {
                    return Err(Error::Io(std::io::Error::other("sink full")));
                }
                Ok(())
            }
        }
        match train(&quick(10, 1), FailAt(4)) {
            Err(Error::TrainingAborted { epoch, .. }) => assert_eq!(epoch, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probe_examples() {
        let spec = ArchitectureSpec::default();
        let zero = NetworkState::zeros(&spec);
        let pts = shapegen::generate(ShapeKind::Circle, 20, 1).unwrap().points;
        for layer in probe_activations(&zero, &pts).unwrap() {
            assert!(layer.iter().all(|&v| v == 0.0));
        }
        let net = NetworkState::init(&spec, 4);
        let single = probe_activations(&net, &pts[..1]).unwrap();
        let trace = net.forward(pts[0]).unwrap();
        for (a, b) in single.iter().zip(&trace.post_activations) {
            assert_eq!(a, b);
        }
        let doubled: Vec<Point> = pts.iter().chain(&pts).copied().collect();
        let p1 = probe_activations(&net, &pts).unwrap();
        let p2 = probe_activations(&net, &doubled).unwrap();
        for (a, b) in p1.iter().flatten().zip(p2.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(probe_activations(&net, &[]).is_err());
    }
}
