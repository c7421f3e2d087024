//! Per-neuron fluctuation statistics.
//!
//! For a neuron and a channel, the fluctuation ("spread") is the population
//! standard deviation of the pooled multiset of per-interval changes: every
//! incoming weight (for weight channels) across every pair of consecutive
//! captured epochs. The network-level "spread of the spread" is the population
//! standard deviation of those per-neuron spreads, taken separately over the
//! encoder and decoder halves. Neurons whose spread falls below a threshold ε
//! are reported as inactive.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::json::to_canonical_pretty;
use crate::netcore::ArchitectureSpec;
use crate::runstore::{open_run, Channel, EpochSnapshot, RunManifest};
use crate::shapegen::ShapeKind;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_BINS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    Encoder,
    Decoder,
}

impl Half {
    pub const BOTH: [Half; 2] = [Half::Encoder, Half::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Half::Encoder => "encoder",
            Half::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
    pub half: Half,
}

impl NeuronId {
    pub fn new(arch: &ArchitectureSpec, layer: usize, index: usize) -> Result<Self> {
        let shapes = arch.layer_shapes();
        let s = shapes
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))?;
        if index >= s.out_dim {
            return Err(Error::invalid(format!(
                "neuron {index} out of range in layer {layer}"
            )));
        }
        let half = if arch.is_encoder_layer(layer) {
            Half::Encoder
        } else {
            Half::Decoder
        };
        Ok(Self { layer, index, half })
    }

    /// Every neuron of `arch`, ordered by (layer, index).
    pub fn all(arch: &ArchitectureSpec) -> Vec<NeuronId> {
        arch.layer_shapes()
            .iter()
            .enumerate()
            .flat_map(|(l, s)| (0..s.out_dim).map(move |j| (l, j)))
            .map(|(l, j)| NeuronId::new(arch, l, j).expect("in range"))
            .collect()
    }
}

/// What a neuron's fluctuation is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluctuationMode {
    /// Changes between consecutive captured epochs.
    #[default]
    Delta,
    /// Raw values over time, pooled over incoming connections.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronSpread {
    pub neuron: NeuronId,
    pub channel: Channel,
    pub spread: f64,
}

/// Pooled consecutive differences of a multi-valued time series.
/// `series[k]` holds the neuron's values at the k-th captured epoch.
pub fn series_deltas(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 snapshots, have {}",
            series.len()
        )));
    }
    let width = series[0].len();
    if series.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("ragged series"));
    }
    let mut out = Vec::with_capacity(width * (series.len() - 1));
    for w in series.windows(2) {
        out.extend(w[1].iter().zip(&w[0]).map(|(b, a)| b - a));
    }
    Ok(out)
}

fn neuron_rows(
    snapshots: &[EpochSnapshot],
    arch: &ArchitectureSpec,
    neuron: NeuronId,
    channel: Channel,
) -> Result<Vec<Vec<f64>>> {
    let shape = *arch
        .layer_shapes()
        .get(neuron.layer)
        .ok_or_else(|| Error::invalid(format!("layer {} out of range", neuron.layer)))?;
    if neuron.index >= shape.out_dim {
        return Err(Error::invalid(format!(
            "neuron {} out of range",
            neuron.index
        )));
    }
    Ok(snapshots
        .iter()
        .map(|s| {
            s.layers[neuron.layer]
                .neuron_values(channel, neuron.index, shape.in_dim)
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect())
}

/// Per-interval changes of one neuron's channel values, pooled over its
/// incoming connections.
pub fn neuron_delta_series(
    snapshots: &[EpochSnapshot],
    arch: &ArchitectureSpec,
    neuron: NeuronId,
    channel: Channel,
) -> Result<Vec<f64>> {
    series_deltas(&neuron_rows(snapshots, arch, neuron, channel)?)
}

/// Population standard deviation (Welford's single-pass recurrence).
pub fn spread(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("spread of an empty sequence"));
    }
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (k, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    Ok((m2 / values.len() as f64).max(0.0).sqrt())
}

/// Standard deviation of per-neuron spreads. Values are sorted first so the
/// result does not depend on neuron order.
pub fn spread_of_spread(spreads: &[NeuronSpread]) -> Result<f64> {
    let mut v: Vec<f64> = spreads.iter().map(|s| s.spread).collect();
    v.sort_by(f64::total_cmp);
    spread(&v)
}

/// Neurons with `spread < epsilon`, sorted by (layer, index).
pub fn detect_inactive(spreads: &[NeuronSpread], epsilon: f64) -> Vec<NeuronId> {
    let mut ids: Vec<NeuronId> = spreads
        .iter()
        .filter(|s| s.spread < epsilon)
        .map(|s| s.neuron)
        .collect();
    ids.sort_by_key(|n| (n.layer, n.index));
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `[0, max]`, left-closed, the last bin closed. An all-zero
/// input collapses to one bin `[0, 0]`.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(Histogram {
            edges: vec![0.0, 0.0],
            counts: vec![values.len()],
        });
    }
    let width = max / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { max } else { i as f64 * width })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let mut b = ((v / width).floor() as usize).min(bins - 1);
        // Guard the floor against rounding across an edge.
        while b > 0 && v < edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn histogram_of(spreads: &[NeuronSpread], bins: usize) -> Result<Histogram> {
    let v: Vec<f64> = spreads.iter().map(|s| s.spread).collect();
    histogram(&v, bins)
}

/// Smallest threshold in `[lo, hi]` whose inactive count falls in
/// `[min_count, max_count]`. Inactive counts only change at spread values, so
/// candidates are `lo` and the points just above each distinct spread.
pub fn calibrate_epsilon(
    spreads: &[NeuronSpread],
    (lo, hi): (f64, f64),
    (min_count, max_count): (usize, usize),
) -> Option<f64> {
    let mut values: Vec<f64> = spreads.iter().map(|s| s.spread).collect();
    values.sort_by(f64::total_cmp);
    let count_below = |eps: f64| values.partition_point(|&v| v < eps);
    let mut candidates = vec![lo];
    candidates.extend(
        values
            .iter()
            .map(|&v| v.next_up())
            .filter(|&e| e > lo && e <= hi),
    );
    candidates
        .into_iter()
        .find(|&e| (min_count..=max_count).contains(&count_below(e)))
}

/// Spreads of every neuron for one channel.
pub fn compute_spreads(
    snapshots: &[EpochSnapshot],
    arch: &ArchitectureSpec,
    channel: Channel,
    mode: FluctuationMode,
) -> Result<Vec<NeuronSpread>> {
    NeuronId::all(arch)
        .into_iter()
        .map(|neuron| {
            let values = match mode {
                FluctuationMode::Delta => neuron_delta_series(snapshots, arch, neuron, channel)?,
                FluctuationMode::Raw => {
                    let rows = neuron_rows(snapshots, arch, neuron, channel)?;
                    if rows.is_empty() {
                        return Err(Error::InsufficientData("no snapshots".into()));
                    }
                    rows.concat()
                }
            };
            Ok(NeuronSpread {
                neuron,
                channel,
                spread: spread(&values)?,
            })
        })
        .collect()
}

/// Per-neuron standardization over time: each neuron's pooled raw series
/// mapped to zero mean and unit population standard deviation.
pub fn standardized_neuron_series(
    snapshots: &[EpochSnapshot],
    arch: &ArchitectureSpec,
    neuron: NeuronId,
    channel: Channel,
) -> Result<Vec<f64>> {
    crate::runstore::standardize_channel(&neuron_rows(snapshots, arch, neuron, channel)?.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub epsilon: f64,
    pub bins: usize,
    pub mode: FluctuationMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            bins: DEFAULT_BINS,
            mode: FluctuationMode::Delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfReport {
    pub neuron_count: usize,
    pub spread_of_spread: f64,
    pub inactive: Vec<NeuronId>,
    pub inactive_count: usize,
    pub min_spread: f64,
    pub median_spread: f64,
    pub max_spread: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub neurons: Vec<NeuronSpread>,
    pub encoder: HalfReport,
    pub decoder: HalfReport,
    pub inactive_count: usize,
}

impl ChannelReport {
    pub fn half(&self, h: Half) -> &HalfReport {
        match h {
            Half::Encoder => &self.encoder,
            Half::Decoder => &self.decoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub shape: ShapeKind,
    pub learning_rate: f64,
    pub epochs: u32,
    /// Optimizer steps spanned by one delta when `capture_every > 1`.
    pub capture_every: u32,
    pub snapshot_count: usize,
    pub epsilon: f64,
    pub bins: usize,
    pub mode: FluctuationMode,
    pub channels: BTreeMap<Channel, ChannelReport>,
}

impl FluctuationReport {
    pub fn channel(&self, c: Channel) -> Result<&ChannelReport> {
        self.channels
            .get(&c)
            .ok_or_else(|| Error::invalid(format!("channel {c} missing from report")))
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per neuron and channel: `layer,index,half,channel,spread,inactive`.
    pub fn neurons_csv(&self) -> String {
        let mut out = String::from("layer,index,half,channel,spread,inactive\n");
        for (c, rep) in &self.channels {
            for s in &rep.neurons {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.neuron.layer,
                    s.neuron.index,
                    s.neuron.half.name(),
                    c,
                    s.spread,
                    s.spread < self.epsilon
                ));
            }
        }
        out
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn half_report(spreads: &[NeuronSpread], opts: &AnalysisOptions) -> Result<HalfReport> {
    let mut values: Vec<f64> = spreads.iter().map(|s| s.spread).collect();
    values.sort_by(f64::total_cmp);
    let inactive = detect_inactive(spreads, opts.epsilon);
    Ok(HalfReport {
        neuron_count: spreads.len(),
        spread_of_spread: spread_of_spread(spreads)?,
        inactive_count: inactive.len(),
        inactive,
        min_spread: values[0],
        median_spread: median(&values),
        max_spread: values[values.len() - 1],
        histogram: histogram_of(spreads, opts.bins)?,
    })
}

pub fn analyze_snapshots(
    manifest: &RunManifest,
    snapshots: &[EpochSnapshot],
    opts: &AnalysisOptions,
) -> Result<FluctuationReport> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let arch = &manifest.architecture;
    let mut channels = BTreeMap::new();
    for c in Channel::ALL {
        let neurons = compute_spreads(snapshots, arch, c, opts.mode)?;
        let split = |h: Half| -> Vec<NeuronSpread> {
            neurons
                .iter()
                .copied()
                .filter(|s| s.neuron.half == h)
                .collect()
        };
        let encoder = half_report(&split(Half::Encoder), opts)?;
        let decoder = half_report(&split(Half::Decoder), opts)?;
        let inactive_count = encoder.inactive_count + decoder.inactive_count;
        channels.insert(
            c,
            ChannelReport {
                neurons,
                encoder,
                decoder,
                inactive_count,
            },
        );
    }
    Ok(FluctuationReport {
        shape: manifest.config.shape,
        learning_rate: manifest.config.learning_rate,
        epochs: manifest.config.epochs,
        capture_every: manifest.config.capture_every,
        snapshot_count: snapshots.len(),
        epsilon: opts.epsilon,
        bins: opts.bins,
        mode: opts.mode,
        channels,
    })
}

/// Loads a complete run file and analyzes every channel and half.
pub fn analyze_run(path: &Path, opts: &AnalysisOptions) -> Result<FluctuationReport> {
    let mut reader = open_run(path)?;
    if !reader.manifest().complete {
        return Err(Error::invalid(format!(
            "{} is not a complete run",
            path.display()
        )));
    }
    let snapshots = reader.read_all()?;
    analyze_snapshots(&reader.manifest().clone(), &snapshots, opts)
}
