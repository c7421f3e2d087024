//! Dense ReLU autoencoder with hand-written forward and backward passes.
//!
//! Weights are stored row-major as `out_dim × in_dim`, so row `j` holds the
//! incoming connections of output neuron `j`. Every layer applies ReLU except
//! the last layer of each half (the latent and the reconstruction).
//!
//! Loss is the mean over all scalar components, `Σ (o − t)² / (2n)` for `n`
//! points, so the output gradient is `(o − t) / n`.

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
}

impl Default for ArchitectureSpec {
    /// 2→64→32→1 encoder, 1→32→64→2 decoder.
    fn default() -> Self {
        Self {
            encoder_dims: vec![2, 64, 32, 1],
            decoder_dims: vec![1, 32, 64, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ArchitectureSpec {
    pub fn new(encoder_dims: Vec<usize>, decoder_dims: Vec<usize>) -> Result<Self> {
        let spec = Self {
            encoder_dims,
            decoder_dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (e, d) = (&self.encoder_dims, &self.decoder_dims);
        if e.len() < 2 || d.len() < 2 {
            return Err(Error::invalid("each half needs at least one layer"));
        }
        if e.iter().chain(d).any(|&n| n == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if e[0] != 2 || d[d.len() - 1] != 2 {
            return Err(Error::invalid(
                "autoencoder input and output must be 2-dimensional",
            ));
        }
        if e[e.len() - 1] != 1 || d[0] != 1 {
            return Err(Error::invalid("latent dimension must be 1"));
        }
        Ok(())
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder_dims.len() - 1
    }

    pub fn num_layers(&self) -> usize {
        self.encoder_layers() + self.decoder_dims.len() - 1
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.encoder_dims
            .windows(2)
            .chain(self.decoder_dims.windows(2))
            .map(|w| LayerShape {
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect()
    }

    /// True for every layer except the last of each half.
    pub fn has_relu(&self, layer: usize) -> bool {
        layer + 1 != self.encoder_layers() && layer + 1 != self.num_layers()
    }

    pub fn is_encoder_layer(&self, layer: usize) -> bool {
        layer < self.encoder_layers()
    }

    pub fn neuron_count(&self) -> usize {
        self.encoder_neuron_count() + self.decoder_neuron_count()
    }

    pub fn encoder_neuron_count(&self) -> usize {
        self.encoder_dims[1..].iter().sum()
    }

    pub fn decoder_neuron_count(&self) -> usize {
        self.decoder_dims[1..].iter().sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|s| s.out_dim * s.in_dim + s.out_dim)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerState {
    pub fn zeros(shape: LayerShape) -> Self {
        Self {
            in_dim: shape.in_dim,
            out_dim: shape.out_dim,
            weights: vec![0.0; shape.in_dim * shape.out_dim],
            biases: vec![0.0; shape.out_dim],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }

    pub fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.in_dim..(out + 1) * self.in_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }

    fn transposed(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.weights.len()];
        for j in 0..self.out_dim {
            for i in 0..self.in_dim {
                t[i * self.out_dim + j] = self.weights[j * self.in_dim + i];
            }
        }
        t
    }

    /// `out = b + W·input`, using the transposed weights so the inner loop is
    /// a contiguous axpy.
    fn affine(&self, wt: &[f64], input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let col = &wt[i * self.out_dim..(i + 1) * self.out_dim];
            for (z, w) in out.iter_mut().zip(col) {
                *z += a * w;
            }
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub architecture: ArchitectureSpec,
    pub layers: Vec<LayerState>,
}

/// Intermediate values of one forward pass for a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
    encoder_layers: usize,
}

impl ForwardTrace {
    pub fn latent(&self) -> f64 {
        self.post_activations[self.encoder_layers - 1][0]
    }

    pub fn output(&self) -> Point {
        let o = self.post_activations.last().expect("at least one layer");
        [o[0], o[1]]
    }
}

/// Post-activations of a whole batch, one `n × dim` row-major matrix per
/// layer, preceded by the inputs at index 0.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub batch_size: usize,
    pub activations: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn outputs(&self) -> Vec<Point> {
        self.activations
            .last()
            .expect("inputs always present")
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect()
    }

    /// Post-activations of `layer` (0-based network layer) for sample `s`.
    pub fn layer_output(&self, layer: usize, s: usize) -> &[f64] {
        let m = &self.activations[layer + 1];
        let dim = m.len() / self.batch_size;
        &m[s * dim..(s + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|s| LayerGradient {
                    weights: vec![0.0; s.in_dim * s.out_dim],
                    biases: vec![0.0; s.out_dim],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn congruent_with(&self, net: &NetworkState) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

impl NetworkState {
    /// All-zero network.
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        Self {
            architecture: spec.clone(),
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(LayerState::zeros)
                .collect(),
        }
    }

    /// Weights uniform in `±sqrt(1/in_dim)`, drawn layer by layer in row-major
    /// order from one SplitMix64 stream; biases zero.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut net = Self::zeros(spec);
        for layer in &mut net.layers {
            let bound = (1.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.uniform(-bound, bound);
            }
        }
        net
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerState::is_finite)
    }

    pub fn forward(&self, input: Point) -> Result<ForwardTrace> {
        if !(input[0].is_finite() && input[1].is_finite()) {
            return Err(Error::invalid("non-finite input point"));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev: &[f64] = if l == 0 { &input } else { &post[l - 1] };
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&layer.transposed(), prev, &mut z);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { layer: l });
            }
            let mut a = z.clone();
            if self.architecture.has_relu(l) {
                relu_in_place(&mut a);
            }
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            input: input.to_vec(),
            pre_activations: pre,
            post_activations: post,
            encoder_layers: self.architecture.encoder_layers(),
        })
    }

    pub fn forward_batch(&self, batch: &[Point]) -> Result<BatchTrace> {
        let n = batch.len();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(
            batch
                .iter()
                .flat_map(|p| [p[0], p[1]])
                .collect::<Vec<f64>>(),
        );
        if acts[0].iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite input point"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let wt = layer.transposed();
            let prev = &acts[l];
            let mut next = vec![0.0; n * layer.out_dim];
            for s in 0..n {
                let input = &prev[s * layer.in_dim..(s + 1) * layer.in_dim];
                let out = &mut next[s * layer.out_dim..(s + 1) * layer.out_dim];
                layer.affine(&wt, input, out);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { layer: l });
            }
            if self.architecture.has_relu(l) {
                relu_in_place(&mut next);
            }
            acts.push(next);
        }
        Ok(BatchTrace {
            batch_size: n,
            activations: acts,
        })
    }

    /// Gradient of the batch-mean MSE from per-point traces.
    pub fn backward(&self, batch: &[Point], traces: &[ForwardTrace]) -> Result<GradientSet> {
        if batch.len() != traces.len() {
            return Err(Error::invalid(format!(
                "{} points but {} traces",
                batch.len(),
                traces.len()
            )));
        }
        let shapes = self.architecture.layer_shapes();
        for t in traces {
            let ok = t.input.len() == shapes[0].in_dim
                && t.post_activations.len() == shapes.len()
                && t.post_activations
                    .iter()
                    .zip(&shapes)
                    .all(|(a, s)| a.len() == s.out_dim);
            if !ok {
                return Err(Error::invalid("trace shape does not match network"));
            }
        }
        let mut acts: Vec<Vec<f64>> = vec![traces.iter().flat_map(|t| t.input.clone()).collect()];
        for l in 0..shapes.len() {
            acts.push(
                traces
                    .iter()
                    .flat_map(|t| t.post_activations[l].iter().copied())
                    .collect(),
            );
        }
        self.backward_batch(
            batch,
            &BatchTrace {
                batch_size: batch.len(),
                activations: acts,
            },
        )
    }

    pub fn backward_batch(&self, batch: &[Point], trace: &BatchTrace) -> Result<GradientSet> {
        let n = batch.len();
        if n == 0 || trace.batch_size != n || trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::invalid("trace does not match batch or network"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if trace.activations[l + 1].len() != n * layer.out_dim
                || trace.activations[l].len() != n * layer.in_dim
            {
                return Err(Error::invalid(format!("trace shape mismatch at layer {l}")));
            }
        }
        let mut grads = GradientSet::zeros(&self.architecture);
        let inv_n = 1.0 / n as f64;
        let out = trace.activations.last().unwrap();
        let mut delta: Vec<f64> = out
            .chunks_exact(2)
            .zip(batch)
            .flat_map(|(o, t)| [(o[0] - t[0]) * inv_n, (o[1] - t[1]) * inv_n])
            .collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (din, dout) = (layer.in_dim, layer.out_dim);
            let prev = &trace.activations[l];
            let g = &mut grads.layers[l];
            for s in 0..n {
                let a = &prev[s * din..(s + 1) * din];
                for j in 0..dout {
                    let d = delta[s * dout + j];
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[j] += d;
                    for (gw, x) in g.weights[j * din..(j + 1) * din].iter_mut().zip(a) {
                        *gw += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; n * din];
            for s in 0..n {
                let dp = &mut next[s * din..(s + 1) * din];
                for j in 0..dout {
                    let d = delta[s * dout + j];
                    if d == 0.0 {
                        continue;
                    }
                    for (x, w) in dp.iter_mut().zip(layer.row(j)) {
                        *x += d * w;
                    }
                }
            }
            if self.architecture.has_relu(l - 1) {
                // ReLU'(z) is 1 where the post-activation is positive, 0 otherwise.
                for (x, a) in next.iter_mut().zip(prev) {
                    if !(*a > 0.0) {
                        *x = 0.0;
                    }
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    /// Full-batch loss and gradient, sharing one forward pass.
    pub fn loss_and_gradient(&self, batch: &[Point]) -> Result<(f64, GradientSet)> {
        let trace = self.forward_batch(batch)?;
        let loss = mse(batch, &trace.outputs())?;
        let grads = self.backward_batch(batch, &trace)?;
        Ok((loss, grads))
    }

    pub fn reconstruct(&self, batch: &[Point]) -> Result<Vec<Point>> {
        Ok(self.forward_batch(batch)?.outputs())
    }
}

/// Mean over all `2n` scalar components of the squared residuals.
pub fn mse(targets: &[Point], outputs: &[Point]) -> Result<f64> {
    if targets.len() != outputs.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} targets vs {} outputs",
            targets.len(),
            outputs.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::invalid("mse of an empty batch"));
    }
    let sum: f64 = targets
        .iter()
        .zip(outputs)
        .map(|(t, o)| (t[0] - o[0]).powi(2) + (t[1] - o[1]).powi(2))
        .sum();
    Ok(sum / (2 * targets.len()) as f64)
}
