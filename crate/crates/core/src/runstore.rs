//! The `NFL1` run-file format.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "NFL1"
//! 4       4      manifest length L (u32 LE)
//! 8       4096   manifest: canonical JSON (L bytes) padded with ASCII spaces
//! 4104    ...    frames
//!
//! frame:
//!   4      frame length F (u32 LE), counts everything after this field
//!   4      epoch (u32 LE)
//!   8      loss (f64 LE)
//!   ...    for each layer: weights, biases, weight_grads, bias_grads,
//!          activation_means as f32 LE, row-major, no padding
//! ```
//!
//! The manifest region is written first with `complete = false` and rewritten
//! in place when the writer is finished, so a file whose writer never
//! finished is recognisably incomplete.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::json::to_canonical_string;
use crate::netcore::{ArchitectureSpec, LayerState, NetworkState};
use crate::trainer::RunConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NFL1";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_REGION: usize = 4096;
pub const HEADER_LEN: u64 = 8 + MANIFEST_REGION as u64;
/// Epoch and loss fields preceding the channel data inside a frame.
const FRAME_PREFIX: usize = 4 + 8;

/// Per-layer capture channel, in on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Weights,
    Biases,
    WeightGrads,
    BiasGrads,
    #[serde(rename = "activations")]
    ActivationMeans,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Weights,
        Channel::Biases,
        Channel::WeightGrads,
        Channel::BiasGrads,
        Channel::ActivationMeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Weights => "weights",
            Channel::Biases => "biases",
            Channel::WeightGrads => "weight_grads",
            Channel::BiasGrads => "bias_grads",
            Channel::ActivationMeans => "activations",
        }
    }

    /// Values stored per neuron: the fan-in for weight matrices, 1 otherwise.
    pub fn values_per_neuron(self, in_dim: usize) -> usize {
        match self {
            Channel::Weights | Channel::WeightGrads => in_dim,
            _ => 1,
        }
    }

    pub fn len(self, in_dim: usize, out_dim: usize) -> usize {
        self.values_per_neuron(in_dim) * out_dim
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerCapture {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
    pub weight_grads: Vec<f32>,
    pub bias_grads: Vec<f32>,
    pub activation_means: Vec<f32>,
}

impl LayerCapture {
    pub fn channel(&self, c: Channel) -> &[f32] {
        match c {
            Channel::Weights => &self.weights,
            Channel::Biases => &self.biases,
            Channel::WeightGrads => &self.weight_grads,
            Channel::BiasGrads => &self.bias_grads,
            Channel::ActivationMeans => &self.activation_means,
        }
    }

    fn channel_mut(&mut self, c: Channel) -> &mut Vec<f32> {
        match c {
            Channel::Weights => &mut self.weights,
            Channel::Biases => &mut self.biases,
            Channel::WeightGrads => &mut self.weight_grads,
            Channel::BiasGrads => &mut self.bias_grads,
            Channel::ActivationMeans => &mut self.activation_means,
        }
    }

    /// The slice belonging to one output neuron.
    pub fn neuron_values(&self, c: Channel, neuron: usize, in_dim: usize) -> &[f32] {
        let k = c.values_per_neuron(in_dim);
        &self.channel(c)[neuron * k..(neuron + 1) * k]
    }

    /// Channel standardized across this layer at this epoch.
    pub fn standardized(&self, c: Channel) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.channel(c).iter().map(|&x| x as f64).collect();
        standardize_channel(&v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSnapshot {
    pub epoch: u32,
    pub loss: f64,
    pub layers: Vec<LayerCapture>,
}

impl EpochSnapshot {
    pub fn check_shape(&self, arch: &ArchitectureSpec) -> Result<()> {
        let shapes = arch.layer_shapes();
        if self.layers.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "snapshot has {} layers, architecture {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (l, (cap, s)) in self.layers.iter().zip(&shapes).enumerate() {
            for c in Channel::ALL {
                if cap.channel(c).len() != c.len(s.in_dim, s.out_dim) {
                    return Err(Error::invalid(format!(
                        "layer {l} channel {c}: wrong length"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuilds the network from the stored (32-bit) weights and biases.
    pub fn to_network(&self, arch: &ArchitectureSpec) -> Result<NetworkState> {
        self.check_shape(arch)?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .zip(&self.layers)
            .map(|(s, cap)| LayerState {
                in_dim: s.in_dim,
                out_dim: s.out_dim,
                weights: cap.weights.iter().map(|&w| w as f64).collect(),
                biases: cap.biases.iter().map(|&b| b as f64).collect(),
            })
            .collect();
        Ok(NetworkState {
            architecture: arch.clone(),
            layers,
        })
    }
}

/// Bytes after the frame-length field for one snapshot of `arch`.
pub fn frame_payload_len(arch: &ArchitectureSpec) -> usize {
    FRAME_PREFIX + 4 * floats_per_frame(arch)
}

fn floats_per_frame(arch: &ArchitectureSpec) -> usize {
    arch.layer_shapes()
        .iter()
        .map(|s| {
            Channel::ALL
                .iter()
                .map(|c| c.len(s.in_dim, s.out_dim))
                .sum::<usize>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub architecture: ArchitectureSpec,
    pub snapshot_count: u64,
    pub complete: bool,
    pub created_utc: u64,
    /// Element encoding of channel data.
    pub storage: String,
    pub channel_order: Vec<Channel>,
    /// MSE of the final network on the training set (64-bit), when complete.
    pub final_loss: Option<f64>,
}

impl RunManifest {
    pub fn new(config: RunConfig, architecture: ArchitectureSpec, created_utc: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            architecture,
            snapshot_count: 0,
            complete: false,
            created_utc,
            storage: "f32le".to_string(),
            channel_order: Channel::ALL.to_vec(),
            final_loss: None,
        }
    }

    fn encode_region(&self) -> Result<(u32, Vec<u8>)> {
        let json = to_canonical_string(self)?;
        if json.len() > MANIFEST_REGION {
            return Err(Error::Format(format!(
                "manifest is {} bytes, region holds {MANIFEST_REGION}",
                json.len()
            )));
        }
        let mut region = json.into_bytes();
        let len = region.len() as u32;
        region.resize(MANIFEST_REGION, b' ');
        Ok((len, region))
    }
}

/// Streaming writer; frames are appended as they arrive.
pub struct RunWriter<W: Write + Seek> {
    out: W,
    manifest: RunManifest,
    frame_len: usize,
    written: u64,
    last_epoch: Option<u32>,
    buf: Vec<u8>,
}

impl<W: Write + Seek> RunWriter<W> {
    pub fn new(mut out: W, manifest: &RunManifest) -> Result<Self> {
        manifest.architecture.validate()?;
        let mut manifest = manifest.clone();
        manifest.snapshot_count = 0;
        let requested_complete = manifest.complete;
        manifest.complete = false;
        let (len, region) = manifest.encode_region()?;
        out.write_all(MAGIC)?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&region)?;
        manifest.complete = requested_complete;
        Ok(Self {
            out,
            frame_len: frame_payload_len(&manifest.architecture),
            manifest,
            written: HEADER_LEN,
            last_epoch: None,
            buf: Vec::new(),
        })
    }

    pub fn snapshot_count(&self) -> u64 {
        self.manifest.snapshot_count
    }

    pub fn write_snapshot(&mut self, snap: &EpochSnapshot) -> Result<()> {
        snap.check_shape(&self.manifest.architecture)?;
        if let Some(prev) = self.last_epoch {
            if snap.epoch <= prev {
                return Err(Error::invalid(format!(
                    "epoch {} does not follow epoch {prev}",
                    snap.epoch
                )));
            }
        }
        self.buf.clear();
        self.buf
            .extend_from_slice(&(self.frame_len as u32).to_le_bytes());
        self.buf.extend_from_slice(&snap.epoch.to_le_bytes());
        self.buf.extend_from_slice(&snap.loss.to_le_bytes());
        for layer in &snap.layers {
            for c in Channel::ALL {
                for v in layer.channel(c) {
                    self.buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        debug_assert_eq!(self.buf.len(), 4 + self.frame_len);
        self.out.write_all(&self.buf)?;
        self.written += self.buf.len() as u64;
        self.manifest.snapshot_count += 1;
        self.last_epoch = Some(snap.epoch);
        Ok(())
    }

    /// Rewrites the manifest with the final snapshot count and completion
    /// flag. Returns the stream and the total byte count.
    pub fn finish(mut self, complete: bool, final_loss: Option<f64>) -> Result<(W, u64)> {
        self.manifest.complete = complete;
        self.manifest.final_loss = final_loss;
        let (len, region) = self.manifest.encode_region()?;
        self.out.seek(SeekFrom::Start(4))?;
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(&region)?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok((self.out, self.written))
    }
}

/// Writes a whole run. `manifest.complete` and `manifest.final_loss` are
/// kept; the snapshot count is set from the stream. If a snapshot fails to
/// write, the file is finalized as incomplete before the error is returned.
pub fn write_run<'a, W, I>(manifest: &RunManifest, snapshots: I, out: W) -> Result<u64>
where
    W: Write + Seek,
    I: IntoIterator<Item = &'a EpochSnapshot>,
{
    let mut writer = RunWriter::new(out, manifest)?;
    for snap in snapshots {
        if let Err(e) = writer.write_snapshot(snap) {
            let _ = writer.finish(false, None);
            return Err(e);
        }
    }
    let (_, n) = writer.finish(manifest.complete, manifest.final_loss)?;
    Ok(n)
}

pub fn create_run_file(path: &Path, manifest: &RunManifest) -> Result<RunWriter<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    RunWriter::new(BufWriter::new(File::create(path)?), manifest)
}

/// Random-access reader over a run file.
pub struct RunReader<R: Read + Seek> {
    src: R,
    manifest: RunManifest,
    offsets: Vec<u64>,
    epochs: Vec<u32>,
    frame_len: usize,
}

pub fn read_run<R: Read + Seek>(src: R) -> Result<RunReader<R>> {
    RunReader::new(src)
}

pub fn open_run(path: &Path) -> Result<RunReader<BufReader<File>>> {
    RunReader::new(BufReader::new(File::open(path)?))
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

impl<R: Read + Seek> RunReader<R> {
    pub fn new(mut src: R) -> Result<Self> {
        let size = src.seek(SeekFrom::End(0))?;
        src.seek(SeekFrom::Start(0))?;
        let mut head = [0u8; 8];
        let got = read_exact_or_eof(&mut src, &mut head)?;
        if got < 4 || &head[..4] != MAGIC {
            return Err(Error::UnsupportedFormat("missing NFL1 magic".into()));
        }
        if got < 8 || size < HEADER_LEN {
            return Err(Error::Truncated {
                last_complete: None,
            });
        }
        let len = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        if len > MANIFEST_REGION {
            return Err(Error::Corruption {
                detail: format!("manifest length {len}"),
            });
        }
        let mut region = vec![0u8; MANIFEST_REGION];
        src.read_exact(&mut region)?;
        let manifest: RunManifest = serde_json::from_slice(&region[..len])?;
        manifest.architecture.validate()?;
        let frame_len = frame_payload_len(&manifest.architecture);

        let mut offsets = Vec::new();
        let mut epochs = Vec::new();
        let mut pos = HEADER_LEN;
        let truncated = |n: usize| Error::Truncated {
            last_complete: n.checked_sub(1),
        };
        while pos < size {
            if size - pos < 4 + FRAME_PREFIX as u64 {
                return Err(truncated(offsets.len()));
            }
            src.seek(SeekFrom::Start(pos))?;
            let mut fh = [0u8; 8];
            src.read_exact(&mut fh)?;
            let flen = u32::from_le_bytes(fh[..4].try_into().unwrap()) as usize;
            if flen != frame_len {
                return Err(Error::Corruption {
                    detail: format!(
                        "frame {} declares {flen} bytes, architecture needs {frame_len}",
                        offsets.len()
                    ),
                });
            }
            if size - pos < 4 + flen as u64 {
                return Err(truncated(offsets.len()));
            }
            let epoch = u32::from_le_bytes(fh[4..].try_into().unwrap());
            if epochs.last().is_some_and(|&e| epoch <= e) {
                return Err(Error::Corruption {
                    detail: format!("epoch {epoch} out of order at frame {}", offsets.len()),
                });
            }
            offsets.push(pos);
            epochs.push(epoch);
            pos += 4 + flen as u64;
        }
        if offsets.len() as u64 != manifest.snapshot_count {
            return Err(Error::Corruption {
                detail: format!(
                    "manifest lists {} snapshots, file holds {}",
                    manifest.snapshot_count,
                    offsets.len()
                ),
            });
        }
        Ok(Self {
            src,
            manifest,
            offsets,
            epochs,
            frame_len,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn epochs(&self) -> &[u32] {
        &self.epochs
    }

    fn decode(&self, frame: &[u8]) -> EpochSnapshot {
        let epoch = u32::from_le_bytes(frame[0..4].try_into().unwrap());
        let loss = f64::from_le_bytes(frame[4..12].try_into().unwrap());
        let mut floats = frame[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let layers = self
            .manifest
            .architecture
            .layer_shapes()
            .into_iter()
            .map(|s| {
                let mut cap = LayerCapture::default();
                for c in Channel::ALL {
                    cap.channel_mut(c)
                        .extend(floats.by_ref().take(c.len(s.in_dim, s.out_dim)));
                }
                cap
            })
            .collect();
        EpochSnapshot {
            epoch,
            loss,
            layers,
        }
    }

    /// Random access by snapshot index.
    pub fn snapshot(&mut self, index: usize) -> Result<EpochSnapshot> {
        let off = *self.offsets.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "snapshot {index} out of range ({} present)",
                self.len()
            ))
        })?;
        self.src.seek(SeekFrom::Start(off + 4))?;
        let mut frame = vec![0u8; self.frame_len];
        self.src.read_exact(&mut frame)?;
        Ok(self.decode(&frame))
    }

    /// Sequential iteration from the first snapshot.
    pub fn iter(&mut self) -> SnapshotIter<'_, R> {
        SnapshotIter {
            reader: self,
            next: 0,
            positioned: false,
        }
    }

    pub fn read_all(&mut self) -> Result<Vec<EpochSnapshot>> {
        self.iter().collect()
    }

    pub fn last(&mut self) -> Result<EpochSnapshot> {
        match self.len() {
            0 => Err(Error::InsufficientData("run holds no snapshots".into())),
            n => self.snapshot(n - 1),
        }
    }

    /// One neuron's values for `channel` at every snapshot, read by seeking
    /// straight to the neuron's bytes inside each frame.
    pub fn neuron_series(
        &mut self,
        layer: usize,
        neuron: usize,
        channel: Channel,
    ) -> Result<Vec<Vec<f32>>> {
        let shapes = self.manifest.architecture.layer_shapes();
        let shape = *shapes
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))?;
        if neuron >= shape.out_dim {
            return Err(Error::invalid(format!(
                "neuron {neuron} out of range for layer {layer} ({} neurons)",
                shape.out_dim
            )));
        }
        let mut within = FRAME_PREFIX;
        for s in &shapes[..layer] {
            within += 4 * Channel::ALL
                .iter()
                .map(|c| c.len(s.in_dim, s.out_dim))
                .sum::<usize>();
        }
        for c in Channel::ALL.iter().take_while(|&&c| c != channel) {
            within += 4 * c.len(shape.in_dim, shape.out_dim);
        }
        let k = channel.values_per_neuron(shape.in_dim);
        within += 4 * k * neuron;

        let mut buf = vec![0u8; 4 * k];
        let mut series = Vec::with_capacity(self.len());
        for &off in &self.offsets {
            self.src.seek(SeekFrom::Start(off + 4 + within as u64))?;
            self.src.read_exact(&mut buf)?;
            series.push(
                buf.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(series)
    }

    pub fn into_inner(self) -> R {
        self.src
    }
}

pub struct SnapshotIter<'a, R: Read + Seek> {
    reader: &'a mut RunReader<R>,
    next: usize,
    positioned: bool,
}

impl<R: Read + Seek> Iterator for SnapshotIter<'_, R> {
    type Item = Result<EpochSnapshot>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.reader.len() {
            return None;
        }
        let mut step = || -> Result<EpochSnapshot> {
            if !self.positioned {
                self.reader
                    .src
                    .seek(SeekFrom::Start(self.reader.offsets[self.next]))?;
                self.positioned = true;
            }
            let mut frame = vec![0u8; 4 + self.reader.frame_len];
            self.reader.src.read_exact(&mut frame)?;
            Ok(self.reader.decode(&frame[4..]))
        };
        let item = step();
        if item.is_err() {
            self.positioned = false;
        }
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.reader.len() - self.next;
        (n, Some(n))
    }
}

/// `(x − mean) / std` with the population standard deviation; an all-zero
/// vector when `std < 1e-12`.
pub fn standardize_channel(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot standardize an empty channel"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|x| (x - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use std::io::Cursor;

    fn arch() -> ArchitectureSpec {
        ArchitectureSpec::new(vec![2, 3, 1], vec![1, 3, 2]).unwrap()
    }

    fn snapshot(arch: &ArchitectureSpec, epoch: u32, rng: &mut SplitMix64) -> EpochSnapshot {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|s| {
                let mut cap = LayerCapture::default();
                for c in Channel::ALL {
                    *cap.channel_mut(c) = (0..c.len(s.in_dim, s.out_dim))
                        .map(|_| rng.uniform(-1.0, 1.0) as f32)
                        .collect();
                }
                cap
            })
            .collect();
        EpochSnapshot {
            epoch,
            loss: rng.next_f64(),
            layers,
        }
    }

    fn manifest(arch: &ArchitectureSpec, n: u64) -> RunManifest {
        let mut m = RunManifest::new(RunConfig::default(), arch.clone(), 0);
        m.snapshot_count = n;
        m.complete = true;
        m.final_loss = Some(0.25);
        m
    }

    fn encoded(n: u32) -> (RunManifest, Vec<EpochSnapshot>, Vec<u8>) {
        let a = arch();
        let mut rng = SplitMix64::new(17);
        let snaps: Vec<_> = (1..=n).map(|e| snapshot(&a, e * 2, &mut rng)).collect();
        let m = manifest(&a, n as u64);
        let mut cur = Cursor::new(Vec::new());
        write_run(&m, &snaps, &mut cur).unwrap();
        (m, snaps, cur.into_inner())
    }

    #[test]
    fn empty_run_is_header_only() {
        let a = ArchitectureSpec::default();
        let m = manifest(&a, 0);
        let mut cur = Cursor::new(Vec::new());
        let n = write_run(&m, &[], &mut cur).unwrap();
        assert_eq!(n, 8 + 4096);
        assert_eq!(cur.get_ref().len(), 8 + 4096);
        let r = read_run(Cursor::new(cur.into_inner())).unwrap();
        assert_eq!(r.manifest().snapshot_count, 0);
        assert!(r.is_empty());
    }

    #[test]
    fn header_layout() {
        let (m, _, bytes) = encoded(1);
        assert_eq!(&bytes[..4], b"NFL1");
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[8..8 + len]).unwrap();
        assert_eq!(json, to_canonical_string(&m).unwrap());
        assert!(bytes[8 + len..8 + 4096].iter().all(|&b| b == b' '));
        let flen = u32::from_le_bytes(bytes[4104..4108].try_into().unwrap()) as usize;
        assert_eq!(flen, frame_payload_len(&m.architecture));
        assert_eq!(bytes.len(), 4104 + 4 + flen);
    }

    #[test]
    fn round_trip() {
        let (m, snaps, bytes) = encoded(5);
        let mut r = read_run(Cursor::new(bytes)).unwrap();
        assert_eq!(r.manifest(), &m);
        assert_eq!(r.read_all().unwrap(), snaps);
        for i in (0..5).rev() {
            assert_eq!(r.snapshot(i).unwrap(), snaps[i]);
        }
        assert_eq!(r.epochs(), &[2, 4, 6, 8, 10]);
    }

    #[test]
    fn neuron_series_matches_full_load() {
        let (_, snaps, bytes) = encoded(4);
        let a = arch();
        let mut r = read_run(Cursor::new(bytes)).unwrap();
        for (l, s) in a.layer_shapes().into_iter().enumerate() {
            for j in 0..s.out_dim {
                for c in Channel::ALL {
                    let series = r.neuron_series(l, j, c).unwrap();
                    let naive: Vec<Vec<f32>> = snaps
                        .iter()
                        .map(|sn| sn.layers[l].neuron_values(c, j, s.in_dim).to_vec())
                        .collect();
                    assert_eq!(series, naive);
                }
            }
        }
        assert!(r.neuron_series(0, 3, Channel::Weights).is_err());
        assert!(r.neuron_series(9, 0, Channel::Weights).is_err());
    }

    #[test]
    fn truncation_names_last_complete_snapshot() {
        let (_, _, bytes) = encoded(3);
        let flen = frame_payload_len(&arch()) + 4;
        let cut = 4104 + 2 * flen + flen / 2;
        match read_run(Cursor::new(bytes[..cut].to_vec())) {
            Err(Error::Truncated { last_complete }) => assert_eq!(last_complete, Some(1)),
            other => panic!("{:?}", other.err()),
        }
        match read_run(Cursor::new(bytes[..4104 + 6].to_vec())) {
            Err(Error::Truncated { last_complete }) => assert_eq!(last_complete, None),
            other => panic!("{:?}", other.err()),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let (_, _, mut bytes) = encoded(1);
        bytes[0] = b'X';
        assert!(matches!(
            read_run(Cursor::new(bytes)),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn oversize_manifest_rejected() {
        let mut m = manifest(&arch(), 0);
        m.storage = "x".repeat(5000);
        assert!(matches!(
            RunWriter::new(Cursor::new(Vec::new()), &m),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn failed_stream_leaves_incomplete_file() {
        let a = arch();
        let mut rng = SplitMix64::new(1);
        let good = snapshot(&a, 1, &mut rng);
        let stale = snapshot(&a, 1, &mut rng); // repeats epoch 1
        let m = manifest(&a, 2);
        let mut cur = Cursor::new(Vec::new());
        assert!(write_run(&m, [&good, &stale], &mut cur).is_err());
        let r = read_run(Cursor::new(cur.into_inner())).unwrap();
        assert!(!r.manifest().complete);
        assert_eq!(r.manifest().snapshot_count, 1);
    }

    #[test]
    fn byte_determinism() {
        assert_eq!(encoded(3).2, encoded(3).2);
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize_channel(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(standardize_channel(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(standardize_channel(&[]).is_err());
    }

    #[test]
    fn standardize_moments() {
        let mut rng = SplitMix64::new(23);
        for n in [2usize, 3, 17, 500] {
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-50.0, 80.0)).collect();
            let z = standardize_channel(&v).unwrap();
            let mean = z.iter().sum::<f64>() / n as f64;
            let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(mean.abs() <= 1e-9);
            assert!((std - 1.0).abs() <= 1e-9);
        }
    }
}
