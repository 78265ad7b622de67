//! Dataset ingestion, metrics sinks, checkpoints, and config documents.
//!
//! * IDX image/label parsing (big-endian, strict magic/count/length checks),
//!   with pixels scaled by 1/255 into `[0,1]`.
//! * A synthetic Gaussian-blob generator for desk-scale experiments.
//! * The metrics CSV schema shared by the trainer and the sweep harness;
//!   floating-point fields render in shortest round-trip decimal form, so a
//!   read-back record equals the written one bitwise.
//! * Checkpoints: a self-describing JSON header line followed by the raw
//!   little-endian 64-bit parameter payload — bit-exact resume over
//!   interoperability.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynsys::{NetworkSpec, Params, Target};
use crate::numerics::{RealVec, Rng};
use crate::{Error, Result};

/// Labeled samples with inputs in `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<RealVec>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
    /// Human-readable record of how raw values were scaled into `[0,1]`.
    normalization: String,
}

impl Dataset {
    pub fn new(
        inputs: Vec<RealVec>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
        normalization: impl Into<String>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::usage("dataset needs at least one sample"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::usage(format!(
                "dataset has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].dim();
        for (i, x) in inputs.iter().enumerate() {
            if x.dim() != dim {
                return Err(Error::usage(format!(
                    "sample {i} has dimension {} but sample 0 has {dim}",
                    x.dim()
                )));
            }
            if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::usage(format!(
                    "sample {i} has entries outside [0,1]"
                )));
            }
        }
        if num_classes == 0 {
            return Err(Error::usage("dataset needs num_classes ≥ 1"));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= num_classes) {
            return Err(Error::usage(format!(
                "label {l} of sample {i} is outside 0..{num_classes}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
            name: name.into(),
            normalization: normalization.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].dim()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn normalization(&self) -> &str {
        &self.normalization
    }

    pub fn input(&self, i: usize) -> &RealVec {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// The `(x₀, y)` pair for sample `i` in the form the dynamics consume.
    pub fn pair(&self, i: usize) -> (&RealVec, Target) {
        (&self.inputs[i], Target::Class(self.labels[i]))
    }

    /// A new dataset holding the given samples, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!(
                "subset index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Dataset::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            format!("{}[{}]", self.name, indices.len()),
            self.normalization.clone(),
        )
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated IDX file while reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Parses an IDX image file (magic `0x00000803`, three dimension headers)
/// into `[0,1]`-scaled rows of length rows×cols.
pub fn load_idx_images(path: &Path) -> Result<Vec<RealVec>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_be_u32(&mut r, "images magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!(
            "bad IDX images magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(&mut r, "image count")? as usize;
    let rows = read_be_u32(&mut r, "image rows")? as usize;
    let cols = read_be_u32(&mut r, "image cols")? as usize;
    let dim = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    if dim == 0 {
        return Err(Error::format("IDX images declare zero-sized images"));
    }
    let mut pixels = Vec::new();
    r.read_to_end(&mut pixels)?;
    let expected = count
        .checked_mul(dim)
        .ok_or_else(|| Error::format("image payload size overflows"))?;
    if pixels.len() != expected {
        return Err(Error::format(format!(
            "IDX images payload holds {} bytes, expected {expected}",
            pixels.len()
        )));
    }
    Ok(pixels
        .chunks_exact(dim)
        .map(|img| {
            RealVec::new(img.iter().map(|&b| f64::from(b) / 255.0).collect())
                .expect("u8/255 is always finite")
        })
        .collect())
}

/// Parses an IDX label file (magic `0x00000801`, one dimension header).
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_be_u32(&mut r, "labels magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!(
            "bad IDX labels magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(&mut r, "label count")? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count {
        return Err(Error::format(format!(
            "IDX labels payload holds {} bytes, expected {count}",
            bytes.len()
        )));
    }
    Ok(bytes.into_iter().map(usize::from).collect())
}

/// Loads a paired IDX image/label dataset; the two files must agree on the
/// sample count. Classes are `0..=max(label)`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let inputs = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if inputs.len() != labels.len() {
        return Err(Error::format(format!(
            "IDX files disagree: {} images vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(inputs, labels, num_classes, name, "u8/255")
}

/// Noise scale, in `[0,1]`-box units, of the synthetic generator: the affine
/// squash maps the unit-variance raw cloud by this factor.
pub const SYNTH_NOISE_STD: f64 = 0.05;

/// Gaussian blobs with class means on orthogonal coordinate axes around the
/// box center, every pair of means exactly `margin` apart before clipping:
/// mean of class `c` is `0.5·𝟙 + (margin/√2)·e_c`. Raw samples are
/// unit-variance isotropic around the means; the affine squash scales the
/// noise by [`SYNTH_NOISE_STD`] and the result is clipped into `[0,1]`.
/// Labels cycle through the classes, so counts are balanced within one.
pub fn synth_gaussians(
    rng: &mut Rng,
    s: usize,
    d_x: usize,
    classes: usize,
    margin: f64,
) -> Result<Dataset> {
    if s == 0 || d_x == 0 || classes == 0 {
        return Err(Error::usage("synthetic dataset needs S, d_x, classes ≥ 1"));
    }
    if !margin.is_finite() || margin < 0.0 {
        return Err(Error::usage(format!("margin must be finite and ≥ 0, got {margin}")));
    }
    if classes > d_x {
        return Err(Error::usage(format!(
            "axis-separated means need classes ≤ d_x, got {classes} > {d_x}"
        )));
    }
    let offset = margin / std::f64::consts::SQRT_2;
    let mut inputs = Vec::with_capacity(s);
    let mut labels = Vec::with_capacity(s);
    for i in 0..s {
        let c = i % classes;
        let x = RealVec::from_fn(d_x, |j| {
            let mean = 0.5 + if j == c { offset } else { 0.0 };
            (mean + SYNTH_NOISE_STD * rng.normal()).clamp(0.0, 1.0)
        })?;
        inputs.push(x);
        labels.push(c);
    }
    Dataset::new(
        inputs,
        labels,
        classes,
        "synth-gaussians",
        format!("axis-means margin={margin} sigma={SYNTH_NOISE_STD}"),
    )
}

/// One row of the training metrics stream. Accuracies are batch-level;
/// `backprops` counts the adversary's backward sweeps for the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub clean_loss: f64,
    pub robust_loss: f64,
    pub grad_norm: f64,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub backprops: u64,
    pub wall_ms: f64,
}

const METRICS_HEADER: [&str; 8] = [
    "step",
    "clean_loss",
    "robust_loss",
    "grad_norm",
    "clean_acc",
    "robust_acc",
    "backprops",
    "wall_ms",
];

/// Writes the fixed-header metrics CSV (header even when `records` is
/// empty). Float fields use shortest round-trip decimal rendering, so
/// [`read_metrics`] reproduces them bitwise.
pub fn write_metrics(sink: &mut dyn Write, records: &[MetricsRecord]) -> Result<()> {
    // The header is written explicitly; auto-headers would double it.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(METRICS_HEADER)
        .map_err(|e| Error::format(format!("metrics header write failed: {e}")))?;
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::format(format!("metrics row write failed: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Incremental metrics sink: writes the header at creation, then one row per
/// [`MetricsSink::append`], flushing each row (partial output survives a
/// crash).
pub struct MetricsSink {
    writer: csv::Writer<File>,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(File::create(path)?);
        writer
            .write_record(METRICS_HEADER)
            .map_err(|e| Error::format(format!("metrics header write failed: {e}")))?;
        writer.flush()?;
        Ok(MetricsSink { writer })
    }

    /// Reopens an existing metrics file for appending (no header is
    /// written); the file must already carry the schema header.
    pub fn append_to(path: &Path) -> Result<Self> {
        read_metrics(path).map_err(|e| e.with_context("cannot append to metrics file"))?;
        let file = File::options().append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(MetricsSink { writer })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        self.writer
            .serialize(record)
            .map_err(|e| Error::format(format!("metrics row write failed: {e}")))?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a metrics CSV, validating the exact header; malformed rows report
/// their line number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(File::open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(format!("metrics header unreadable: {e}")))?;
    if headers.iter().ne(METRICS_HEADER) {
        return Err(Error::format(format!(
            "metrics header mismatch: got [{}]",
            headers.iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<MetricsRecord>() {
        out.push(row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::format(format!("malformed metrics row at line {line}: {e}"))
        })?);
    }
    Ok(out)
}

/// Current checkpoint container version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything a resumed run needs besides the parameter payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub spec: NetworkSpec,
    /// Digest of the training configuration (see [`config_digest`]); resume
    /// refuses a checkpoint written under a different configuration.
    pub config_digest: String,
    pub step: u64,
    pub epoch: u64,
    /// Position within the current epoch's shuffled order, in samples.
    pub cursor: u64,
    pub rng: Rng,
}

/// SHA-256 hex digest of a configuration's canonical JSON rendering.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)
        .map_err(|e| Error::format(format!("config not serializable: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes a checkpoint: one JSON meta line, then the parameters as raw
/// little-endian 64-bit reals in flattening order.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &Params) -> Result<()> {
    if !params.matches(&meta.spec) {
        return Err(Error::usage(
            "checkpoint parameters do not match the declared network shape",
        ));
    }
    let mut f = File::create(path)?;
    let header = serde_json::to_string(meta)
        .map_err(|e| Error::format(format!("checkpoint meta not serializable: {e}")))?;
    f.write_all(header.as_bytes())?;
    f.write_all(b"\n")?;
    let flat = params.flatten();
    let mut payload = Vec::with_capacity(flat.dim() * 8);
    for v in flat.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&payload)?;
    f.sync_all()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`], restoring the
/// parameters bitwise.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Params)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    let n = r.read_line(&mut header)?;
    if n == 0 {
        return Err(Error::format("checkpoint file is empty"));
    }
    let meta: CheckpointMeta = serde_json::from_str(header.trim_end())
        .map_err(|e| Error::format(format!("checkpoint header unreadable: {e}")))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "checkpoint version {} unsupported (current {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::format(format!(
            "checkpoint payload length {} is not a multiple of 8",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let flat = RealVec::new(values)
        .map_err(|_| Error::format("checkpoint payload holds non-finite values"))?;
    let params = Params::unflatten(&meta.spec, &flat)
        .map_err(|e| Error::format(format!("checkpoint payload shape mismatch: {e}")))?;
    Ok((meta, params))
}

/// Reads a JSON configuration document into any deserializable config type.
pub fn read_json_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: invalid config: {e}", path.display())))
}

/// Writes any serializable document as pretty-printed JSON.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("value not serializable: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Directory expected to hold the MNIST IDX files: `$YOPO_DATA_DIR` when
/// set, else `data/mnist` under the current directory. Under cargo the
/// process may start inside a crate subdirectory, so as a fallback the
/// ancestors of `CARGO_MANIFEST_DIR` are searched for `data/mnist`.
pub fn default_data_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("YOPO_DATA_DIR") {
        return PathBuf::from(dir);
    }
    let local = PathBuf::from("data").join("mnist");
    if local.exists() {
        return local;
    }
    if let Some(manifest) = std::env::var_os("CARGO_MANIFEST_DIR") {
        let mut dir = PathBuf::from(manifest);
        loop {
            let candidate = dir.join("data").join("mnist");
            if candidate.exists() {
                return candidate;
            }
            if !dir.pop() {
                break;
            }
        }
    }
    local
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{Activation, LossKind};

    /// 1-image 2×2 fixture with pixels (0, 255, 128, 64) and label 7.
    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 255, 128, 64]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&1u32.to_be_bytes());
        labels.push(7);
        (images, labels)
    }

    fn write_temp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn idx_fixture_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        let ipath = write_temp(&dir, "img.idx", &images);
        let lpath = write_temp(&dir, "lab.idx", &labels);
        let ds = load_idx(&ipath, &lpath).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(
            ds.input(0).as_slice(),
            &[0.0, 1.0, 0.5019607843137255, 0.25098039215686274]
        );
        assert_eq!(ds.label(0), 7);
        assert_eq!(ds.num_classes(), 8);
        assert_eq!(ds.normalization(), "u8/255");
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        // Labels magic handed to the images parser and vice versa.
        let ipath = write_temp(&dir, "img.idx", &images);
        let lpath = write_temp(&dir, "lab.idx", &labels);
        assert!(matches!(load_idx_images(&lpath), Err(Error::Format(_))));
        assert!(matches!(load_idx_labels(&ipath), Err(Error::Format(_))));
    }

    #[test]
    fn idx_rejects_truncation_at_every_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        for cut in 0..images.len() {
            let path = write_temp(&dir, "trunc_img.idx", &images[..cut]);
            assert!(
                matches!(load_idx_images(&path), Err(Error::Format(_))),
                "images truncated to {cut} bytes must be a format error"
            );
        }
        for cut in 0..labels.len() {
            let path = write_temp(&dir, "trunc_lab.idx", &labels[..cut]);
            assert!(
                matches!(load_idx_labels(&path), Err(Error::Format(_))),
                "labels truncated to {cut} bytes must be a format error"
            );
        }
    }

    #[test]
    fn idx_rejects_trailing_bytes_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (mut images, mut labels) = idx_fixture();
        images.push(9);
        let path = write_temp(&dir, "img.idx", &images);
        assert!(matches!(load_idx_images(&path), Err(Error::Format(_))));
        images.pop();

        labels.push(3); // two labels, one image
        let ipath = write_temp(&dir, "img2.idx", &images);
        let mut two = Vec::new();
        two.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        two.extend_from_slice(&2u32.to_be_bytes());
        two.extend_from_slice(&[7, 3]);
        let lpath = write_temp(&dir, "lab2.idx", &two);
        assert!(matches!(load_idx(&ipath, &lpath), Err(Error::Format(_))));
    }

    #[test]
    fn real_mnist_counts_when_staged() {
        // The full-corpus check runs only when the data files are present
        // (they are fetched, not committed).
        let dir = default_data_dir();
        let images = dir.join("train-images-idx3-ubyte");
        let labels = dir.join("train-labels-idx1-ubyte");
        if !images.exists() || !labels.exists() {
            eprintln!("skipping: MNIST not staged under {}", dir.display());
            return;
        }
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 60000);
        assert_eq!(ds.input_dim(), 784);
        assert_eq!(ds.num_classes(), 10);
    }

    #[test]
    fn dataset_validation() {
        let x = RealVec::new(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            Dataset::new(vec![], vec![], 2, "d", "none"),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            Dataset::new(vec![x.clone()], vec![2], 2, "d", "none"),
            Err(Error::Usage(_))
        ));
        let out_of_box = RealVec::new(vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            Dataset::new(vec![out_of_box], vec![0], 2, "d", "none"),
            Err(Error::Usage(_))
        ));
        let ds = Dataset::new(vec![x], vec![1], 2, "d", "none").unwrap();
        let (x0, y) = ds.pair(0);
        assert_eq!(x0.as_slice(), &[0.5, 0.5]);
        assert!(matches!(y, Target::Class(1)));
    }

    #[test]
    fn synth_balanced_and_margin_geometry() {
        let mut rng = Rng::from_seed(42);
        let ds = synth_gaussians(&mut rng, 7, 3, 3, 0.3).unwrap();
        assert_eq!(ds.len(), 7);
        let counts = (0..3)
            .map(|c| (0..ds.len()).filter(|&i| ds.label(i) == c).count())
            .collect::<Vec<_>>();
        assert_eq!(counts, vec![3, 2, 2], "labels cycle, balanced within one");

        // S = classes → exactly one per class.
        let ds = synth_gaussians(&mut rng, 3, 3, 3, 0.3).unwrap();
        assert_eq!(
            (0..3).map(|i| ds.label(i)).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );

        // Determinism from the rng.
        let a = synth_gaussians(&mut Rng::from_seed(9), 50, 4, 2, 0.4).unwrap();
        let b = synth_gaussians(&mut Rng::from_seed(9), 50, 4, 2, 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_class_means_near_targets() {
        // CLT check: empirical class means within 5σ/√(S/classes) of the
        // designed means (no clipping active at this margin).
        let mut rng = Rng::from_seed(77);
        let (s, d, k, margin) = (4000usize, 2usize, 2usize, 0.4f64);
        let ds = synth_gaussians(&mut rng, s, d, k, margin).unwrap();
        let tol = 5.0 * SYNTH_NOISE_STD / ((s / k) as f64).sqrt();
        let offset = margin / std::f64::consts::SQRT_2;
        for c in 0..k {
            let members: Vec<usize> = (0..s).filter(|&i| ds.label(i) == c).collect();
            for j in 0..d {
                let mean =
                    members.iter().map(|&i| ds.input(i)[j]).sum::<f64>() / members.len() as f64;
                let target = 0.5 + if j == c { offset } else { 0.0 };
                assert!(
                    (mean - target).abs() <= tol,
                    "class {c} coord {j}: mean {mean} vs target {target} (tol {tol})"
                );
            }
        }
    }

    #[test]
    fn synth_huge_margin_is_linearly_separated() {
        // Means clip to box corners; the fixed axis-difference classifier
        // still separates perfectly.
        let mut rng = Rng::from_seed(5);
        let ds = synth_gaussians(&mut rng, 400, 2, 2, 100.0).unwrap();
        for i in 0..ds.len() {
            let x = ds.input(i);
            let predicted = if x[0] > x[1] { 0 } else { 1 };
            assert_eq!(predicted, ds.label(i));
        }
    }

    #[test]
    fn metrics_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut rng = Rng::from_seed(3);
        let mut records = Vec::new();
        for step in 0..100u64 {
            records.push(MetricsRecord {
                step,
                clean_loss: rng.normal() * 10f64.powi(rng.below(30) as i32 - 15),
                robust_loss: 0.1 + 0.2, // classic non-representable sum
                grad_norm: rng.uniform(),
                clean_acc: 0.8125, // dyadic rational renders exactly
                robust_acc: rng.uniform(),
                backprops: 64 * 5,
                wall_ms: rng.uniform_in(0.0, 1e4),
            });
        }
        let mut sink = MetricsSink::create(&path).unwrap();
        for r in &records {
            sink.append(r).unwrap();
        }
        drop(sink);
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, records, "every float field must round-trip bitwise");

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,clean_loss,robust_loss,grad_norm,clean_acc,robust_acc,backprops,wall_ms\n"));
        assert!(text.contains("0.8125"), "dyadic rational rendered exactly");
    }

    #[test]
    fn metrics_empty_list_gives_header_only() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,clean_loss,robust_loss,grad_norm,clean_acc,robust_acc,backprops,wall_ms\n"
        );
    }

    #[test]
    fn metrics_reader_rejects_bad_header_and_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "step,clean_loss\n1,2\n").unwrap();
        assert!(matches!(read_metrics(&path), Err(Error::Format(_))));

        let path2 = dir.path().join("badrow.csv");
        std::fs::write(
            &path2,
            "step,clean_loss,robust_loss,grad_norm,clean_acc,robust_acc,backprops,wall_ms\n1,2,3,4,5,6,7,8\n1,oops,3,4,5,6,7,8\n",
        )
        .unwrap();
        let err = read_metrics(&path2).unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("line 3"), "got: {msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_bitwise_including_rng() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let spec = NetworkSpec::uniform(vec![3, 4, 2], Activation::Tanh, LossKind::SoftmaxCrossEntropy)
            .unwrap();
        let params = Params::init(&spec, &Rng::from_seed(11));
        let mut rng = Rng::from_seed(99);
        for _ in 0..17 {
            rng.next_u64(); // mid-stream state
        }
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            spec: spec.clone(),
            config_digest: config_digest(&serde_json::json!({"a": 1})).unwrap(),
            step: 123,
            epoch: 4,
            cursor: 56,
            rng: rng.clone(),
        };
        save_checkpoint(&path, &meta, &params).unwrap();
        let (meta2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(params2.flatten().as_slice(), params.flatten().as_slice());
        // The restored stream continues identically.
        let mut restored = meta2.rng;
        let mut original = rng;
        for _ in 0..10 {
            assert_eq!(restored.next_u64(), original.next_u64());
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let spec =
            NetworkSpec::uniform(vec![2, 2], Activation::Linear, LossKind::Quadratic).unwrap();
        let params = Params::init(&spec, &Rng::from_seed(1));
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            spec,
            config_digest: "x".into(),
            step: 0,
            epoch: 0,
            cursor: 0,
            rng: Rng::from_seed(0),
        };
        save_checkpoint(&path, &meta, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Truncated payload.
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));

        // Truncated to a multiple of 8 but short one value.
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));

        // Unsupported version.
        let mut wrong = serde_json::to_value(&meta).unwrap();
        wrong["version"] = serde_json::json!(77);
        let mut buf = serde_json::to_string(&wrong).unwrap().into_bytes();
        buf.push(b'\n');
        std::fs::write(&path, &buf).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));

        // Empty file.
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn config_digest_is_stable_and_canonical() {
        let digest = config_digest(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(
            digest,
            "015abd7f5cc57a2dd94b7590f04ad8084273905ee33ec5cebeae62276a97f862"
        );
        assert_ne!(digest, config_digest(&serde_json::json!({"a": 2})).unwrap());
    }

    #[test]
    fn json_config_round_trip_and_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        write_json_pretty(&path, &serde_json::json!({"m": 5, "n": 2})).unwrap();
        let v: serde_json::Value = read_json_config(&path).unwrap();
        assert_eq!(v["m"], 5);
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            read_json_config::<serde_json::Value>(&path),
            Err(Error::Format(_))
        ));
    }
}
