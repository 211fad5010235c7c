//! On-disk formats: matrices, checkpoints, metrics and training history.
//!
//! Matrix blocks are `u64` LE rows, `u64` LE cols, then `rows·cols` LE `f64`
//! values in row-major order. A checkpoint is
//!
//! ```text
//! b"DEMIANCK" | u32 version | u32 metadata length | metadata (JSON, UTF-8)
//! u32 network count, then per network:
//!   u32 name length | name | u64 input width | u32 layer count
//!   per layer: u8 tag | u32 block count | matrix blocks
//! ```
//!
//! Layer tags and blocks: `0` dense (weight, bias), `1` relu (none), `2` elu
//! (`1×1` alpha), `3` batchnorm (gamma, beta, running mean, running var,
//! `1×2` [ema rate, epsilon]).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::Network;
use crate::nn::{BatchNorm, Dense, Elu, Layer, Relu};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEMIANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_DENSE: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_ELU: u8 = 2;
const TAG_BATCHNORM: u8 = 3;

pub fn encode_matrix(m: &Matrix, out: &mut Vec<u8>) {
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential reader over a byte buffer that reports truncation against the
/// file it came from.
struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, at: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or_else(|| Error::Format("length overflow".into()))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size does not fit in memory".into()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("matrix {rows}×{cols} is too large")))?;
        let raw = self.take(len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.path.display(),
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

pub fn write_matrix_bin(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * m.as_slice().len());
    encode_matrix(m, &mut out);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_bin(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes, path);
    let m = c.matrix()?;
    c.finish()?;
    Ok(m)
}

/// One row per line, values separated by single spaces, shortest round-trip
/// formatting.
pub fn write_matrix_text(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in m.row_iter() {
        let mut line = String::new();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            write!(line, "{v:?}").expect("writing to a String");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_text(path: impl AsRef<Path>) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("line {}: {t:?}: {e}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "line {} has {} values, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

fn encode_network(name: &str, net: &Network, out: &mut Vec<u8>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(net.in_width() as u64).to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let blocks: Vec<Matrix> = match layer {
            Layer::Dense(d) => vec![d.weight.value.clone(), d.bias.value.clone()],
            Layer::Relu(_) => vec![],
            Layer::Elu(e) => vec![Matrix::filled(1, 1, e.alpha)],
            Layer::BatchNorm(b) => vec![
                b.gamma.value.clone(),
                b.beta.value.clone(),
                Matrix::row_vector(&b.running_mean),
                Matrix::row_vector(&b.running_var),
                Matrix::row_vector(&[b.ema_rate, b.epsilon]),
            ],
        };
        let tag = match layer {
            Layer::Dense(_) => TAG_DENSE,
            Layer::Relu(_) => TAG_RELU,
            Layer::Elu(_) => TAG_ELU,
            Layer::BatchNorm(_) => TAG_BATCHNORM,
        };
        out.push(tag);
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in &blocks {
            encode_matrix(b, out);
        }
    }
}

fn row_of(m: &Matrix, width: usize, what: &str) -> Result<Vec<f64>> {
    if m.rows() != 1 || m.cols() != width {
        return Err(Error::Format(format!(
            "{what} block has shape {:?}, expected (1, {width})",
            m.shape()
        )));
    }
    Ok(m.as_slice().to_vec())
}

fn decode_layer(tag: u8, blocks: Vec<Matrix>) -> Result<Layer> {
    let want = match tag {
        TAG_DENSE => 2,
        TAG_RELU => 0,
        TAG_ELU => 1,
        TAG_BATCHNORM => 5,
        other => return Err(Error::Format(format!("unknown layer tag {other}"))),
    };
    if blocks.len() != want {
        return Err(Error::Format(format!(
            "layer tag {tag} carries {} blocks, expected {want}",
            blocks.len()
        )));
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("count checked");
    Ok(match tag {
        TAG_DENSE => {
            let w = next();
            let b = row_of(&next(), w.cols(), "dense bias")?;
            Layer::Dense(Dense::from_parts(w, b)?)
        }
        TAG_RELU => Layer::Relu(Relu::default()),
        TAG_ELU => Layer::Elu(Elu::new(row_of(&next(), 1, "elu alpha")?[0])),
        _ => {
            let gamma = next();
            let width = gamma.cols();
            let gamma = row_of(&gamma, width, "batchnorm gamma")?;
            let beta = row_of(&next(), width, "batchnorm beta")?;
            let mean = row_of(&next(), width, "batchnorm running mean")?;
            let var = row_of(&next(), width, "batchnorm running var")?;
            let rates = row_of(&next(), 2, "batchnorm rates")?;
            let mut bn = BatchNorm::with_rates(width, rates[0], rates[1]);
            bn.gamma.value = Matrix::row_vector(&gamma);
            bn.beta.value = Matrix::row_vector(&beta);
            bn.running_mean = mean;
            bn.running_var = var;
            Layer::BatchNorm(bn)
        }
    })
}

/// Named networks plus free-form JSON metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub networks: Vec<(String, Network)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| Error::Format(format!("checkpoint has no network named {name:?}")))
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&ck.metadata).expect("JSON values always serialise");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ck.networks.len() as u32).to_le_bytes());
    for (name, net) in &ck.networks {
        encode_network(name, net, &mut out);
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut c = Cursor::new(&bytes, path);
    let magic = c.take(8).map_err(|_| Error::Format(format!("{}: not a checkpoint", path.display())))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let meta_len = c.u32()? as usize;
    let metadata = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let count = c.u32()?;
    let mut networks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("network name is not UTF-8".into()))?;
        let mut net = Network::new(c.usize()?);
        let layers = c.u32()?;
        for _ in 0..layers {
            let tag = c.u8()?;
            let n_blocks = c.u32()?;
            let blocks = (0..n_blocks).map(|_| c.matrix()).collect::<Result<Vec<_>>>()?;
            net.push(decode_layer(tag, blocks)?)
                .map_err(|e| Error::Format(format!("network {name:?}: {e}")))?;
        }
        networks.push((name, net));
    }
    c.finish()?;
    Ok(Checkpoint { metadata, networks })
}

/// One line of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub split: String,
    /// `-` when the metric has no direction.
    pub train_modality: String,
    pub test_modality: String,
    pub value: f64,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, split: impl Into<String>, value: f64, seed: u64) -> Self {
        MetricRow {
            metric: metric.into(),
            split: split.into(),
            train_modality: "-".into(),
            test_modality: "-".into(),
            value,
            seed,
        }
    }

    pub fn directed(mut self, train: impl Into<String>, test: impl Into<String>) -> Self {
        self.train_modality = train.into();
        self.test_modality = test.into();
        self
    }
}

pub const METRICS_HEADER: &str = "metric,split,train_modality,test_modality,value,seed";

pub fn format_metrics(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{:?},{}",
            r.metric, r.split, r.train_modality, r.test_modality, r.value, r.seed
        )
        .expect("writing to a String");
    }
    s
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, format_metrics(rows))?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics file header does not match".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("metrics line {l:?} has {} fields", f.len())));
            }
            let bad = |e: &dyn std::fmt::Display| Error::Format(format!("metrics line {l:?}: {e}"));
            Ok(MetricRow {
                metric: f[0].into(),
                split: f[1].into(),
                train_modality: f[2].into(),
                test_modality: f[3].into(),
                value: f[4].parse().map_err(|e| bad(&e))?,
                seed: f[5].parse().map_err(|e| bad(&e))?,
            })
        })
        .collect()
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Creates `dir` (and parents) and returns it.
pub fn ensure_dir(dir: impl AsRef<Path>) -> Result<PathBuf> {
    fs::create_dir_all(dir.as_ref())?;
    Ok(dir.as_ref().to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp, Activation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_binary_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = Matrix::from_rows(&[[1.5, -2.0, 0.25]]);
        write_matrix_bin(&p, &m).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], &1u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(read_matrix_bin(&p).unwrap(), m);
        fs::write(&p, &bytes[..30]).unwrap();
        assert!(matches!(read_matrix_bin(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        let m = Matrix::from_rows(&[[0.1, 1e-300, -7.0], [f64::MAX, 3.0, 1.0 / 3.0]]);
        write_matrix_text(&p, &m).unwrap();
        assert_eq!(read_matrix_text(&p).unwrap(), m);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = mlp(&[4, 6, 3], Activation::Elu, true, 0.1, &mut rng).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        net.forward(&x, crate::network::Mode::Train).unwrap();
        let relu = mlp(&[3, 2, 2], Activation::Relu, false, 0.1, &mut rng).unwrap();
        let ck = Checkpoint {
            metadata: serde_json::json!({"note": "test", "k": 1}),
            networks: vec![("a".into(), net.clone()), ("b".into(), relu.clone())],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.metadata, ck.metadata);
        assert_eq!(back.network("a").unwrap().infer(&x).unwrap(), net.infer(&x).unwrap());
        let x3 = x.select_cols(&[0, 1, 2]);
        assert_eq!(back.network("b").unwrap().infer(&x3).unwrap(), relu.infer(&x3).unwrap());
        assert!(back.network("c").is_err());
        // re-encoding the loaded checkpoint reproduces the file
        assert_eq!(encode_checkpoint(&back), fs::read(&p).unwrap());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            MetricRow::new("cca.topk_correlation", "test", 27.9, 0),
            MetricRow::new("demian.srl_accuracy", "test", 0.81, 3).directed("left", "right"),
        ];
        let text = format_metrics(&rows);
        assert_eq!(
            text,
            "metric,split,train_modality,test_modality,value,seed\n\
             cca.topk_correlation,test,-,-,27.9,0\n\
             demian.srl_accuracy,test,left,right,0.81,3\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        write_metrics(&p, &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }
}
