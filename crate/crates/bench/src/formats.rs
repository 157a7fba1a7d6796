//! On-disk artifacts.
//!
//! Datasets, models and fields share one container: UTF-8 header lines
//! `key = value` (the first is `format = ...`), a line `---`, then raw
//! little-endian `f64` values. Matrices are stored row-major.
//!
//! * dataset: `n x d` inputs, then `n x p` outputs;
//! * model: `W1` (`h x d`), `b1`, `W2` (`p x h`), `b2`;
//! * field: `(ny + 1) x (nx + 1)` nodal values, `x` fastest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use nn_schwarz::decomposition::PatchIndex;
use nn_schwarz::grid::{Field2D, GridSpec};
use nn_schwarz::sampling::{SampleLaw, TrainingSet};
use nn_schwarz::surrogate::{EpochRecord, TrainReport, TwoLayerNet};

use crate::error::{BenchError, BenchResult};

pub const DATASET_FORMAT: &str = "nn-schwarz-dataset-1";
pub const MODEL_FORMAT: &str = "nn-schwarz-model-1";
pub const FIELD_FORMAT: &str = "nn-schwarz-field-1";

const SEPARATOR: &[u8] = b"\n---\n";

/// Ordered header plus payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub header: Vec<(String, String)>,
    pub data: Vec<f64>,
}

impl Blob {
    pub fn new(format: &str) -> Self {
        Self { header: vec![("format".into(), format.into())], data: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 * self.header.len() + 8 * self.data.len());
        for (i, (k, v)) in self.header.iter().enumerate() {
            if i > 0 {
                out.push(b'\n');
            }
            out.extend_from_slice(format!("{k} = {v}").as_bytes());
        }
        out.extend_from_slice(SEPARATOR);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let split =
            bytes.windows(SEPARATOR.len()).position(|w| w == SEPARATOR).ok_or("no header separator")?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|_| "header is not UTF-8")?;
        let mut header = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format!("header line {}: expected `key = value`", n + 1))?;
            header.push((k.to_string(), v.to_string()));
        }
        let payload = &bytes[split + SEPARATOR.len()..];
        if !payload.len().is_multiple_of(8) {
            return Err(format!("payload of {} bytes is not a whole number of f64", payload.len()));
        }
        let data =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> BenchResult<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path, format: &str) -> BenchResult<Self> {
        let bytes = fs::read(path).map_err(|e| BenchError::io(path, e))?;
        let blob = Self::from_bytes(&bytes).map_err(|msg| BenchError::Format { path: path.into(), msg })?;
        if blob.get("format") != Some(format) {
            return Err(BenchError::Format {
                path: path.into(),
                msg: format!("expected format {format}, found {:?}", blob.get("format")),
            });
        }
        Ok(blob)
    }

    fn parse<T: FromStr>(&self, path: &Path, key: &str) -> BenchResult<T> {
        let raw = self.get(key).ok_or_else(|| BenchError::Format {
            path: path.into(),
            msg: format!("missing header key `{key}`"),
        })?;
        raw.parse().map_err(|_| BenchError::Format {
            path: path.into(),
            msg: format!("bad value `{raw}` for `{key}`"),
        })
    }
}

/// Creates parent directories, then writes the file.
pub fn write_file(path: &Path, bytes: &[u8]) -> BenchResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

/// `{:?}` prints the shortest string that parses back to the same `f64`.
fn exact(v: f64) -> String {
    format!("{v:?}")
}

fn parse_patch(path: &Path, raw: &str) -> BenchResult<PatchIndex> {
    let bad = || BenchError::Format { path: path.into(), msg: format!("bad patch index `{raw}`") };
    let (a, b) = raw.split_once('_').ok_or_else(bad)?;
    Ok(PatchIndex::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

/// Header fields describing how a dataset was produced, beyond the set itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance(pub BTreeMap<String, String>);

pub fn save_dataset(path: &Path, set: &TrainingSet, provenance: &Provenance) -> BenchResult<()> {
    let mut b = Blob::new(DATASET_FORMAT);
    b.set("patch", set.patch)
        .set("n", set.len())
        .set("d", set.d)
        .set("p", set.p)
        .set("radius", exact(set.law.radius))
        .set("power", exact(set.law.power))
        .set("seed", set.law.seed)
        .set("buffered", set.buffered)
        .set("skipped", set.skipped);
    for (k, v) in &provenance.0 {
        b.set(k, v);
    }
    b.data.reserve(set.inputs.len() + set.outputs.len());
    b.data.extend_from_slice(&set.inputs);
    b.data.extend_from_slice(&set.outputs);
    b.write(path)
}

pub fn load_dataset(path: &Path) -> BenchResult<TrainingSet> {
    let b = Blob::read(path, DATASET_FORMAT)?;
    let patch = parse_patch(path, b.get("patch").unwrap_or(""))?;
    let (n, d, p): (usize, usize, usize) = (b.parse(path, "n")?, b.parse(path, "d")?, b.parse(path, "p")?);
    if b.data.len() != n * (d + p) {
        return Err(BenchError::Format {
            path: path.into(),
            msg: format!("payload holds {} values, header implies {}", b.data.len(), n * (d + p)),
        });
    }
    let law = SampleLaw {
        radius: b.parse(path, "radius")?,
        power: b.parse(path, "power")?,
        seed: b.parse(path, "seed")?,
    };
    let mut set = TrainingSet::empty(patch, d, p, law, b.parse(path, "buffered")?);
    set.inputs = b.data[..n * d].to_vec();
    set.outputs = b.data[n * d..].to_vec();
    set.skipped = b.parse(path, "skipped")?;
    Ok(set)
}

/// Model file metadata besides the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub patch: PatchIndex,
    /// `svd` or `random`.
    pub init: String,
    pub rank: usize,
    pub delta1: f64,
    pub buffered: bool,
    pub train_seed: u64,
    pub epochs: usize,
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

pub fn save_model(path: &Path, net: &TwoLayerNet, info: &ModelInfo) -> BenchResult<()> {
    let mut b = Blob::new(MODEL_FORMAT);
    b.set("patch", info.patch)
        .set("d", net.input_dim())
        .set("h", net.hidden_dim())
        .set("p", net.output_dim())
        .set("normalize", net.normalize)
        .set("eps1", exact(net.eps1))
        .set("dx", exact(net.dx))
        .set("init", &info.init)
        .set("rank", info.rank)
        .set("delta1", exact(info.delta1))
        .set("buffered", info.buffered)
        .set("train_seed", info.train_seed)
        .set("epochs", info.epochs)
        .set("order", "W1 b1 W2 b2");
    b.data.extend(row_major(&net.w1));
    b.data.extend(net.b1.iter());
    b.data.extend(row_major(&net.w2));
    b.data.extend(net.b2.iter());
    b.write(path)
}

pub fn load_model(path: &Path) -> BenchResult<(TwoLayerNet, ModelInfo)> {
    let b = Blob::read(path, MODEL_FORMAT)?;
    let (d, h, p): (usize, usize, usize) = (b.parse(path, "d")?, b.parse(path, "h")?, b.parse(path, "p")?);
    let want = h * d + h + p * h + p;
    if b.data.len() != want {
        return Err(BenchError::Format {
            path: path.into(),
            msg: format!("payload holds {} values, header implies {want}", b.data.len()),
        });
    }
    let (w1, rest) = b.data.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(p * h);
    let net = TwoLayerNet {
        w1: DMatrix::from_row_slice(h, d, w1),
        b1: DVector::from_column_slice(b1),
        w2: DMatrix::from_row_slice(p, h, w2),
        b2: DVector::from_column_slice(b2),
        normalize: b.parse(path, "normalize")?,
        eps1: b.parse(path, "eps1")?,
        dx: b.parse(path, "dx")?,
    };
    net.validate()?;
    let info = ModelInfo {
        patch: parse_patch(path, b.get("patch").unwrap_or(""))?,
        init: b.parse(path, "init")?,
        rank: b.parse(path, "rank")?,
        delta1: b.parse(path, "delta1")?,
        buffered: b.parse(path, "buffered")?,
        train_seed: b.parse(path, "train_seed")?,
        epochs: b.parse(path, "epochs")?,
    };
    Ok((net, info))
}

pub fn save_field(path: &Path, field: &Field2D) -> BenchResult<()> {
    let g = field.grid;
    let mut b = Blob::new(FIELD_FORMAT);
    b.set("nx", g.nx)
        .set("ny", g.ny)
        .set("dx", exact(g.dx))
        .set("x0", exact(g.origin.0))
        .set("y0", exact(g.origin.1));
    b.data = field.values.clone();
    b.write(path)
}

pub fn load_field(path: &Path) -> BenchResult<Field2D> {
    let b = Blob::read(path, FIELD_FORMAT)?;
    let (nx, ny): (usize, usize) = (b.parse(path, "nx")?, b.parse(path, "ny")?);
    let dx: f64 = b.parse(path, "dx")?;
    let origin = (b.parse(path, "x0")?, b.parse(path, "y0")?);
    let grid = GridSpec::new(origin, (nx as f64 * dx, ny as f64 * dx), dx)?;
    if grid.nx != nx || grid.ny != ny {
        return Err(BenchError::Format { path: path.into(), msg: "inconsistent grid header".into() });
    }
    Ok(Field2D::new(grid, b.data)?)
}

/// `epoch,train_loss,test_loss,lr`; epoch 0 holds the losses before training
/// and `test_loss` is empty on epochs without evaluation.
pub fn loss_csv(report: &TrainReport, lr0: f64) -> String {
    let mut s = String::from("epoch,train_loss,test_loss,lr\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
    s.push_str(&format!("0,{:e},{},{lr0:e}\n", report.initial_train_loss, opt(report.initial_test_loss)));
    for EpochRecord { epoch, train_loss, test_loss, lr } in &report.curve {
        s.push_str(&format!("{epoch},{train_loss:e},{},{lr:e}\n", opt(*test_loss)));
    }
    s
}

/// `iteration,res`
pub fn residual_csv(history: &[f64]) -> String {
    let mut s = String::from("iteration,res\n");
    for (n, r) in history.iter().enumerate() {
        s.push_str(&format!("{},{r:e}\n", n + 1));
    }
    s
}

/// `index,sigma_rel`
pub fn spectrum_csv(sigma_rel: &[f64]) -> String {
    let mut s = String::from("index,sigma_rel\n");
    for (k, v) in sigma_rel.iter().enumerate() {
        s.push_str(&format!("{},{v:e}\n", k + 1));
    }
    s
}
