//! The `HCLN1` checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! [0, 8)    magic "HCLN1\0\0\0"
//! [8, 16)   u64 header length H
//! [16, 16+H) UTF-8 JSON header
//! padding to the next multiple of 64
//! payload: raw tensors, each starting on a 64-byte boundary
//! ```
//!
//! Tensor offsets in the header are relative to the payload start. Model
//! parameters use their layout names; optimizer moments are stored as
//! `optimizer.m.<name>` and `optimizer.v.<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloning::ExpansionReceipt;
use crate::model::{param_layout, ModelConfig, TransformerParams};
use crate::tensor::{DType, Matrix, Scalar};
use crate::train::{AdamState, StepHook};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"HCLN1\0\0\0";
pub const FORMAT_VERSION: &str = "1";
pub const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not an HCLN1 checkpoint (magic bytes {found:02x?})")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint format version `{0}` (expected `{FORMAT_VERSION}`)")]
    UnsupportedVersion(String),
    #[error("checkpoint truncated: needs {needed} bytes, file has {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error("tensor `{tensor}` has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch { tensor: String, expected: [usize; 2], found: [usize; 2] },
    #[error("checkpoint holds {found} tensors, requested {expected}")]
    DtypeMismatch { expected: DType, found: DType },
    #[error("invalid checkpoint header: {0}")]
    InvalidHeader(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: [usize; 2],
    pub dtype: DType,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerIndex {
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: String,
    pub dtype: DType,
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorEntry>,
    pub receipt: Option<ExpansionReceipt>,
    pub optimizer: Option<OptimizerIndex>,
}

/// Everything a checkpoint file holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: TransformerParams<T>,
    pub receipt: Option<ExpansionReceipt>,
    pub optimizer: Option<AdamState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: ModelConfig, params: TransformerParams<T>) -> Self {
        Self { config, params, receipt: None, optimizer: None }
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.cast(),
            receipt: self.receipt.clone(),
            optimizer: self.optimizer.as_ref().map(|o| AdamState { step: o.step, m: o.m.cast(), v: o.v.cast() }),
        }
    }
}

/// A checkpoint in whichever precision it was saved.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn dtype(&self) -> DType {
        match self {
            AnyCheckpoint::F32(_) => DType::F32,
            AnyCheckpoint::F64(_) => DType::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.config,
            AnyCheckpoint::F64(c) => &c.config,
        }
    }

    pub fn receipt(&self) -> Option<&ExpansionReceipt> {
        match self {
            AnyCheckpoint::F32(c) => c.receipt.as_ref(),
            AnyCheckpoint::F64(c) => c.receipt.as_ref(),
        }
    }

    /// Widen (exactly) or keep as `f64`.
    pub fn into_f64(self) -> Checkpoint<f64> {
        match self {
            AnyCheckpoint::F32(c) => c.cast(),
            AnyCheckpoint::F64(c) => c,
        }
    }
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn tensor_list<T: Scalar>(ck: &Checkpoint<T>) -> Vec<(String, &Matrix<T>)> {
    let mut out: Vec<(String, &Matrix<T>)> = ck.params.named();
    if let Some(opt) = &ck.optimizer {
        out.extend(opt.m.named().into_iter().map(|(n, m)| (format!("optimizer.m.{n}"), m)));
        out.extend(opt.v.named().into_iter().map(|(n, m)| (format!("optimizer.v.{n}"), m)));
    }
    out
}

/// Serialize a checkpoint to bytes.
pub fn to_bytes<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    ck.config.validate()?;
    ck.params.check_shapes(&ck.config)?;
    if let Some(opt) = &ck.optimizer {
        opt.m.check_shapes(&ck.config)?;
        opt.v.check_shapes(&ck.config)?;
    }
    let tensors = tensor_list(ck);
    let mut index = BTreeMap::new();
    let (mut offset, mut end) = (0usize, 0usize);
    for (name, m) in &tensors {
        let length = m.len() * T::DTYPE.size();
        index.insert(
            name.clone(),
            TensorEntry { shape: [m.rows(), m.cols()], dtype: T::DTYPE, offset: offset as u64, length: length as u64 },
        );
        end = offset + length;
        offset = align(end);
    }
    let header = Header {
        format_version: FORMAT_VERSION.to_string(),
        dtype: T::DTYPE,
        config: ck.config.clone(),
        tensors: index,
        receipt: ck.receipt.clone(),
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerIndex { step: o.step }),
    };
    let json = serde_json::to_vec(&header)?;
    let payload_start = align(PREAMBLE + json.len());

    let mut out = Vec::with_capacity(payload_start + end);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, m) in &tensors {
        let start = payload_start + header.tensors[name].offset as usize;
        out.resize(start, 0);
        for &x in m.as_slice() {
            x.write_le(&mut out);
        }
    }
    out.resize(payload_start + end, 0);
    Ok(out)
}

/// Write a checkpoint atomically: the data goes to a temporary sibling file
/// that is then renamed over `path`.
pub fn save<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let bytes = to_bytes(ck)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Parse and validate the header of an in-memory checkpoint.
pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    let actual = bytes.len() as u64;
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic { found: bytes[..bytes.len().min(MAGIC.len())].to_vec() }.into());
    }
    if bytes.len() < PREAMBLE {
        return Err(CheckpointError::Truncated { needed: PREAMBLE as u64, actual }.into());
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64).saturating_add(hlen);
    if header_end > actual {
        return Err(CheckpointError::Truncated { needed: header_end, actual }.into());
    }
    let raw = &bytes[PREAMBLE..header_end as usize];
    let value: serde_json::Value = serde_json::from_slice(raw).map_err(|e| CheckpointError::InvalidHeader(e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(CheckpointError::UnsupportedVersion(other.to_string()).into()),
        None => return Err(CheckpointError::InvalidHeader("missing format_version".into()).into()),
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::InvalidHeader(e.to_string()))?;
    header.config.validate().map_err(|e| CheckpointError::InvalidHeader(format!("config: {e}")))?;
    validate_index(&header, actual - align(header_end as usize) as u64).map_err(|e| match e {
        CheckpointError::Truncated { needed, .. } => {
            CheckpointError::Truncated { needed: needed + align(header_end as usize) as u64, actual }
        }
        other => other,
    })?;
    if let Some(r) = &header.receipt {
        if r.dest_config != header.config {
            return Err(CheckpointError::InvalidHeader("receipt destination config differs from the model config".into()).into());
        }
    }
    Ok(header)
}

/// Check names, shapes, dtypes and extents of every tensor before any
/// payload is touched.
fn validate_index(h: &Header, payload_len: u64) -> std::result::Result<(), CheckpointError> {
    let layout = param_layout(&h.config);
    let mut expected: Vec<(String, [usize; 2])> = layout.iter().map(|s| (s.name.clone(), [s.rows, s.cols])).collect();
    if h.optimizer.is_some() {
        for prefix in ["optimizer.m.", "optimizer.v."] {
            expected.extend(layout.iter().map(|s| (format!("{prefix}{}", s.name), [s.rows, s.cols])));
        }
    }
    if h.tensors.len() != expected.len() {
        let extra: Vec<&String> = h.tensors.keys().filter(|k| !expected.iter().any(|(n, _)| n == *k)).collect();
        if !extra.is_empty() {
            return Err(CheckpointError::InvalidHeader(format!("unexpected tensors {extra:?}")));
        }
    }
    let mut spans = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let e = h.tensors.get(name).ok_or_else(|| CheckpointError::InvalidHeader(format!("missing tensor `{name}`")))?;
        if e.dtype != h.dtype {
            return Err(CheckpointError::InvalidHeader(format!("tensor `{name}` is {} in a {} checkpoint", e.dtype, h.dtype)));
        }
        if e.shape != *shape {
            return Err(CheckpointError::ShapeMismatch { tensor: name.clone(), expected: *shape, found: e.shape });
        }
        let want = (shape[0] * shape[1] * h.dtype.size()) as u64;
        if e.length != want {
            return Err(CheckpointError::InvalidHeader(format!("tensor `{name}` declares {} bytes, shape needs {want}", e.length)));
        }
        if e.offset % ALIGN as u64 != 0 {
            return Err(CheckpointError::InvalidHeader(format!("tensor `{name}` is not {ALIGN}-byte aligned")));
        }
        let end =
            e.offset.checked_add(e.length).ok_or_else(|| CheckpointError::InvalidHeader(format!("tensor `{name}` extent overflows")))?;
        spans.push((e.offset, end, name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CheckpointError::InvalidHeader(format!("tensors `{}` and `{}` overlap", w[0].2, w[1].2)));
        }
    }
    if let Some(&(_, end, _)) = spans.last() {
        if end > payload_len {
            return Err(CheckpointError::Truncated { needed: end, actual: payload_len });
        }
    }
    Ok(())
}

fn read_tensors<T: Scalar>(bytes: &[u8], h: &Header, prefix: &str) -> TransformerParams<T> {
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let base = align(PREAMBLE + hlen);
    let size = T::DTYPE.size();
    TransformerParams::from_fn(&h.config, |spec| {
        let e = &h.tensors[&format!("{prefix}{}", spec.name)];
        let start = base + e.offset as usize;
        let raw = &bytes[start..start + e.length as usize];
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Matrix::from_vec(spec.rows, spec.cols, data).expect("validated shape")
    })
}

/// Decode an in-memory checkpoint saved in precision `T`.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let h = parse_header(bytes)?;
    if h.dtype != T::DTYPE {
        return Err(CheckpointError::DtypeMismatch { expected: T::DTYPE, found: h.dtype }.into());
    }
    let params = read_tensors(bytes, &h, "");
    let optimizer = h.optimizer.as_ref().map(|o| AdamState {
        step: o.step,
        m: read_tensors(bytes, &h, "optimizer.m."),
        v: read_tensors(bytes, &h, "optimizer.v."),
    });
    Ok(Checkpoint { config: h.config, params, receipt: h.receipt, optimizer })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint that must have been saved in precision `T`.
pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    from_bytes(&read_file(path)?)
}

pub fn load_any(path: &Path) -> Result<AnyCheckpoint> {
    let bytes = read_file(path)?;
    match parse_header(&bytes)?.dtype {
        DType::F32 => from_bytes(&bytes).map(AnyCheckpoint::F32),
        DType::F64 => from_bytes(&bytes).map(AnyCheckpoint::F64),
    }
}

/// Header only, without decoding tensors.
pub fn read_header(path: &Path) -> Result<Header> {
    parse_header(&read_file(path)?)
}

/// Training hook that saves `step_NNNNNN.hcln` (with optimizer state) every
/// `interval` steps.
#[derive(Debug)]
pub struct CheckpointHook {
    dir: PathBuf,
    interval: usize,
    receipt: Option<ExpansionReceipt>,
    last: Option<PathBuf>,
}

impl CheckpointHook {
    pub fn new(dir: impl Into<PathBuf>, interval: usize, receipt: Option<ExpansionReceipt>) -> Self {
        Self { dir: dir.into(), interval: interval.max(1), receipt, last: None }
    }

    pub fn path_for(&self, step: usize) -> PathBuf {
        self.dir.join(format!("step_{step:06}.hcln"))
    }
}

impl<T: Scalar> StepHook<T> for CheckpointHook {
    fn on_step(&mut self, step: usize, params: &TransformerParams<T>, cfg: &ModelConfig, opt: &AdamState<T>) -> Result<()> {
        if step == 0 || !step.is_multiple_of(self.interval) {
            return Ok(());
        }
        let ck = Checkpoint { config: cfg.clone(), params: params.clone(), receipt: self.receipt.clone(), optimizer: Some(opt.clone()) };
        let path = self.path_for(step);
        save(&path, &ck)?;
        self.last = Some(path);
        Ok(())
    }

    fn last_checkpoint(&self) -> Option<PathBuf> {
        self.last.clone()
    }
}
