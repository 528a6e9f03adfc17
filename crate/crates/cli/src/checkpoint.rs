use std::collections::HashMap;
use std::path::Path;

use diffdec_core::tensor::NamedParams;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"DFDC";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;
const MAX_NUMEL: usize = 100_000_000;
const MAX_TENSORS: usize = 100_000;
const MAX_BLOB: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Denoiser,
    Decoder,
    Linear,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Denoiser => "denoiser",
            ModelKind::Decoder => "decoder",
            ModelKind::Linear => "linear",
        };
        f.write_str(s)
    }
}

/// JSON blob embedded in every checkpoint; enough to rebuild a model
/// skeleton without regenerating the corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelKind,
    /// Tokenizer alphabet, specials excluded; |V| = chars + 3.
    pub chars: String,
    pub run: RunConfig,
}

#[derive(Debug, Clone)]
pub struct NamedTensorData {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub seed: u64,
    pub tensors: Vec<NamedTensorData>,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    seed: u64,
    params: &NamedParams,
) -> Result<()> {
    let blob = serde_json::to_string(meta)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    buf.extend_from_slice(blob.as_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let shape = tensor.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.to_vec() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // stage then rename so a failed write never leaves a partial file
    let mut staged = path.as_os_str().to_owned();
    staged.push(".tmp");
    let staged = std::path::PathBuf::from(staged);
    std::fs::write(&staged, &buf)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", staged.display())))?;
    std::fs::rename(&staged, path)
        .map_err(|e| CliError::Usage(format!("cannot move checkpoint into place: {e}")))?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Reader<'a> {
        Reader { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CliError::Usage(format!("{} is truncated", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut r = Reader::new(&buf, "checkpoint");

    if r.take(4)? != MAGIC {
        return Err(CliError::Usage(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Usage(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let blob_len = r.u32()? as usize;
    if blob_len > MAX_BLOB {
        return Err(CliError::Usage("config blob length is implausible".into()));
    }
    let blob = std::str::from_utf8(r.take(blob_len)?)
        .map_err(|_| CliError::Usage("config blob is not UTF-8".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(blob)
        .map_err(|e| CliError::Usage(format!("embedded config: {e}")))?;
    let seed = r.u64()?;

    let count = r.u32()? as usize;
    if count > MAX_TENSORS {
        return Err(CliError::Usage("tensor count is implausible".into()));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME {
            return Err(CliError::Usage("tensor name length is implausible".into()));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CliError::Usage("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(CliError::Usage(format!("tensor {name}: rank {rank} is implausible")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel.saturating_mul(d);
            dims.push(d);
        }
        if numel > MAX_NUMEL {
            return Err(CliError::Usage(format!("tensor {name}: size is implausible")));
        }
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensorData { name, dims, data });
    }
    if !r.done() {
        return Err(CliError::Usage("trailing data after final tensor".into()));
    }
    Ok(LoadedCheckpoint { meta, seed, tensors })
}

/// Copies loaded tensor data into a freshly built skeleton. The name
/// sets must match exactly; shapes are checked per tensor.
pub fn install_params(params: &NamedParams, tensors: &[NamedTensorData]) -> Result<()> {
    if params.len() != tensors.len() {
        return Err(CliError::Usage(format!(
            "checkpoint holds {} tensors but the model has {} parameters",
            tensors.len(),
            params.len()
        )));
    }
    let by_name: HashMap<&str, &NamedTensorData> =
        tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    if by_name.len() != tensors.len() {
        return Err(CliError::Usage("checkpoint has duplicate tensor names".into()));
    }
    for (name, tensor) in params {
        let stored = by_name
            .get(name.as_str())
            .ok_or_else(|| CliError::Usage(format!("checkpoint is missing tensor {name}")))?;
        if stored.dims != tensor.shape() {
            return Err(CliError::Usage(format!(
                "tensor {name}: checkpoint shape {:?} does not match model shape {:?}",
                stored.dims,
                tensor.shape()
            )));
        }
        tensor.set_data(&stored.data)?;
    }
    Ok(())
}
