//! Binary model file.
//!
//! ```text
//! magic    8 bytes   "HMDLFMDL"
//! version  u32 LE
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes: model config, scaler, metadata, parameter manifest
//! payload  f64 LE values of every parameter, manifest order
//! check    u64 LE    FNV-1a of header and payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::Scaler;

pub const MAGIC: &[u8; 8] = b"HMDLFMDL";
pub const FORMAT_VERSION: u32 = 1;

/// A trained network together with what is needed to apply it to raw data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Scaler,
    /// Free-form run information (configuration echo, training summary).
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    package_version: String,
    model: ModelConfig,
    scaler: Scaler,
    metadata: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(hash, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub fn write_model<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let params = ckpt.model.named_params();
    let header = Header {
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        model: ckpt.model.config().clone(),
        scaler: ckpt.scaler.clone(),
        metadata: ckpt.metadata.clone(),
        params: params
            .iter()
            .map(|(name, p)| ParamEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Data(format!("encoding model header: {e}")))?;
    let mut payload = Vec::with_capacity(ckpt.model.param_count() * 8);
    for (_, p) in &params {
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let check = fnv1a(fnv1a(FNV_OFFSET, &header), &payload);

    let mut buf = Vec::with_capacity(28 + header.len() + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&payload);
    buf.extend_from_slice(&check.to_le_bytes());
    out.write_all(&buf)
        .map_err(|e| Error::Data(format!("writing model: {e}")))
}

pub fn read_model<R: Read>(mut input: R) -> std::result::Result<Checkpoint, String> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf).map_err(|e| e.to_string())?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    if cur.take(8)? != MAGIC {
        return Err("not a model file (bad magic bytes)".into());
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}, expected {FORMAT_VERSION}"));
    }
    let hlen = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| "header length overflows".to_string())?;
    let header_bytes = cur.take(hlen)?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| format!("corrupt header: {e}"))?;
    let payload_start = cur.pos;

    let mut model = Model::new(header.model.clone()).map_err(|e| format!("invalid model config: {e}"))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.value.shape().to_vec()))
        .collect();
    if expected.len() != header.params.len() {
        return Err(format!(
            "manifest lists {} tensors, architecture has {}",
            header.params.len(),
            expected.len()
        ));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&header.params) {
        if *name != entry.name || *shape != entry.shape {
            return Err(format!(
                "manifest entry {} {:?} does not match architecture tensor {name} {shape:?}",
                entry.name, entry.shape
            ));
        }
        let n: usize = shape.iter().product();
        let bytes = cur.take(n * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
    }
    let payload = &buf[payload_start..cur.pos];
    let stored = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    if cur.pos != buf.len() {
        return Err(format!("{} unexpected trailing bytes", buf.len() - cur.pos));
    }
    if stored != fnv1a(fnv1a(FNV_OFFSET, header_bytes), payload) {
        return Err("checksum mismatch".into());
    }
    model.restore(&values).map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        model,
        scaler: header.scaler,
        metadata: header.metadata,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn save_model(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(ckpt, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file)).map_err(|reason| Error::ModelFile {
        path: path.to_path_buf(),
        reason,
    })
}
