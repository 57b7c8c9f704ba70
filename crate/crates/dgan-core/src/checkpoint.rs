//! Checkpoint files: a flat binary store of named tensors plus a JSON
//! sidecar (`<file>.json`) describing what the tensors parameterize.
//! The binary layout is fixed little-endian, entries sorted by name, so
//! identical stores produce identical bytes.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::baselines::LstmBaselineConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DGANCKPT";
const VERSION: u32 = 1;

/// Caps applied while reading, so a corrupt length field fails cleanly
/// instead of attempting an enormous allocation.
const MAX_NAME_BYTES: usize = 1 << 16;
const MAX_RANK: usize = 16;
const MAX_ELEMENTS: usize = 1 << 30;

/// Sidecar contents: which architecture the tensors belong to and the
/// configuration needed to rebuild it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum CheckpointMeta {
    Dgan { model: ModelConfig, anchors: AnchorSet },
    LstmBaseline { config: LstmBaselineConfig },
}

/// The sidecar sits next to the binary file with `.json` appended, so
/// `model.ckpt` is described by `model.ckpt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save_store(path: &Path, store: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(store.len()).expect("store size").to_le_bytes())?;
    for (name, tensor) in store {
        let bytes = name.as_bytes();
        w.write_all(&u32::try_from(bytes.len()).expect("name length").to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&u32::try_from(tensor.shape().len()).expect("rank").to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &x in tensor.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Byte reader that reports truncation with the file offset.
struct Reader<R> {
    inner: R,
    path: String,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn fail(&self, detail: String) -> Error {
        Error::Parse { path: self.path.clone(), detail }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            self.fail(format!("truncated at byte {} while reading {what}", self.offset))
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn load_store(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
        offset: 0,
    };
    let magic = r.bytes(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(r.fail("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    let mut store = BTreeMap::new();
    for index in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME_BYTES {
            return Err(r.fail(format!("tensor {index}: name length {name_len} is implausible")));
        }
        let name = String::from_utf8(r.bytes(name_len, "tensor name")?)
            .map_err(|_| r.fail(format!("tensor {index}: name is not valid UTF-8")))?;
        let rank = r.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(r.fail(format!("tensor {name}: rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elements = 1usize;
        for _ in 0..rank {
            let dim = r.u64("dimension")? as usize;
            elements = elements
                .checked_mul(dim)
                .filter(|&n| n <= MAX_ELEMENTS)
                .ok_or_else(|| r.fail(format!("tensor {name}: size overflows")))?;
            shape.push(dim);
        }
        let mut data = Vec::with_capacity(elements);
        for _ in 0..elements {
            let bits = r.u64("tensor data")?;
            data.push(f64::from_bits(bits));
        }
        let tensor =
            Tensor::new(&shape, data).map_err(|e| r.fail(format!("tensor {name}: {e}")))?;
        if store.insert(name.clone(), tensor).is_some() {
            return Err(r.fail(format!("duplicate tensor name {name}")));
        }
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(Error::from)? != 0 {
        return Err(r.fail(format!("trailing data after byte {}", r.offset)));
    }
    Ok(store)
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    store: &BTreeMap<String, Tensor>,
) -> Result<()> {
    save_store(path, store)?;
    let mut body = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::InvalidValue(format!("checkpoint metadata: {e}")))?;
    body.push('\n');
    std::fs::write(sidecar_path(path), body)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>)> {
    let store = load_store(path)?;
    let sidecar = sidecar_path(path);
    let body = std::fs::read_to_string(&sidecar).map_err(|e| Error::Parse {
        path: sidecar.display().to_string(),
        detail: format!("cannot read checkpoint sidecar: {e}"),
    })?;
    let meta = serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: format!("{}:{}:{}", sidecar.display(), e.line(), e.column()),
        detail: e.to_string(),
    })?;
    Ok((meta, store))
}
