//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "GRNDCKPT"
//! version   u32
//! hash      8 bytes  config hash
//! count     u32      number of tensors
//! per tensor:
//!   name    u32 length + UTF-8 bytes
//!   shape   u32 rank + u64 per dimension
//!   values  f64 per element, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use grounder_autodiff::ParameterStore;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRNDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Hex config hash of the run that wrote the checkpoint.
    pub config_hash: String,
    pub store: ParameterStore,
}

pub fn encode(config_hash: &str, store: &ParameterStore) -> Result<Vec<u8>> {
    let hash = hex::decode(config_hash)
        .ok()
        .filter(|h| h.len() == 8)
        .ok_or_else(|| Error::Config(format!("config hash `{config_hash}` is not 8 hex bytes")))?;
    let mut out = Vec::with_capacity(32 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION)
        .expect("vec write");
    out.extend_from_slice(&hash);
    out.write_u32::<LittleEndian>(store.len() as u32)
        .expect("vec write");
    for (_, t) in store.iter() {
        out.write_u32::<LittleEndian>(t.name().len() as u32)
            .expect("vec write");
        out.extend_from_slice(t.name().as_bytes());
        out.write_u32::<LittleEndian>(t.shape().len() as u32)
            .expect("vec write");
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).expect("vec write");
        }
        for &x in t.data() {
            out.write_f64::<LittleEndian>(x).expect("vec write");
        }
    }
    Ok(out)
}

pub fn decode(mut r: impl Read) -> std::io::Result<std::result::Result<Checkpoint, String>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Ok(Err("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Ok(Err(format!("unsupported checkpoint version {version}")));
    }
    let mut hash = [0u8; 8];
    r.read_exact(&mut hash)?;
    let count = r.read_u32::<LittleEndian>()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let Ok(name) = String::from_utf8(name) else {
            return Ok(Err("tensor name is not UTF-8".into()));
        };
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        if let Err(e) = store.register(&name, &shape, data) {
            return Ok(Err(e.to_string()));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Ok(Err("trailing bytes after last tensor".into()));
    }
    Ok(Ok(Checkpoint {
        config_hash: hex::encode(hash),
        store,
    }))
}

pub fn save(path: &Path, config_hash: &str, store: &ParameterStore) -> Result<()> {
    let bytes = encode(config_hash, store)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    match decode(BufReader::new(file)) {
        Ok(Ok(c)) => Ok(c),
        Ok(Err(m)) => Err(format(m)),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Err(format("truncated checkpoint".into()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}
