//! Flat binary parameter checkpoints.
//!
//! Layout: magic `RSG1`, then per parameter until end of file:
//! name length (u32 LE), UTF-8 name bytes, rank (u32 LE), dims (u32 LE each),
//! payload (f64 LE, row-major).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RSG1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    let io_err = |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&encode(params)).map_err(io_err)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|msg| TensorError::Format {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut cur = io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| "truncated header".to_string())?;
    if &magic != MAGIC {
        return Err(format!("unknown magic {magic:?}"));
    }
    let mut params = BTreeMap::new();
    while (cur.position() as usize) < bytes.len() {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)
            .map_err(|_| "truncated name".to_string())?;
        let name =
            String::from_utf8(name).map_err(|_| "parameter name is not UTF-8".to_string())?;
        let rank = read_u32(&mut cur)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut cur).map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            cur.read_exact(&mut buf)
                .map_err(|_| format!("truncated payload for `{name}`"))?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        if params.insert(name.clone(), t).is_some() {
            return Err(format!("duplicate parameter `{name}`"));
        }
    }
    Ok(ParamStore::from_map(params))
}

fn read_u32(cur: &mut io::Cursor<&[u8]>) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| "truncated u32".to_string())?;
    Ok(u32::from_le_bytes(b))
}
