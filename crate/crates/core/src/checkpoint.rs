//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!   magic "MLGC", u32 version = 1, u32 param count, then per parameter:
//!   u16 name length, UTF-8 name bytes, u8 rank, u32 dims..., f32 payload
//!   in row-major order.
//!
//! Parameters are written in store insertion order, so the same training run
//! always produces byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MLGC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("parameter name is not valid UTF-8")]
    BadName,
    #[error("unsupported tensor rank {0}")]
    BadRank(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[2u8])?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName)?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let (rows, cols) = match rank[0] {
            1 => (1, read_u32(&mut r)? as usize),
            2 => {
                let rows = read_u32(&mut r)? as usize;
                let cols = read_u32(&mut r)? as usize;
                (rows, cols)
            }
            other => return Err(CheckpointError::BadRank(other)),
        };
        if rows == 0 || cols == 0 {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name} has zero dim"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        if store.contains(&name) {
            return Err(CheckpointError::Corrupt(format!(
                "duplicate parameter {name}"
            )));
        }
        store.insert(&name, Tensor::from_vec(rows, cols, data));
    }
    Ok(store)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn roundtrip_preserves_names_shapes_and_f32_values() {
        let mut rng = DetRng::new(5);
        let mut store = ParamStore::new();
        store.insert("enc.wx", Tensor::uniform(4, 8, 0.5, &mut rng));
        store.insert("enc.b", Tensor::uniform(1, 8, 0.5, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.names(), store.names());
        for (name, t) in store.iter() {
            let lt = loaded.get(name);
            assert!(lt.same_shape(t));
            for (a, b) in t.data().iter().zip(lt.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn save_is_byte_stable() {
        let mut rng = DetRng::new(9);
        let mut store = ParamStore::new();
        store.insert("w", Tensor::uniform(3, 3, 1.0, &mut rng));
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&store, &p1).unwrap();
        save(&store, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn header_layout_is_exact() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 2, vec![0.0, 1.0]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.ckpt");
        save(&store, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"MLGC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 1);
        assert_eq!(bytes[14], b'w');
        assert_eq!(bytes[15], 2); // rank
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE____").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic)));
    }
}
