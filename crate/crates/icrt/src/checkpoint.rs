//! Named-tensor checkpoint file.
//!
//! Layout (all integers little-endian):
//!   magic "ICRTCKPT" | version u32 | entry count u32 | entries...
//! Each entry: name length u32 | UTF-8 name | rank u32 | extents u32 each |
//! f32 payload.

use crate::error::{Error, Result};
use crate::optim::ParamMap;
use crate::tensor::Tensor;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ICRTCKPT";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, entries: &ParamMap) -> Result<()> {
    let ps = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&ps, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&ps, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<ParamMap> {
    let ps = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&ps, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, &ps)?;
    if &magic != MAGIC {
        return Err(Error::format(&ps, "bad magic, not an ICRTCKPT file"));
    }
    let version = read_u32(&mut r, &ps)?;
    if version != VERSION {
        return Err(Error::format(&ps, format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, &ps)? as usize;
    let mut entries = ParamMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, &ps)? as usize;
        if name_len > 4096 {
            return Err(Error::format(&ps, format!("implausible name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, &ps)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::format(&ps, "entry name is not UTF-8"))?;
        let rank = read_u32(&mut r, &ps)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, &ps)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        read_exact(&mut r, &mut payload, &ps)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(entries)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn round_trip_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let mut entries = BTreeMap::new();
        entries.insert("layer.0.wq".to_string(), Tensor::from_fn(&[3, 4], |i| i as f32 * 0.5));
        entries.insert("scalarish".to_string(), Tensor::from_vec(&[1], vec![-7.25]).unwrap());
        save(&path, &entries).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = BTreeMap::new();
        entries.insert("b".to_string(), Tensor::from_fn(&[5], |i| (i as f32).sin()));
        entries.insert("a".to_string(), Tensor::from_fn(&[2, 2], |i| i as f32));
        let p1 = dir.path().join("1.ckpt");
        let p2 = dir.path().join("2.ckpt");
        save(&p1, &entries).unwrap();
        save(&p2, &entries).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxx").unwrap();
        assert!(load(&path).is_err());
    }
}
