//! Binary checkpoints: magic, version, 32-byte configuration hash, then
//! named row-major f64 tensors (little endian).

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{GraphNetError, Matrix};

const MAGIC: &[u8; 8] = b"mpn-ckpt";
const VERSION: u32 = 1;

pub fn config_hash(description: &str) -> [u8; 32] {
    Sha256::digest(description.as_bytes()).into()
}

pub fn write_checkpoint<W: Write>(mut w: W, config_description: &str, tensors: &[(String, Matrix)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config_hash(config_description))?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.cols as u32).to_le_bytes())?;
        for v in &m.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GraphNetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| GraphNetError::Checkpoint(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, GraphNetError> {
    let bad = |m: &str| GraphNetError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not an mpn-ckpt file"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash).map_err(|_| bad("truncated header"))?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b).map_err(|_| bad("truncated tensor data"))?;
            data.push(f64::from_le_bytes(b));
        }
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(Checkpoint { config_hash, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let tensors = vec![
            ("a".to_string(), Matrix::from_vec(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300])),
            ("policy/b".to_string(), Matrix::zeros(0, 3)),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "cfg", &tensors).unwrap();
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.config_hash, config_hash("cfg"));
        for ((n1, m1), (n2, m2)) in ck.tensors.iter().zip(&tensors) {
            assert_eq!(n1, n2);
            assert_eq!((m1.rows, m1.cols), (m2.rows, m2.cols));
            assert!(m1.data.iter().zip(&m2.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(read_checkpoint(&buf[..20]).is_err());
        assert!(read_checkpoint(&b"garbage!xxxx"[..]).is_err());
    }
}
