//! Binary parameter container:
//!
//! ```text
//! "EQGNNCKP" | u32 version | u64 len | config JSON | u32 n_arrays
//! per array: u32 name_len | name | u8 value bytes | u32 ndim | u64 dims.. | values (LE)
//! ```

use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 8] = b"EQGNNCKP";
const VERSION: u32 = 1;

pub fn to_bytes<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    let arrays = params.named_arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, shape, data) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::BYTES as u8);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            v.put_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decode a checkpoint into precision `T` (values stored in the other
/// precision are converted).
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    let mut params = ModelParams::<T>::init(&config)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_arrays().into_iter().map(|(n, s, _)| (n, s)).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} arrays, expected {}", expected.len())));
    }
    let mut flat = Vec::with_capacity(params.n_params());
    for (name, shape) in &expected {
        let len = r.u32()? as usize;
        let got = String::from_utf8_lossy(r.take(len)?).into_owned();
        if &got != name {
            return Err(Error::Checkpoint(format!("array {got:?} where {name:?} expected")));
        }
        let width = r.take(1)?[0] as usize;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * width)?;
        for chunk in raw.chunks_exact(width) {
            let v = match width {
                4 => f32::get_le(chunk).f64(),
                8 => f64::get_le(chunk),
                w => return Err(Error::Checkpoint(format!("{name}: {w}-byte values"))),
            };
            flat.push(T::of(v));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn save<T: Real>(path: impl AsRef<Path>, params: &ModelParams<T>) -> Result<()> {
    std::fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::BasisSpec;

    #[test]
    fn round_trip_and_corruption() {
        let mut c = ModelConfig::new(BasisSpec::new().with(8, &[0, 1]), 3.0);
        c.l_max = 2;
        c.width = 3;
        c.seed = 5;
        let p = ModelParams::<f32>::init(&c).unwrap();
        let bytes = to_bytes(&p).unwrap();
        assert_eq!(from_bytes::<f32>(&bytes).unwrap(), p);
        let wide = from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(wide.to_flat().len(), p.n_params());
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes::<f32>(&bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save(&path, &p).unwrap();
        assert_eq!(load::<f32>(&path).unwrap(), p);
    }
}
