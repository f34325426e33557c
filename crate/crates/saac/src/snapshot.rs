//! Network parameters on disk: the magic `SAACNET\0`, a little-endian u32
//! format version, a u32 layer count followed by that many u32 layer
//! sizes, a u64 parameter count, then the parameters as f64 LE.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use saac_core::numerics::Mlp;

pub const MAGIC: &[u8; 8] = b"SAACNET\0";
pub const VERSION: u32 = 1;

pub fn encode(net: &Mlp) -> Vec<u8> {
    let sizes = net.sizes();
    let params = net.params();
    let mut out = Vec::with_capacity(24 + 4 * sizes.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("snapshot truncated at byte {}", self.at);
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Mlp> {
    let mut c = Cursor { bytes, at: 0 };
    ensure!(c.take(8)? == MAGIC, "not a network snapshot");
    let version = c.u32()?;
    ensure!(version == VERSION, "unsupported snapshot version {version}");
    let layers = c.u32()? as usize;
    ensure!(layers >= 2 && layers <= 64, "implausible layer count {layers}");
    let sizes = (0..layers).map(|_| Ok(c.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let count = usize::try_from(c.u64()?)?;
    let raw = c.take(count.checked_mul(8).context("parameter count overflows")?)?;
    ensure!(c.at == bytes.len(), "{} trailing bytes", bytes.len() - c.at);
    let params = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(Mlp::from_params(&sizes, params)?)
}

pub fn save(path: &Path, net: &Mlp) -> Result<()> {
    std::fs::write(path, encode(net)).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<Mlp> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use saac_core::Rng;

    #[test]
    fn round_trip_is_exact() {
        let net = Mlp::new(&[3, 5, 2], &mut Rng::new(4)).unwrap();
        let bytes = encode(&net);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode(&bytes).unwrap(), net);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save(&path, &net).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let net = Mlp::new(&[2, 2], &mut Rng::new(1)).unwrap();
        let bytes = encode(&net);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong).is_err());
        let mut count = bytes;
        count[8 + 4 + 4 + 8] ^= 1;
        assert!(decode(&count).is_err());
    }
}
