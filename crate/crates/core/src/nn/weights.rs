//! Binary weights file.
//!
//! Layout (little-endian): `"TPNW"`, u32 version, u32 input size, u32 stem
//! channels, u32 block count, then (u32 channels, u32 dilation) per block,
//! u32 tensor count, and per tensor: u32 name length, name bytes, u32 rank,
//! u32 dims, f64 values.

use std::path::Path;

use crate::error::{data, Error, Result};

use super::net::{DilatedResNet, NetConfig};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TPNW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights(net: &DilatedResNet) -> Vec<u8> {
    let mut b = Vec::new();
    let u = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
    b.extend_from_slice(WEIGHTS_MAGIC);
    b.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let c = &net.config;
    u(&mut b, c.input_size);
    u(&mut b, c.stem_channels);
    u(&mut b, c.blocks.len());
    for &(ch, d) in &c.blocks {
        u(&mut b, ch);
        u(&mut b, d);
    }
    u(&mut b, net.params.len());
    for p in &net.params {
        u(&mut b, p.name.len());
        b.extend_from_slice(p.name.as_bytes());
        u(&mut b, p.shape.len());
        for &d in &p.shape {
            u(&mut b, d);
        }
        for v in &p.value {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return data("weights file truncated");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<DilatedResNet> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return data("not a weights file (bad magic)");
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION as usize {
        return data(format!("unsupported weights version {version}"));
    }
    let input_size = r.u32()?;
    let stem_channels = r.u32()?;
    let nb = r.u32()?;
    if nb > 64 {
        return data("implausible block count");
    }
    let mut blocks = Vec::with_capacity(nb);
    for _ in 0..nb {
        blocks.push((r.u32()?, r.u32()?));
    }
    let mut net = DilatedResNet::zeros(NetConfig { input_size, stem_channels, blocks })
        .map_err(|e| Error::Data(format!("weights config: {e}")))?;
    let nt = r.u32()?;
    if nt != net.params.len() {
        return data(format!("weights file has {nt} tensors, network expects {}", net.params.len()));
    }
    for p in net.params.iter_mut() {
        let len = r.u32()?;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        if name != p.name || shape != p.shape {
            return data(format!("tensor {name} {shape:?} does not match {} {:?}", p.name, p.shape));
        }
        for v in p.value.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return data("trailing bytes after weights");
    }
    Ok(net)
}

pub fn save_weights(path: &Path, net: &DilatedResNet) -> Result<()> {
    std::fs::write(path, encode_weights(net))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<DilatedResNet> {
    decode_weights(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let net = DilatedResNet::init(NetConfig::new(64), 4).unwrap();
        let bytes = encode_weights(&net);
        assert_eq!(&bytes[..4], b"TPNW");
        let back = decode_weights(&bytes).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.config, net.config);
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_weights(&extra).is_err());
    }
}
