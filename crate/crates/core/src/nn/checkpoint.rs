//! Little-endian binary containers.
//!
//! Parameter checkpoints (`ADRW`):
//!
//! ```text
//! "ADRW" | version u32 | layer_count u32 |
//!   per layer: rows u32 | cols u32 | rows*cols f64 (row-major) | rows f64 bias | activation u8
//! ```

use std::path::Path;

use super::mat::Mat;
use super::mlp::{Activation, Layer, MlpParams};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ADRW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::argument(format!("{n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a byte slice that reports the failing offset.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::format(self.offset(), format!("{what} length overflows"))
        })?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let at = self.offset();
        let v = self.u32("version")?;
        if v != expected {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }
}

/// Appends `layer_count` and the layers of `net`.
pub fn write_mlp_block(w: &mut ByteWriter, net: &MlpParams) -> Result<()> {
    w.len_u32(net.layers().len())?;
    for l in net.layers() {
        w.len_u32(l.out_dim())?;
        w.len_u32(l.in_dim())?;
        w.f64s(l.weight().data());
        w.f64s(l.bias());
        w.u8(l.activation().tag());
    }
    Ok(())
}

pub fn read_mlp_block(r: &mut ByteReader<'_>) -> Result<MlpParams> {
    let start = r.offset();
    let n = r.u32("layer count")? as usize;
    if n == 0 {
        return Err(Error::format(start, "layer count is zero"));
    }
    let mut layers = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let w = r.f64s(rows * cols, "weights")?;
        let b = r.f64s(rows, "biases")?;
        let at = r.offset();
        let tag = r.u8("activation")?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| Error::format(at, format!("unknown activation tag {tag}")))?;
        layers.push(Layer::new(Mat::from_vec(rows, cols, w)?, b, act)?);
    }
    MlpParams::new(layers).map_err(|e| Error::format(start, e.to_string()))
}

pub fn mlp_to_bytes(net: &MlpParams) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    write_mlp_block(&mut w, net)?;
    Ok(w.into_inner())
}

pub fn mlp_from_bytes(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = ByteReader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    r.version(WEIGHTS_VERSION)?;
    read_mlp_block(&mut r)
}

pub fn save_mlp(net: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mlp_to_bytes(net)?)?;
    Ok(())
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpParams> {
    mlp_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_exact() {
        let w = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let net = MlpParams::new(vec![Layer::new(w, vec![3.0], Activation::Tanh).unwrap()]).unwrap();
        let b = mlp_to_bytes(&net).unwrap();
        let mut expect = b"ADRW".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        for x in [1.0f64, 2.0, 3.0] {
            expect.extend(x.to_le_bytes());
        }
        expect.push(1);
        assert_eq!(b, expect);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::init(&[4, 7, 3], Activation::Relu, Activation::Identity, &mut rng);
        let back = mlp_from_bytes(&mlp_to_bytes(&net).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::init(&[2, 2], Activation::Relu, Activation::Identity, &mut rng);
        let b = mlp_to_bytes(&net).unwrap();
        match mlp_from_bytes(&b[..b.len() - 1]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, b.len() - 1),
            other => panic!("unexpected {other:?}"),
        }
        match mlp_from_bytes(b"XXXX") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
