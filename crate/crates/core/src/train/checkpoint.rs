use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DHC1";
pub const VERSION: u32 = 1;

/// Binary checkpoint: an embedded text block (architecture and training
/// state) followed by a table of named `f32` tensors.
///
/// Layout, little-endian throughout: magic `DHC1` · u32 version ·
/// u32 text length · UTF-8 text · u32 tensor count · per tensor
/// [u16 name length · name · u8 rank · rank×u32 dims · f32 data] ·
/// u32 CRC32 of every preceding byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.as_bytes();
        out.extend_from_slice(&u32_len(cfg.len(), "config text")?.to_le_bytes());
        out.extend_from_slice(cfg);
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let nl = u16::try_from(nb.len()).map_err(|_| Error::Malformed(format!("tensor name {name:?} too long")))?;
            out.extend_from_slice(&nl.to_le_bytes());
            out.extend_from_slice(nb);
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Malformed(format!("rank of {name} too large")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Checks magic, then the checksum, then the version.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 4 + 4 + 4 {
            return Err(Error::Malformed("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let cl = r.u32()? as usize;
        let config = String::from_utf8(r.take(cl)?.to_vec())
            .map_err(|_| Error::Malformed("config text is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let nl = r.u16()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec())
                .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= body.len()))
                .ok_or_else(|| Error::Malformed(format!("tensor {name} has an impossible shape {shape:?}")))?;
            let raw = r.take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, tensors })
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Malformed(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: "kind = parallel\n".into(),
            tensors: vec![
                ("a".into(), Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap()),
                ("b".into(), Tensor::scalar(7.0)),
            ],
        }
    }

    #[test]
    fn layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(&bytes[..4], b"DHC1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &16u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &2u32.to_le_bytes());
        // header 32 + "a" (2+1+1+8+16) + "b" (2+1+1+0+4) + crc
        assert_eq!(bytes.len(), 32 + 28 + 8 + 4);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let bytes = sample().encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().encode().unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(Checkpoint::decode(&b), Err(Error::BadMagic)));
        for i in 4..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            assert!(matches!(Checkpoint::decode(&b), Err(Error::Checksum { .. })), "byte {i}");
        }
        let mut b = bytes[..bytes.len() - 4].to_vec();
        b[4] = 2;
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::decode(&b), Err(Error::Version(2))));
    }
}
