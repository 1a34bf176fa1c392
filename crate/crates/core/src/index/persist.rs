//! On-disk index format.
//!
//! ```text
//! "VAGIDX1\0"                 8-byte magic
//! u32 LE                      header length
//! header JSON                 params, dimension, count, dtype, ids, entry point
//! f32 LE * count * dimension  vectors, row-major
//! adjacency                   per node: varint layer count, then per layer
//!                             varint length + delta-encoded varint node list
//! u32 LE                      CRC32C of everything above
//! ```

use super::{HnswIndex, IndexError, IndexParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"VAGIDX1\0";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    params: IndexParams,
    dimension: usize,
    count: usize,
    dtype: String,
    entry_point: Option<u32>,
    ids: Vec<String>,
    /// Position in the level-sampling stream, decimal.
    rng_word_pos: String,
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::CorruptIndexFile(msg.into())
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn varint(&mut self) -> Result<u64, IndexError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.take(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(corrupt("varint overflow"))
    }
}

impl HnswIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: 1,
            params: self.params,
            dimension: self.dim,
            count: self.ids.len(),
            dtype: "f32".into(),
            entry_point: self.entry,
            ids: self.ids.clone(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.vectors.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for layers in &self.links {
            put_varint(&mut out, layers.len() as u64);
            for list in layers {
                put_varint(&mut out, list.len() as u64);
                let mut prev = 0u32;
                for (i, &n) in list.iter().enumerate() {
                    put_varint(&mut out, u64::from(if i == 0 { n } else { n - prev }));
                    prev = n;
                }
            }
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(corrupt("truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32c::crc32c(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let hlen = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format_version != 1 || header.dtype != "f32" {
            return Err(corrupt("unsupported format version or dtype"));
        }
        let count = header.count;
        if header.ids.len() != count {
            return Err(corrupt("id count does not match header count"));
        }
        header
            .params
            .validate()
            .map_err(|e| corrupt(format!("bad params: {e}")))?;
        if header.dimension == 0 {
            return Err(corrupt("zero dimension"));
        }
        let nvals = count
            .checked_mul(header.dimension)
            .ok_or_else(|| corrupt("size overflow"))?;
        let raw = r.take(nvals.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
        let vectors: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        let mut links = Vec::with_capacity(count);
        for _ in 0..count {
            let nlayers = r.varint()? as usize;
            if nlayers == 0 || nlayers > 33 {
                return Err(corrupt("bad layer count"));
            }
            let mut layers = Vec::with_capacity(nlayers);
            for layer in 0..nlayers {
                let len = r.varint()? as usize;
                if len > header.params.max_degree(layer) {
                    return Err(corrupt("node degree exceeds bound"));
                }
                let mut list = Vec::with_capacity(len);
                let mut prev = 0u64;
                for i in 0..len {
                    let d = r.varint()?;
                    let n = if i == 0 { d } else { prev + d };
                    if (i > 0 && d == 0) || n >= count as u64 {
                        return Err(corrupt("bad adjacency entry"));
                    }
                    list.push(n as u32);
                    prev = n;
                }
                layers.push(list);
            }
            links.push(layers);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        match header.entry_point {
            None if count != 0 => return Err(corrupt("missing entry point")),
            Some(e) if e as usize >= count => return Err(corrupt("entry point out of range")),
            _ => {}
        }
        for layers in &links {
            for (layer, list) in layers.iter().enumerate() {
                if list.iter().any(|&n| links[n as usize].len() <= layer) {
                    return Err(corrupt("link to node absent from layer"));
                }
            }
        }
        let mut by_id = HashMap::with_capacity(count);
        for (i, id) in header.ids.iter().enumerate() {
            if by_id.insert(id.clone(), i as u32).is_some() {
                return Err(corrupt(format!("duplicate id {id}")));
            }
        }
        let word_pos: u128 = header
            .rng_word_pos
            .parse()
            .map_err(|_| corrupt("bad rng position"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(header.params.seed);
        rng.set_word_pos(word_pos);
        Ok(Self {
            params: header.params,
            dim: header.dimension,
            ids: header.ids,
            by_id,
            vectors,
            links,
            entry: header.entry_point,
            rng,
        })
    }

    /// Writes atomically via a sibling temp file.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedding;

    fn small() -> HnswIndex {
        let mut idx = HnswIndex::new(2, IndexParams::default()).unwrap();
        for (i, v) in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-1.0, 0.5]].iter().enumerate() {
            idx.insert(&format!("v{i}"), &Embedding::new(v.to_vec())).unwrap();
        }
        idx
    }

    #[test]
    fn varint_round_trip() {
        for v in [0u64, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            let mut r = Reader { buf: &buf, pos: 0 };
            assert_eq!(r.varint().unwrap(), v);
            assert_eq!(r.pos, buf.len());
        }
    }

    #[test]
    fn bytes_round_trip_is_identical() {
        let idx = small();
        let bytes = idx.to_bytes();
        let back = HnswIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_bit_flips_are_rejected() {
        let bytes = small().to_bytes();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                HnswIndex::from_bytes(&bytes[..cut]),
                Err(IndexError::CorruptIndexFile(_))
            ));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(
            HnswIndex::from_bytes(&flipped),
            Err(IndexError::CorruptIndexFile(_))
        ));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(
            HnswIndex::from_bytes(&magic),
            Err(IndexError::CorruptIndexFile(_))
        ));
    }

    #[test]
    fn rng_position_survives_reload() {
        let mut a = small();
        let mut b = HnswIndex::from_bytes(&a.to_bytes()).unwrap();
        for i in 0..20 {
            let v = Embedding::new(vec![i as f32, 1.0]);
            a.insert(&format!("n{i}"), &v).unwrap();
            b.insert(&format!("n{i}"), &v).unwrap();
        }
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
