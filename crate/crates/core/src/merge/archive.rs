//! Tensor archive format.
//!
//! ```text
//! "VAGTNSR1"     magic
//! u32 LE         header length
//! header JSON    {"<name>":{"dtype","length","offset","shape"}, ...,
//!                 "__metadata__":{...}} with keys sorted
//! payload        tensors in name order, little-endian f32
//! u32 LE         CRC32C of everything above
//! ```
//!
//! Offsets are relative to the start of the payload. The encoding is
//! canonical: reading then writing an archive reproduces its bytes.

use super::MergeError;
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 8] = b"VAGTNSR1";
pub const METADATA_KEY: &str = "__metadata__";
pub const ALLOW_NONFINITE: &str = "allow_nonfinite";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, MergeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MergeError::InvalidArchive(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Layout entry for one tensor, as stored in the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

pub(crate) fn allows_nonfinite(metadata: &BTreeMap<String, String>) -> bool {
    metadata.get(ALLOW_NONFINITE).is_some_and(|v| v == "true")
}

fn corrupt(msg: impl Into<String>) -> MergeError {
    MergeError::CorruptArchive(msg.into())
}

/// Assigns offsets in name order.
pub(crate) fn layout<'a>(
    shapes: impl IntoIterator<Item = (&'a String, &'a Vec<usize>)>,
) -> BTreeMap<String, TensorInfo> {
    let mut offset = 0u64;
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let length = shape.iter().product::<usize>() as u64 * 4;
            let info = TensorInfo {
                shape: shape.clone(),
                offset,
                length,
            };
            offset += length;
            (name.clone(), info)
        })
        .collect()
}

pub(crate) fn encode_header(
    infos: &BTreeMap<String, TensorInfo>,
    metadata: &BTreeMap<String, String>,
) -> Result<Vec<u8>, MergeError> {
    let mut root: BTreeMap<String, Value> = BTreeMap::new();
    for (name, info) in infos {
        if name == METADATA_KEY {
            return Err(MergeError::InvalidArchive(format!(
                "tensor name {METADATA_KEY} is reserved"
            )));
        }
        root.insert(
            name.clone(),
            json!({
                "dtype": "f32",
                "length": info.length,
                "offset": info.offset,
                "shape": info.shape,
            }),
        );
    }
    root.insert(METADATA_KEY.into(), json!(metadata));
    let header = serde_json::to_vec(&root).expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    Ok(out)
}

/// Tensor table and string metadata.
type Header = (BTreeMap<String, TensorInfo>, BTreeMap<String, String>);

fn parse_header(bytes: &[u8]) -> Result<Header, MergeError> {
    let root: Map<String, Value> =
        serde_json::from_slice(bytes).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut infos = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    for (name, v) in root {
        if name == METADATA_KEY {
            metadata = serde_json::from_value(v).map_err(|e| corrupt(format!("bad metadata: {e}")))?;
            continue;
        }
        let dtype = v.get("dtype").and_then(Value::as_str).unwrap_or("");
        if dtype != "f32" {
            return Err(MergeError::UnsupportedDtype(format!("{name}: {dtype:?}")));
        }
        let shape: Vec<usize> = v
            .get("shape")
            .cloned()
            .and_then(|s| serde_json::from_value(s).ok())
            .ok_or_else(|| corrupt(format!("{name}: bad shape")))?;
        let offset = v.get("offset").and_then(Value::as_u64);
        let length = v.get("length").and_then(Value::as_u64);
        let (Some(offset), Some(length)) = (offset, length) else {
            return Err(corrupt(format!("{name}: missing offset/length")));
        };
        let numel = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| corrupt(format!("{name}: shape overflow")))?;
        if numel.checked_mul(4) != Some(length) {
            return Err(corrupt(format!("{name}: length does not match shape")));
        }
        infos.insert(name, TensorInfo { shape, offset, length });
    }
    // tensors must tile the payload in name order
    let mut expected = 0u64;
    for (name, info) in &infos {
        if info.offset != expected {
            return Err(corrupt(format!("{name}: non-canonical offset")));
        }
        expected += info.length;
    }
    Ok((infos, metadata))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

pub(crate) fn encode_f32(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> &mut Self {
        self.tensors.insert(name.into(), tensor);
        self
    }

    pub fn with_tensor(mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, MergeError> {
        self.tensors.insert(name.into(), Tensor::new(shape, data)?);
        Ok(self)
    }

    pub fn allows_nonfinite(&self) -> bool {
        allows_nonfinite(&self.metadata)
    }

    pub fn validate(&self) -> Result<(), MergeError> {
        for (name, t) in &self.tensors {
            if name == METADATA_KEY {
                return Err(MergeError::InvalidArchive(format!(
                    "tensor name {METADATA_KEY} is reserved"
                )));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(MergeError::InvalidArchive(format!(
                    "{name}: data length does not match shape"
                )));
            }
            if !self.allows_nonfinite() && t.data.iter().any(|v| !v.is_finite()) {
                return Err(MergeError::NonFiniteInput(name.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, MergeError> {
        self.validate()?;
        let infos = layout(self.tensors.iter().map(|(n, t)| (n, &t.shape)));
        let mut out = encode_header(&infos, &self.metadata)?;
        for t in self.tensors.values() {
            encode_f32(&t.data, &mut out);
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MergeError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(corrupt("truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32c::crc32c(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let payload_start = 12usize
            .checked_add(hlen)
            .filter(|&p| p <= body.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let (infos, metadata) = parse_header(&body[12..payload_start])?;
        let payload = &body[payload_start..];
        let total: u64 = infos.values().map(|i| i.length).sum();
        if total != payload.len() as u64 {
            return Err(corrupt("payload size does not match header"));
        }
        let tensors = infos
            .into_iter()
            .map(|(name, info)| {
                let start = info.offset as usize;
                let data = decode_f32(&payload[start..start + info.length as usize]);
                (name, Tensor { shape: info.shape, data })
            })
            .collect();
        let archive = Self { tensors, metadata };
        archive.validate()?;
        Ok(archive)
    }

    pub fn read(path: &Path) -> Result<Self, MergeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), MergeError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Random-access reader that loads one tensor at a time. The checksum is
/// verified up front by streaming the whole file.
#[derive(Debug)]
pub struct ArchiveReader {
    path: PathBuf,
    file: BufReader<File>,
    payload_start: u64,
    infos: BTreeMap<String, TensorInfo>,
    metadata: BTreeMap<String, String>,
    sha256: String,
}

impl ArchiveReader {
    pub fn open(path: &Path) -> Result<Self, MergeError> {
        use sha2::{Digest, Sha256};
        let mut file = BufReader::new(File::open(path)?);
        let size = file.get_ref().metadata()?.len();
        if size < (MAGIC.len() + 8) as u64 {
            return Err(corrupt("truncated"));
        }
        let mut crc = 0u32;
        let mut hasher = Sha256::new();
        let mut remaining = size - 4;
        let mut buf = vec![0u8; 1 << 16];
        while remaining > 0 {
            let n = (remaining as usize).min(buf.len());
            file.read_exact(&mut buf[..n])?;
            crc = crc32c::crc32c_append(crc, &buf[..n]);
            hasher.update(&buf[..n]);
            remaining -= n as u64;
        }
        let mut tail = [0u8; 4];
        file.read_exact(&mut tail)?;
        hasher.update(tail);
        if crc != u32::from_le_bytes(tail) {
            return Err(corrupt("checksum mismatch"));
        }
        file.seek(SeekFrom::Start(0))?;
        let mut head = [0u8; 12];
        file.read_exact(&mut head)?;
        if &head[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let hlen = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as u64;
        if 12 + hlen > size - 4 {
            return Err(corrupt("truncated header"));
        }
        let mut header = vec![0u8; hlen as usize];
        file.read_exact(&mut header)?;
        let (infos, metadata) = parse_header(&header)?;
        let total: u64 = infos.values().map(|i| i.length).sum();
        if 12 + hlen + total != size - 4 {
            return Err(corrupt("payload size does not match header"));
        }
        let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            path: path.to_path_buf(),
            file,
            payload_start: 12 + hlen,
            infos,
            metadata,
            sha256,
        })
    }

    pub fn infos(&self) -> &BTreeMap<String, TensorInfo> {
        &self.infos
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Hex SHA-256 of the whole file.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    /// A short provenance label: metadata `name` if present, else the file
    /// name, with the content hash.
    pub fn label(&self) -> String {
        let name = self.metadata.get("name").cloned().unwrap_or_else(|| {
            self.path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        format!("{name}@sha256:{}", self.sha256)
    }

    pub fn read_tensor(&mut self, name: &str) -> Result<Tensor, MergeError> {
        let info = self
            .infos
            .get(name)
            .ok_or_else(|| MergeError::InvalidArchive(format!("no tensor {name}")))?
            .clone();
        self.file
            .seek(SeekFrom::Start(self.payload_start + info.offset))?;
        let mut bytes = vec![0u8; info.length as usize];
        self.file.read_exact(&mut bytes)?;
        let data = decode_f32(&bytes);
        if !allows_nonfinite(&self.metadata) && data.iter().any(|v| !v.is_finite()) {
            return Err(MergeError::NonFiniteInput(name.to_string()));
        }
        Ok(Tensor {
            shape: info.shape,
            data,
        })
    }
}

/// Streams tensors into an archive whose layout is fixed up front. Tensors
/// must be written in name order.
pub struct ArchiveWriter {
    out: BufWriter<File>,
    tmp: PathBuf,
    dest: PathBuf,
    crc: u32,
    pending: std::collections::btree_map::IntoIter<String, TensorInfo>,
}

impl ArchiveWriter {
    pub fn create(
        path: &Path,
        infos: BTreeMap<String, TensorInfo>,
        metadata: &BTreeMap<String, String>,
    ) -> Result<Self, MergeError> {
        let header = encode_header(&infos, metadata)?;
        let tmp = path.with_extension("tmp");
        let mut out = BufWriter::new(File::create(&tmp)?);
        out.write_all(&header)?;
        Ok(Self {
            out,
            tmp,
            dest: path.to_path_buf(),
            crc: crc32c::crc32c(&header),
            pending: infos.into_iter(),
        })
    }

    pub fn write_tensor(&mut self, name: &str, tensor: &Tensor) -> Result<(), MergeError> {
        let (expected, info) = self
            .pending
            .next()
            .ok_or_else(|| MergeError::InvalidArchive(format!("unexpected tensor {name}")))?;
        if expected != name || info.shape != tensor.shape {
            return Err(MergeError::InvalidArchive(format!(
                "expected tensor {expected} {:?}, got {name} {:?}",
                info.shape, tensor.shape
            )));
        }
        let mut bytes = Vec::new();
        encode_f32(&tensor.data, &mut bytes);
        self.crc = crc32c::crc32c_append(self.crc, &bytes);
        self.out.write_all(&bytes)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), MergeError> {
        if let Some((name, _)) = self.pending.next() {
            return Err(MergeError::InvalidArchive(format!("tensor {name} never written")));
        }
        self.out.write_all(&self.crc.to_le_bytes())?;
        let file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        std::fs::rename(&self.tmp, &self.dest)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new()
            .with_tensor("b", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_tensor("a", vec![2], vec![-0.5, 0.25])
            .unwrap();
        a.metadata.insert("name".into(), "sample".into());
        a
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let back = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_lists_names_in_order() {
        let bytes = sample().to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
        assert!(header.find("\"a\"").unwrap() < header.find("\"b\"").unwrap());
        assert!(header.starts_with(r#"{"__metadata__":{"name":"sample"},"a":{"dtype":"f32","length":8,"offset":0,"shape":[2]}"#));
    }

    #[test]
    fn flipped_payload_byte_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(MergeError::CorruptArchive(_))
        ));
    }

    #[test]
    fn unsupported_dtype() {
        let mut root = Map::new();
        root.insert(
            "w".into(),
            json!({"dtype":"f16","length":2,"offset":0,"shape":[1]}),
        );
        let header = serde_json::to_vec(&Value::Object(root)).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&[0, 0]);
        let crc = crc32c::crc32c(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            TensorArchive::from_bytes(&bytes),
            Err(MergeError::UnsupportedDtype(_))
        ));
    }

    #[test]
    fn nonfinite_needs_opt_in() {
        let mut a = TensorArchive::new()
            .with_tensor("w", vec![1], vec![f32::INFINITY])
            .unwrap();
        assert!(matches!(a.to_bytes(), Err(MergeError::NonFiniteInput(_))));
        a.metadata.insert(ALLOW_NONFINITE.into(), "true".into());
        let back = TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(back.tensors["w"].data[0], f32::INFINITY);
    }

    #[test]
    fn reader_matches_in_memory_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.vtar");
        sample().write(&path).unwrap();
        let mut r = ArchiveReader::open(&path).unwrap();
        assert_eq!(r.read_tensor("b").unwrap(), sample().tensors["b"]);
        assert_eq!(r.read_tensor("a").unwrap(), sample().tensors["a"]);
        assert!(r.label().starts_with("sample@sha256:"));
    }
}
