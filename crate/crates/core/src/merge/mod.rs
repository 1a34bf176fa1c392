//! Task-vector arithmetic over tensor archives.
//!
//! A task vector is the elementwise difference of two checkpoints with the
//! same architecture (`tensor_diff`); adding it to a third checkpoint
//! (`tensor_add`) transfers whatever capability separated the first two.
//! [`merge_files`] does both in one streaming pass, one tensor at a time.

mod archive;

pub use archive::{
    ArchiveReader, ArchiveWriter, Tensor, TensorArchive, TensorInfo, ALLOW_NONFINITE, MAGIC,
    METADATA_KEY,
};

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("tensor names differ: only in left {only_left:?}, only in right {only_right:?}")]
    NameSetMismatch {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },
    #[error("shape mismatch for {name}: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in input tensor {0}")]
    NonFiniteInput(String),
    #[error("non-finite result in tensor {0}")]
    NonFiniteResult(String),
    #[error("invalid archive: {0}")]
    InvalidArchive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `minuend - subtrahend`, with provenance in its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector(pub TensorArchive);

impl TaskVector {
    pub fn archive(&self) -> &TensorArchive {
        &self.0
    }

    pub fn into_archive(self) -> TensorArchive {
        self.0
    }

    /// L2 norm of each tensor, accumulated in `f64`.
    pub fn norms(&self) -> BTreeMap<String, f64> {
        self.0
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), l2_norm(&t.data)))
            .collect()
    }
}

pub fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

fn check_compatible<'a, L, R>(left: L, right: R) -> Result<(), MergeError>
where
    L: IntoIterator<Item = (&'a String, &'a Vec<usize>)>,
    R: IntoIterator<Item = (&'a String, &'a Vec<usize>)>,
{
    let left: BTreeMap<_, _> = left.into_iter().collect();
    let right: BTreeMap<_, _> = right.into_iter().collect();
    let only_left: Vec<String> = left
        .keys()
        .filter(|k| !right.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let only_right: Vec<String> = right
        .keys()
        .filter(|k| !left.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !only_left.is_empty() || !only_right.is_empty() {
        return Err(MergeError::NameSetMismatch {
            only_left,
            only_right,
        });
    }
    for (name, shape) in &left {
        if right[name] != *shape {
            return Err(MergeError::ShapeMismatch {
                name: name.to_string(),
                left: shape.to_vec(),
                right: right[name].to_vec(),
            });
        }
    }
    Ok(())
}

fn shapes(a: &TensorArchive) -> impl Iterator<Item = (&String, &Vec<usize>)> {
    a.tensors.iter().map(|(n, t)| (n, &t.shape))
}

fn label(a: &TensorArchive) -> String {
    let name = a.metadata.get("name").map_or("archive", String::as_str);
    match a.to_bytes() {
        Ok(bytes) => format!("{name}@sha256:{}", crate::llm::prompt_hash_bytes(&bytes)),
        Err(_) => name.to_string(),
    }
}

fn combine(
    name: &str,
    left: &[f32],
    right: &[f32],
    op: impl Fn(f32, f32) -> f32,
    allow_nonfinite: bool,
) -> Result<Vec<f32>, MergeError> {
    let out: Vec<f32> = left.iter().zip(right).map(|(&a, &b)| op(a, b)).collect();
    if !allow_nonfinite && out.iter().any(|v| !v.is_finite()) {
        return Err(MergeError::NonFiniteResult(name.to_string()));
    }
    Ok(out)
}

/// Elementwise `a - b` for every tensor.
pub fn tensor_diff(a: &TensorArchive, b: &TensorArchive) -> Result<TaskVector, MergeError> {
    check_compatible(shapes(a), shapes(b))?;
    let allow = a.allows_nonfinite() && b.allows_nonfinite();
    let mut out = TensorArchive::new();
    for (name, ta) in &a.tensors {
        let data = combine(name, &ta.data, &b.tensors[name].data, |x, y| x - y, allow)?;
        out.tensors.insert(
            name.clone(),
            Tensor {
                shape: ta.shape.clone(),
                data,
            },
        );
    }
    out.metadata.insert("kind".into(), "task_vector".into());
    out.metadata.insert("minuend".into(), label(a));
    out.metadata.insert("subtrahend".into(), label(b));
    if allow {
        out.metadata.insert(ALLOW_NONFINITE.into(), "true".into());
    }
    Ok(TaskVector(out))
}

/// Elementwise `m + t` for every tensor.
pub fn tensor_add(m: &TensorArchive, t: &TaskVector) -> Result<TensorArchive, MergeError> {
    let tv = t.archive();
    check_compatible(shapes(m), shapes(tv))?;
    let allow = m.allows_nonfinite();
    let mut out = TensorArchive::new();
    for (name, tm) in &m.tensors {
        let data = combine(name, &tm.data, &tv.tensors[name].data, |x, y| x + y, allow)?;
        out.tensors.insert(
            name.clone(),
            Tensor {
                shape: tm.shape.clone(),
                data,
            },
        );
    }
    out.metadata.insert("kind".into(), "merged".into());
    out.metadata.insert("base".into(), label(m));
    for key in ["minuend", "subtrahend"] {
        if let Some(v) = tv.metadata.get(key) {
            out.metadata.insert(format!("task_vector.{key}"), v.clone());
        }
    }
    if allow {
        out.metadata.insert(ALLOW_NONFINITE.into(), "true".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    /// Per-tensor L2 norm of the task vector `plus - minus`.
    pub task_vector_norms: BTreeMap<String, f64>,
    pub written: bool,
}

/// `out = base + (plus - minus)`, streamed tensor by tensor so at most
/// three input tensors are resident at once. With `dry_run` nothing is
/// written and only the task-vector norms are reported.
pub fn merge_files(
    base: &Path,
    plus: &Path,
    minus: &Path,
    out: Option<&Path>,
    dry_run: bool,
) -> Result<MergeReport, MergeError> {
    let mut rb = ArchiveReader::open(base)?;
    let mut rp = ArchiveReader::open(plus)?;
    let mut rm = ArchiveReader::open(minus)?;
    let shapes_of = |r: &ArchiveReader| -> BTreeMap<String, Vec<usize>> {
        r.infos()
            .iter()
            .map(|(n, i)| (n.clone(), i.shape.clone()))
            .collect()
    };
    let (sb, sp, sm) = (shapes_of(&rb), shapes_of(&rp), shapes_of(&rm));
    check_compatible(&sp, &sm)?;
    check_compatible(&sb, &sp)?;

    let allow_tau = archive::allows_nonfinite(rp.metadata()) && archive::allows_nonfinite(rm.metadata());
    let allow_out = archive::allows_nonfinite(rb.metadata());
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".to_string(), "merged".to_string());
    metadata.insert("base".to_string(), rb.label());
    metadata.insert("task_vector.minuend".to_string(), rp.label());
    metadata.insert("task_vector.subtrahend".to_string(), rm.label());
    if allow_out {
        metadata.insert(ALLOW_NONFINITE.to_string(), "true".to_string());
    }

    let mut writer = match (dry_run, out) {
        (false, Some(path)) => Some(ArchiveWriter::create(path, rb.infos().clone(), &metadata)?),
        (false, None) => {
            return Err(MergeError::InvalidArchive("no output path given".into()));
        }
        (true, _) => None,
    };
    let mut norms = BTreeMap::new();
    let names: Vec<String> = sb.keys().cloned().collect();
    for name in &names {
        let p = rp.read_tensor(name)?;
        let m = rm.read_tensor(name)?;
        let tau = combine(name, &p.data, &m.data, |x, y| x - y, allow_tau)?;
        drop((p, m));
        norms.insert(name.clone(), l2_norm(&tau));
        if let Some(w) = writer.as_mut() {
            let b = rb.read_tensor(name)?;
            let data = combine(name, &b.data, &tau, |x, y| x + y, allow_out)?;
            w.write_tensor(name, &Tensor { shape: b.shape, data })?;
        }
    }
    let written = writer.is_some();
    if let Some(w) = writer {
        w.finish()?;
    }
    Ok(MergeReport {
        task_vector_norms: norms,
        written,
    })
}
