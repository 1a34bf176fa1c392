use super::{EmbedError, Embedder, Embedding};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FRAME_WINDOW: usize = 8;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Signed feature hashing into `dimension` bins.
///
/// Text is lowercased and split on whitespace; each token hash adds +1 or -1
/// (bit 8 of the hash) at bin `hash mod dimension`. Frames hash every 8-byte
/// window. Accumulation is done in `f64` and only the normalized result is
/// narrowed to `f32`.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dimension: usize,
}

impl ReferenceEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "embedding dimension must be >= 1");
        Self { dimension }
    }

    fn accumulate(&self, acc: &mut [f64], hash: u64) {
        let bin = (hash % self.dimension as u64) as usize;
        if (hash >> 8) & 1 == 1 {
            acc[bin] += 1.0;
        } else {
            acc[bin] -= 1.0;
        }
    }

    fn frame_vector(&self, blob: &[u8]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dimension];
        if blob.len() < FRAME_WINDOW {
            self.accumulate(&mut acc, fnv1a64(blob));
        } else {
            for window in blob.windows(FRAME_WINDOW) {
                self.accumulate(&mut acc, fnv1a64(window));
            }
        }
        normalize(&mut acc);
        acc
    }
}

/// Scales to unit length in place. Returns false for the zero vector.
fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn finish(mut acc: Vec<f64>) -> Embedding {
    let dim = acc.len();
    if !normalize(&mut acc) {
        // every bin cancelled out; there is no direction to report
        return Embedding::missing(dim);
    }
    Embedding::new(acc.into_iter().map(|x| x as f32).collect())
}

impl Embedder for ReferenceEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut acc = vec![0.0; self.dimension];
        let lowered = text.to_lowercase();
        let mut any = false;
        for token in lowered.split_whitespace() {
            any = true;
            self.accumulate(&mut acc, fnv1a64(token.as_bytes()));
        }
        if !any {
            return Ok(Embedding::missing(self.dimension));
        }
        Ok(finish(acc))
    }

    fn embed_frames(&self, frames: &[Vec<u8>]) -> Result<Embedding, EmbedError> {
        if frames.is_empty() {
            return Err(EmbedError::EmptyFrameSet);
        }
        let mut mean = vec![0.0; self.dimension];
        for blob in frames {
            for (m, x) in mean.iter_mut().zip(self.frame_vector(blob)) {
                *m += x;
            }
        }
        let n = frames.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(finish(mean))
    }
}
