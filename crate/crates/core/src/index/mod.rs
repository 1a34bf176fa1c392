//! HNSW approximate nearest-neighbor index over raw inner products.
//!
//! - Level assignment draws from a ChaCha8 stream seeded by
//!   [`IndexParams::seed`], so a fixed seed and insertion order always give
//!   the same graph.
//! - Upper layers hold at most `m` links per node, layer 0 at most `2m`.
//! - Adjacency lists are kept sorted by node number so the serialized form
//!   is canonical.
//! - Vectors are stored as given. Nothing is normalized; scores are exact
//!   inner products accumulated in `f64`.

mod persist;

use crate::embed::{dot, Embedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("id already present: {0}")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("corrupt index file: {0}")]
    CorruptIndexFile(String),
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 100,
            seed: 0x5eed,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams("m must be >= 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(IndexError::InvalidParams(
                "ef_construction must be >= m".into(),
            ));
        }
        if self.ef_search < 1 {
            return Err(IndexError::InvalidParams("ef_search must be >= 1".into()));
        }
        Ok(())
    }

    /// Link capacity of a node on `layer`.
    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
}

/// Node number paired with its similarity to the current query.
/// Ordered by score, with the lower node number winning ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct HnswIndex {
    params: IndexParams,
    dim: usize,
    ids: Vec<String>,
    by_id: HashMap<String, u32>,
    vectors: Vec<f32>,
    /// `links[node][layer]`, sorted ascending.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    rng: ChaCha8Rng,
}

impl HnswIndex {
    pub fn new(dim: usize, params: IndexParams) -> Result<Self, IndexError> {
        params.validate()?;
        if dim == 0 {
            return Err(IndexError::InvalidParams("dimension must be >= 1".into()));
        }
        Ok(Self {
            params,
            dim,
            ids: Vec::new(),
            by_id: HashMap::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            entry: None,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        })
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef_search: usize) {
        self.params.ef_search = ef_search.max(1);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<Embedding> {
        self.by_id
            .get(id)
            .map(|&n| Embedding::new(self.vector(n).to_vec()))
    }

    /// Number of layers node `id` participates in, or `None` if absent.
    pub fn node_levels(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&n| self.links[n as usize].len())
    }

    /// Neighbor ids of `id` on `layer`.
    pub fn neighbors(&self, id: &str, layer: usize) -> Option<Vec<&str>> {
        let node = *self.by_id.get(id)?;
        let layers = &self.links[node as usize];
        layers.get(layer).map(|ns| {
            ns.iter()
                .map(|&n| self.ids[n as usize].as_str())
                .collect()
        })
    }

    fn vector(&self, node: u32) -> &[f32] {
        let start = node as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn sim(&self, query: &[f32], node: u32) -> f64 {
        dot(query, self.vector(node))
    }

    fn top_layer(&self) -> usize {
        self.entry
            .map(|e| self.links[e as usize].len() - 1)
            .unwrap_or(0)
    }

    fn check_dim(&self, values: &[f32]) -> Result<(), IndexError> {
        if values.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        Ok(())
    }

    fn random_level(&mut self) -> usize {
        let ml = 1.0 / (self.params.m as f64).ln();
        // uniform in (0, 1]
        let u: f64 = 1.0 - self.rng.random::<f64>();
        ((-u.ln() * ml).floor() as usize).min(32)
    }

    pub fn insert(&mut self, id: &str, vector: &Embedding) -> Result<(), IndexError> {
        self.check_dim(&vector.values)?;
        if self.by_id.contains_key(id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        let level = self.random_level();
        let node = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.by_id.insert(id.to_string(), node);
        self.vectors.extend_from_slice(&vector.values);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return Ok(());
        };
        let query = vector.values.as_slice();
        let top = self.top_layer();
        let mut ep = Scored {
            score: self.sim(query, entry),
            node: entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(query, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(query, &eps, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m);
            let mut mine: Vec<u32> = chosen.iter().map(|s| s.node).collect();
            mine.sort_unstable();
            self.links[node as usize][layer] = mine;
            for s in &chosen {
                self.link_back(s.node, node, s.score, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
        Ok(())
    }

    /// Adds `new` to `target`'s list on `layer`, shrinking it with the
    /// selection heuristic when it exceeds capacity.
    fn link_back(&mut self, target: u32, new: u32, score: f64, layer: usize) {
        let cap = self.params.max_degree(layer);
        let list = &self.links[target as usize][layer];
        if list.len() < cap {
            let pos = list.binary_search(&new).unwrap_or_else(|p| p);
            self.links[target as usize][layer].insert(pos, new);
            return;
        }
        let base = self.vector(target).to_vec();
        let mut cands: Vec<Scored> = list
            .iter()
            .map(|&n| Scored {
                score: self.sim(&base, n),
                node: n,
            })
            .collect();
        cands.push(Scored { score, node: new });
        cands.sort_unstable_by(|a, b| b.cmp(a));
        let mut kept: Vec<u32> = self
            .select_neighbors(&cands, cap)
            .into_iter()
            .map(|s| s.node)
            .collect();
        kept.sort_unstable();
        self.links[target as usize][layer] = kept;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every neighbor kept so far, then top up with the best
    /// pruned candidates. `candidates` must be sorted best-first.
    fn select_neighbors(&self, candidates: &[Scored], limit: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        let mut pruned = Vec::new();
        for &c in candidates {
            if kept.len() >= limit {
                break;
            }
            let cv = self.vector(c.node);
            let diverse = kept.iter().all(|k| c.score > dot(cv, self.vector(k.node)));
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy(&self, query: &[f32], mut best: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in &self.links[best.node as usize][layer] {
                let cand = Scored {
                    score: self.sim(query, n),
                    node: n,
                };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &[f32], eps: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.ids.len()];
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut found: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &ep in eps {
            if !std::mem::replace(&mut visited[ep.node as usize], true) {
                frontier.push(ep);
                found.push(Reverse(ep));
                if found.len() > ef {
                    found.pop();
                }
            }
        }
        while let Some(current) = frontier.pop() {
            let worst = found.peek().map(|r| r.0);
            if found.len() >= ef && worst.is_some_and(|w| current < w) {
                break;
            }
            for &n in &self.links[current.node as usize][layer] {
                if std::mem::replace(&mut visited[n as usize], true) {
                    continue;
                }
                let cand = Scored {
                    score: self.sim(query, n),
                    node: n,
                };
                let admit = found.len() < ef || found.peek().is_some_and(|w| cand > w.0);
                if admit {
                    frontier.push(cand);
                    found.push(Reverse(cand));
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = found.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Top-`k` by inner product using the configured `ef_search`.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_with_ef(query, k, self.params.ef_search)
    }

    /// Results are sorted by score descending, ties by id ascending, and
    /// have length `min(k, len())`.
    pub fn search_with_ef(
        &self,
        query: &Embedding,
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        self.check_dim(&query.values)?;
        let Some(entry) = self.entry else {
            return Err(IndexError::EmptyIndex);
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = query.values.as_slice();
        let mut ep = Scored {
            score: self.sim(q, entry),
            node: entry,
        };
        for layer in (1..=self.top_layer()).rev() {
            ep = self.greedy(q, ep, layer);
        }
        let found = self.search_layer(q, &[ep], ef_search.max(k), 0);
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|s| SearchHit {
                id: self.ids[s.node as usize].clone(),
                score: s.score,
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }
}

/// Score descending, id ascending.
pub fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}
