#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vagent_core::embed::Embedding;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.iter().map(|x| (x / norm) as f32).collect())
}

/// Exhaustive top-k by inner product, score desc then id asc.
pub fn brute_force_top_k(corpus: &[(String, Embedding)], query: &Embedding, k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = corpus
        .iter()
        .map(|(id, v)| {
            let mut s = 0.0f64;
            for i in 0..v.values.len() {
                s += v.values[i] as f64 * query.values[i] as f64;
            }
            (id.clone(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Minimal HTTP/1.1 server for provider protocol tests. Each request is
/// handed to `handler(path, json_body)`, which returns a status and a body.
pub struct MockServer {
    pub url: String,
    pub requests: std::sync::Arc<std::sync::Mutex<Vec<(String, serde_json::Value)>>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str, &serde_json::Value) -> (u16, String) + Send + Sync + 'static,
    {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = requests.clone();
        let handler = std::sync::Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = log.clone();
                let handler = handler.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let json: serde_json::Value =
                        serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                    log.lock().unwrap().push((path.clone(), json.clone()));
                    let (status, out) = handler(&path, &json);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                        out.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self { url, requests }
    }

    pub fn hits(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub mod synth {
    use super::fixture;
    use std::path::{Path, PathBuf};
    use std::sync::Arc;
    use vagent_core::embed::ReferenceEmbedder;
    use vagent_core::index::IndexParams;
    use vagent_core::ingest::{read_manifest, DictionaryTranslator, IngestConfig};
    use vagent_core::store::Corpus;

    pub const DIM: usize = 256;

    pub fn path(name: &str) -> PathBuf {
        fixture("synth").join(name)
    }

    pub fn expected() -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(path("expected.json")).unwrap()).unwrap()
    }

    /// Index parameters under which search is exhaustive for this corpus.
    pub fn exact_params() -> IndexParams {
        IndexParams {
            ef_search: 256,
            ..IndexParams::default()
        }
    }

    pub fn translator() -> Arc<DictionaryTranslator> {
        Arc::new(DictionaryTranslator::from_file(&path("translations.json")).unwrap())
    }

    /// Builds the benchmark corpus, in memory or under `dir`.
    pub fn corpus(frames: usize, description: bool, dir: Option<&Path>) -> Corpus {
        let ingest = IngestConfig {
            frames_per_video: frames,
            include_description: description,
        };
        let embedder = Arc::new(ReferenceEmbedder::new(DIM));
        let mut c = match dir {
            Some(d) => Corpus::open(d, embedder, translator(), exact_params(), ingest).unwrap(),
            None => Corpus::in_memory(embedder, translator(), exact_params(), ingest).unwrap(),
        };
        let records = read_manifest(&path("manifest.jsonl"), None).unwrap();
        let report = c.ingest_all(records).unwrap();
        assert_eq!(report.indexed.len(), 200, "{:?}", report.skipped);
        c
    }
}

/// Byte-compares `actual` with `tests/golden/<name>`. With
/// `UPDATE_GOLDENS=1` the file is rewritten instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDENS=1 to create)", path.display()));
    if want != actual {
        panic!("{} differs from output:\n--- golden\n{want}\n--- actual\n{actual}", path.display());
    }
}
