#![allow(dead_code)]

use serde_json::Value;
use std::path::{Path, PathBuf};
use vagent_cli::config::{AppConfig, TranslatorKind};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn assert_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDENS=1 to create)", path.display()));
    assert_eq!(want, actual, "{} differs", path.display());
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn vagent(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("vagent").chain(args.iter().copied());
    let code = vagent_cli::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Writes a script table for the scripted LLM backend and returns its path.
pub fn script(dir: &Path, name: &str, spec: Value) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

/// Config for the three-record fixture: 64-dim reference embedder,
/// dictionary translation, scripted models.
pub fn three_config(dir: &Path) -> AppConfig {
    let mut cfg = AppConfig::default();
    cfg.data_dir = dir.join("data");
    cfg.embedder.dimension = 64;
    cfg.translator.kind = TranslatorKind::Dictionary;
    cfg.translator.path = Some(fixture("three/translations.json"));
    cfg.llm.router.script = Some(script(
        dir,
        "router",
        serde_json::json!({
            "rules": [{"contains": "User: find", "text": "SEARCH"}],
            "default": {"text": "CHAT"}
        }),
    ));
    cfg.llm.reranker.script = Some(script(dir, "reranker", serde_json::json!({"default": {"text": "[1, 0]"}})));
    cfg.llm.chat.script = Some(script(
        dir,
        "chat",
        serde_json::json!({
            "rules": [
                {"contains": "Summarize the following video", "text": "A summary."},
                {"contains": "\nVideos:\n", "text": "Grounded answer."}
            ],
            "default": {"text": "Plain answer."}
        }),
    ));
    cfg
}

/// The same settings as a TOML file for the CLI.
pub fn write_toml(cfg: &AppConfig, path: &Path) {
    std::fs::write(path, toml::to_string(cfg).unwrap()).unwrap();
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post(url: &str, body: &Value) -> (u16, Value) {
    let mut resp = agent().post(url).send_json(body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

pub fn post_raw(url: &str, body: &str) -> (u16, Value) {
    let mut resp = agent()
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}

pub fn get(url: &str) -> (u16, Value) {
    let mut resp = agent().get(url).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap())
}
