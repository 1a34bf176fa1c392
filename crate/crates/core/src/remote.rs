//! Blocking JSON-over-HTTP client shared by the remote providers
//! (embedder, translator, transcriber, LLM).

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("request to {url} failed after {attempts} attempt(s): {last}")]
    Unavailable {
        url: String,
        attempts: u32,
        last: String,
    },
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    base: String,
    retries: u32,
}

impl JsonClient {
    pub fn new(base: &str, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: base.trim_end_matches('/').to_string(),
            retries,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// POSTs `body` to `{base}{path}`; retries transport errors, non-200
    /// statuses and malformed bodies up to the configured count.
    pub fn post<Req, Resp>(&self, path: &str, body: &Req) -> Result<Resp, RemoteError>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let url = format!("{}{}", self.base, path);
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.try_post(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(err) => {
                    tracing::debug!(%url, attempt, error = %err, "remote call failed");
                    last = err;
                }
            }
        }
        Err(RemoteError::Unavailable {
            url,
            attempts,
            last,
        })
    }

    fn try_post<Req, Resp>(&self, url: &str, body: &Req) -> Result<Resp, String>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(|e| e.to_string())?;
        if resp.status() != 200 {
            return Err(format!("HTTP status {}", resp.status()));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| format!("malformed body: {e}"))
    }
}
