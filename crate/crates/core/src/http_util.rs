//! Blocking JSON-over-HTTP with bounded retries, shared by the embedding and
//! LLM clients.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` and returns the parsed JSON response.
///
/// Transport failures, 429 and 5xx are retried `retries` times with
/// exponential backoff starting at 50 ms; other 4xx answers fail at once.
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, body: &Value, retries: u32) -> Result<Value> {
    let mut last_err = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            thread::sleep(Duration::from_millis(50u64 << (attempt - 1).min(6)));
        }
        match agent.post(url).send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    last_err = format!("{url} answered HTTP {status}");
                    continue;
                }
                if status >= 400 {
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    return Err(Error::Protocol(format!("{url} answered HTTP {status}: {text}")));
                }
                return resp
                    .body_mut()
                    .read_json::<Value>()
                    .map_err(|e| Error::Protocol(format!("{url}: invalid JSON response: {e}")));
            }
            Err(e) => last_err = format!("{url}: {e}"),
        }
        log::debug!("attempt {} failed: {last_err}", attempt + 1);
    }
    Err(Error::Transport(format!("{last_err} (after {} attempts)", retries + 1)))
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
