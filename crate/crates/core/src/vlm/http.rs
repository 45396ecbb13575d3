use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::provider::{ImageRef, VlmProvider, VlmReply, VlmRequest, DEFAULT_MAX_IN_FLIGHT};
use super::VlmError;
use crate::image::{encode_png, BitDepth};

/// Provider configuration file. The API key is read from the environment
/// variable `auth_env`, never from the file itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

impl ProviderConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| VlmError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| VlmError::InvalidConfig(format!("bad provider config: {e}")))?;
        if cfg.provider_id.trim().is_empty() || cfg.endpoint.trim().is_empty() {
            return Err(VlmError::InvalidConfig(
                "provider_id and endpoint must be non-empty".into(),
            ));
        }
        Ok(cfg)
    }

    /// `auth_env`, or `TRUSTSR_API_KEY_<PROVIDER_ID>` upper-cased with
    /// non-alphanumerics replaced by `_`.
    pub fn key_variable(&self) -> String {
        self.auth_env.clone().unwrap_or_else(|| {
            let id: String = self
                .provider_id
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() {
                        c.to_ascii_uppercase()
                    } else {
                        '_'
                    }
                })
                .collect();
            format!("TRUSTSR_API_KEY_{id}")
        })
    }
}

const RETRIES: u32 = 3;
const BACKOFF: Duration = Duration::from_millis(250);

/// Chat-completions style endpoint (`POST {endpoint}` with a `messages`
/// array whose user turns carry base64 PNG data URLs).
pub struct HttpVlmProvider {
    cfg: ProviderConfig,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpVlmProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, VlmError> {
        let key = std::env::var(cfg.key_variable()).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.unwrap_or(120)))
            .build()
            .map_err(|e| VlmError::Provider(e.to_string()))?;
        Ok(Self { cfg, key, client })
    }

    fn user_message(prompt: &str, images: &[ImageRef<'_>]) -> Result<Value, VlmError> {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        for r in images {
            let png = encode_png(r.image, BitDepth::Eight)
                .map_err(|e| VlmError::Provider(format!("cannot encode image: {e}")))?;
            let url = format!(
                "data:image/png;base64,{}",
                base64::engine::general_purpose::STANDARD.encode(png)
            );
            content.push(json!({"type": "image_url", "image_url": {"url": url}}));
        }
        Ok(json!({"role": "user", "content": content}))
    }

    /// The JSON body sent for `request`.
    pub fn body(&self, request: &VlmRequest<'_>) -> Result<Value, VlmError> {
        let mut messages = Vec::new();
        for turn in &request.history {
            messages.push(Self::user_message(&turn.prompt, &turn.images)?);
            messages.push(json!({"role": "assistant", "content": turn.response}));
        }
        messages.push(Self::user_message(&request.prompt, &request.images)?);
        Ok(json!({"model": self.cfg.model, "messages": messages, "temperature": 0}))
    }

    fn send(&self, body: &Value) -> Result<String, (bool, VlmError)> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (true, VlmError::Provider(format!("request failed: {e}"))))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (
                true,
                VlmError::Provider(format!("reading reply failed: {e}")),
            )
        })?;
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            return Err((
                transient,
                VlmError::Provider(format!("HTTP {status}: {text}")),
            ));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| (false, VlmError::Provider(format!("bad reply JSON: {e}"))))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| {
                (
                    false,
                    VlmError::Provider("reply has no choices[0].message.content".into()),
                )
            })
    }
}

impl VlmProvider for HttpVlmProvider {
    fn provider_id(&self) -> &str {
        &self.cfg.provider_id
    }

    fn ask(&self, request: &VlmRequest<'_>) -> Result<VlmReply, VlmError> {
        let body = self.body(request)?;
        let mut attempt = 0;
        loop {
            match self.send(&body) {
                Ok(text) => {
                    let timestamp_ms = SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_millis() as u64)
                        .unwrap_or(0);
                    return Ok(VlmReply { text, timestamp_ms });
                }
                Err((true, e)) if attempt < RETRIES => {
                    log::debug!("{}: retrying after {e}", self.cfg.provider_id);
                    std::thread::sleep(BACKOFF * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }

    fn max_in_flight(&self) -> usize {
        self.cfg
            .max_in_flight
            .unwrap_or(DEFAULT_MAX_IN_FLIGHT)
            .max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::vlm::provider::{RequestKind, Turn};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn config(endpoint: &str) -> ProviderConfig {
        ProviderConfig {
            provider_id: "gpt-4o".into(),
            endpoint: endpoint.into(),
            model: "m".into(),
            auth_env: None,
            max_in_flight: Some(2),
            timeout_secs: Some(5),
        }
    }

    #[test]
    fn default_key_variable() {
        assert_eq!(config("x").key_variable(), "TRUSTSR_API_KEY_GPT_4O");
        let mut c = config("x");
        c.auth_env = Some("MY_KEY".into());
        assert_eq!(c.key_variable(), "MY_KEY");
    }

    #[test]
    fn body_carries_history_and_images() {
        let p = HttpVlmProvider::new(config("http://127.0.0.1:1")).unwrap();
        let img = Image::constant(4, 4, 0.5);
        let r = ImageRef {
            candidate_id: "secret-id",
            image: &img,
        };
        let req = VlmRequest {
            kind: RequestKind::Identify { prompt_index: 0 },
            prompt: "second".into(),
            images: vec![r],
            history: vec![Turn {
                prompt: "first".into(),
                images: vec![r, r],
                response: "ok".into(),
            }],
        };
        let body = p.body(&req).unwrap();
        let msgs = body["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 3);
        assert_eq!(msgs[0]["content"].as_array().unwrap().len(), 3);
        assert_eq!(msgs[1]["content"], "ok");
        assert!(!body.to_string().contains("secret-id"));
        let url = msgs[2]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
    }

    #[test]
    fn round_trip_against_a_local_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0usize, String::new());
            let mut line = String::new();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = format!(
                r#"{{"choices":[{{"message":{{"role":"assistant","content":"{}"}}}}]}}"#,
                if auth.ends_with("Bearer k123") {
                    "7"
                } else {
                    "no key"
                }
            );
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        });
        let mut cfg = config(&addr);
        cfg.auth_env = Some("TRUSTSR_TEST_HTTP_VLM_KEY".into());
        std::env::set_var("TRUSTSR_TEST_HTTP_VLM_KEY", "k123");
        let p = HttpVlmProvider::new(cfg).unwrap();
        let img = Image::constant(4, 4, 0.5);
        let reply = p
            .ask(&VlmRequest {
                kind: RequestKind::Identify { prompt_index: 0 },
                prompt: "What is the digit in this image?".into(),
                images: vec![ImageRef {
                    candidate_id: "a",
                    image: &img,
                }],
                history: vec![],
            })
            .unwrap();
        assert_eq!(reply.text, "7");
        assert!(reply.timestamp_ms > 0);
        assert_eq!(p.max_in_flight(), 2);
    }
}
