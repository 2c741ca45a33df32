//! OpenAI-compatible chat-completion backend.
//!
//! Images travel as base64 PNG data URIs. Transport failures and non-success
//! statuses are retried with a fixed backoff schedule before surfacing as
//! backend errors.

use std::io::Cursor;
use std::thread::sleep;
use std::time::Duration;

use afford_core::backends::{Grounder, GroundingRequest, LanguageModel, SelectionRequest, Selector};
use afford_core::{Error, Real, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const ENV_ENDPOINT: &str = "AFFORD_ENDPOINT";
pub const ENV_API_KEY: &str = "AFFORD_API_KEY";
pub const ENV_MODEL: &str = "AFFORD_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    /// Sleep before each retry; its length is the retry count.
    pub backoff_secs: Vec<f64>,
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout_secs: 120,
            backoff_secs: vec![1.0, 2.0],
        }
    }

    /// Reads endpoint, key and model from the environment.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let endpoint = var(ENV_ENDPOINT)
            .ok_or_else(|| Error::Validation(format!("{ENV_ENDPOINT} is not set")))?;
        let model =
            var(ENV_MODEL).ok_or_else(|| Error::Validation(format!("{ENV_MODEL} is not set")))?;
        let mut config = ChatConfig::new(endpoint, model);
        config.api_key = var(ENV_API_KEY);
        Ok(config)
    }

    pub fn attempts(&self) -> u32 {
        self.backoff_secs.len() as u32 + 1
    }
}

pub fn png_data_uri(img: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    format!("data:image/png;base64,{}", STANDARD.encode(buf.into_inner()))
}

/// Request body for one chat completion.
pub fn chat_body(model: &str, system: &str, user: &str, images: &[RgbImage]) -> Value {
    let mut content = vec![json!({"type": "text", "text": user})];
    content.extend(
        images
            .iter()
            .map(|img| json!({"type": "image_url", "image_url": {"url": png_data_uri(img)}})),
    );
    let mut messages = Vec::new();
    if !system.is_empty() {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": content}));
    json!({"model": model, "messages": messages, "temperature": 0})
}

/// Text of the first choice of a chat-completion response body.
pub fn response_text(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| Error::Parse { message: format!("response is not JSON: {e}"), raw: body.into(), offset: None })?;
    let content = &v["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Ok(s.to_string());
    }
    // Some servers return content as a list of typed parts.
    if let Some(parts) = content.as_array() {
        let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        if !text.is_empty() {
            return Ok(text);
        }
    }
    Err(Error::Parse {
        message: "response has no choices[0].message.content".into(),
        raw: body.into(),
        offset: None,
    })
}

pub struct ChatClient {
    config: ChatConfig,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend { attempts: 0, message: format!("HTTP client setup: {e}") })?;
        Ok(ChatClient { config, http })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    fn send_once(&self, body: &Value) -> std::result::Result<String, String> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("reading body: {e}"))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))
        }
    }

    /// One completion, retried on transport failures and error statuses.
    pub fn chat(&self, system: &str, user: &str, images: &[RgbImage]) -> Result<String> {
        let body = chat_body(&self.config.model, system, user, images);
        let attempts = self.config.attempts();
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.send_once(&body) {
                Ok(text) => return response_text(&text),
                Err(e) => {
                    warn!("chat attempt {attempt}/{attempts} failed: {e}");
                    last = e;
                }
            }
            if let Some(&secs) = self.config.backoff_secs.get(attempt as usize - 1) {
                debug!("retrying in {secs}s");
                sleep(Duration::from_secs_f64(secs));
            }
        }
        Err(Error::Backend { attempts, message: last })
    }
}

impl LanguageModel for ChatClient {
    fn complete(&self, system: &str, user: &str, images: &[RgbImage]) -> Result<String> {
        self.chat(system, user, images)
    }
}

impl<T: Real> Grounder<T> for ChatClient {
    /// Exemplar overlays first, query frame last.
    fn respond(&self, request: &GroundingRequest<'_, T>) -> Result<String> {
        let mut images: Vec<RgbImage> = request.exemplars.iter().map(|e| e.overlay.clone()).collect();
        images.push(request.query_frame.rgb.clone());
        self.chat("", &request.prompt(), &images)
    }
}

impl Selector for ChatClient {
    /// Top-down map first, then one crop per candidate in answer order.
    fn respond(&self, request: &SelectionRequest) -> Result<String> {
        let mut images = vec![request.topdown_render.clone()];
        images.extend(request.candidate_ids.iter().filter_map(|id| request.node_crops.get(id).cloned()));
        self.chat("", &request.prompt(), &images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_carries_images_as_data_uris() {
        let body = chat_body("m", "sys", "hi", &[RgbImage::new(2, 2)]);
        assert_eq!(body["messages"][0]["role"], "system");
        let url = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
        assert!(url.starts_with("data:image/png;base64,iVBOR"));
        let no_sys = chat_body("m", "", "hi", &[]);
        assert_eq!(no_sys["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn response_text_variants() {
        let plain = r#"{"choices":[{"message":{"content":"2"}}]}"#;
        assert_eq!(response_text(plain).unwrap(), "2");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(response_text(parts).unwrap(), "ab");
        assert!(matches!(response_text("{}"), Err(Error::Parse { .. })));
    }
}
