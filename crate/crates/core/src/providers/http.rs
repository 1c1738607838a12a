//! HTTP backends.
//!
//! * [`HttpMt`]: `POST {text, source_lang, target_lang}` → `{translation}`.
//! * [`HttpChat`]: OpenAI-compatible `chat/completions` endpoint.
//! * [`HttpEmbedder`]: `POST {texts: [...]}` → `{vectors: [[...]]}`.
//!
//! Credentials are read from a named environment variable at call time and
//! sent as a bearer token; they are never stored.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbedderInfo, EmbeddingBackend, MtProvider, ProviderError};
use crate::prompts;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .new_agent()
}

fn bearer(env_var: Option<&str>) -> Result<Option<String>, ProviderError> {
    match env_var {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(|v| Some(format!("Bearer {v}")))
            .map_err(|_| ProviderError::MissingCredential(var.to_string())),
    }
}

fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    endpoint: &str,
    credentials_env: Option<&str>,
    body: &B,
) -> Result<R, ProviderError> {
    let mut req = agent.post(endpoint).header("Content-Type", "application/json");
    if let Some(auth) = bearer(credentials_env)? {
        req = req.header("Authorization", auth);
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if status >= 400 {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(ProviderError::Status { status, body });
    }
    resp.body_mut()
        .read_json::<R>()
        .map_err(|e| ProviderError::BadResponse(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub credentials_env: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            credentials_env: None,
            timeout: Duration::from_secs(60),
        }
    }
}

pub struct HttpMt {
    id: String,
    config: HttpConfig,
    /// Supported languages; `None` accepts every pair.
    languages: Option<Vec<String>>,
    agent: ureq::Agent,
}

impl HttpMt {
    pub fn new(id: impl Into<String>, config: HttpConfig, languages: Option<Vec<String>>) -> Self {
        let agent = agent(config.timeout);
        HttpMt {
            id: id.into(),
            config,
            languages,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct MtResponse {
    translation: String,
}

impl MtProvider for HttpMt {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        match &self.languages {
            None => true,
            Some(l) => l.iter().any(|x| x == src) && l.iter().any(|x| x == tgt),
        }
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        let r: MtResponse = post_json(
            &self.agent,
            &self.config.endpoint,
            self.config.credentials_env.as_deref(),
            &json!({"text": text, "source_lang": src, "target_lang": tgt}),
        )?;
        Ok(r.translation)
    }
}

pub struct HttpChat {
    model_id: String,
    /// Model name sent on the wire; defaults to `model_id`.
    remote_model: String,
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(model_id: impl Into<String>, remote_model: Option<String>, config: HttpConfig) -> Self {
        let model_id = model_id.into();
        let agent = agent(config.timeout);
        HttpChat {
            remote_model: remote_model.unwrap_or_else(|| model_id.clone()),
            model_id,
            config,
            agent,
        }
    }
}

impl ChatProvider for HttpChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.remote_model,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let p = &request.params;
        if let Some(t) = p.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = p.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if let Some(s) = p.seed {
            body["seed"] = json!(s);
        }
        let v: Value = post_json(
            &self.agent,
            &self.config.endpoint,
            self.config.credentials_env.as_deref(),
            &body,
        )?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))
    }
}

pub struct HttpEmbedder {
    info: EmbedderInfo,
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(info: EmbedderInfo, config: HttpConfig) -> Self {
        let agent = agent(config.timeout);
        HttpEmbedder { info, config, agent }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl EmbeddingBackend for HttpEmbedder {
    fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let r: EmbedResponse = post_json(
            &self.agent,
            &self.config.endpoint,
            self.config.credentials_env.as_deref(),
            &json!({"texts": texts}),
        )?;
        if r.vectors.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} vectors for {} texts",
                r.vectors.len(),
                texts.len()
            )));
        }
        Ok(r.vectors)
    }
}

/// Machine translation through a chat model using the fixed translation prompt.
pub struct LlmPromptMt {
    id: String,
    chat: Arc<dyn ChatProvider>,
}

impl LlmPromptMt {
    pub fn new(id: impl Into<String>, chat: Arc<dyn ChatProvider>) -> Self {
        LlmPromptMt { id: id.into(), chat }
    }
}

impl MtProvider for LlmPromptMt {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports(&self, _src: &str, _tgt: &str) -> bool {
        true
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        let prompt = prompts::TRANSLATE
            .render(&[
                ("origin_lang", &language_name(src)),
                ("target_lang", &language_name(tgt)),
                ("TEXT", text),
            ])
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let out = self.chat.complete(&ChatRequest::new(prompt))?;
        Ok(out.trim().to_string())
    }
}

/// English name for a language code, falling back to the code itself.
pub fn language_name(code: &str) -> String {
    crate::corpus::reference::languages()
        .into_iter()
        .find(|l| l.language_code == code)
        .map(|l| l.display_name)
        .unwrap_or_else(|| code.to_string())
}
