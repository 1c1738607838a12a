//! Provider configuration: named backends plus per-language-pair MT routing.
//! Credentials are referenced by environment-variable name only.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{HttpChat, HttpConfig, HttpEmbedder, HttpMt, LlmPromptMt};
use super::stub::{MtMode, StubChat, StubEmbedder, StubMt};
use super::{ChatProvider, EmbedderInfo, EmbeddingBackend, MtProvider};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum MtSpec {
    HttpMt {
        endpoint: String,
        #[serde(default)]
        credentials_env: Option<String>,
        #[serde(default)]
        languages: Option<Vec<String>>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    /// Translation through a configured chat provider.
    LlmPrompt { chat: String },
    Stub {
        #[serde(default)]
        identity: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum ChatSpec {
    Http {
        endpoint: String,
        #[serde(default)]
        credentials_env: Option<String>,
        #[serde(default)]
        remote_model: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    Stub {
        #[serde(default)]
        fixed: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub dimensionality: usize,
    pub multilingual: bool,
    #[serde(flatten)]
    pub backend: EmbedBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum EmbedBackend {
    Http {
        endpoint: String,
        #[serde(default)]
        credentials_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    Stub,
}

/// Routes a language pair to a named MT provider. `None` matches any language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    #[serde(default)]
    pub src: Option<String>,
    #[serde(default)]
    pub tgt: Option<String>,
    pub provider: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub mt: BTreeMap<String, MtSpec>,
    #[serde(default)]
    pub chat: BTreeMap<String, ChatSpec>,
    #[serde(default)]
    pub embedders: BTreeMap<String, EmbedderSpec>,
    /// First matching route wins; the last entry is usually a catch-all.
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
}

impl ProvidersConfig {
    /// Every model and embedder of the reference design backed by stubs.
    pub fn all_stub(models: &[&str], embedders: &[(&str, bool)]) -> Self {
        let mut c = ProvidersConfig::default();
        c.mt.insert("stub-mt".into(), MtSpec::Stub { identity: false });
        for m in models {
            c.chat.insert(m.to_string(), ChatSpec::Stub { fixed: None });
        }
        for (id, multilingual) in embedders {
            c.embedders.insert(
                id.to_string(),
                EmbedderSpec {
                    dimensionality: 64,
                    multilingual: *multilingual,
                    backend: EmbedBackend::Stub,
                },
            );
        }
        c.routes.push(RouteSpec {
            src: None,
            tgt: None,
            provider: "stub-mt".into(),
        });
        c
    }

    /// Names of providers whose backend is not a stub.
    pub fn remote_providers(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, v) in &self.mt {
            if !matches!(v, MtSpec::Stub { .. }) {
                out.push(format!("mt:{k}"));
            }
        }
        for (k, v) in &self.chat {
            if !matches!(v, ChatSpec::Stub { .. }) {
                out.push(format!("chat:{k}"));
            }
        }
        for (k, v) in &self.embedders {
            if !matches!(v.backend, EmbedBackend::Stub) {
                out.push(format!("embedder:{k}"));
            }
        }
        out
    }
}

fn http_config(endpoint: &str, env: &Option<String>, timeout: Option<u64>) -> HttpConfig {
    HttpConfig {
        endpoint: endpoint.to_string(),
        credentials_env: env.clone(),
        timeout: Duration::from_secs(timeout.unwrap_or(60)),
    }
}

/// Instantiated providers.
#[derive(Clone, Default)]
pub struct Providers {
    pub mt: BTreeMap<String, Arc<dyn MtProvider>>,
    pub chat: BTreeMap<String, Arc<dyn ChatProvider>>,
    pub embedders: BTreeMap<String, Arc<dyn EmbeddingBackend>>,
    pub routes: Vec<RouteSpec>,
}

impl Providers {
    pub fn build(config: &ProvidersConfig) -> Result<Self> {
        let mut p = Providers {
            routes: config.routes.clone(),
            ..Default::default()
        };
        for (id, spec) in &config.chat {
            let chat: Arc<dyn ChatProvider> = match spec {
                ChatSpec::Http {
                    endpoint,
                    credentials_env,
                    remote_model,
                    timeout_secs,
                } => Arc::new(HttpChat::new(
                    id.clone(),
                    remote_model.clone(),
                    http_config(endpoint, credentials_env, *timeout_secs),
                )),
                ChatSpec::Stub { fixed: Some(s) } => Arc::new(StubChat::fixed(id.clone(), s.clone())),
                ChatSpec::Stub { fixed: None } => Arc::new(StubChat::rules(id.clone())),
            };
            p.chat.insert(id.clone(), chat);
        }
        for (id, spec) in &config.mt {
            let mt: Arc<dyn MtProvider> = match spec {
                MtSpec::HttpMt {
                    endpoint,
                    credentials_env,
                    languages,
                    timeout_secs,
                } => Arc::new(HttpMt::new(
                    id.clone(),
                    http_config(endpoint, credentials_env, *timeout_secs),
                    languages.clone(),
                )),
                MtSpec::LlmPrompt { chat } => {
                    let c = p
                        .chat
                        .get(chat)
                        .ok_or_else(|| Error::Invalid(format!("mt {id}: unknown chat provider {chat}")))?;
                    Arc::new(LlmPromptMt::new(id.clone(), c.clone()))
                }
                MtSpec::Stub { identity } => Arc::new(StubMt::new(
                    id.clone(),
                    if *identity { MtMode::Identity } else { MtMode::Tag },
                )),
            };
            p.mt.insert(id.clone(), mt);
        }
        for (id, spec) in &config.embedders {
            let e: Arc<dyn EmbeddingBackend> = match &spec.backend {
                EmbedBackend::Http {
                    endpoint,
                    credentials_env,
                    timeout_secs,
                } => Arc::new(HttpEmbedder::new(
                    EmbedderInfo {
                        embedder_id: id.clone(),
                        dimensionality: spec.dimensionality,
                        multilingual: spec.multilingual,
                    },
                    http_config(endpoint, credentials_env, *timeout_secs),
                )),
                EmbedBackend::Stub => Arc::new(StubEmbedder::new(
                    id.clone(),
                    spec.dimensionality,
                    spec.multilingual,
                )),
            };
            p.embedders.insert(id.clone(), e);
        }
        for r in &p.routes {
            if !p.mt.contains_key(&r.provider) {
                return Err(Error::Invalid(format!("route to unknown mt provider {}", r.provider)));
            }
        }
        Ok(p)
    }

    pub fn chat(&self, id: &str) -> Result<Arc<dyn ChatProvider>> {
        self.chat
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("unknown chat provider {id}")))
    }

    pub fn embedder(&self, id: &str) -> Result<Arc<dyn EmbeddingBackend>> {
        self.embedders
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("unknown embedder {id}")))
    }

    /// MT providers in route order, each paired with its route.
    pub fn mt_routes(&self) -> Vec<(RouteSpec, Arc<dyn MtProvider>)> {
        self.routes
            .iter()
            .map(|r| (r.clone(), self.mt[&r.provider].clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_build() {
        let c = ProvidersConfig::all_stub(&["gpt-4o"], &[("LaBSE", true), ("mpnet", false)]);
        let s = serde_json::to_string(&c).unwrap();
        let back: ProvidersConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let p = Providers::build(&c).unwrap();
        assert!(!p.embedder("mpnet").unwrap().info().multilingual);
        assert!(c.remote_providers().is_empty());
    }

    #[test]
    fn unknown_route_target() {
        let mut c = ProvidersConfig::default();
        c.routes.push(RouteSpec {
            src: None,
            tgt: None,
            provider: "missing".into(),
        });
        assert!(Providers::build(&c).is_err());
    }
}
