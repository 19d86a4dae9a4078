use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Capabilities, PairRequest, TeacherScorer};
use crate::corpus::{RelevanceLabel, SoftLabel};
use crate::error::{Error, Result};

/// Prompt text with `{query}`, `{rqa}`, `{title}`, `{brand}` and `{category}` placeholders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        Ok(PromptTemplate { id, text })
    }

    pub fn render(&self, req: &PairRequest<'_>) -> String {
        self.text
            .replace("{query}", &req.query.text)
            .replace("{rqa}", &req.rqa.map(|r| r.joined()).unwrap_or_default())
            .replace("{title}", &req.product.title)
            .replace("{brand}", &req.product.brand)
            .replace("{category}", &req.product.category)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            id: "default".into(),
            text: "Query: {query}\nRetrieved: {rqa}\nProduct: {title} (brand {brand}, category {category})\n\
                   Answer 0 (irrelevant), 1 (substitute) or 2 (exact match)."
                .into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteTeacherConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay; doubles after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for RemoteTeacherConfig {
    fn default() -> Self {
        RemoteTeacherConfig {
            endpoint: "http://127.0.0.1:8090/label".into(),
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

/// Teacher served by an HTTP endpoint speaking a small JSON protocol.
pub struct RemoteTeacher {
    config: RemoteTeacherConfig,
    template: PromptTemplate,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    query: &'a str,
    rqa: String,
    product_title: &'a str,
    brand: &'a str,
    category: &'a str,
    template_id: &'a str,
    prompt: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireResponse {
    Probs { p_e: f64, p_s: f64, p_i: f64 },
    Label { label: u8 },
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteTeacher {
    pub fn new(config: RemoteTeacherConfig, template: PromptTemplate) -> Result<Self> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(Error::validation(format!(
                "endpoint {:?} is not an http(s) URL",
                config.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteTeacher {
            config,
            template,
            agent,
        })
    }

    /// Converts a wire response into a soft label.
    ///
    /// A bare label `c` becomes 0.9 on class `c` and 0.05 on the others.
    pub fn parse_response(body: &serde_json::Value) -> std::result::Result<SoftLabel, String> {
        let resp: WireResponse = serde_json::from_value(body.clone())
            .map_err(|e| format!("unexpected response body {body}: {e}"))?;
        match resp {
            WireResponse::Probs { p_e, p_s, p_i } => {
                SoftLabel::new(p_e, p_s, p_i).map_err(|e| e.to_string())
            }
            WireResponse::Label { label } => {
                let label = RelevanceLabel::try_from(label).map_err(|e| e.to_string())?;
                let mut p = [0.05; 3];
                p[label.simplex_index()] = 0.9;
                SoftLabel::new(p[0], p[1], p[2]).map_err(|e| e.to_string())
            }
        }
    }

    fn attempt(&self, body: &WireRequest<'_>) -> std::result::Result<SoftLabel, Failure> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        let json: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(format!("unreadable response: {e}")))?;
        Self::parse_response(&json).map_err(Failure::Fatal)
    }
}

impl TeacherScorer for RemoteTeacher {
    fn identity(&self) -> String {
        let key = format!(
            "{}\u{0}{}\u{0}{}",
            self.config.endpoint, self.template.id, self.template.text
        );
        format!(
            "remote-{}",
            &hex::encode(Sha256::digest(key.as_bytes()))[..16]
        )
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            soft_label: true,
            cvr: false,
        }
    }

    fn soft_label(&self, req: &PairRequest<'_>) -> Result<SoftLabel> {
        let body = WireRequest {
            query: &req.query.text,
            rqa: req.rqa.map(|r| r.joined()).unwrap_or_default(),
            product_title: &req.product.title,
            brand: &req.product.brand,
            category: &req.product.category,
            template_id: &self.template.id,
            prompt: self.template.render(req),
        };
        let mut delay = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&body) {
                Ok(label) => return Ok(label),
                Err(Failure::Fatal(message)) => {
                    return Err(Error::Teacher {
                        pair_ids: vec![req.pair_id()],
                        message,
                    })
                }
                Err(Failure::Retryable(message)) => {
                    log::warn!(
                        "remote teacher attempt {} for {} failed: {message}",
                        attempt + 1,
                        req.pair_id()
                    );
                    last = message;
                }
            }
        }
        Err(Error::Teacher {
            pair_ids: vec![req.pair_id()],
            message: format!(
                "gave up after {} attempts: {last}",
                self.config.max_retries + 1
            ),
        })
    }
}
