//! Clients for the JSON wire protocol.
//!
//! ```text
//! POST {endpoint}/embed  {"texts": [..]}                    -> {"vectors": [[..], ..], "dimension": d}
//! POST {endpoint}/vqa    {"image_b64": "..", "questions": [..]} -> {"answers": [..]}
//! ```

use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{
    check_cardinality, check_texts, Answerer, AnswererDescriptor, BackendError, Embedder,
    EmbedderDescriptor, SceneImageRef,
};
use crate::metric::EmbeddingVector;

/// Exponential backoff on transport failures only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    /// Sent as `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            bearer_token: None,
            retry: RetryPolicy::default(),
        }
    }
}

struct JsonClient {
    agent: ureq::Agent,
    options: HttpOptions,
}

impl JsonClient {
    fn new(options: HttpOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, options }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let payload = serde_json::to_string(body)
            .map_err(|e| BackendError::InvalidRequest(format!("cannot encode request: {e}")))?;
        self.options.retry.run(|| {
            let mut request = self
                .agent
                .post(url)
                .header("content-type", "application/json; charset=utf-8");
            if let Some(token) = &self.options.bearer_token {
                request = request.header("authorization", format!("Bearer {token}"));
            }
            let mut response = request.send(payload.as_str()).map_err(classify)?;
            let status = response.status().as_u16();
            let text = response.body_mut().read_to_string().map_err(classify)?;
            match status {
                200..=299 => serde_json::from_str(&text)
                    .map_err(|e| BackendError::Malformed(format!("{url}: {e}"))),
                408 | 429 | 500..=599 => {
                    Err(BackendError::Transport(format!("{url}: HTTP {status}")))
                }
                _ => Err(BackendError::Rejected { status, body: text }),
            }
        })
    }
}

fn classify(err: ureq::Error) -> BackendError {
    use ureq::Error as E;
    match err {
        E::BadUri(_) | E::Http(_) | E::RequireHttpsOnly(_) => {
            BackendError::InvalidRequest(err.to_string())
        }
        E::Decompress(..) | E::BodyExceedsLimit(_) => BackendError::Malformed(err.to_string()),
        other => BackendError::Transport(other.to_string()),
    }
}

fn join(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dimension: usize,
}

pub struct HttpEmbedder {
    descriptor: EmbedderDescriptor,
    url: String,
    client: JsonClient,
}

impl HttpEmbedder {
    /// `descriptor.endpoint` must be set.
    pub fn new(descriptor: EmbedderDescriptor, options: HttpOptions) -> Result<Self, BackendError> {
        let endpoint = descriptor
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::InvalidRequest("embedder endpoint is not set".into()))?;
        let url = join(endpoint, "embed");
        Ok(Self {
            descriptor,
            url,
            client: JsonClient::new(options),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_texts(texts, "text")?;
        let response: EmbedResponse = self.client.post(&self.url, &EmbedRequest { texts })?;
        let expected = self.descriptor.dimension;
        if response.dimension != expected {
            return Err(BackendError::Dimension {
                index: 0,
                expected,
                found: response.dimension,
            });
        }
        check_cardinality(texts.len(), response.vectors.len())?;
        response
            .vectors
            .into_iter()
            .enumerate()
            .map(|(index, values)| {
                if values.len() != expected {
                    return Err(BackendError::Dimension {
                        index,
                        expected,
                        found: values.len(),
                    });
                }
                EmbeddingVector::new(values)
                    .map_err(|e| BackendError::Malformed(format!("vector {index}: {e}")))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct VqaRequest<'a> {
    image_b64: String,
    questions: &'a [String],
}

#[derive(Deserialize)]
struct VqaResponse {
    answers: Vec<String>,
}

pub struct HttpAnswerer {
    descriptor: AnswererDescriptor,
    url: String,
    client: JsonClient,
}

impl HttpAnswerer {
    /// `descriptor.endpoint` must be set.
    pub fn new(descriptor: AnswererDescriptor, options: HttpOptions) -> Result<Self, BackendError> {
        let endpoint = descriptor
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::InvalidRequest("answerer endpoint is not set".into()))?;
        let url = join(endpoint, "vqa");
        Ok(Self {
            descriptor,
            url,
            client: JsonClient::new(options),
        })
    }
}

impl Answerer for HttpAnswerer {
    fn descriptor(&self) -> &AnswererDescriptor {
        &self.descriptor
    }

    fn answer_questions(
        &self,
        image: &SceneImageRef,
        questions: &[String],
    ) -> Result<Vec<String>, BackendError> {
        check_texts(questions, "question")?;
        let bytes = std::fs::read(&image.locator).map_err(|e| BackendError::UnresolvableImage {
            locator: image.locator.clone(),
            reason: e.to_string(),
        })?;
        let request = VqaRequest {
            image_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
            questions,
        };
        let response: VqaResponse = self.client.post(&self.url, &request)?;
        check_cardinality(questions.len(), response.answers.len())?;
        if let Some(i) = response.answers.iter().position(|a| a.trim().is_empty()) {
            return Err(BackendError::Malformed(format!("answer {i} is empty")));
        }
        Ok(response.answers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn retries_transport_failures_up_to_the_limit() {
        let calls = Cell::new(0);
        let result: Result<(), _> = fast().run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Transport("down".into()))
        });
        assert!(matches!(result, Err(BackendError::Transport(_))));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let calls = Cell::new(0);
        let result = fast().run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(BackendError::Transport("blip".into()))
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn never_retries_malformed_responses() {
        let calls = Cell::new(0);
        let result: Result<(), _> = fast().run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Malformed("garbage".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn default_policy_matches_contract() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_attempts, 3);
        assert_eq!(p.base_delay, Duration::from_millis(250));
        assert_eq!(HttpOptions::default().timeout, Duration::from_secs(30));
    }

    #[test]
    fn endpoint_is_required_and_joined() {
        let d = EmbedderDescriptor::new("e", 4).unwrap();
        assert!(HttpEmbedder::new(d.clone(), HttpOptions::default()).is_err());
        let e = HttpEmbedder::new(d.with_endpoint("http://h:1/"), HttpOptions::default()).unwrap();
        assert_eq!(e.url, "http://h:1/embed");
    }
}
