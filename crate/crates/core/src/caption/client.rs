//! Client for an OpenAI-style chat-completion endpoint.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{CaptionError, CaptionJob};

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    /// Sent as a bearer token when present.
    pub token: Option<String>,
    pub model: String,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles on each further retry.
    pub backoff: Duration,
    pub timeout: Duration,
    pub temperature: f64,
    /// Upper bound on requests in flight.
    pub concurrency: usize,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            model: "meta-llama/Llama-3.1-8B-Instruct".into(),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            temperature: 0.0,
            concurrency: 4,
        }
    }

    fn check(&self) -> Result<(), CaptionError> {
        if self.url.trim().is_empty() {
            return Err(CaptionError::InvalidConfig("endpoint URL is empty".into()));
        }
        if self.max_attempts == 0 {
            return Err(CaptionError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(CaptionError::InvalidConfig("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

fn strip_fences(content: &str) -> &str {
    let t = content.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop an optional language tag on the opening fence.
    let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Pulls the caption out of a chat-completion response body.
pub fn extract_label(body: &str) -> Result<String, CaptionError> {
    let response: Value =
        serde_json::from_str(body).map_err(|e| CaptionError::MalformedResponse(format!("body is not JSON: {e}")))?;
    let content = response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| CaptionError::MalformedResponse("no choices[0].message.content string".into()))?;
    let inner: Value = serde_json::from_str(strip_fences(content))
        .map_err(|e| CaptionError::MalformedResponse(format!("assistant content is not JSON: {e}")))?;
    let Value::Object(map) = inner else {
        return Err(CaptionError::MalformedResponse("assistant content is not a JSON object".into()));
    };
    match map.get("label") {
        Some(Value::String(s)) => Ok(s.trim().to_owned()),
        Some(other) => Err(CaptionError::MalformedResponse(format!("label is not a string: {other}"))),
        None => Err(CaptionError::MissingLabelKey),
    }
}

enum Attempt {
    Done(Result<String, CaptionError>),
    Retry(CaptionError),
}

fn attempt(agent: &ureq::Agent, job: &CaptionJob, config: &EndpointConfig) -> Attempt {
    let body = json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": [
            {"role": "system", "content": job.system_message()},
            {"role": "user", "content": job.user_message()},
        ],
    });
    let mut request = agent.post(&config.url);
    if let Some(token) = &config.token {
        request = request.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = match request.send_json(&body) {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(CaptionError::EndpointUnreachable(format!("{}: {e}", config.url))),
    };
    let status = response.status().as_u16();
    let text = match response.body_mut().read_to_string() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(CaptionError::EndpointUnreachable(format!("reading body: {e}"))),
    };
    match status {
        200..=299 => match extract_label(&text) {
            Ok(label) => Attempt::Done(Ok(label)),
            Err(e) => Attempt::Retry(e),
        },
        429 | 500..=599 => Attempt::Retry(CaptionError::EndpointUnreachable(format!("HTTP {status}"))),
        _ => Attempt::Done(Err(CaptionError::MalformedResponse(format!(
            "HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        )))),
    }
}

fn agent(config: &EndpointConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn request_with(agent: &ureq::Agent, job: &CaptionJob, config: &EndpointConfig) -> Result<String, CaptionError> {
    let mut delay = config.backoff;
    let mut last = None;
    for n in 0..config.max_attempts {
        if n > 0 {
            std::thread::sleep(delay);
            delay = delay.saturating_mul(2);
        }
        match attempt(agent, job, config) {
            Attempt::Done(result) => return result,
            Attempt::Retry(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Sends one job, retrying transport failures, 429/5xx responses, malformed
/// content and a missing label up to `max_attempts` times. The last error
/// is returned.
pub fn request_caption(job: &CaptionJob, config: &EndpointConfig) -> Result<String, CaptionError> {
    config.check()?;
    request_with(&agent(config), job, config)
}

/// Runs jobs with at most `config.concurrency` requests in flight. Results
/// come back in job order.
pub fn request_captions(jobs: &[CaptionJob], config: &EndpointConfig) -> Vec<Result<String, CaptionError>> {
    if let Err(e) = config.check() {
        let msg = e.to_string();
        return jobs.iter().map(|_| Err(CaptionError::InvalidConfig(msg.clone()))).collect();
    }
    let agent = agent(config);
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<String, CaptionError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..config.concurrency.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = request_with(&agent, job, config);
                *results[i].lock().expect("no panics while holding the lock") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("not poisoned").expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chat(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn label_extraction() {
        assert_eq!(extract_label(&chat(r#"{"label": "The product is X."}"#)).unwrap(), "The product is X.");
        assert_eq!(
            extract_label(&chat("```json\n{\"label\": \"The product is Y.\"}\n```")).unwrap(),
            "The product is Y."
        );
        assert!(matches!(extract_label(&chat(r#"{"caption": "x"}"#)), Err(CaptionError::MissingLabelKey)));
        assert!(matches!(extract_label(&chat("not json")), Err(CaptionError::MalformedResponse(_))));
        assert!(matches!(extract_label(&chat(r#"{"label": 3}"#)), Err(CaptionError::MalformedResponse(_))));
        assert!(matches!(extract_label("<html>"), Err(CaptionError::MalformedResponse(_))));
        assert!(matches!(extract_label(r#"{"choices": []}"#), Err(CaptionError::MalformedResponse(_))));
    }

    #[test]
    fn fences() {
        assert_eq!(strip_fences("```\n{}\n```"), "{}");
        assert_eq!(strip_fences("  {}  "), "{}");
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://127.0.0.1:9");
        c.max_attempts = 0;
        assert!(matches!(c.check(), Err(CaptionError::InvalidConfig(_))));
        assert!(EndpointConfig::new("").check().is_err());
    }
}
