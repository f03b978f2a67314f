use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::config::KvConfig;
use crate::context::ContextVector;
use crate::error::{Error, Result};

/// What a provider sees for one node.
#[derive(Clone, Copy, Debug)]
pub struct ExplainRequest<'a> {
    pub prompt: &'a str,
    pub context: &'a ContextVector,
    pub pred: &'a str,
    pub truth: Option<&'a str>,
}

pub trait Provider: Sync {
    /// Identifier stored with every record.
    fn id(&self) -> String;

    fn model(&self) -> Option<&str> {
        None
    }

    fn generate(&self, req: &ExplainRequest<'_>) -> Result<String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    Offline,
    Remote,
}

/// Request and response shape of a remote endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adapter {
    /// `{"model", "prompt"}` in, `{"text" | "completion" | "response"}` out.
    Simple,
    /// Chat-completions style: `messages` in, `choices[0].message.content` out.
    OpenAiChat,
}

impl FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" | "offline-template" => Ok(Self::Offline),
            "remote" | "remote-api" => Ok(Self::Remote),
            other => Err(Error::Config(format!("unknown provider `{other}`"))),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Offline => "offline",
            Self::Remote => "remote",
        })
    }
}

impl FromStr for Adapter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "openai-chat" => Ok(Self::OpenAiChat),
            other => Err(Error::Config(format!("unknown adapter `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout: Duration,
    pub max_retries: usize,
    /// First retry delay; doubled after every failed attempt.
    pub backoff: Duration,
    pub adapter: Adapter,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::offline()
    }
}

impl ProviderConfig {
    pub fn offline() -> Self {
        Self {
            kind: ProviderKind::Offline,
            endpoint: None,
            model: None,
            token_env: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            adapter: Adapter::Simple,
            concurrency: 1,
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::offline()
        }
    }

    /// Reads `provider`, `endpoint`, `model`, `token_env`, `timeout_s`,
    /// `max_retries`, `backoff_ms`, `adapter` and `concurrency`.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::offline();
        let cfg = Self {
            kind: kv.get_or("provider", d.kind)?,
            endpoint: kv.get("endpoint")?,
            model: kv.get("model")?,
            token_env: kv.get("token_env")?,
            timeout: Duration::from_secs_f64(kv.get_or("timeout_s", d.timeout.as_secs_f64())?),
            max_retries: kv.get_or("max_retries", d.max_retries)?,
            backoff: Duration::from_millis(kv.get_or("backoff_ms", d.backoff.as_millis() as u64)?),
            adapter: kv.get_or("adapter", d.adapter)?,
            concurrency: kv.get_or("concurrency", d.concurrency)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(Error::Config("provider concurrency must be at least 1".into()));
        }
        if self.kind == ProviderKind::Remote {
            if self.endpoint.is_none() {
                return Err(Error::Config("remote provider needs an endpoint".into()));
            }
            if self.model.is_none() {
                return Err(Error::Config("remote provider needs a model name".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Provider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Offline => Box::new(OfflineProvider),
            ProviderKind::Remote => Box::new(RemoteProvider::new(self.clone())?),
        })
    }
}

/// One-shot convenience around [`ProviderConfig::build`].
pub fn generate_explanation(req: &ExplainRequest<'_>, provider: &ProviderConfig) -> Result<String> {
    provider.build()?.generate(req)
}

/// Deterministic self-narration filled from the context values.
#[derive(Clone, Copy, Debug, Default)]
pub struct OfflineProvider;

pub const OFFLINE_ID: &str = "offline-template";

impl Provider for OfflineProvider {
    fn id(&self) -> String {
        OFFLINE_ID.into()
    }

    fn generate(&self, req: &ExplainRequest<'_>) -> Result<String> {
        Ok(offline_narration(req.context, req.pred, req.truth))
    }
}

fn offline_narration(ctx: &ContextVector, pred: &str, truth: Option<&str>) -> String {
    let f = |v: f64| format!("{v:.3}");
    let wrong = truth.is_some_and(|t| t != pred);
    let mut s = match truth {
        Some(t) if wrong => format!(
            "I predicted that I was representing the '{pred}' class, but my true label is '{t}'. Let's reflect on this."
        ),
        Some(_) => format!("I predicted that I belong to the '{pred}' class, which matches my true label."),
        None => format!("I predicted that I belong to the '{pred}' class."),
    };
    let reach = match ctx.degree {
        0 => "I'm isolated from the rest of the graph",
        1..=2 => "I'm sparsely connected",
        3..=6 => "I'm moderately connected",
        _ => "I'm highly connected",
    };
    s.push_str(&format!(" I have a degree of {}, meaning {reach}.", ctx.degree));
    let cohesion = if ctx.clustering >= 0.5 {
        "my neighbors are well connected to each other"
    } else if ctx.clustering > 0.0 {
        "my neighbors are only loosely connected to each other"
    } else {
        "my neighbors are not connected to each other"
    };
    s.push_str(&format!(" My clustering coefficient is {}, which shows {cohesion}.", f(ctx.clustering)));
    let strength = if ctx.avg_edge_weight >= 0.8 {
        "strong"
    } else if ctx.avg_edge_weight >= 0.5 {
        "moderate"
    } else {
        "weak"
    };
    s.push_str(&format!(
        " My average edge weight is {}, indicating {strength} similarity to my neighbors",
        f(ctx.avg_edge_weight)
    ));
    s.push_str(if wrong && strength == "strong" {
        ", which might have biased my prediction."
    } else {
        "."
    });
    if let Some((idx, val)) = ctx.top_feature {
        let feat = format!("F[{idx}] = {val:.3}");
        match truth {
            Some(t) if wrong => s.push_str(&format!(
                " My top feature ({feat}) may be distinctive for '{t}', but it was likely overridden by neighborhood influence."
            )),
            _ => s.push_str(&format!(" My top feature ({feat}) supports the '{pred}' pattern.")),
        }
    }
    s.push_str(&format!(
        " Among labeled nodes within two hops, {} share my label.",
        f(ctx.two_hop_agreement)
    ));
    s.push_str(&format!(
        " I belong to community {} with eigenvector centrality {} and betweenness centrality {}.",
        ctx.community,
        f(ctx.eigencentrality),
        f(ctx.betweenness)
    ));
    s.push_str(if wrong {
        " This misclassification suggests that structural signals outweighed my own features."
    } else {
        " My structure and features are consistent with this prediction."
    });
    s
}

/// HTTP provider with bearer auth and exponential backoff.
pub struct RemoteProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl RemoteProvider {
    /// Resolves the token from the configured environment variable.
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let token = match &config.token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent, token })
    }

    fn body(&self, prompt: &str) -> Value {
        let model = self.config.model.as_deref().unwrap_or_default();
        match self.config.adapter {
            Adapter::Simple => json!({ "model": model, "prompt": prompt }),
            Adapter::OpenAiChat => json!({
                "model": model,
                "messages": [{ "role": "user", "content": prompt }],
            }),
        }
    }

    fn extract(&self, v: &Value) -> Option<String> {
        let text = match self.config.adapter {
            Adapter::Simple => ["text", "completion", "response"].iter().find_map(|k| v.get(k)?.as_str()),
            Adapter::OpenAiChat => v.pointer("/choices/0/message/content").and_then(Value::as_str),
        };
        text.map(str::to_string)
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteProvider {
    fn attempt(&self, body: &str) -> std::result::Result<String, Attempt> {
        let url = self.config.endpoint.as_deref().unwrap_or_default();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(Attempt::Fatal(Error::ProviderAuth {
                    provider: self.id(),
                    status,
                }))
            }
            429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => {
                return Err(Attempt::Fatal(Error::Provider {
                    provider: self.id(),
                    attempts: 1,
                    cause: format!("HTTP {status}: {}", text.trim()),
                }))
            }
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(Error::Provider {
                provider: self.id(),
                attempts: 1,
                cause: format!("malformed response: {e}"),
            })
        })?;
        match self.extract(&v) {
            Some(t) if !t.trim().is_empty() => Ok(t),
            _ => Err(Attempt::Fatal(Error::ProviderEmpty(self.id()))),
        }
    }
}

impl Provider for RemoteProvider {
    fn id(&self) -> String {
        format!("remote:{}", self.config.endpoint.as_deref().unwrap_or_default())
    }

    fn model(&self) -> Option<&str> {
        self.config.model.as_deref()
    }

    fn generate(&self, req: &ExplainRequest<'_>) -> Result<String> {
        let body = self.body(req.prompt).to_string();
        let attempts = self.config.max_retries + 1;
        let mut delay = self.config.backoff;
        let mut cause = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(Error::Provider { provider, cause, .. })) => {
                    return Err(Error::Provider {
                        provider,
                        attempts: n,
                        cause,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(c)) => {
                    log::warn!("{} attempt {n}/{attempts} failed: {c}", self.id());
                    cause = c;
                    if n < attempts {
                        thread::sleep(delay);
                        delay = delay.saturating_mul(2);
                    }
                }
            }
        }
        Err(Error::Provider {
            provider: self.id(),
            attempts,
            cause,
        })
    }
}

#[cfg(test)]
mod mock {
    //! A tiny HTTP server answering from a fixed script of responses.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct MockServer {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl MockServer {
        /// Serves `script` in order, one response per connection.
        pub fn start(script: Vec<(u16, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}/v1/generate", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let seen = requests.clone();
            let handle = std::thread::spawn(move || {
                for (status, body) in script {
                    let (mut stream, _) = listener.accept().unwrap();
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut head = String::new();
                    let mut len = 0;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                        head.push_str(&line);
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                    }
                    let mut buf = vec![0; len];
                    reader.read_exact(&mut buf).unwrap();
                    head.push_str(&String::from_utf8_lossy(&buf));
                    seen.lock().unwrap().push(head);
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(reply.as_bytes()).unwrap();
                }
            });
            Self {
                url,
                requests,
                handle: Some(handle),
            }
        }

        pub fn join(mut self) -> Vec<String> {
            self.handle.take().unwrap().join().unwrap();
            self.requests.lock().unwrap().clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::MockServer;
    use super::*;

    fn ctx() -> ContextVector {
        ContextVector {
            degree: 4,
            clustering: 0.0,
            two_hop_agreement: 0.5,
            eigencentrality: 0.12,
            betweenness: 0.01,
            avg_edge_weight: 0.929,
            community: 1,
            top_feature: Some((117, 10.0)),
        }
    }

    fn req<'a>(c: &'a ContextVector, pred: &'a str, truth: Option<&'a str>) -> ExplainRequest<'a> {
        ExplainRequest {
            prompt: "hello",
            context: c,
            pred,
            truth,
        }
    }

    fn fast(url: &str) -> ProviderConfig {
        ProviderConfig {
            backoff: Duration::from_millis(1),
            max_retries: 2,
            ..ProviderConfig::remote(url, "tiny-model")
        }
    }

    #[test]
    fn offline_variants() {
        let c = ctx();
        let right = OfflineProvider.generate(&req(&c, "liver", Some("liver"))).unwrap();
        assert!(right.contains("degree of 4") && right.contains("'liver'"));
        assert!(!right.contains("true label is"));
        let wrong = OfflineProvider.generate(&req(&c, "femur-left", Some("kidney-right"))).unwrap();
        assert!(wrong.contains("'femur-left'") && wrong.contains("my true label is 'kidney-right'"));
        assert!(wrong.contains("0.929") && wrong.contains("F[117] = 10.000"));
        assert_eq!(wrong, OfflineProvider.generate(&req(&c, "femur-left", Some("kidney-right"))).unwrap());
    }

    #[test]
    fn remote_returns_completion() {
        let server = MockServer::start(vec![(200, r#"{"text":"I am a node."}"#.into())]);
        let p = RemoteProvider::new(fast(&server.url)).unwrap();
        let c = ctx();
        assert_eq!(p.generate(&req(&c, "a", None)).unwrap(), "I am a node.");
        assert_eq!(p.model(), Some("tiny-model"));
        let seen = server.join();
        assert!(seen[0].starts_with("POST /v1/generate"));
        assert!(seen[0].contains(r#""model":"tiny-model""#) && seen[0].contains(r#""prompt":"hello""#));
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let server = MockServer::start(vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, r#"{"choices":[{"message":{"content":"ok"}}]}"#.into()),
        ]);
        let cfg = ProviderConfig {
            adapter: Adapter::OpenAiChat,
            ..fast(&server.url)
        };
        let c = ctx();
        assert_eq!(RemoteProvider::new(cfg).unwrap().generate(&req(&c, "a", None)).unwrap(), "ok");
        assert!(server.join()[2].contains(r#""messages":[{"content":"hello","role":"user"}]"#));
    }

    #[test]
    fn remote_gives_up_after_retries() {
        let server = MockServer::start(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
        let c = ctx();
        let err = RemoteProvider::new(fast(&server.url)).unwrap().generate(&req(&c, "a", None)).unwrap_err();
        assert!(matches!(err, Error::Provider { attempts: 3, ref cause, .. } if cause == "HTTP 503"), "{err}");
        server.join();
    }

    #[test]
    fn remote_auth_and_empty() {
        let server = MockServer::start(vec![(401, "{}".into()), (200, r#"{"text":"  "}"#.into())]);
        let p = RemoteProvider::new(fast(&server.url)).unwrap();
        let c = ctx();
        assert!(matches!(p.generate(&req(&c, "a", None)), Err(Error::ProviderAuth { status: 401, .. })));
        assert!(matches!(p.generate(&req(&c, "a", None)), Err(Error::ProviderEmpty(_))));
        server.join();
    }

    #[test]
    fn bearer_token_from_environment() {
        let server = MockServer::start(vec![(200, r#"{"completion":"fine"}"#.into())]);
        std::env::set_var("XNODE_TEST_TOKEN_A", "s3cret");
        let cfg = ProviderConfig {
            token_env: Some("XNODE_TEST_TOKEN_A".into()),
            ..fast(&server.url)
        };
        let c = ctx();
        assert_eq!(generate_explanation(&req(&c, "a", None), &cfg).unwrap(), "fine");
        assert!(server.join()[0].to_ascii_lowercase().contains("authorization: bearer s3cret"));
        let missing = ProviderConfig {
            token_env: Some("XNODE_TEST_TOKEN_UNSET".into()),
            ..fast("http://127.0.0.1:9")
        };
        assert!(matches!(RemoteProvider::new(missing), Err(Error::Config(_))));
    }

    #[test]
    fn config_parsing() {
        let kv = KvConfig::parse("provider = remote\nendpoint = http://x\nmodel = m\nadapter = openai-chat\n", None).unwrap();
        let cfg = ProviderConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.adapter, Adapter::OpenAiChat);
        let kv = KvConfig::parse("provider = remote\n", None).unwrap();
        assert!(ProviderConfig::from_kv(&kv).is_err());
        assert_eq!(ProviderConfig::from_kv(&KvConfig::default()).unwrap(), ProviderConfig::offline());
    }
}
