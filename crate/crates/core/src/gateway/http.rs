use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, ErrorBody};
use super::{
    AttentionRequest, Backend, Capability, Completion, Decoding, ExtractionRequest, ForcedLogprobs,
    GatewayEndpoint, GatewayError, GenerationConfig, NliVerdict,
};

/// Counting semaphore bounding requests in flight.
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("in-flight lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("in-flight lock poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("in-flight lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// [`Backend`] over the `/v1` HTTP+JSON protocol.
pub struct HttpBackend {
    endpoint: GatewayEndpoint,
    client: Client,
    in_flight: InFlight,
    capabilities: Mutex<Option<Vec<Capability>>>,
}

impl HttpBackend {
    pub fn new(endpoint: GatewayEndpoint) -> Result<Self, GatewayError> {
        endpoint.validate().map_err(GatewayError::InvalidRequest)?;
        let client = Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| GatewayError::Transport(format!("cannot build HTTP client: {e}")))?;
        let in_flight = InFlight::new(endpoint.max_in_flight);
        Ok(Self {
            endpoint,
            client,
            in_flight,
            capabilities: Mutex::new(None),
        })
    }

    pub fn endpoint(&self) -> &GatewayEndpoint {
        &self.endpoint
    }

    fn url(&self, route: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), route)
    }

    fn call<Req, Resp>(&self, route: &str, cap: Capability, body: &Req, retryable: bool) -> Result<Resp, GatewayError>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let attempts = if retryable { self.endpoint.retries + 1 } else { 1 };
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
            }
            match self.call_once(route, cap, body) {
                Err(e) if e.is_retryable() => {
                    tracing::debug!(route, attempt, error = %e, "retrying gateway call");
                    last = Some(e);
                }
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn call_once<Req, Resp>(&self, route: &str, cap: Capability, body: &Req) -> Result<Resp, GatewayError>
    where
        Req: Serialize + ?Sized,
        Resp: DeserializeOwned,
    {
        let _permit = self.in_flight.acquire();
        let mut req = self.client.post(self.url(route)).json(body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        decode(resp, cap)
    }
}

fn decode<Resp: DeserializeOwned>(resp: reqwest::blocking::Response, cap: Capability) -> Result<Resp, GatewayError> {
    let status = resp.status();
    let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
    if status.is_success() {
        return serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()));
    }
    let message = serde_json::from_str::<ErrorBody>(&text)
        .map(|b| b.error.message)
        .unwrap_or(text);
    Err(match status {
        StatusCode::NOT_FOUND | StatusCode::NOT_IMPLEMENTED => GatewayError::CapabilityMissing(cap),
        StatusCode::BAD_REQUEST | StatusCode::UNPROCESSABLE_ENTITY => GatewayError::InvalidRequest(message),
        s if s.is_server_error() => GatewayError::Transport(format!("status {}: {message}", s.as_u16())),
        s => GatewayError::BackendRefused {
            status: s.as_u16(),
            message,
        },
    })
}

impl Backend for HttpBackend {
    fn capabilities(&self) -> Result<Vec<Capability>, GatewayError> {
        let mut cached = self.capabilities.lock().expect("capability cache poisoned");
        if let Some(caps) = cached.as_ref() {
            return Ok(caps.clone());
        }
        let _permit = self.in_flight.acquire();
        let mut req = self.client.get(self.url(wire::ROUTE_HEALTH));
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let health: wire::HealthResponse = decode(resp, Capability::Generate)?;
        *cached = Some(health.capabilities.clone());
        Ok(health.capabilities)
    }

    fn generate(&self, prompt: &str, cfg: &GenerationConfig) -> Result<Vec<Completion>, GatewayError> {
        let body = wire::GenerateRequest {
            prompt: prompt.to_string(),
            decoding: cfg.decoding,
            temperature: (cfg.decoding == Decoding::Sample).then_some(cfg.temperature),
            top_p: cfg.top_p,
            max_tokens: cfg.max_tokens,
            n: cfg.n,
            return_logprobs: cfg.return_logprobs,
        };
        let retryable = cfg.decoding == Decoding::Greedy || self.endpoint.retry_sampling;
        let cap = if cfg.return_logprobs {
            Capability::Logprobs
        } else {
            Capability::Generate
        };
        let resp: wire::GenerateResponse = self.call(wire::ROUTE_GENERATE, cap, &body, retryable)?;
        Ok(resp.completions)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = wire::EmbedRequest { texts: texts.to_vec() };
        let resp: wire::EmbedResponse = self.call(wire::ROUTE_EMBED, Capability::Embed, &body, true)?;
        Ok(resp.embeddings)
    }

    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
        let body = wire::NliRequest {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        let resp: wire::NliResponse = self.call(wire::ROUTE_NLI, Capability::Nli, &body, true)?;
        Ok(NliVerdict::new(resp.entailment, resp.neutral, resp.contradiction))
    }

    fn forced_logprobs(&self, prompt: &str, target: &str) -> Result<ForcedLogprobs, GatewayError> {
        let body = wire::ForcedLogprobsRequest {
            prompt: prompt.to_string(),
            target: target.to_string(),
        };
        let resp: wire::ForcedLogprobsResponse =
            self.call(wire::ROUTE_FORCED_LOGPROBS, Capability::ForcedLogprobs, &body, true)?;
        Ok(ForcedLogprobs {
            tokens: resp.tokens,
            logprobs: resp.logprobs,
            entropies: resp.entropies,
        })
    }

    fn attention(&self, req: &AttentionRequest) -> Result<Vec<f64>, GatewayError> {
        let resp: wire::AttentionResponse = self.call(wire::ROUTE_ATTENTION, Capability::Attention, req, true)?;
        Ok(resp.scores)
    }

    fn ner(&self, text: &str) -> Result<Vec<String>, GatewayError> {
        let body = wire::NerRequest { text: text.to_string() };
        let resp: wire::NerResponse = self.call(wire::ROUTE_NER, Capability::Ner, &body, true)?;
        Ok(resp.entities)
    }

    fn extract(&self, req: &ExtractionRequest) -> Result<String, GatewayError> {
        let resp: wire::ExtractResponse = self.call(wire::ROUTE_EXTRACT, Capability::Extract, req, true)?;
        Ok(resp.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn in_flight_bound_is_respected() {
        let sem = Arc::new(InFlight::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        thread::scope(|s| {
            for _ in 0..8 {
                let (sem, active, peak) = (sem.clone(), active.clone(), peak.clone());
                s.spawn(move || {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unreachable_gateway_is_transport_error() {
        let mut ep = GatewayEndpoint::new("http://127.0.0.1:9");
        ep.retries = 0;
        ep.timeout_secs = 2;
        let backend = HttpBackend::new(ep).unwrap();
        let err = backend.ner("Paris").unwrap_err();
        assert!(err.is_retryable(), "{err:?}");
    }
}
