use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    AutoregressiveModel, AxisPoint, DiskCache, ModelError, Result, TokenId, TokenSequence,
};

/// Where a bridge server lives and which checkpoint to talk to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_id: String,
    pub revision: String,
    #[serde(default = "default_timeout", with = "duration_secs")]
    pub request_timeout: Duration,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout() -> Duration {
    Duration::from_secs(300)
}

fn default_in_flight() -> usize {
    4
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl ModelEndpoint {
    pub fn new(
        base_url: impl Into<String>,
        model_id: impl Into<String>,
        revision: impl Into<String>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            revision: revision.into(),
            request_timeout: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// `GET /info` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeInfo {
    pub model_id: String,
    pub revision: String,
    pub vocab_size: usize,
    pub tokenizer_fingerprint: String,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    n_samples: usize,
    n_tokens: usize,
    seed: u64,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    greedy: bool,
}

#[derive(Deserialize)]
struct GenerateResponse {
    samples: Vec<WireSample>,
}

#[derive(Deserialize)]
struct WireSample {
    tokens: Vec<TokenId>,
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    tokens: &'a [TokenId],
    temperature: f64,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct LoadRequest<'a> {
    model_id: &'a str,
    revision: &'a str,
}

#[derive(Deserialize)]
struct LoadResponse {
    ok: bool,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    active: Mutex<usize>,
    cv: Condvar,
    limit: usize,
}

struct GatePass<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            active: Mutex::new(0),
            cv: Condvar::new(),
            limit,
        }
    }

    fn enter(&self) -> GatePass<'_> {
        let mut active = self.active.lock();
        while *active >= self.limit {
            self.cv.wait(&mut active);
        }
        *active += 1;
        GatePass(self)
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.active.lock() -= 1;
        self.0.cv.notify_one();
    }
}

struct RevisionState {
    loaded: String,
    users: usize,
}

/// Client for a bridge server speaking the JSON protocol:
///
/// - `GET /info`
/// - `POST /load {model_id, revision}`
/// - `POST /generate {prompt, temperature, n_samples, n_tokens, seed}`
/// - `POST /score {prompt, tokens, temperature}`
///
/// The server holds one checkpoint at a time. Requests for a checkpoint wait
/// until every in-flight request against a different checkpoint has finished,
/// then the client switches with `/load`.
pub struct RemoteModel {
    endpoint: ModelEndpoint,
    agent: ureq::Agent,
    prompt: String,
    revision_template: String,
    cache: Option<DiskCache>,
    max_retries: usize,
    gate: Gate,
    revision: Mutex<RevisionState>,
    revision_cv: Condvar,
    info: BridgeInfo,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel")
            .field("endpoint", &self.endpoint)
            .field("prompt", &self.prompt)
            .field("info", &self.info)
            .finish()
    }
}

impl RemoteModel {
    /// Connects and records the server's tokenizer fingerprint, then loads
    /// `endpoint.revision` if the server holds something else.
    pub fn connect(endpoint: ModelEndpoint) -> Result<Self> {
        if endpoint.max_in_flight == 0 {
            return Err(ModelError::InvalidRequest("max_in_flight must be >= 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut model = Self {
            gate: Gate::new(endpoint.max_in_flight),
            agent,
            prompt: String::new(),
            revision_template: "step{T}".into(),
            cache: None,
            max_retries: 2,
            revision: Mutex::new(RevisionState {
                loaded: String::new(),
                users: 0,
            }),
            revision_cv: Condvar::new(),
            info: BridgeInfo {
                model_id: String::new(),
                revision: String::new(),
                vocab_size: 0,
                tokenizer_fingerprint: String::new(),
            },
            endpoint,
        };
        let info = model.fetch_info()?;
        model.revision.get_mut().loaded = info.revision.clone();
        model.info = info;
        if model.info.revision != model.endpoint.revision || model.info.model_id != model.endpoint.model_id {
            let rev = model.endpoint.revision.clone();
            model.load(&rev)?;
            model.revision.get_mut().loaded = rev;
        }
        Ok(model)
    }

    /// Prompt used for temperature and checkpoint points.
    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    /// Maps a checkpoint id to a revision name; `{T}` is replaced by the id.
    pub fn with_revision_template(mut self, template: impl Into<String>) -> Self {
        self.revision_template = template.into();
        self
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn info(&self) -> &BridgeInfo {
        &self.info
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn request<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&Req>,
    ) -> Result<Resp> {
        let mut attempt = 0;
        loop {
            let result = {
                let _pass = self.gate.enter();
                self.request_once(path, body)
            };
            match result {
                Err(e) if e.is_retriable() && attempt < self.max_retries => {
                    attempt += 1;
                    log::warn!("{e}; retry {attempt}/{}", self.max_retries);
                    std::thread::sleep(Duration::from_millis(100 << attempt));
                }
                other => return other,
            }
        }
    }

    fn request_once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&Req>,
    ) -> Result<Resp> {
        let url = self.endpoint.url(path);
        let remote = |status: Option<u16>, message: String| ModelError::Remote {
            endpoint: path.to_string(),
            status,
            message,
        };
        let response = match body {
            Some(b) => self.agent.post(&url).send_json(b),
            None => self.agent.get(&url).call(),
        };
        let mut response = response.map_err(|e| remote(None, e.to_string()))?;
        let status = response.status().as_u16();
        let reader = response.body_mut().with_config().limit(u64::MAX);
        if status >= 400 {
            let message = reader
                .read_to_string()
                .ok()
                .and_then(|text| serde_json::from_str::<ErrorBody>(&text).ok())
                .map(|b| b.error)
                .unwrap_or_else(|| "no error message".to_string());
            return Err(remote(Some(status), message));
        }
        reader
            .read_json()
            .map_err(|e| remote(Some(status), format!("malformed response: {e}")))
    }

    fn fetch_info(&self) -> Result<BridgeInfo> {
        self.request::<(), BridgeInfo>("/info", None)
    }

    fn load(&self, revision: &str) -> Result<()> {
        let body = LoadRequest {
            model_id: &self.endpoint.model_id,
            revision,
        };
        match self.request::<_, LoadResponse>("/load", Some(&body)) {
            Ok(LoadResponse { ok: true }) => {}
            Ok(LoadResponse { ok: false }) => {
                return Err(ModelError::UnknownRevision(revision.to_string()))
            }
            Err(ModelError::Remote {
                status: Some(404), ..
            }) => return Err(ModelError::UnknownRevision(revision.to_string())),
            Err(e) => return Err(e),
        }
        let info = self.fetch_info()?;
        if info.tokenizer_fingerprint != self.info.tokenizer_fingerprint {
            return Err(ModelError::FingerprintMismatch {
                expected: self.info.tokenizer_fingerprint.clone(),
                found: info.tokenizer_fingerprint,
                revision: revision.to_string(),
            });
        }
        if info.revision != revision {
            return Err(ModelError::Remote {
                endpoint: "/info".into(),
                status: None,
                message: format!("server reports revision `{}` after loading `{revision}`", info.revision),
            });
        }
        Ok(())
    }

    /// Runs `f` while the server holds `revision`.
    fn with_revision<R>(&self, revision: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        {
            let mut state = self.revision.lock();
            loop {
                if state.loaded == revision {
                    state.users += 1;
                    break;
                }
                if state.users == 0 {
                    log::info!("loading revision {revision}");
                    self.load(revision)?;
                    state.loaded = revision.to_string();
                    continue;
                }
                self.revision_cv.wait(&mut state);
            }
        }
        let result = f();
        let mut state = self.revision.lock();
        state.users -= 1;
        self.revision_cv.notify_all();
        result
    }

    /// `(prompt, temperature, revision)` for a point.
    fn resolve(&self, point: &AxisPoint) -> (String, f64, String) {
        match point {
            AxisPoint::PromptSlot { prompt, .. } => {
                (prompt.clone(), 1.0, self.endpoint.revision.clone())
            }
            AxisPoint::Temperature { value } => {
                (self.prompt.clone(), *value, self.endpoint.revision.clone())
            }
            AxisPoint::Checkpoint { epoch } => (
                self.prompt.clone(),
                1.0,
                self.revision_template.replace("{T}", &epoch.to_string()),
            ),
        }
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if self.info.vocab_size == 0 {
            return Ok(());
        }
        match tokens.iter().find(|&&t| t as usize >= self.info.vocab_size) {
            Some(&token) => Err(ModelError::TokenOutOfVocab {
                token,
                vocab_size: self.info.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn generate_raw(
        &self,
        point: &AxisPoint,
        n_samples: usize,
        n_tokens: usize,
        seed: u64,
        greedy: bool,
    ) -> Result<Vec<TokenSequence>> {
        if n_samples == 0 || n_tokens == 0 {
            return Err(ModelError::InvalidRequest(
                "n_samples and n_tokens must be >= 1".into(),
            ));
        }
        let (prompt, temperature, revision) = self.resolve(point);
        let temperature = if greedy { 0.0 } else { temperature };
        if !greedy && !(temperature > 0.0) {
            return Err(ModelError::InvalidTemperature(temperature));
        }
        let key = (
            "generate",
            &self.endpoint.model_id,
            &revision,
            &prompt,
            temperature.to_bits(),
            n_samples,
            n_tokens,
            seed,
            greedy,
        );
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<Vec<TokenSequence>>(&key)) {
            return Ok(hit);
        }
        let request = GenerateRequest {
            prompt: &prompt,
            temperature,
            n_samples,
            n_tokens,
            seed,
            greedy,
        };
        let response: GenerateResponse =
            self.with_revision(&revision, || self.request("/generate", Some(&request)))?;
        if response.samples.len() != n_samples {
            return Err(ModelError::Remote {
                endpoint: "/generate".into(),
                status: None,
                message: format!("asked for {n_samples} samples, got {}", response.samples.len()),
            });
        }
        let samples = response
            .samples
            .into_iter()
            .map(|s| {
                if s.tokens.len() != n_tokens {
                    return Err(ModelError::Remote {
                        endpoint: "/generate".into(),
                        status: None,
                        message: format!("asked for {n_tokens} tokens, got {}", s.tokens.len()),
                    });
                }
                self.check_tokens(&s.tokens)?;
                TokenSequence::new(s.tokens, s.logprobs)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &samples)?;
        }
        Ok(samples)
    }
}

impl AutoregressiveModel for RemoteModel {
    fn generate(
        &self,
        point: &AxisPoint,
        n_samples: usize,
        n_tokens: usize,
        seed: u64,
    ) -> Result<Vec<TokenSequence>> {
        self.generate_raw(point, n_samples, n_tokens, seed, false)
    }

    fn score(&self, point: &AxisPoint, tokens: &[TokenId]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(ModelError::InvalidRequest("cannot score an empty sequence".into()));
        }
        self.check_tokens(tokens)?;
        let (prompt, temperature, revision) = self.resolve(point);
        if !(temperature > 0.0) {
            return Err(ModelError::InvalidTemperature(temperature));
        }
        let key = (
            "score",
            &self.endpoint.model_id,
            &revision,
            &prompt,
            temperature.to_bits(),
            tokens,
        );
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<f64>(&key)) {
            return Ok(hit);
        }
        let request = ScoreRequest {
            prompt: &prompt,
            tokens,
            temperature,
        };
        let response: ScoreResponse =
            self.with_revision(&revision, || self.request("/score", Some(&request)))?;
        if response.logprobs.len() != tokens.len() {
            return Err(ModelError::Remote {
                endpoint: "/score".into(),
                status: None,
                message: format!(
                    "scored {} tokens, got {} log-probabilities",
                    tokens.len(),
                    response.logprobs.len()
                ),
            });
        }
        let total: f64 = response.logprobs.iter().sum();
        if let Some(cache) = &self.cache {
            cache.put(&key, &total)?;
        }
        Ok(total)
    }

    fn argmax_sample(&self, point: &AxisPoint, n_tokens: usize) -> Result<TokenSequence> {
        let mut samples = self.generate_raw(point, 1, n_tokens, 0, true)?;
        Ok(samples.remove(0))
    }
}
