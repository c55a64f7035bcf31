//! Line-delimited JSON service for external trainers.
//!
//! Each request line is `{"op", "episode_id", "payload"}` and gets exactly
//! one response line `{"episode_id", "observation"?, "done"?,
//! "reward_breakdown"?, "error"?}`. Responses are rendered canonically, so
//! a fixed store and request script always produce the same bytes.
//!
//! ```
//! use std::sync::Arc;
//! use plangym::gateway::{Gateway, GatewayConfig};
//! use plangym::{SandboxStore, SizeProfile};
//!
//! let store = plangym::sandbox::generate_sandbox(1, &SizeProfile::micro()).unwrap();
//! let gw = Gateway::new(Arc::new(store), Default::default(), GatewayConfig::default());
//! let out = gw.handle_line(r#"{"op":"step","episode_id":"nope","payload":{"text":"hi"}}"#);
//! assert!(out.contains("unknown episode"));
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::episode::{Episode, EpisodeConfig, Observation};
use crate::json::canonical;
use crate::reward::{CurriculumSchedule, LambdaVector, RewardBreakdown};
use crate::sandbox::{generate_query, Difficulty, QuerySpec, SandboxStore};

/// Prefix of environment variables that override config keys, e.g.
/// `PLANGYM_MAX_TOOL_CALLS=10`.
pub const ENV_PREFIX: &str = "PLANGYM_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Caps, reward schedule and default query seed of a service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub episode: EpisodeConfig,
    /// λ used when a reset carries no training step is `lambda_at(0)`.
    pub schedule: CurriculumSchedule,
    pub seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            schedule: CurriculumSchedule::constant(LambdaVector::stage(1).expect("stage 1")),
            seed: 0,
        }
    }
}

fn parse_schedule(v: &str) -> Result<CurriculumSchedule, String> {
    match v {
        "8b" => return Ok(CurriculumSchedule::eight_b()),
        "32b" => return Ok(CurriculumSchedule::thirty_two_b()),
        _ => {}
    }
    // "0:stage1;100:stage2;400:stage3"
    let stages = v
        .split(';')
        .map(|part| {
            let (at, lambda) = part.split_once(':').ok_or_else(|| format!("bad stage {part:?}"))?;
            let at = at.trim().parse::<u64>().map_err(|e| e.to_string())?;
            let lambda = LambdaVector::from_str(lambda.trim()).map_err(|e| e.to_string())?;
            Ok((at, lambda))
        })
        .collect::<Result<Vec<_>, String>>()?;
    CurriculumSchedule::new(stages).map_err(|e| e.to_string())
}

impl GatewayConfig {
    /// Parses a JSON object or `key=value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim_start().starts_with('{') {
            let cfg: Self = serde_json::from_str(text)?;
            cfg.check()?;
            return Ok(cfg);
        }
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), reason: e.to_string() })
        }
        let e = &mut self.episode;
        match key {
            "max_assistant_turns" => e.max_assistant_turns = num(key, value)?,
            "max_tool_calls" => e.max_tool_calls = num(key, value)?,
            "max_prompt_tokens" => e.max_prompt_tokens = num(key, value)?,
            "max_response_tokens" => e.max_response_tokens = num(key, value)?,
            "tool_response_cap" => e.tool_response_cap = num(key, value)?,
            "gamma" => e.gamma = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lambda" => {
                let l = LambdaVector::from_str(value)
                    .map_err(|e| ConfigError::BadValue { key: key.into(), reason: e.to_string() })?;
                self.schedule = CurriculumSchedule::constant(l);
            }
            "schedule" => {
                self.schedule =
                    parse_schedule(value).map_err(|reason| ConfigError::BadValue { key: key.into(), reason })?
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies `PLANGYM_*` overrides from `vars`; other names are ignored.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), ConfigError> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (k, v) in vars {
            self.set(&k[ENV_PREFIX.len()..].to_lowercase(), &v)?;
        }
        self.check()
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.episode
            .check()
            .map_err(|e| ConfigError::BadValue { key: "episode".into(), reason: e.to_string() })
    }
}

#[derive(Debug, Deserialize)]
struct Request {
    op: String,
    #[serde(default)]
    episode_id: Option<String>,
    #[serde(default)]
    payload: Value,
}

#[derive(Debug, Default, Deserialize)]
struct ResetPayload {
    query_id: Option<String>,
    seed: Option<u64>,
    difficulty: Option<Difficulty>,
    sampler: Option<String>,
    /// Training step selecting λ from the schedule.
    step: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct StepPayload {
    text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<String>,
}

impl ProtocolError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), line: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Response {
    pub episode_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub done: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_breakdown: Option<RewardBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<GatewayConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ProtocolError>,
}

struct Slot {
    episode: Episode,
    lambda: LambdaVector,
}

type Sink = Box<dyn Write + Send>;

/// Shared service state. Requests for different episodes may run on
/// different threads; each episode has its own lock, so requests for one
/// id are serialized.
pub struct Gateway {
    store: Arc<SandboxStore>,
    queries: BTreeMap<String, QuerySpec>,
    config: GatewayConfig,
    episodes: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    dump: Option<Mutex<Sink>>,
}

impl Gateway {
    pub fn new(store: Arc<SandboxStore>, queries: BTreeMap<String, QuerySpec>, config: GatewayConfig) -> Self {
        Self { store, queries, config, episodes: Mutex::new(HashMap::new()), dump: None }
    }

    /// Appends a trajectory record for every episode that reaches a
    /// terminal state.
    pub fn with_dump(mut self, sink: Sink) -> Self {
        self.dump = Some(Mutex::new(sink));
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn open_episodes(&self) -> usize {
        self.episodes.lock().expect("episode map").len()
    }

    /// Handles one request line and returns the response line (without
    /// the trailing newline).
    pub fn handle_line(&self, line: &str) -> String {
        let response = match serde_json::from_str::<Request>(line) {
            Ok(req) => {
                let id = req.episode_id.clone();
                self.handle(req).unwrap_or_else(|error| Response { episode_id: id, error: Some(error), ..Default::default() })
            }
            Err(e) => {
                // Salvage the id when the line is at least a JSON object.
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("episode_id").and_then(Value::as_str).map(str::to_string));
                let mut error = ProtocolError::new("malformed_request", e.to_string());
                error.line = Some(line.to_string());
                Response { episode_id: id, error: Some(error), ..Default::default() }
            }
        };
        canonical(&response)
    }

    fn slot(&self, id: &Option<String>) -> Result<(String, Arc<Mutex<Slot>>), ProtocolError> {
        let id = id.clone().ok_or_else(|| ProtocolError::new("missing_episode_id", "episode_id is required"))?;
        let slot = self.episodes.lock().expect("episode map").get(&id).cloned();
        slot.map(|s| (id, s)).ok_or_else(|| ProtocolError::new("unknown_episode", "unknown episode"))
    }

    fn handle(&self, req: Request) -> Result<Response, ProtocolError> {
        let payload = |v: Value| if v.is_null() { json!({}) } else { v };
        match req.op.as_str() {
            "config" => Ok(Response { episode_id: req.episode_id, config: Some(self.config.clone()), ..Default::default() }),
            "reset" => {
                let id = req
                    .episode_id
                    .ok_or_else(|| ProtocolError::new("missing_episode_id", "episode_id is required"))?;
                let p: ResetPayload = serde_json::from_value(payload(req.payload))
                    .map_err(|e| ProtocolError::new("bad_payload", e.to_string()))?;
                let query = self.resolve_query(&p)?;
                let (mut episode, obs) = Episode::reset(self.store.clone(), query, self.config.episode.clone())
                    .map_err(|e| ProtocolError::new("config", e.to_string()))?;
                if let Some(s) = p.sampler {
                    episode = episode.with_sampler(s);
                }
                let lambda = self.config.schedule.lambda_at(p.step.unwrap_or(0));
                // A reset on a live id replaces that episode.
                self.episodes
                    .lock()
                    .expect("episode map")
                    .insert(id.clone(), Arc::new(Mutex::new(Slot { episode, lambda })));
                Ok(Response { episode_id: Some(id), done: Some(false), observation: Some(obs), ..Default::default() })
            }
            "step" => {
                let (id, slot) = self.slot(&req.episode_id)?;
                let p: StepPayload = serde_json::from_value(payload(req.payload))
                    .map_err(|e| ProtocolError::new("bad_payload", e.to_string()))?;
                let mut slot = slot.lock().expect("episode lock");
                let obs = slot.episode.step(&p.text).map_err(|e| ProtocolError::new("terminal_episode", e.to_string()))?;
                let reward = obs.done.then(|| slot.episode.score(slot.lambda).reward);
                if let (Some(r), Some(sink)) = (&reward, &self.dump) {
                    let rec = slot.episode.record(Some(r.clone()));
                    let mut sink = sink.lock().expect("dump sink");
                    // Dump failures must not break the protocol.
                    let _ = writeln!(sink, "{}", canonical(&rec)).and_then(|_| sink.flush());
                }
                Ok(Response { episode_id: Some(id), done: Some(obs.done), observation: Some(obs), reward_breakdown: reward, ..Default::default() })
            }
            "score" => {
                let (id, slot) = self.slot(&req.episode_id)?;
                let slot = slot.lock().expect("episode lock");
                Ok(Response {
                    episode_id: Some(id),
                    done: Some(slot.episode.is_done()),
                    reward_breakdown: Some(slot.episode.score(slot.lambda).reward),
                    ..Default::default()
                })
            }
            "close" => {
                let (id, _) = self.slot(&req.episode_id)?;
                self.episodes.lock().expect("episode map").remove(&id);
                Ok(Response { episode_id: Some(id), ..Default::default() })
            }
            other => Err(ProtocolError::new("unknown_op", format!("unknown op {other:?}"))),
        }
    }

    fn resolve_query(&self, p: &ResetPayload) -> Result<QuerySpec, ProtocolError> {
        if let Some(qid) = &p.query_id {
            return self
                .queries
                .get(qid)
                .cloned()
                .ok_or_else(|| ProtocolError::new("unknown_query", format!("unknown query {qid:?}")));
        }
        let seed = p.seed.unwrap_or(self.config.seed);
        let difficulty = p.difficulty.unwrap_or(Difficulty::Easy);
        generate_query(&self.store, seed, difficulty)
            .map(|g| g.spec)
            .map_err(|e| ProtocolError::new("generation", e.to_string()))
    }

    /// Serves one request stream until EOF; responses are flushed per line.
    pub fn serve_stream<R: BufRead, W: Write>(&self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }

    pub fn serve_stdio(&self) -> std::io::Result<()> {
        let stdin = std::io::stdin();
        self.serve_stream(stdin.lock(), std::io::stdout().lock())
    }

    /// Accepts connections forever, one thread per connection. Episodes
    /// are shared across connections.
    pub fn serve_tcp<A: ToSocketAddrs>(self: Arc<Self>, addr: A) -> std::io::Result<()> {
        let listener = TcpListener::bind(addr)?;
        self.serve_listener(listener)
    }

    pub fn serve_listener(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let gw = Arc::clone(&self);
            std::thread::spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(_) => return,
                };
                let _ = gw.serve_stream(reader, stream);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{generate_sandbox, SizeProfile};

    fn gateway() -> Gateway {
        let store = generate_sandbox(3, &SizeProfile::micro()).unwrap();
        Gateway::new(Arc::new(store), BTreeMap::new(), GatewayConfig::default())
    }

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn every_request_gets_one_response() {
        let gw = gateway();
        let r = parse(&gw.handle_line(r#"{"op":"fly","episode_id":"a"}"#));
        assert_eq!(r["error"]["kind"], "unknown_op");
        assert_eq!(r["episode_id"], "a");
        let r = parse(&gw.handle_line("not json"));
        assert_eq!(r["error"]["kind"], "malformed_request");
        assert_eq!(r["error"]["line"], "not json");
        let r = parse(&gw.handle_line(r#"{"op":"close","episode_id":"zz"}"#));
        assert_eq!(r["error"]["message"], "unknown episode");
    }

    #[test]
    fn terminal_step_embeds_reward() {
        let gw = gateway();
        let r = parse(&gw.handle_line(r#"{"op":"reset","episode_id":"e","payload":{"seed":4}}"#));
        assert_eq!(r["done"], false);
        let r = parse(&gw.handle_line(r#"{"op":"step","episode_id":"e","payload":{"text":"<answer>oops</answer>"}}"#));
        assert_eq!(r["done"], true);
        assert_eq!(r["reward_breakdown"]["r_schema"], 0.0);
        let r = parse(&gw.handle_line(r#"{"op":"step","episode_id":"e","payload":{"text":"again"}}"#));
        assert_eq!(r["error"]["kind"], "terminal_episode");
        gw.handle_line(r#"{"op":"close","episode_id":"e"}"#);
        assert_eq!(gw.open_episodes(), 0);
    }

    #[test]
    fn config_text_and_env() {
        let mut cfg = GatewayConfig::parse("max_tool_calls = 5 # short\nlambda=stage3\n").unwrap();
        assert_eq!(cfg.episode.max_tool_calls, 5);
        assert_eq!(cfg.schedule.lambda_at(0), LambdaVector::stage(3).unwrap());
        cfg.apply_env([("PLANGYM_SCHEDULE".to_string(), "8b".to_string()), ("HOME".into(), "/".into())])
            .unwrap();
        assert_eq!(cfg.schedule, CurriculumSchedule::eight_b());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(GatewayConfig::parse(&json).unwrap(), cfg);
        assert!(GatewayConfig::parse("bogus=1").is_err());
        assert!(GatewayConfig::parse("max_tool_calls=0").is_err());
        let s = parse_schedule("0:stage1;50:stage2;400:stage3").unwrap();
        assert_eq!(s, CurriculumSchedule::thirty_two_b());
    }
}
