//! The episode state machine.
//!
//! An episode starts from `(system prompt, user prompt)` and grows by one
//! assistant segment per step, plus a tool segment when the turn was a tool
//! call. It ends when an answer block is emitted or a cap is reached; after
//! that it is absorbing and every further step is rejected without touching
//! the transcript.
//!
//! Response tokens count everything after the prompt: assistant text and
//! tool responses alike.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::PLAN_SCHEMA;
use crate::reward::{score_answer, LambdaVector, RewardBreakdown, ScoredAnswer};
use crate::sandbox::{QuerySpec, SandboxStore};
use crate::tokens::count_tokens;
use crate::tools::{dispatch, parse_turn, tools_listing, ToolCall, ToolName, ToolResponse, TurnKind};

pub const SYSTEM_PROMPT_TEMPLATE: &str = include_str!("../assets/system_prompt.v1.txt");

/// The system prompt: the template with the plan schema inlined, followed
/// by the tool signatures.
pub fn system_prompt() -> String {
    let body = SYSTEM_PROMPT_TEMPLATE.replace("{{ plan_schema }}", PLAN_SCHEMA.trim_end());
    format!("{}\n\n{}", body.trim_end(), tools_listing())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EpisodeError {
    #[error("episode is already terminal ({0})")]
    Terminal(&'static str),
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_assistant_turns: u32,
    pub max_tool_calls: u32,
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
    pub tool_response_cap: usize,
    pub gamma: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_assistant_turns: 30,
            max_tool_calls: 30,
            max_prompt_tokens: 2268,
            max_response_tokens: 30500,
            tool_response_cap: 8192,
            gamma: 1.0,
        }
    }
}

impl EpisodeConfig {
    pub fn check(&self) -> Result<(), EpisodeError> {
        let caps = [
            ("max_assistant_turns", self.max_assistant_turns as usize),
            ("max_tool_calls", self.max_tool_calls as usize),
            ("max_prompt_tokens", self.max_prompt_tokens),
            ("max_response_tokens", self.max_response_tokens),
            ("tool_response_cap", self.tool_response_cap),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return Err(EpisodeError::Config(format!("{name} must be at least 1")));
        }
        if self.gamma != 1.0 {
            return Err(EpisodeError::Config("gamma is fixed at 1".into()));
        }
        Ok(())
    }

    /// Token budget of a rendered observation window.
    pub fn window_budget(&self) -> usize {
        self.max_prompt_tokens + self.max_response_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Segment {
    System { text: String },
    User { text: String },
    Assistant { text: String },
    /// `tool` is `None` when the call could not be parsed.
    Tool {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tool: Option<ToolName>,
        text: String,
    },
}

impl Segment {
    pub fn text(&self) -> &str {
        match self {
            Self::System { text } | Self::User { text } | Self::Assistant { text } | Self::Tool { text, .. } => text,
        }
    }

    pub fn role(&self) -> &'static str {
        match self {
            Self::System { .. } => "system",
            Self::User { .. } => "user",
            Self::Assistant { .. } => "assistant",
            Self::Tool { .. } => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Active,
    Answered { answer: String },
    CapExhausted { cap: String },
}

impl EpisodeStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Self::Active)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::Answered { .. } => "answered",
            Self::CapExhausted { .. } => "cap_exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub assistant_turns: u32,
    pub tool_calls: u32,
    pub response_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Segments presented to the policy after window truncation.
    pub window: Vec<Segment>,
    /// The newest tool response, if the last step produced one.
    pub tool_response: Option<String>,
    pub done: bool,
    pub status: EpisodeStatus,
    pub info: Counters,
}

impl Observation {
    pub fn window_tokens(&self) -> usize {
        self.window.iter().map(|s| count_tokens(s.text())).sum()
    }
}

/// Drops the oldest tool responses, then the oldest assistant turns, until
/// the window fits in `budget` tokens. The two prompt segments always stay.
pub fn render_window(segments: &[Segment], budget: usize) -> Vec<Segment> {
    let sizes: Vec<usize> = segments.iter().map(|s| count_tokens(s.text())).collect();
    let mut keep = vec![true; segments.len()];
    let mut total: usize = sizes.iter().sum();
    for want in ["tool", "assistant"] {
        for (i, s) in segments.iter().enumerate() {
            if total <= budget {
                break;
            }
            if s.role() == want {
                keep[i] = false;
                total -= sizes[i];
            }
        }
    }
    segments.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct Episode {
    store: Arc<SandboxStore>,
    query: QuerySpec,
    config: EpisodeConfig,
    segments: Vec<Segment>,
    history: Vec<ToolCall>,
    counters: Counters,
    status: EpisodeStatus,
    last_tool_response: Option<String>,
    sampler: Option<String>,
}

impl Episode {
    pub fn reset(store: Arc<SandboxStore>, query: QuerySpec, config: EpisodeConfig) -> Result<(Self, Observation), EpisodeError> {
        config.check()?;
        let segments = vec![Segment::System { text: system_prompt() }, Segment::User { text: query.user_prompt() }];
        let episode = Self {
            store,
            query,
            config,
            segments,
            history: Vec::new(),
            counters: Counters { assistant_turns: 0, tool_calls: 0, response_tokens: 0 },
            status: EpisodeStatus::Active,
            last_tool_response: None,
            sampler: None,
        };
        let obs = episode.observation();
        Ok((episode, obs))
    }

    pub fn with_sampler(mut self, sampler: impl Into<String>) -> Self {
        self.sampler = Some(sampler.into());
        self
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn status(&self) -> &EpisodeStatus {
        &self.status
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn is_done(&self) -> bool {
        self.status.is_terminal()
    }

    pub fn observation(&self) -> Observation {
        Observation {
            window: render_window(&self.segments, self.config.window_budget()),
            tool_response: self.last_tool_response.clone(),
            done: self.is_done(),
            status: self.status.clone(),
            info: self.counters,
        }
    }

    fn push_tool(&mut self, tool: Option<ToolName>, mut response: ToolResponse) {
        let text = response.render_capped(self.config.tool_response_cap);
        self.counters.response_tokens += count_tokens(&text);
        self.counters.tool_calls += 1;
        self.last_tool_response = Some(text.clone());
        self.segments.push(Segment::Tool { tool, text });
    }

    fn exhaust(&mut self, cap: &str) {
        self.status = EpisodeStatus::CapExhausted { cap: cap.to_string() };
    }

    /// Applies one assistant turn.
    pub fn step(&mut self, assistant_text: &str) -> Result<Observation, EpisodeError> {
        if self.is_done() {
            return Err(EpisodeError::Terminal(self.status.label()));
        }
        self.segments.push(Segment::Assistant { text: assistant_text.to_string() });
        self.counters.assistant_turns += 1;
        self.counters.response_tokens += count_tokens(assistant_text);
        self.last_tool_response = None;

        let tool_cap_hit = self.counters.tool_calls >= self.config.max_tool_calls;
        match parse_turn(assistant_text) {
            TurnKind::Answer(answer) => {
                self.status = EpisodeStatus::Answered { answer };
                return Ok(self.observation());
            }
            TurnKind::ToolCall { .. } | TurnKind::Malformed { .. } if tool_cap_hit => {
                self.exhaust("max_tool_calls");
                return Ok(self.observation());
            }
            TurnKind::ToolCall { call, ignored_calls } => {
                let response = dispatch(&self.store, &self.history, &call).with_ignored_calls(ignored_calls);
                self.push_tool(Some(call.name), response);
                self.history.push(call);
            }
            TurnKind::Malformed { reason, ignored_calls, .. } => {
                self.push_tool(None, ToolResponse::error(reason).with_ignored_calls(ignored_calls));
            }
            TurnKind::Plain => {}
        }
        if self.counters.assistant_turns >= self.config.max_assistant_turns {
            self.exhaust("max_assistant_turns");
        } else if self.counters.response_tokens >= self.config.max_response_tokens {
            self.exhaust("max_response_tokens");
        }
        Ok(self.observation())
    }

    /// Inner text of the answer block when the episode was answered.
    pub fn extract_answer(&self) -> Option<&str> {
        match &self.status {
            EpisodeStatus::Answered { answer } => Some(answer),
            _ => None,
        }
    }

    pub fn score(&self, lambda: LambdaVector) -> ScoredAnswer {
        score_answer(&self.store, &self.query, self.extract_answer(), lambda)
    }

    pub fn record(&self, reward: Option<RewardBreakdown>) -> TrajectoryRecord {
        TrajectoryRecord {
            query_id: self.query.query_id.clone(),
            sampler: self.sampler.clone(),
            status: self.status.clone(),
            segments: self.segments.clone(),
            counters: self.counters,
            reward,
        }
    }
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub query_id: String,
    #[serde(default)]
    pub sampler: Option<String>,
    pub status: EpisodeStatus,
    pub segments: Vec<Segment>,
    pub counters: Counters,
    #[serde(default)]
    pub reward: Option<RewardBreakdown>,
}

impl TrajectoryRecord {
    pub fn answer(&self) -> Option<&str> {
        match &self.status {
            EpisodeStatus::Answered { answer } => Some(answer),
            _ => None,
        }
    }

    /// Well-formed tool calls in order.
    pub fn tool_sequence(&self) -> Vec<ToolName> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Tool { tool, .. } => *tool,
                _ => None,
            })
            .collect()
    }

    /// Assistant texts in order; enough to replay the episode.
    pub fn assistant_turns(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Assistant { text } => Some(text.as_str()),
                _ => None,
            })
            .collect()
    }
}
