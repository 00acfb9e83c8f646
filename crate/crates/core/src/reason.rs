//! Prompt construction, the four reasoning schemes (DT, CoT, SC-CoT, ToT),
//! option-letter extraction, and pluggable agent endpoints. The scripted
//! endpoints make the whole evaluation pipeline runnable offline.

use crate::mapenv::GridMap;
use crate::memory::MemoryBundle;
use crate::tasks::{recompute_answer, TaskItem};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("task {0} is degenerate and cannot be prompted")]
    DegenerateTask(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("scripted oracle needs the task and map in its call context")]
    MissingContext,
    #[error("bad scheme parameter: {0}")]
    BadScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            text: text.into(),
        }
    }
}

/// Reasoning scheme, with its sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme")]
pub enum SchemeKind {
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "CoT")]
    Cot,
    #[serde(rename = "SC-CoT")]
    ScCot { k: u32, temperature: f64 },
    #[serde(rename = "ToT")]
    Tot { plans: u32, candidates: u32 },
}

impl SchemeKind {
    pub fn sc_cot_default() -> SchemeKind {
        SchemeKind::ScCot {
            k: 5,
            temperature: 1.0,
        }
    }

    pub fn tot_default() -> SchemeKind {
        SchemeKind::Tot {
            plans: 3,
            candidates: 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Dt => "DT",
            SchemeKind::Cot => "CoT",
            SchemeKind::ScCot { .. } => "SC-CoT",
            SchemeKind::Tot { .. } => "ToT",
        }
    }

    pub fn from_name(name: &str) -> Option<SchemeKind> {
        match name.to_ascii_uppercase().as_str() {
            "DT" => Some(SchemeKind::Dt),
            "COT" => Some(SchemeKind::Cot),
            "SC-COT" | "SC_COT" | "SCCOT" => Some(SchemeKind::sc_cot_default()),
            "TOT" => Some(SchemeKind::tot_default()),
            _ => None,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed environment preamble: grid semantics and the answer-format
/// contract every reply must honor.
pub const SYSTEM_PREAMBLE: &str = "You are an agent that has explored a symbolic city grid map. \
Columns increase eastward and rows increase southward; row 0 is the northern edge, so north means decreasing row. \
Cells are background, road, intersection, or POI. POIs are labeled P<id> and intersections I<id>. \
Coordinates are written (col,row); observation offsets are written (+dcol,+drow) relative to the agent. \
Movement is eight-directional (the Moore neighborhood) and every move costs 1. \
Use your exploration memory below to answer the multiple-choice question. \
End your reply with a line of the form \"Answer: <letter>\" where <letter> is A, B, C, or D.";

/// The chain-of-thought trigger appended for CoT and SC-CoT prompts.
pub const COT_SUFFIX: &str = "Let's think step by step";

/// System preamble plus a user message carrying the memory block(s), the
/// rendered question, and the scheme suffix. Byte-deterministic.
pub fn build_task_prompt(
    bundle: &MemoryBundle,
    task: &TaskItem,
    scheme: SchemeKind,
) -> Result<Vec<ChatMessage>, ReasonError> {
    if task.degenerate {
        return Err(ReasonError::DegenerateTask(task.id.clone()));
    }
    let mut user = String::new();
    user.push_str("Your exploration memory:\n");
    user.push_str(&bundle.serialized);
    user.push('\n');
    user.push_str(&task.render_question());
    match scheme {
        SchemeKind::Dt | SchemeKind::Tot { .. } => {}
        SchemeKind::Cot | SchemeKind::ScCot { .. } => {
            user.push('\n');
            user.push_str(COT_SUFFIX);
        }
    }
    Ok(vec![
        ChatMessage::system(SYSTEM_PREAMBLE),
        ChatMessage::user(user),
    ])
}

/// Parses the final option choice from a reply: the last "Answer: X"
/// pattern wins; failing that, the last standalone capital option letter.
/// Total: every string maps to Some index or None (invalid).
pub fn extract_choice(reply: &str) -> Option<usize> {
    static ANSWER: OnceLock<Regex> = OnceLock::new();
    static BARE: OnceLock<Regex> = OnceLock::new();
    let answer = ANSWER.get_or_init(|| Regex::new(r"(?i)answer\s*:\s*\**\(?([a-d])\)?").unwrap());
    if let Some(cap) = answer.captures_iter(reply).last() {
        let letter = cap[1].chars().next().unwrap().to_ascii_uppercase();
        return Some((letter as u8 - b'A') as usize);
    }
    let bare = BARE.get_or_init(|| Regex::new(r"\b([ABCD])\b").unwrap());
    bare.captures_iter(reply)
        .last()
        .map(|cap| (cap[1].as_bytes()[0] - b'A') as usize)
}

// ---------------------------------------------------------------------------
// Endpoints
// ---------------------------------------------------------------------------

/// Which kind of completion the scheme expects; scripted endpoints format
/// their replies accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallStage {
    Single,
    TotPlans { plans: u32 },
    TotSelect { candidates: u32 },
}

/// Per-call context: the item under evaluation (for scripted agents), the
/// true map (for the oracle), sampling temperature, and a deterministic
/// call seed (for the random agent).
pub struct CallContext<'a> {
    pub task: Option<&'a TaskItem>,
    pub map: Option<&'a GridMap>,
    pub stage: CallStage,
    pub temperature: f64,
    pub seed: u64,
}

pub trait AgentEndpoint: Send + Sync {
    /// Stable identifier used in reports (a model name for remote agents).
    fn id(&self) -> String;

    fn complete(&self, messages: &[ChatMessage], ctx: &CallContext) -> Result<String, ReasonError>;
}

fn letter(index: usize) -> char {
    char::from(b'A' + index as u8)
}

fn scripted_reply(stage: CallStage, choice: usize, flavor: &str) -> String {
    match stage {
        CallStage::Single => format!("{}\nAnswer: {}", flavor, letter(choice)),
        CallStage::TotPlans { plans } => {
            let mut out = String::new();
            for i in 1..=plans {
                out.push_str(&format!("Plan {}: {} (variant {}).\n", i, flavor, i));
            }
            out.push_str("Chosen plan: 1");
            out
        }
        CallStage::TotSelect { candidates } => {
            let mut out = String::new();
            for i in 1..=candidates {
                out.push_str(&format!("Candidate {}: option {}.\n", i, letter(choice)));
            }
            out.push_str(&format!("Answer: {}", letter(choice)));
            out
        }
    }
}

/// Answers every task correctly by re-deriving the ground truth from the
/// true map: the accuracy ceiling for the whole pipeline.
pub struct ScriptedOracle;

impl AgentEndpoint for ScriptedOracle {
    fn id(&self) -> String {
        "scripted-oracle".to_string()
    }

    fn complete(&self, _messages: &[ChatMessage], ctx: &CallContext) -> Result<String, ReasonError> {
        let (task, map) = match (ctx.task, ctx.map) {
            (Some(t), Some(m)) => (t, m),
            _ => return Err(ReasonError::MissingContext),
        };
        let choice = recompute_answer(map, task)
            .ok_or_else(|| ReasonError::Endpoint(format!("no unique answer for {}", task.id)))?;
        Ok(scripted_reply(
            ctx.stage,
            choice,
            "Recomputing from the full map",
        ))
    }
}

/// Picks a uniformly random option from the call seed: the accuracy floor.
pub struct ScriptedRandom;

impl AgentEndpoint for ScriptedRandom {
    fn id(&self) -> String {
        "scripted-random".to_string()
    }

    fn complete(&self, _messages: &[ChatMessage], ctx: &CallContext) -> Result<String, ReasonError> {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let choice = rng.gen_range(0..4);
        Ok(scripted_reply(ctx.stage, choice, "Guessing"))
    }
}

/// OpenAI-compatible chat-completions client (POST /v1/chat/completions).
pub struct RemoteChatEndpoint {
    pub model: String,
    pub base_url: String,
    pub max_attempts: u32,
    api_key: String,
    client: reqwest::blocking::Client,
}

/// Environment variable holding the remote API credential.
pub const API_KEY_ENV: &str = "MAPMIND_API_KEY";

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    n: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: String,
}

impl RemoteChatEndpoint {
    pub fn new(
        model: impl Into<String>,
        base_url: impl Into<String>,
        max_attempts: u32,
    ) -> Result<Self, ReasonError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| ReasonError::Endpoint(format!("{} is not set", API_KEY_ENV)))?;
        Ok(Self::with_key(model, base_url, max_attempts, api_key))
    }

    pub fn with_key(
        model: impl Into<String>,
        base_url: impl Into<String>,
        max_attempts: u32,
        api_key: impl Into<String>,
    ) -> Self {
        RemoteChatEndpoint {
            model: model.into(),
            base_url: base_url.into(),
            max_attempts: max_attempts.max(1),
            api_key: api_key.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }

    fn call_once(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ReasonError> {
        let payload = WireRequest {
            model: &self.model,
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        ChatRole::System => "system",
                        ChatRole::User => "user",
                        ChatRole::Assistant => "assistant",
                    },
                    content: &m.text,
                })
                .collect(),
            temperature,
            n: 1,
        };
        let url = format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&payload)
            .send()
            .map_err(|e| ReasonError::Endpoint(e.to_string()))?;
        if !response.status().is_success() {
            return Err(ReasonError::Endpoint(format!(
                "http {} from {}",
                response.status(),
                url
            )));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| ReasonError::Endpoint(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ReasonError::Endpoint("empty choices".to_string()))
    }
}

impl AgentEndpoint for RemoteChatEndpoint {
    fn id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, messages: &[ChatMessage], ctx: &CallContext) -> Result<String, ReasonError> {
        let mut last_err = None;
        for _ in 0..self.max_attempts {
            match self.call_once(messages, ctx.temperature) {
                Ok(reply) => return Ok(reply),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| ReasonError::Endpoint("no attempts made".into())))
    }
}

// ---------------------------------------------------------------------------
// Scheme execution
// ---------------------------------------------------------------------------

/// One endpoint call's log line. Latency never enters the deterministic
/// result files; it only lives in these reply logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplyRecord {
    pub task_id: String,
    pub scheme: String,
    pub stage: String,
    pub sample: u32,
    pub reply: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Two-stage tree-of-thoughts log: the proposed plans, the chosen one, the
/// candidate answers, and the final choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TotLog {
    pub plans: Vec<String>,
    pub chosen_plan: u32,
    pub plan_fallback_used: bool,
    pub candidates: Vec<String>,
    pub final_choice: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub answer: Option<usize>,
    pub records: Vec<ReplyRecord>,
    pub tot_log: Option<TotLog>,
}

fn timed_call(
    endpoint: &dyn AgentEndpoint,
    messages: &[ChatMessage],
    ctx: &CallContext,
    task_id: &str,
    scheme: &str,
    stage: &str,
    sample: u32,
) -> (Option<String>, ReplyRecord) {
    let started = Instant::now();
    let result = endpoint.complete(messages, ctx);
    let latency_ms = started.elapsed().as_millis() as u64;
    match result {
        Ok(reply) => (
            Some(reply.clone()),
            ReplyRecord {
                task_id: task_id.to_string(),
                scheme: scheme.to_string(),
                stage: stage.to_string(),
                sample,
                reply,
                latency_ms,
                error: None,
            },
        ),
        Err(e) => (
            None,
            ReplyRecord {
                task_id: task_id.to_string(),
                scheme: scheme.to_string(),
                stage: stage.to_string(),
                sample,
                reply: String::new(),
                latency_ms,
                error: Some(e.to_string()),
            },
        ),
    }
}

/// One completion, one extracted answer. Covers DT and CoT, which differ
/// only in the prompt suffix.
pub fn run_single(
    endpoint: &dyn AgentEndpoint,
    messages: &[ChatMessage],
    ctx: &CallContext,
    task_id: &str,
    scheme: &str,
) -> (Option<usize>, ReplyRecord) {
    let (reply, record) = timed_call(endpoint, messages, ctx, task_id, scheme, "single", 0);
    (reply.as_deref().and_then(extract_choice), record)
}

/// k independent samples, majority vote over the valid answers; ties break
/// toward the earliest-sampled tied option.
pub fn run_self_consistency(
    endpoint: &dyn AgentEndpoint,
    messages: &[ChatMessage],
    k: u32,
    temperature: f64,
    base_ctx: &CallContext,
    task_id: &str,
) -> (Option<usize>, Vec<ReplyRecord>) {
    let mut records = Vec::new();
    let mut answers: Vec<Option<usize>> = Vec::new();
    for sample in 0..k.max(1) {
        let ctx = CallContext {
            task: base_ctx.task,
            map: base_ctx.map,
            stage: CallStage::Single,
            temperature,
            seed: crate::util::derive_seed(base_ctx.seed, &format!("sc-{}", sample)),
        };
        let (reply, record) =
            timed_call(endpoint, messages, &ctx, task_id, "SC-CoT", "sample", sample);
        answers.push(reply.as_deref().and_then(extract_choice));
        records.push(record);
    }
    let mut counts = [0u32; 4];
    let mut first_seen = [u32::MAX; 4];
    for (i, answer) in answers.iter().enumerate() {
        if let Some(a) = answer {
            counts[*a] += 1;
            if first_seen[*a] == u32::MAX {
                first_seen[*a] = i as u32;
            }
        }
    }
    let best = counts.iter().max().copied().unwrap_or(0);
    let winner = if best == 0 {
        None
    } else {
        (0..4)
            .filter(|&i| counts[i] == best)
            .min_by_key(|&i| first_seen[i])
    };
    (winner, records)
}

fn parse_numbered(reply: &str, label: &str) -> Vec<String> {
    let pattern = Regex::new(&format!(r"(?im)^{}\s*(\d+)\s*:\s*(.+)$", label)).unwrap();
    pattern
        .captures_iter(reply)
        .map(|cap| cap[2].trim().to_string())
        .collect()
}

fn parse_chosen_plan(reply: &str) -> Option<u32> {
    static CHOSEN: OnceLock<Regex> = OnceLock::new();
    let chosen = CHOSEN.get_or_init(|| Regex::new(r"(?i)chosen plan\s*:\s*(\d+)").unwrap());
    chosen
        .captures_iter(reply)
        .last()
        .and_then(|cap| cap[1].parse().ok())
}

/// Default sampling temperature for the two ToT stages, overridable per
/// endpoint.
pub const TOT_STAGE_TEMPERATURE: f64 = 0.7;

/// Two-stage tree of thoughts: stage one proposes and selects a reasoning
/// plan, stage two generates candidate answers under that plan and commits
/// to one. Exactly two endpoint calls.
#[allow(clippy::too_many_arguments)]
pub fn run_tot(
    endpoint: &dyn AgentEndpoint,
    bundle: &MemoryBundle,
    task: &TaskItem,
    plans: u32,
    candidates: u32,
    map: Option<&GridMap>,
    seed: u64,
    temperature: f64,
) -> Result<SchemeOutcome, ReasonError> {
    if plans < 1 || candidates < 1 {
        return Err(ReasonError::BadScheme(
            "plans and candidates must be >= 1".into(),
        ));
    }
    let base = build_task_prompt(bundle, task, SchemeKind::Tot { plans, candidates })?;
    let mut records = Vec::new();

    let mut stage1 = base.clone();
    stage1.push(ChatMessage::user(format!(
        "Before answering, propose {} distinct reasoning plans for solving this task \
(which landmarks to recall, which routes or relations to consider). \
List them as \"Plan 1: ...\" through \"Plan {}: ...\", then select the most promising one \
by ending with a line \"Chosen plan: <number>\".",
        plans, plans
    )));
    let ctx1 = CallContext {
        task: Some(task),
        map,
        stage: CallStage::TotPlans { plans },
        temperature,
        seed: crate::util::derive_seed(seed, "tot-plans"),
    };
    let (reply1, record1) = timed_call(endpoint, &stage1, &ctx1, &task.id, "ToT", "plans", 0);
    records.push(record1);
    let reply1 = reply1.unwrap_or_default();
    let plan_texts = parse_numbered(&reply1, "plan");
    let parsed_choice = parse_chosen_plan(&reply1);
    let plan_fallback_used =
        parsed_choice.is_none() || parsed_choice.map(|c| c as usize) > Some(plan_texts.len().max(1));
    let chosen_plan = match parsed_choice {
        Some(c) if c >= 1 && (c as usize) <= plan_texts.len().max(1) => c,
        _ => 1,
    };
    let chosen_text = plan_texts
        .get(chosen_plan as usize - 1)
        .cloned()
        .unwrap_or_else(|| "Reason directly from the memory.".to_string());

    let mut stage2 = base;
    stage2.push(ChatMessage::user(format!(
        "Follow this reasoning plan: {}\n\
Generate {} candidate answers with brief justifications, listed as \"Candidate 1: ...\" \
through \"Candidate {}: ...\", then select the most plausible one and finish with a line \
\"Answer: <letter>\".",
        chosen_text, candidates, candidates
    )));
    let ctx2 = CallContext {
        task: Some(task),
        map,
        stage: CallStage::TotSelect { candidates },
        temperature,
        seed: crate::util::derive_seed(seed, "tot-select"),
    };
    let (reply2, record2) = timed_call(endpoint, &stage2, &ctx2, &task.id, "ToT", "select", 0);
    records.push(record2);
    let reply2 = reply2.unwrap_or_default();
    let candidate_texts = parse_numbered(&reply2, "candidate");
    let answer = extract_choice(&reply2);

    Ok(SchemeOutcome {
        answer,
        records,
        tot_log: Some(TotLog {
            plans: plan_texts,
            chosen_plan,
            plan_fallback_used,
            candidates: candidate_texts,
            final_choice: answer,
        }),
    })
}

/// Runs one task under one scheme against one endpoint. The endpoint's
/// configured temperature (when given) applies to single-completion calls;
/// SC-CoT always samples at its own temperature.
pub fn execute_scheme(
    endpoint: &dyn AgentEndpoint,
    bundle: &MemoryBundle,
    task: &TaskItem,
    scheme: SchemeKind,
    map: Option<&GridMap>,
    seed: u64,
    endpoint_temperature: Option<f64>,
) -> Result<SchemeOutcome, ReasonError> {
    match scheme {
        SchemeKind::Dt | SchemeKind::Cot => {
            let messages = build_task_prompt(bundle, task, scheme)?;
            let ctx = CallContext {
                task: Some(task),
                map,
                stage: CallStage::Single,
                temperature: endpoint_temperature.unwrap_or(0.0),
                seed,
            };
            let (answer, record) =
                run_single(endpoint, &messages, &ctx, &task.id, scheme.name());
            Ok(SchemeOutcome {
                answer,
                records: vec![record],
                tot_log: None,
            })
        }
        SchemeKind::ScCot { k, temperature } => {
            let messages = build_task_prompt(bundle, task, scheme)?;
            let ctx = CallContext {
                task: Some(task),
                map,
                stage: CallStage::Single,
                temperature,
                seed,
            };
            let (answer, records) =
                run_self_consistency(endpoint, &messages, k, temperature, &ctx, &task.id);
            Ok(SchemeOutcome {
                answer,
                records,
                tot_log: None,
            })
        }
        SchemeKind::Tot { plans, candidates } => run_tot(
            endpoint,
            bundle,
            task,
            plans,
            candidates,
            map,
            seed,
            endpoint_temperature.unwrap_or(TOT_STAGE_TEMPERATURE),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::{run_episode, EpisodeConfig, Strategy};
    use crate::memory::{build_bundle, MemoryKind, SdmOptions};
    use crate::synth::{random_map, SynthSpec};
    use crate::tasks::generate_tasks;
    use std::sync::Mutex;

    fn fixture() -> (GridMap, MemoryBundle, Vec<TaskItem>) {
        let map = random_map(
            77,
            20,
            20,
            &SynthSpec {
                pois: 10,
                main_roads: 4,
                intersections: Some(12),
                poi_spread: 2,
            },
        );
        let trace = run_episode(&map, &EpisodeConfig::new(Strategy::Nps, 1, 2, 5)).unwrap();
        let bundle = build_bundle(&trace, MemoryKind::Nsm, &SdmOptions::default());
        let tasks = generate_tasks(&map, 9).unwrap();
        (map, bundle, tasks)
    }

    #[test]
    fn extract_choice_prefers_last_answer_pattern() {
        assert_eq!(extract_choice("...therefore Answer: C"), Some(2));
        assert_eq!(extract_choice("I think B. Answer: B"), Some(1));
        assert_eq!(extract_choice("answer: d"), Some(3));
        assert_eq!(extract_choice("Answer: A ... wait, Answer: D"), Some(3));
        assert_eq!(extract_choice("I cannot tell."), None);
        // fallback: last standalone capital option letter
        assert_eq!(extract_choice("The best option is C"), Some(2));
        assert_eq!(extract_choice("Both A and B look wrong; D it is"), Some(3));
    }

    #[test]
    fn extract_choice_is_total() {
        use proptest::prelude::*;
        proptest!(|(s in ".*")| {
            let out = extract_choice(&s);
            prop_assert!(out.is_none() || out.unwrap() < 4);
        });
    }

    #[test]
    fn prompts_are_deterministic_and_scheme_suffixed() {
        let (_map, bundle, tasks) = fixture();
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let dt = build_task_prompt(&bundle, task, SchemeKind::Dt).unwrap();
        let dt2 = build_task_prompt(&bundle, task, SchemeKind::Dt).unwrap();
        assert_eq!(dt, dt2);
        assert!(!dt[1].text.ends_with(COT_SUFFIX));
        let cot = build_task_prompt(&bundle, task, SchemeKind::Cot).unwrap();
        assert!(cot[1].text.ends_with(COT_SUFFIX));
        let sc = build_task_prompt(&bundle, task, SchemeKind::sc_cot_default()).unwrap();
        assert!(sc[1].text.ends_with(COT_SUFFIX));
    }

    #[test]
    fn hybrid_prompt_orders_structured_before_dialogue() {
        let map = random_map(3, 12, 12, &SynthSpec::small_test());
        let trace = run_episode(&map, &EpisodeConfig::new(Strategy::Nps, 1, 2, 5)).unwrap();
        let bundle = build_bundle(&trace, MemoryKind::NsmSdm, &SdmOptions::default());
        let tasks = generate_tasks(&map, 1);
        // small maps may not support all families; fall back to a direct check
        if let Ok(tasks) = tasks {
            if let Some(task) = tasks.iter().find(|t| !t.degenerate) {
                let messages = build_task_prompt(&bundle, task, SchemeKind::Dt).unwrap();
                let text = &messages[1].text;
                let nsm = text.find("MEMFMT v1 NSM").unwrap();
                let sep = text.find(crate::memory::HYBRID_SEPARATOR).unwrap();
                let sdm = text.find("MEMFMT v1 SDM").unwrap();
                assert!(nsm < sep && sep < sdm);
            }
        }
    }

    #[test]
    fn degenerate_tasks_cannot_be_prompted() {
        let (_map, bundle, tasks) = fixture();
        let mut task = tasks[0].clone();
        task.degenerate = true;
        assert!(matches!(
            build_task_prompt(&bundle, &task, SchemeKind::Dt),
            Err(ReasonError::DegenerateTask(_))
        ));
    }

    #[test]
    fn oracle_endpoint_is_always_correct_under_every_scheme() {
        let (map, bundle, tasks) = fixture();
        let endpoint = ScriptedOracle;
        for scheme in [
            SchemeKind::Dt,
            SchemeKind::Cot,
            SchemeKind::sc_cot_default(),
            SchemeKind::tot_default(),
        ] {
            for task in tasks.iter().filter(|t| !t.degenerate) {
                let outcome =
                    execute_scheme(&endpoint, &bundle, task, scheme, Some(&map), 1, None).unwrap();
                assert_eq!(outcome.answer, Some(task.correct), "{} under {}", task.id, scheme);
            }
        }
    }

    #[test]
    fn random_endpoint_is_reproducible_and_roughly_uniform() {
        let (map, bundle, tasks) = fixture();
        let endpoint = ScriptedRandom;
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let run = |seed: u64| {
            execute_scheme(&endpoint, &bundle, task, SchemeKind::Dt, Some(&map), seed, None)
                .unwrap()
                .answer
        };
        assert_eq!(run(4), run(4));
        let mut counts = [0u32; 4];
        for seed in 0..2000u64 {
            counts[run(seed).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / 2000.0;
            assert!((f - 0.25).abs() < 0.05, "frequency {}", f);
        }
    }

    /// Endpoint that replays a fixed list of replies, for vote-rule tests.
    struct ScriptedSequence {
        replies: Mutex<Vec<String>>,
        calls: Mutex<u32>,
    }

    impl ScriptedSequence {
        fn new(replies: &[&str]) -> Self {
            ScriptedSequence {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                calls: Mutex::new(0),
            }
        }

        fn calls(&self) -> u32 {
            *self.calls.lock().unwrap()
        }
    }

    impl AgentEndpoint for ScriptedSequence {
        fn id(&self) -> String {
            "scripted-sequence".to_string()
        }

        fn complete(
            &self,
            _messages: &[ChatMessage],
            _ctx: &CallContext,
        ) -> Result<String, ReasonError> {
            *self.calls.lock().unwrap() += 1;
            self.replies
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| ReasonError::Endpoint("sequence exhausted".into()))
        }
    }

    #[test]
    fn self_consistency_majority_and_tie_rules() {
        let (_map, bundle, tasks) = fixture();
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let messages = build_task_prompt(&bundle, task, SchemeKind::sc_cot_default()).unwrap();
        let ctx = CallContext {
            task: Some(task),
            map: None,
            stage: CallStage::Single,
            temperature: 1.0,
            seed: 0,
        };
        // clear majority
        let ep = ScriptedSequence::new(&[
            "Answer: A",
            "Answer: A",
            "Answer: B",
            "Answer: A",
            "Answer: C",
        ]);
        let (winner, records) = run_self_consistency(&ep, &messages, 5, 1.0, &ctx, &task.id);
        assert_eq!(winner, Some(0));
        assert_eq!(records.len(), 5);
        // 2-2 tie with one invalid: A was sampled first
        let ep = ScriptedSequence::new(&[
            "Answer: A",
            "Answer: B",
            "Answer: A",
            "Answer: B",
            "no idea",
        ]);
        let (winner, _) = run_self_consistency(&ep, &messages, 5, 1.0, &ctx, &task.id);
        assert_eq!(winner, Some(0));
        // all invalid
        let ep = ScriptedSequence::new(&["?", "?", "?", "?", "?"]);
        let (winner, _) = run_self_consistency(&ep, &messages, 5, 1.0, &ctx, &task.id);
        assert_eq!(winner, None);
    }

    #[test]
    fn tot_makes_exactly_two_calls_and_logs_stages() {
        let (map, bundle, tasks) = fixture();
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let ep = ScriptedSequence::new(&[
            "Plan 1: recall coordinates.\nPlan 2: rebuild the route graph.\nPlan 3: compare options.\nChosen plan: 2",
            "Candidate 1: option B.\nCandidate 2: option B.\nCandidate 3: option A.\nAnswer: B",
        ]);
        let outcome = run_tot(&ep, &bundle, task, 3, 3, Some(&map), 7, 0.7).unwrap();
        assert_eq!(ep.calls(), 2);
        assert_eq!(outcome.answer, Some(1));
        let log = outcome.tot_log.unwrap();
        assert_eq!(log.plans.len(), 3);
        assert_eq!(log.chosen_plan, 2);
        assert!(!log.plan_fallback_used);
        assert_eq!(log.candidates.len(), 3);
        assert_eq!(log.final_choice, Some(1));
        // log record schema survives serialization
        let json = serde_json::to_string(&log).unwrap();
        let parsed: TotLog = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.chosen_plan, 2);
    }

    #[test]
    fn tot_falls_back_to_first_plan_when_selection_is_unparseable() {
        let (map, bundle, tasks) = fixture();
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let ep = ScriptedSequence::new(&[
            "Plan 1: something.\nPlan 2: something else.\nPlan 3: third.\nI like the second one.",
            "Answer: C",
        ]);
        let outcome = run_tot(&ep, &bundle, task, 3, 3, Some(&map), 7, 0.7).unwrap();
        let log = outcome.tot_log.unwrap();
        assert!(log.plan_fallback_used);
        assert_eq!(log.chosen_plan, 1);
        assert_eq!(outcome.answer, Some(2));
    }

    #[test]
    fn endpoint_errors_score_invalid_after_retries() {
        let (_map, bundle, tasks) = fixture();
        let task = tasks.iter().find(|t| !t.degenerate).unwrap();
        let messages = build_task_prompt(&bundle, task, SchemeKind::Dt).unwrap();
        let ep = ScriptedSequence::new(&[]); // immediately exhausted
        let ctx = CallContext {
            task: Some(task),
            map: None,
            stage: CallStage::Single,
            temperature: 0.0,
            seed: 0,
        };
        let (answer, record) = run_single(&ep, &messages, &ctx, &task.id, "DT");
        assert_eq!(answer, None);
        assert!(record.error.is_some());
    }

    #[test]
    fn remote_endpoint_speaks_the_chat_completions_protocol() {
        use std::io::{Read, Write};
        use std::net::TcpListener;

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut total = 0usize;
            let body_start;
            loop {
                let n = stream.read(&mut buf[total..]).unwrap();
                total += n;
                if let Some(pos) = find_headers_end(&buf[..total]) {
                    body_start = pos;
                    break;
                }
            }
            let headers = String::from_utf8_lossy(&buf[..body_start]).to_string();
            let content_length: usize = headers
                .lines()
                .find(|l| l.to_ascii_lowercase().starts_with("content-length"))
                .and_then(|l| l.split(':').nth(1))
                .and_then(|v| v.trim().parse().ok())
                .unwrap();
            while total - body_start < content_length {
                let n = stream.read(&mut buf[total..]).unwrap();
                total += n;
            }
            let body = String::from_utf8_lossy(&buf[body_start..total]).to_string();
            let reply_body =
                r#"{"choices":[{"message":{"role":"assistant","content":"Answer: B"}}]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply_body.len(),
                reply_body
            );
            stream.write_all(response.as_bytes()).unwrap();
            (headers, body)
        });

        fn find_headers_end(data: &[u8]) -> Option<usize> {
            data.windows(4)
                .position(|w| w == b"\r\n\r\n")
                .map(|p| p + 4)
        }

        let endpoint = RemoteChatEndpoint::with_key(
            "test-model",
            format!("http://{}", addr),
            1,
            "sk-test",
        );
        let ctx = CallContext {
            task: None,
            map: None,
            stage: CallStage::Single,
            temperature: 0.5,
            seed: 0,
        };
        let messages = vec![
            ChatMessage::system("sys"),
            ChatMessage::user("which option?"),
        ];
        let reply = endpoint.complete(&messages, &ctx).unwrap();
        assert_eq!(reply, "Answer: B");
        let (headers, body) = server.join().unwrap();
        assert!(headers.starts_with("POST /v1/chat/completions"));
        assert!(headers.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(parsed["model"], "test-model");
        assert_eq!(parsed["temperature"], 0.5);
        assert_eq!(parsed["n"], 1);
        assert_eq!(parsed["messages"][0]["role"], "system");
        assert_eq!(parsed["messages"][1]["content"], "which option?");
    }
}
