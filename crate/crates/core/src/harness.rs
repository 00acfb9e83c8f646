//! The experiment harness: phase presets, the (city x strategy x memory x
//! scheme x endpoint) matrix with content-addressed resume, per-category
//! accuracy aggregation, and report emission.

pub mod cli;

use crate::explore::{run_episode, EpisodeConfig, ExplorationTrace, NpsMetric, Strategy};
use crate::ingest::{city_slug, load_map};
use crate::mapenv::GridMap;
use crate::memory::{build_bundle, MemoryBundle, MemoryKind, SdmOptions};
use crate::reason::{
    execute_scheme, AgentEndpoint, ReasonError, RemoteChatEndpoint, SchemeKind, ScriptedOracle,
    ScriptedRandom,
};
use crate::tasks::{generate_tasks_with, GenOptions, TaskCategory, TaskItem, TaskMetric};
use crate::util::{derive_seed, fnv1a64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Explore(#[from] crate::explore::ExploreError),
    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKindSpec {
    ScriptedOracle,
    ScriptedRandom,
    RemoteChat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub kind: EndpointKindSpec,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Sampling temperature for single-completion calls (DT/CoT and the
    /// ToT stages); SC-CoT always samples at its own configured
    /// temperature. Must lie in [0, 2].
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
}

impl EndpointSpec {
    pub fn scripted_oracle() -> Self {
        EndpointSpec {
            kind: EndpointKindSpec::ScriptedOracle,
            model: None,
            base_url: None,
            temperature: None,
            max_attempts: None,
        }
    }

    pub fn scripted_random() -> Self {
        EndpointSpec {
            kind: EndpointKindSpec::ScriptedRandom,
            model: None,
            base_url: None,
            temperature: None,
            max_attempts: None,
        }
    }

    pub fn id(&self) -> String {
        match self.kind {
            EndpointKindSpec::ScriptedOracle => "scripted-oracle".to_string(),
            EndpointKindSpec::ScriptedRandom => "scripted-random".to_string(),
            EndpointKindSpec::RemoteChat => self
                .model
                .clone()
                .unwrap_or_else(|| "remote-chat".to_string()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn AgentEndpoint>, HarnessError> {
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(HarnessError::Config(format!(
                    "endpoint temperature {} outside [0, 2]",
                    t
                )));
            }
        }
        match self.kind {
            EndpointKindSpec::ScriptedOracle => Ok(Box::new(ScriptedOracle)),
            EndpointKindSpec::ScriptedRandom => Ok(Box::new(ScriptedRandom)),
            EndpointKindSpec::RemoteChat => {
                let model = self.model.clone().ok_or_else(|| {
                    HarnessError::Config("remote-chat endpoint needs a model".into())
                })?;
                let base_url = self.base_url.clone().ok_or_else(|| {
                    HarnessError::Config("remote-chat endpoint needs a base_url".into())
                })?;
                let endpoint =
                    RemoteChatEndpoint::new(model, base_url, self.max_attempts.unwrap_or(3))?;
                Ok(Box::new(endpoint))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitsConfig {
    /// Worker threads for matrix cells.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Remote request budget per second; 0 disables throttling.
    #[serde(default)]
    pub requests_per_second: f64,
}

fn default_jobs() -> usize {
    1
}

impl Default for LimitsConfig {
    fn default() -> Self {
        LimitsConfig {
            jobs: 1,
            requests_per_second: 0.0,
        }
    }
}

/// Full experiment matrix description, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Optional phase preset: "I", "II", or "III". Explicit axes override.
    #[serde(default)]
    pub phase: Option<String>,
    pub cities: Vec<PathBuf>,
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub memories: Vec<String>,
    #[serde(default)]
    pub schemes: Vec<String>,
    #[serde(rename = "endpoint", default)]
    pub endpoints: Vec<EndpointSpec>,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub radius: i32,
    /// Episodes per cell; item records pool across repeats.
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    /// Distance notion for DS/PJ items: "euclidean" (default) or
    /// "road-moves".
    #[serde(default)]
    pub task_metric: TaskMetric,
    /// DS interval-boundary rejection margin.
    #[serde(default = "default_ds_margin")]
    pub ds_boundary_margin: f64,
    /// Minimum gap between the two nearest PJ alternatives.
    #[serde(default = "default_pj_margin")]
    pub pj_margin: f64,
    /// Nearest-POI metric for NPS: "route-moves" (default) or "euclidean".
    #[serde(default)]
    pub nps_metric: NpsMetric,
    /// Append a fixed agent acknowledgment after each narrated arrival.
    #[serde(default)]
    pub sdm_agent_acknowledgments: bool,
    #[serde(default)]
    pub limits: LimitsConfig,
}

fn default_ds_margin() -> f64 {
    0.25
}

fn default_pj_margin() -> f64 {
    0.5
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            phase: None,
            cities: Vec::new(),
            strategies: Vec::new(),
            memories: Vec::new(),
            schemes: Vec::new(),
            endpoints: Vec::new(),
            n: default_n(),
            seed: 0,
            radius: default_radius(),
            repeats: default_repeats(),
            task_metric: TaskMetric::default(),
            ds_boundary_margin: default_ds_margin(),
            pj_margin: default_pj_margin(),
            nps_metric: NpsMetric::default(),
            sdm_agent_acknowledgments: false,
            limits: LimitsConfig::default(),
        }
    }
}

fn default_n() -> u32 {
    1
}

fn default_radius() -> i32 {
    2
}

fn default_repeats() -> u32 {
    1
}

/// The three protocol presets: Phase I varies only the exploration
/// strategy, Phase II only the memory representation, Phase III only the
/// reasoning scheme.
pub fn phase_axes(phase: &str) -> Option<(Vec<&'static str>, Vec<&'static str>, Vec<&'static str>)> {
    match phase.trim().to_ascii_uppercase().as_str() {
        "I" | "1" => Some((vec!["NPS", "RVS", "TDS"], vec!["SDM"], vec!["DT"])),
        "II" | "2" => Some((
            vec!["NPS"],
            vec!["SDM", "NSM", "GM", "MM", "NSM+SDM", "GM+SDM", "MM+SDM"],
            vec!["DT"],
        )),
        "III" | "3" => Some((
            vec!["NPS"],
            vec!["NSM"],
            vec!["DT", "CoT", "SC-CoT", "ToT"],
        )),
        _ => None,
    }
}

/// Resolved axes ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub cities: Vec<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub memories: Vec<MemoryKind>,
    pub schemes: Vec<SchemeKind>,
    pub endpoints: Vec<EndpointSpec>,
    pub n: u32,
    pub seed: u64,
    pub radius: i32,
    pub repeats: u32,
    pub gen_options: GenOptions,
    pub nps_metric: NpsMetric,
    pub sdm_options: SdmOptions,
    pub limits: LimitsConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, HarnessError> {
        let mut strategies = self.strategies.clone();
        let mut memories = self.memories.clone();
        let mut schemes = self.schemes.clone();
        if let Some(phase) = &self.phase {
            let (ps, pm, pc) = phase_axes(phase)
                .ok_or_else(|| HarnessError::Config(format!("unknown phase '{}'", phase)))?;
            if strategies.is_empty() {
                strategies = ps.into_iter().map(String::from).collect();
            }
            if memories.is_empty() {
                memories = pm.into_iter().map(String::from).collect();
            }
            if schemes.is_empty() {
                schemes = pc.into_iter().map(String::from).collect();
            }
        }
        if self.cities.is_empty() {
            return Err(HarnessError::Config("no cities configured".into()));
        }
        if strategies.is_empty() || memories.is_empty() || schemes.is_empty() {
            return Err(HarnessError::Config(
                "strategies, memories, and schemes must all be non-empty".into(),
            ));
        }
        if self.endpoints.is_empty() {
            return Err(HarnessError::Config("no endpoints configured".into()));
        }
        let strategies = strategies
            .iter()
            .map(|s| {
                Strategy::from_name(s)
                    .ok_or_else(|| HarnessError::Config(format!("unknown strategy '{}'", s)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let memories = memories
            .iter()
            .map(|m| {
                MemoryKind::from_name(m)
                    .ok_or_else(|| HarnessError::Config(format!("unknown memory '{}'", m)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let schemes = schemes
            .iter()
            .map(|s| {
                SchemeKind::from_name(s)
                    .ok_or_else(|| HarnessError::Config(format!("unknown scheme '{}'", s)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ResolvedConfig {
            cities: self.cities.clone(),
            strategies,
            memories,
            schemes,
            endpoints: self.endpoints.clone(),
            n: self.n.max(1),
            seed: self.seed,
            radius: self.radius.max(1),
            repeats: self.repeats.max(1),
            gen_options: GenOptions {
                metric: self.task_metric,
                ds_boundary_margin: self.ds_boundary_margin,
                pj_margin: self.pj_margin,
            },
            nps_metric: self.nps_metric,
            sdm_options: SdmOptions {
                agent_acknowledgments: self.sdm_agent_acknowledgments,
            },
            limits: self.limits.clone(),
        })
    }

    /// Stable identifier for a (config, seed) pair; names the results
    /// directory so reruns resume instead of recomputing.
    pub fn run_id(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a64(canonical.as_bytes()) ^ self.seed)
    }
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub city: String,
    pub strategy: String,
    pub memory: String,
    pub scheme: String,
    pub endpoint: String,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.city, self.strategy, self.memory, self.scheme, self.endpoint
        )
    }

    fn content_address(&self, seed: u64) -> String {
        format!("{:016x}", fnv1a64(format!("{}#{}", self.label(), seed).as_bytes()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRecord {
    pub task_id: String,
    pub category: TaskCategory,
    pub repeat: u32,
    pub chosen: Option<usize>,
    pub correct_index: usize,
    pub is_correct: bool,
    pub invalid: bool,
    pub reply_ref: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub key: CellKey,
    pub items: Vec<ItemRecord>,
    /// Serialized memory size per repeat, in bits.
    pub memory_size_bits: Vec<u64>,
    pub degenerate_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunResult {
    pub fn scoreable(&self, category: Option<TaskCategory>) -> (u32, u32) {
        let mut correct = 0;
        let mut total = 0;
        for item in &self.items {
            if category.map(|c| c == item.category).unwrap_or(true) {
                total += 1;
                if item.is_correct {
                    correct += 1;
                }
            }
        }
        (correct, total)
    }

    pub fn total_accuracy(&self) -> Option<f64> {
        let (correct, total) = self.scoreable(None);
        (total > 0).then(|| correct as f64 / total as f64)
    }

    pub fn mean_memory_bits(&self) -> f64 {
        if self.memory_size_bits.is_empty() {
            return 0.0;
        }
        self.memory_size_bits.iter().sum::<u64>() as f64 / self.memory_size_bits.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Matrix execution
// ---------------------------------------------------------------------------

struct CityData {
    map: GridMap,
    tasks: Vec<TaskItem>,
}

/// Simple token bucket; 0 rate means no throttling.
pub struct TokenBucket {
    rate: f64,
    state: Mutex<(f64, std::time::Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Self {
        TokenBucket {
            rate,
            state: Mutex::new((rate.max(1.0), std::time::Instant::now())),
        }
    }

    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let (ref mut tokens, ref mut last) = *state;
                let now = std::time::Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate)
                    .min(self.rate.max(1.0));
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    None
                } else {
                    Some(std::time::Duration::from_secs_f64((1.0 - *tokens) / self.rate))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }
}

/// Throttles an endpoint through a shared token bucket.
struct ThrottledEndpoint<'a> {
    inner: &'a dyn AgentEndpoint,
    bucket: &'a TokenBucket,
}

impl AgentEndpoint for ThrottledEndpoint<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(
        &self,
        messages: &[crate::reason::ChatMessage],
        ctx: &crate::reason::CallContext,
    ) -> Result<String, ReasonError> {
        self.bucket.acquire();
        self.inner.complete(messages, ctx)
    }
}

fn atomic_write(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

/// Evaluates one matrix cell: every non-degenerate item of the city's task
/// set, over `repeats` episodes, against the endpoint.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    key: &CellKey,
    map: &GridMap,
    tasks: &[TaskItem],
    bundles: &[(u64, MemoryBundle)],
    scheme: SchemeKind,
    endpoint: &dyn AgentEndpoint,
    endpoint_temperature: Option<f64>,
    master_seed: u64,
    replies_path: &Path,
) -> Result<RunResult, HarnessError> {
    let mut items = Vec::new();
    let mut reply_log = String::new();
    let reply_ref = replies_path
        .file_name()
        .map(|f| format!("replies/{}", f.to_string_lossy()))
        .unwrap_or_default();
    let degenerate_count = tasks.iter().filter(|t| t.degenerate).count() as u32;
    for (repeat, (_, bundle)) in bundles.iter().enumerate() {
        for task in tasks.iter().filter(|t| !t.degenerate) {
            let item_seed = derive_seed(
                master_seed,
                &format!("item/{}/{}/{}", key.label(), repeat, task.id),
            );
            let outcome = execute_scheme(
                endpoint,
                bundle,
                task,
                scheme,
                Some(map),
                item_seed,
                endpoint_temperature,
            )?;
            for record in &outcome.records {
                reply_log.push_str(&serde_json::to_string(record)?);
                reply_log.push('\n');
            }
            if let Some(tot_log) = &outcome.tot_log {
                let wrapper = serde_json::json!({
                    "task_id": task.id,
                    "scheme": scheme.name(),
                    "stage": "tot-log",
                    "log": tot_log,
                });
                reply_log.push_str(&serde_json::to_string(&wrapper)?);
                reply_log.push('\n');
            }
            let chosen = outcome.answer;
            items.push(ItemRecord {
                task_id: task.id.clone(),
                category: task.category,
                repeat: repeat as u32,
                chosen,
                correct_index: task.correct,
                is_correct: chosen == Some(task.correct),
                invalid: chosen.is_none(),
                reply_ref: reply_ref.clone(),
            });
        }
    }
    if let Some(parent) = replies_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(replies_path, &reply_log)?;
    Ok(RunResult {
        key: key.clone(),
        items,
        memory_size_bits: bundles.iter().map(|(_, b)| b.size_bits).collect(),
        degenerate_count,
        error: None,
    })
}

/// Runs the full matrix under `out_dir`, reusing any cell already
/// committed there (content-addressed by cell key and seed). Exploration
/// traces and memory bundles are cached per (city, strategy, n, repeat) and
/// shared across scheme and endpoint cells.
pub fn run_matrix(
    config: &ResolvedConfig,
    out_dir: &Path,
) -> Result<Vec<RunResult>, HarnessError> {
    std::fs::create_dir_all(out_dir.join("cells"))?;
    std::fs::create_dir_all(out_dir.join("replies"))?;

    // Cities, their task sets, and per-strategy traces and bundles.
    let mut cities: Vec<(String, Result<CityData, String>)> = Vec::new();
    for path in &config.cities {
        match load_map(path) {
            Ok(map) => {
                let slug = city_slug(map.city_name());
                let task_seed = derive_seed(config.seed, &format!("tasks/{}", slug));
                match generate_tasks_with(&map, task_seed, &config.gen_options) {
                    Ok(tasks) => cities.push((slug, Ok(CityData { map, tasks }))),
                    Err(e) => cities.push((slug, Err(e.to_string()))),
                }
            }
            Err(e) => {
                let slug = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                cities.push((slug, Err(e.to_string())));
            }
        }
    }

    // Traces per (city, strategy, repeat), shared across memory/scheme/
    // endpoint cells.
    let mut traces: BTreeMap<(String, Strategy, u32), ExplorationTrace> = BTreeMap::new();
    for (slug, data) in &cities {
        let Ok(data) = data else { continue };
        for &strategy in &config.strategies {
            for repeat in 0..config.repeats {
                let explore_seed = derive_seed(
                    config.seed,
                    &format!("explore/{}/{}/{}/{}", slug, strategy.name(), config.n, repeat),
                );
                let mut episode =
                    EpisodeConfig::new(strategy, config.n, config.radius, explore_seed);
                episode.nps_metric = config.nps_metric;
                let trace = run_episode(&data.map, &episode)?;
                traces.insert((slug.clone(), strategy, repeat), trace);
            }
        }
    }
    let mut bundles: BTreeMap<(String, Strategy, MemoryKind), Vec<(u64, MemoryBundle)>> =
        BTreeMap::new();
    for ((slug, strategy, repeat), trace) in &traces {
        for &memory in &config.memories {
            let bundle = build_bundle(trace, memory, &config.sdm_options);
            bundles
                .entry((slug.clone(), *strategy, memory))
                .or_default()
                .push((*repeat as u64, bundle));
        }
    }

    // Matrix cells.
    struct CellJob<'a> {
        key: CellKey,
        city: &'a CityData,
        bundles: &'a [(u64, MemoryBundle)],
        scheme: SchemeKind,
        endpoint_index: usize,
    }
    let endpoints: Vec<Box<dyn AgentEndpoint>> = config
        .endpoints
        .iter()
        .map(|spec| spec.build())
        .collect::<Result<Vec<_>, _>>()?;
    let bucket = TokenBucket::new(config.limits.requests_per_second);

    let mut jobs: Vec<CellJob> = Vec::new();
    let mut results: Vec<RunResult> = Vec::new();
    for (slug, data) in &cities {
        for &strategy in &config.strategies {
            for &memory in &config.memories {
                for &scheme in &config.schemes {
                    for (ei, spec) in config.endpoints.iter().enumerate() {
                        let key = CellKey {
                            city: slug.clone(),
                            strategy: strategy.name().to_string(),
                            memory: memory.name().to_string(),
                            scheme: scheme.name().to_string(),
                            endpoint: spec.id(),
                        };
                        match data {
                            Err(e) => {
                                // map or task failure: error record, run on
                                results.push(RunResult {
                                    key,
                                    items: Vec::new(),
                                    memory_size_bits: Vec::new(),
                                    degenerate_count: 0,
                                    error: Some(e.clone()),
                                });
                            }
                            Ok(city) => {
                                jobs.push(CellJob {
                                    key,
                                    city,
                                    bundles: &bundles[&(slug.clone(), strategy, memory)],
                                    scheme,
                                    endpoint_index: ei,
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let completed: Mutex<Vec<RunResult>> = Mutex::new(Vec::new());
    let pending: Mutex<std::collections::VecDeque<CellJob>> = Mutex::new(jobs.into());
    let worker = |seq: &Mutex<std::collections::VecDeque<CellJob>>| -> Result<(), HarnessError> {
        loop {
            let job = {
                let mut q = seq.lock().unwrap();
                match q.pop_front() {
                    Some(j) => j,
                    None => return Ok(()),
                }
            };
            let address = job.key.content_address(config.seed);
            let cell_path = out_dir.join("cells").join(format!("{}.json", address));
            let result = if cell_path.exists() {
                serde_json::from_str(&std::fs::read_to_string(&cell_path)?)?
            } else {
                let endpoint = ThrottledEndpoint {
                    inner: endpoints[job.endpoint_index].as_ref(),
                    bucket: &bucket,
                };
                let replies_path = out_dir.join("replies").join(format!("{}.jsonl", address));
                let result = run_cell(
                    &job.key,
                    &job.city.map,
                    &job.city.tasks,
                    job.bundles,
                    job.scheme,
                    &endpoint,
                    config.endpoints[job.endpoint_index].temperature,
                    config.seed,
                    &replies_path,
                )?;
                let mut rendered = serde_json::to_string_pretty(&result)?;
                rendered.push('\n');
                atomic_write(&cell_path, &rendered)?;
                result
            };
            completed.lock().unwrap().push(result);
        }
    };

    let jobs_limit = config.limits.jobs.max(1);
    if jobs_limit == 1 {
        worker(&pending)?;
    } else {
        std::thread::scope(|scope| -> Result<(), HarnessError> {
            let mut handles = Vec::new();
            for _ in 0..jobs_limit {
                handles.push(scope.spawn(|| worker(&pending)));
            }
            for handle in handles {
                handle.join().expect("worker panicked")?;
            }
            Ok(())
        })?;
    }

    results.extend(completed.into_inner().unwrap());
    results.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(results)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// City-pooled accuracy for one (strategy, memory, scheme, endpoint) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCell {
    pub strategy: String,
    pub memory: String,
    pub scheme: String,
    pub endpoint: String,
    /// (correct, scoreable) per category.
    pub per_category: BTreeMap<TaskCategory, (u32, u32)>,
    pub total: (u32, u32),
    pub degenerate_count: u32,
    pub mean_memory_bits: f64,
    pub cities: u32,
}

impl PooledCell {
    pub fn category_accuracy(&self, category: TaskCategory) -> Option<f64> {
        let &(correct, total) = self.per_category.get(&category)?;
        (total > 0).then(|| correct as f64 / total as f64)
    }

    pub fn total_accuracy(&self) -> Option<f64> {
        (self.total.1 > 0).then(|| self.total.0 as f64 / self.total.1 as f64)
    }
}

/// Pools per-city results into per-cell rows: category accuracy is correct
/// over scoreable within the category, total over all items; degenerate
/// items never enter a denominator.
pub fn aggregate(results: &[RunResult]) -> Vec<PooledCell> {
    let mut pooled: BTreeMap<(String, String, String, String), PooledCell> = BTreeMap::new();
    for result in results {
        if result.error.is_some() {
            continue;
        }
        let key = (
            result.key.strategy.clone(),
            result.key.memory.clone(),
            result.key.scheme.clone(),
            result.key.endpoint.clone(),
        );
        let cell = pooled.entry(key.clone()).or_insert_with(|| PooledCell {
            strategy: key.0.clone(),
            memory: key.1.clone(),
            scheme: key.2.clone(),
            endpoint: key.3.clone(),
            per_category: BTreeMap::new(),
            total: (0, 0),
            degenerate_count: 0,
            mean_memory_bits: 0.0,
            cities: 0,
        });
        for category in TaskCategory::ALL {
            let (c, t) = result.scoreable(Some(category));
            let entry = cell.per_category.entry(category).or_insert((0, 0));
            entry.0 += c;
            entry.1 += t;
        }
        let (c, t) = result.scoreable(None);
        cell.total.0 += c;
        cell.total.1 += t;
        cell.degenerate_count += result.degenerate_count;
        cell.mean_memory_bits += result.mean_memory_bits();
        cell.cities += 1;
    }
    let mut cells: Vec<PooledCell> = pooled
        .into_values()
        .map(|mut cell| {
            if cell.cities > 0 {
                cell.mean_memory_bits /= cell.cities as f64;
            }
            cell
        })
        .collect();
    cells.sort_by(|a, b| {
        (&a.strategy, &a.memory, &a.scheme, &a.endpoint)
            .cmp(&(&b.strategy, &b.memory, &b.scheme, &b.endpoint))
    });
    cells
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

fn format_pct(correct: u32, total: u32) -> String {
    if total == 0 {
        "n/a".to_string()
    } else {
        format!("{:.2}%", 100.0 * correct as f64 / total as f64)
    }
}

/// One row per pooled matrix cell with the five category columns and the
/// total.
pub fn render_cells_csv(pooled: &[PooledCell]) -> String {
    let mut out = String::from("strategy,memory,scheme,endpoint,DJ,DS,PJ,PDR,PP,total\n");
    for cell in pooled {
        let mut row = vec![
            cell.strategy.clone(),
            cell.memory.clone(),
            cell.scheme.clone(),
            cell.endpoint.clone(),
        ];
        for category in TaskCategory::ALL {
            let (c, t) = cell.per_category.get(&category).copied().unwrap_or((0, 0));
            row.push(format_pct(c, t));
        }
        row.push(format_pct(cell.total.0, cell.total.1));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One JSON line per item record, annotated with its cell key.
pub fn render_items_jsonl(results: &[RunResult]) -> String {
    let mut out = String::new();
    for result in results {
        for item in &result.items {
            let line = serde_json::json!({
                "city": result.key.city,
                "strategy": result.key.strategy,
                "memory": result.key.memory,
                "scheme": result.key.scheme,
                "endpoint": result.key.endpoint,
                "task_id": item.task_id,
                "category": item.category,
                "repeat": item.repeat,
                "chosen": item.chosen,
                "correct_index": item.correct_index,
                "is_correct": item.is_correct,
                "invalid": item.invalid,
                "reply_ref": item.reply_ref,
            });
            out.push_str(&serde_json::to_string(&line).expect("item serializes"));
            out.push('\n');
        }
    }
    out
}

/// Memory size against accuracy, one row per memory kind and endpoint.
pub fn render_memsize_csv(pooled: &[PooledCell]) -> String {
    let mut out = String::from("memory,endpoint,mean_size_bits,total_accuracy\n");
    for cell in pooled {
        out.push_str(&format!(
            "{},{},{:.1},{}\n",
            cell.memory,
            cell.endpoint,
            cell.mean_memory_bits,
            format_pct(cell.total.0, cell.total.1)
        ));
    }
    out
}

/// Markdown summary: one table per (strategy, memory, scheme) group with
/// category rows and endpoint columns.
pub fn render_summary_md(pooled: &[PooledCell]) -> String {
    let mut out = String::from("# Evaluation summary\n");
    let mut groups: BTreeMap<(String, String, String), Vec<&PooledCell>> = BTreeMap::new();
    for cell in pooled {
        groups
            .entry((cell.strategy.clone(), cell.memory.clone(), cell.scheme.clone()))
            .or_default()
            .push(cell);
    }
    for ((strategy, memory, scheme), cells) in groups {
        out.push_str(&format!(
            "\n## strategy {} / memory {} / scheme {}\n\n",
            strategy, memory, scheme
        ));
        out.push_str("| Category |");
        for cell in &cells {
            out.push_str(&format!(" {} |", cell.endpoint));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &cells {
            out.push_str("---|");
        }
        out.push('\n');
        for category in TaskCategory::ALL {
            out.push_str(&format!("| {} |", category.name()));
            for cell in &cells {
                let (c, t) = cell.per_category.get(&category).copied().unwrap_or((0, 0));
                out.push_str(&format!(" {} |", format_pct(c, t)));
            }
            out.push('\n');
        }
        out.push_str("| Total |");
        for cell in &cells {
            out.push_str(&format!(" {} |", format_pct(cell.total.0, cell.total.1)));
        }
        out.push('\n');
        let degenerates: u32 = cells.iter().map(|c| c.degenerate_count).sum();
        out.push_str(&format!(
            "\nDegenerate items excluded from denominators: {}\n",
            degenerates
        ));
    }
    out
}

/// Writes cells.csv, items.jsonl, memsize.csv, and summary.md under the
/// run directory.
pub fn emit_reports(
    results: &[RunResult],
    pooled: &[PooledCell],
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    atomic_write(&out_dir.join("cells.csv"), &render_cells_csv(pooled))?;
    atomic_write(&out_dir.join("items.jsonl"), &render_items_jsonl(results))?;
    atomic_write(&out_dir.join("memsize.csv"), &render_memsize_csv(pooled))?;
    atomic_write(&out_dir.join("summary.md"), &render_summary_md(pooled))?;
    Ok(())
}

/// Reads all committed cell results back from a run directory.
pub fn load_results(out_dir: &Path) -> Result<Vec<RunResult>, HarnessError> {
    let mut results: Vec<RunResult> = Vec::new();
    let cells = out_dir.join("cells");
    if cells.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&cells)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        paths.sort();
        for path in paths {
            results.push(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
    }
    results.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::save_map;
    use crate::synth::{random_map, SynthSpec};

    fn city_file(dir: &Path, seed: u64, name: &str) -> PathBuf {
        let spec = SynthSpec {
            pois: 8,
            main_roads: 4,
            intersections: Some(8),
            poi_spread: 2,
        };
        let mut map = random_map(seed, 16, 16, &spec);
        // give each synthetic city its own name for distinct slugs
        map = {
            let rendered = crate::ingest::render_map(&map);
            let renamed = rendered.replacen("\"city\": \"synth\"", &format!("\"city\": \"{}\"", name), 1);
            crate::ingest::parse_map(&renamed).unwrap()
        };
        let path = dir.join(format!("{}.json", name));
        save_map(&map, &path).unwrap();
        path
    }

    fn oracle_config(dir: &Path, cities: &[PathBuf]) -> ExperimentConfig {
        let _ = dir;
        ExperimentConfig {
            phase: Some("I".to_string()),
            cities: cities.to_vec(),
            strategies: vec![],
            memories: vec![],
            schemes: vec![],
            endpoints: vec![EndpointSpec::scripted_oracle()],
            n: 1,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn phase_presets_shape_the_matrix() {
        let (s, m, c) = phase_axes("I").unwrap();
        assert_eq!(s, vec!["NPS", "RVS", "TDS"]);
        assert_eq!(m, vec!["SDM"]);
        assert_eq!(c, vec!["DT"]);
        let (s, m, c) = phase_axes("II").unwrap();
        assert_eq!(s, vec!["NPS"]);
        assert_eq!(m.len(), 7);
        assert_eq!(c, vec!["DT"]);
        let (s, m, c) = phase_axes("III").unwrap();
        assert_eq!(s, vec!["NPS"]);
        assert_eq!(m, vec!["NSM"]);
        assert_eq!(c, vec!["DT", "CoT", "SC-CoT", "ToT"]);
    }

    #[test]
    fn oracle_matrix_scores_everything_correct() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![
            city_file(dir.path(), 1, "alpha"),
            city_file(dir.path(), 2, "beta"),
        ];
        let config = oracle_config(dir.path(), &cities).resolve().unwrap();
        let out = dir.path().join("results");
        let results = run_matrix(&config, &out).unwrap();
        // phase I: 3 strategies x 1 memory x 1 scheme x 1 endpoint x 2 cities
        assert_eq!(results.len(), 6);
        for result in &results {
            assert!(result.error.is_none());
            assert_eq!(result.total_accuracy(), Some(1.0), "{}", result.key.label());
        }
    }

    #[test]
    fn rerun_reuses_committed_cells_without_new_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![city_file(dir.path(), 3, "gamma")];
        let config = oracle_config(dir.path(), &cities).resolve().unwrap();
        let out = dir.path().join("results");
        let first = run_matrix(&config, &out).unwrap();
        // Tamper with the reply logs: a rerun must not rewrite them.
        let replies_dir = out.join("replies");
        let mut reply_files: Vec<PathBuf> = std::fs::read_dir(&replies_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        reply_files.sort();
        std::fs::write(&reply_files[0], "sentinel").unwrap();
        let second = run_matrix(&config, &out).unwrap();
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
        assert_eq!(std::fs::read_to_string(&reply_files[0]).unwrap(), "sentinel");
    }

    #[test]
    fn aggregation_closes_over_categories() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![
            city_file(dir.path(), 4, "delta"),
            city_file(dir.path(), 5, "epsilon"),
        ];
        let config = oracle_config(dir.path(), &cities).resolve().unwrap();
        let results = run_matrix(&config, &dir.path().join("results")).unwrap();
        let pooled = aggregate(&results);
        for cell in &pooled {
            let sum: (u32, u32) = cell
                .per_category
                .values()
                .fold((0, 0), |acc, &(c, t)| (acc.0 + c, acc.1 + t));
            assert_eq!(sum, cell.total);
            // pooled total equals the item-count weighted mean of the
            // category accuracies
            let weighted: f64 = cell
                .per_category
                .values()
                .filter(|(_, t)| *t > 0)
                .map(|&(c, t)| (c as f64 / t as f64) * t as f64)
                .sum::<f64>()
                / cell.total.1 as f64;
            assert!((weighted - cell.total_accuracy().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trips_the_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![city_file(dir.path(), 6, "zeta")];
        let config = ExperimentConfig {
            phase: None,
            cities,
            strategies: vec!["NPS".into()],
            memories: vec!["NSM".into()],
            schemes: vec!["DT".into()],
            endpoints: vec![EndpointSpec::scripted_random()],
            n: 1,
            seed: 5,
            ..ExperimentConfig::default()
        }
        .resolve()
        .unwrap();
        let results = run_matrix(&config, &dir.path().join("results")).unwrap();
        let pooled = aggregate(&results);
        let csv_text = render_cells_csv(&pooled);
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let headers = reader.headers().unwrap().clone();
        assert_eq!(
            headers.iter().collect::<Vec<_>>(),
            vec!["strategy", "memory", "scheme", "endpoint", "DJ", "DS", "PJ", "PDR", "PP", "total"]
        );
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), pooled.len());
        for (row, cell) in rows.iter().zip(&pooled) {
            assert_eq!(&row[0], cell.strategy.as_str());
            assert_eq!(&row[9], format_pct(cell.total.0, cell.total.1).as_str());
            for (i, category) in TaskCategory::ALL.into_iter().enumerate() {
                let (c, t) = cell.per_category[&category];
                assert_eq!(&row[4 + i], format_pct(c, t).as_str());
            }
        }
    }

    #[test]
    fn repeats_pool_items_across_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![city_file(dir.path(), 9, "iota")];
        let mut config = oracle_config(dir.path(), &cities);
        config.phase = None;
        config.strategies = vec!["NPS".into()];
        config.memories = vec!["NSM".into()];
        config.schemes = vec!["DT".into()];
        config.repeats = 3;
        let resolved = config.resolve().unwrap();
        let results = run_matrix(&resolved, &dir.path().join("results")).unwrap();
        assert_eq!(results.len(), 1);
        let result = &results[0];
        assert_eq!(result.memory_size_bits.len(), 3);
        let scoreable_per_repeat = 24 - result.degenerate_count as usize;
        assert_eq!(result.items.len(), 3 * scoreable_per_repeat);
        let repeats: std::collections::BTreeSet<u32> =
            result.items.iter().map(|i| i.repeat).collect();
        assert_eq!(repeats, [0, 1, 2].into());
    }

    #[test]
    fn missing_map_becomes_error_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut cities = vec![city_file(dir.path(), 7, "eta")];
        cities.push(dir.path().join("missing.json"));
        let config = oracle_config(dir.path(), &cities).resolve().unwrap();
        let results = run_matrix(&config, &dir.path().join("results")).unwrap();
        let errored: Vec<&RunResult> = results.iter().filter(|r| r.error.is_some()).collect();
        assert_eq!(errored.len(), 3); // one per strategy cell of the bad city
        assert!(results.iter().any(|r| r.error.is_none()));
    }

    #[test]
    fn empty_categories_report_not_applicable() {
        let result = RunResult {
            key: CellKey {
                city: "x".into(),
                strategy: "NPS".into(),
                memory: "SDM".into(),
                scheme: "DT".into(),
                endpoint: "scripted-oracle".into(),
            },
            items: vec![ItemRecord {
                task_id: "x-dj-1".into(),
                category: TaskCategory::Direction,
                repeat: 0,
                chosen: Some(0),
                correct_index: 0,
                is_correct: true,
                invalid: false,
                reply_ref: String::new(),
            }],
            memory_size_bits: vec![100],
            degenerate_count: 4,
            error: None,
        };
        let pooled = aggregate(&[result]);
        let csv_text = render_cells_csv(&pooled);
        let row = csv_text.lines().nth(1).unwrap();
        // every category without scoreable items renders n/a, never 0%
        assert_eq!(row.matches("n/a").count(), 4, "{}", row);
        assert!(!row.contains(",0.00%"), "{}", row);
    }

    #[test]
    fn run_ids_are_stable_per_config_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cities = vec![city_file(dir.path(), 8, "theta")];
        let a = oracle_config(dir.path(), &cities);
        let b = oracle_config(dir.path(), &cities);
        assert_eq!(a.run_id(), b.run_id());
        let mut c = oracle_config(dir.path(), &cities);
        c.seed = 999;
        assert_ne!(a.run_id(), c.run_id());
    }
}
