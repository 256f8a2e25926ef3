//! Run configuration, the staged discovery pipeline with manifest-based
//! resume, and backbone × target experiment matrices.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    aggregate_matrix, error_breakdown, score_strategy_prediction, stability, CellFailure, CellStability,
    ErrorBreakdown, EvaluationError, EvaluationReport, MatrixLayout, MatrixReport, RunScore, TargetColumn,
    DEFAULT_EXPECTED_RUNS, DEFAULT_STABILITY_THRESHOLD,
};
use crate::extraction::{default_few_shots, extract_bridging_relations, load_relations, ExtractionError, ExtractionReport};
use crate::fsutil::{sha256_file, to_json_pretty, write_atomic, write_json};
use crate::graph::{build_graph, GraphError, SemanticGraph};
use crate::inference::{
    infer_frequency_aware, infer_persona_pd, infer_vanilla, InferenceError, Prediction, Strategy, TOP_HUBS,
    TOP_TOKENS,
};
use crate::interview::{choose_topic, run_interview, DialogueTranscript, InterviewConfig, InterviewError, TurnBounds, DEFAULT_TOPICS, DEFAULT_TURNS};
use crate::providers::{
    CallLog, ChatParams, ChatProvider, Embedder, FixtureRecorder, HashingEmbedder, OpenAiChatClient, OpenAiEmbedder,
    ProviderError, Recorded, ScriptedProvider, HASHING_DIMENSION,
};
use crate::schema::{default_schema, render_hidden_prompt, sample_persona, PersonaProfile, PersonaSchema, SchemaError};
use crate::simulate::{SimulatedInterviewer, SimulatedTarget};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "persona.truth.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const HIDDEN_PROMPT_FILE: &str = "hidden_prompt.txt";
pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const PROVIDER_LOG_FILE: &str = "provider_log.jsonl";
pub const RELATIONS_FILE: &str = "relations.json";
pub const EXTRACTION_REPORT_FILE: &str = "extraction_report.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const GRAPH_DOT_FILE: &str = "graph.dot";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_MD_FILE: &str = "report.md";
pub const DEFAULT_CONCURRENCY: usize = 4;
const MANIFEST_VERSION: u32 = 1;

pub fn prediction_file(s: Strategy) -> String {
    format!("prediction.{}.json", s.as_str())
}

pub fn prompt_file(s: Strategy) -> String {
    format!("prompt.{}.txt", s.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sample,
    Condition,
    Interview,
    Extract,
    Graph,
    Infer,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Sample,
        Stage::Condition,
        Stage::Interview,
        Stage::Extract,
        Stage::Graph,
        Stage::Infer,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Condition => "condition",
            Stage::Interview => "interview",
            Stage::Extract => "extract",
            Stage::Graph => "graph",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Provider,
    Validation,
    Io,
}

#[derive(Debug, Error)]
pub struct PipelineError {
    pub stage: Option<Stage>,
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "stage {s} failed: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl PipelineError {
    pub fn config(message: impl Into<String>) -> Self {
        PipelineError { stage: None, kind: ErrorKind::Config, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        PipelineError { stage: None, kind: ErrorKind::Validation, message: message.into() }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError { stage: None, kind: ErrorKind::Io, message: format!("{}: {e}", path.display()) }
    }

    fn at(mut self, stage: Stage) -> Self {
        self.stage.get_or_insert(stage);
        self
    }

    /// 2 for configuration and I/O problems, 3 for provider failures, 4 for
    /// validation failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config | ErrorKind::Io => 2,
            ErrorKind::Provider => 3,
            ErrorKind::Validation => 4,
        }
    }
}

impl From<ProviderError> for PipelineError {
    fn from(e: ProviderError) -> Self {
        let kind = match e {
            ProviderError::Fixture(_) | ProviderError::InvalidRequest(_) => ErrorKind::Config,
            _ => ErrorKind::Provider,
        };
        PipelineError { stage: None, kind, message: e.to_string() }
    }
}

impl From<SchemaError> for PipelineError {
    fn from(e: SchemaError) -> Self {
        let kind = match e {
            SchemaError::InvalidProfile(_) => ErrorKind::Validation,
            _ => ErrorKind::Config,
        };
        PipelineError { stage: None, kind, message: e.to_string() }
    }
}

impl From<InterviewError> for PipelineError {
    fn from(e: InterviewError) -> Self {
        let kind = match &e {
            InterviewError::Protocol(_) => ErrorKind::Config,
            InterviewError::Provider { .. } => ErrorKind::Provider,
            InterviewError::Invalid(_) => ErrorKind::Validation,
            InterviewError::Io(_) => ErrorKind::Io,
        };
        PipelineError { stage: None, kind, message: e.to_string() }
    }
}

impl From<ExtractionError> for PipelineError {
    fn from(e: ExtractionError) -> Self {
        match e {
            ExtractionError::Provider(p) => p.into(),
            ExtractionError::Io(m) => PipelineError { stage: None, kind: ErrorKind::Io, message: m },
            other => PipelineError::validation(other.to_string()),
        }
    }
}

impl From<GraphError> for PipelineError {
    fn from(e: GraphError) -> Self {
        PipelineError::validation(e.to_string())
    }
}

impl From<InferenceError> for PipelineError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Provider(p) => p.into(),
            InferenceError::Schema(s) => s.into(),
            InferenceError::Parse(m) => PipelineError::validation(format!("could not parse persona reply: {m}")),
        }
    }
}

impl From<EvaluationError> for PipelineError {
    fn from(e: EvaluationError) -> Self {
        match e {
            EvaluationError::Embedding(p) => p.into(),
            other => PipelineError::validation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderSpec {
    /// Replays recorded fixture files; no network.
    Scripted { fixtures: Vec<PathBuf> },
    /// OpenAI-compatible chat completions endpoint.
    Live {
        base_url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
    /// Built-in deterministic agents (see [`crate::simulate`]).
    Simulated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pairs_per_turn: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_distractors: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Live {
        base_url: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
}

fn default_dimension() -> usize {
    HASHING_DIMENSION
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing { dimension: HASHING_DIMENSION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub id: String,
    pub provider: ProviderSpec,
    #[serde(default)]
    pub params: ChatParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// 3 to 5 interview turns.
    #[default]
    Strict,
    /// Any positive number of turns.
    Free,
}

impl Protocol {
    pub fn bounds(self) -> TurnBounds {
        match self {
            Protocol::Strict => TurnBounds::STRICT,
            Protocol::Free => TurnBounds { min: 1, max: usize::MAX },
        }
    }
}

/// Settings shared by single runs and experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_turns")]
    pub n_turns: usize,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_path: Option<PathBuf>,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    /// Hubs listed in the graph summary.
    #[serde(default = "default_top_hubs")]
    pub top_hubs: usize,
    /// Rows of the token-frequency table.
    #[serde(default = "default_top_tokens")]
    pub top_tokens: usize,
    /// Forbid network access: every provider must be scripted or simulated.
    #[serde(default)]
    pub offline: bool,
}

fn default_turns() -> usize {
    DEFAULT_TURNS
}

fn default_top_hubs() -> usize {
    TOP_HUBS
}

fn default_top_tokens() -> usize {
    TOP_TOKENS
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            seed: 0,
            n_turns: DEFAULT_TURNS,
            protocol: Protocol::Strict,
            strategies: default_strategies(),
            schema_path: None,
            topics: Vec::new(),
            embedder: EmbedderSpec::default(),
            top_hubs: TOP_HUBS,
            top_tokens: TOP_TOKENS,
            offline: false,
        }
    }
}

impl PipelineSettings {
    fn validate(&self, roles: &[&RoleConfig]) -> Result<(), PipelineError> {
        self.protocol
            .bounds()
            .check(self.n_turns)
            .map_err(|e| PipelineError::config(e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(PipelineError::config("at least one strategy is required"));
        }
        if self.top_hubs == 0 || self.top_tokens == 0 {
            return Err(PipelineError::config("top_hubs and top_tokens must be positive"));
        }
        for role in roles {
            role.params
                .validate()
                .map_err(|e| PipelineError::config(format!("{}: {e}", role.id)))?;
            if role.id.trim().is_empty() {
                return Err(PipelineError::config("provider id must not be empty"));
            }
            match &role.provider {
                ProviderSpec::Scripted { fixtures } if fixtures.is_empty() => {
                    return Err(PipelineError::config(format!("{}: scripted provider needs fixture paths", role.id)));
                }
                ProviderSpec::Live { .. } if self.offline => {
                    return Err(PipelineError::config(format!(
                        "{}: offline mode requires fixture paths for every provider role",
                        role.id
                    )));
                }
                _ => {}
            }
        }
        if self.offline && matches!(self.embedder, EmbedderSpec::Live { .. }) {
            return Err(PipelineError::config("offline mode requires the hashing embedder"));
        }
        if let EmbedderSpec::Hashing { dimension: 0 } = self.embedder {
            return Err(PipelineError::config("hashing embedder dimension must be positive"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.schema_path {
            *p = resolve(base, p);
        }
    }

    pub fn load_schema(&self) -> Result<PersonaSchema, PipelineError> {
        let schema = match &self.schema_path {
            Some(p) => PersonaSchema::load(p)?,
            None => default_schema(),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn topics(&self) -> Vec<String> {
        if self.topics.is_empty() {
            DEFAULT_TOPICS.iter().map(|t| t.to_string()).collect()
        } else {
            self.topics.clone()
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_role(base: &Path, role: &mut RoleConfig) {
    if let ProviderSpec::Scripted { fixtures } = &mut role.provider {
        for f in fixtures.iter_mut() {
            *f = resolve(base, f);
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub settings: PipelineSettings,
    pub output_dir: PathBuf,
    pub pd: RoleConfig,
    pub target: RoleConfig,
    /// When set, every provider reply is also saved as a fixture file
    /// (`pd.json`, `target.json`) in this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_fixtures: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a JSON config. Fixture and schema paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let mut cfg: RunConfig = read_config(path)?;
        let base = config_dir(path);
        cfg.settings.resolve_paths(&base);
        resolve_role(&base, &mut cfg.pd);
        resolve_role(&base, &mut cfg.target);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.settings.validate(&[&self.pd, &self.target])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Artifact file name → SHA-256 of its contents.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: serde_json::Value,
    pub created_at: String,
    pub updated_at: String,
    pub stages: Vec<StageRecord>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    fn new(config: serde_json::Value) -> Self {
        let t = now();
        RunManifest {
            version: MANIFEST_VERSION,
            config,
            created_at: t.clone(),
            updated_at: t,
            stages: Stage::ALL
                .into_iter()
                .map(|stage| StageRecord {
                    stage,
                    status: StageStatus::Pending,
                    finished_at: None,
                    error: None,
                    artifacts: BTreeMap::new(),
                })
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<RunManifest, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::validation(format!("{}: {e}", path.display())))
    }

    pub fn record(&self, stage: Stage) -> &StageRecord {
        self.stages.iter().find(|r| r.stage == stage).expect("manifest lists every stage")
    }

    fn record_mut(&mut self, stage: Stage) -> &mut StageRecord {
        self.stages.iter_mut().find(|r| r.stage == stage).expect("manifest lists every stage")
    }

    fn save(&mut self, dir: &Path) -> Result<(), PipelineError> {
        self.updated_at = now();
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self).map_err(|e| PipelineError::io(&path, e))
    }

    /// True when the stage completed and every recorded artifact still has
    /// its recorded checksum.
    pub fn verified(&self, dir: &Path, stage: Stage) -> bool {
        let r = self.record(stage);
        r.status == StageStatus::Completed
            && r.artifacts
                .iter()
                .all(|(name, sum)| sha256_file(&dir.join(name)).map(|s| &s == sum).unwrap_or(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Stop successfully after this stage completes.
    pub stop_after: Option<Stage>,
    /// Skip stages whose artifacts verify against an existing manifest.
    pub resume: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { stop_after: None, resume: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub evaluation: EvaluationReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub truth: PersonaProfile,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub relations_accepted: usize,
    pub relations_rejected: usize,
    pub results: Vec<StrategyResult>,
    pub errors: BTreeMap<Strategy, ErrorBreakdown>,
}

impl RunReport {
    pub fn result(&self, s: Strategy) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.strategy == s)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Run report\n\n");
        out.push_str(&format!(
            "Graph: {} concepts, {} relations ({} accepted, {} rejected records)\n\n",
            self.graph_nodes, self.graph_edges, self.relations_accepted, self.relations_rejected
        ));
        out.push_str("| Method | SocialRole | Personality | Background | Interests | Overall | Exact match | Unresolved |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.results {
            let dims: Vec<String> = r.evaluation.dimensions.iter().map(|d| format!("{:.4}", d.cosine)).collect();
            out.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {} |\n",
                r.strategy.display_name(),
                dims.join(" | "),
                r.evaluation.overall,
                r.evaluation.exact_match(),
                r.evaluation.unresolved
            ));
        }
        out.push_str("\n## Ground truth\n\n");
        for a in &self.truth.assignments {
            out.push_str(&format!("- {} / {}: {}\n", a.dimension.display_name(), a.subcategory, a.value));
        }
        out
    }
}

type SharedChat = Arc<dyn ChatProvider>;

struct Providers {
    pd: Recorded<SharedChat>,
    target: Recorded<SharedChat>,
    recorders: Vec<(PathBuf, Arc<FixtureRecorder<SharedChat>>)>,
}

fn env_key(var: &Option<String>) -> Option<String> {
    var.as_ref().and_then(|v| std::env::var(v).ok())
}

fn build_chat(spec: &ProviderSpec, target_role: bool, seed: u64) -> Result<SharedChat, PipelineError> {
    Ok(match spec {
        ProviderSpec::Scripted { fixtures } => Arc::new(ScriptedProvider::load_many(fixtures)?),
        ProviderSpec::Live { base_url, api_key_env, timeout_secs } => {
            let mut client = OpenAiChatClient::new(base_url.clone(), env_key(api_key_env));
            if let Some(t) = timeout_secs {
                client = client.with_timeout(Duration::from_secs(*t));
            }
            Arc::new(client)
        }
        ProviderSpec::Simulated { seed: s, pairs_per_turn, max_distractors } => {
            if target_role {
                let mut t = SimulatedTarget::new(s.unwrap_or(seed));
                if let Some(p) = pairs_per_turn {
                    t.pairs_per_turn = *p;
                }
                if let Some(m) = max_distractors {
                    t.max_distractors = *m;
                }
                Arc::new(t)
            } else {
                Arc::new(SimulatedInterviewer)
            }
        }
    })
}

pub fn build_embedder(spec: &EmbedderSpec) -> Arc<dyn Embedder> {
    match spec {
        EmbedderSpec::Hashing { dimension } => Arc::new(HashingEmbedder::new(*dimension)),
        EmbedderSpec::Live { base_url, model, api_key_env } => {
            Arc::new(OpenAiEmbedder::new(base_url.clone(), model.clone(), env_key(api_key_env)))
        }
    }
}

fn build_providers(cfg: &RunConfig, log: &Arc<CallLog>) -> Result<Providers, PipelineError> {
    let mut pd = build_chat(&cfg.pd.provider, false, cfg.settings.seed)?;
    let mut target = build_chat(&cfg.target.provider, true, cfg.settings.seed)?;
    let mut recorders = Vec::new();
    if let Some(dir) = &cfg.record_fixtures {
        let pd_rec = Arc::new(FixtureRecorder::new(pd));
        let target_rec = Arc::new(FixtureRecorder::new(target));
        pd = pd_rec.clone();
        target = target_rec.clone();
        recorders.push((dir.join("pd.json"), pd_rec));
        recorders.push((dir.join("target.json"), target_rec));
    }
    Ok(Providers {
        pd: Recorded::new(pd, "pd", log.clone()),
        target: Recorded::new(target, "target", log.clone()),
        recorders,
    })
}

struct Run<'a> {
    dir: &'a Path,
    cfg: &'a RunConfig,
    providers: Option<Providers>,
    log: Arc<CallLog>,
}

impl Run<'_> {
    fn providers(&mut self) -> Result<&Providers, PipelineError> {
        if self.providers.is_none() {
            self.providers = Some(build_providers(self.cfg, &self.log)?);
        }
        Ok(self.providers.as_ref().expect("just built"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let p = self.path(name);
        write_atomic(&p, contents.as_bytes()).map_err(|e| PipelineError::io(&p, e))
    }

    fn read(&self, name: &str) -> Result<String, PipelineError> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))
    }

    fn schema(&self) -> Result<PersonaSchema, PipelineError> {
        let text = self.read(SCHEMA_FILE)?;
        let schema: PersonaSchema = serde_json::from_str(&text).map_err(|e| PipelineError::validation(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    fn truth(&self) -> Result<PersonaProfile, PipelineError> {
        serde_json::from_str(&self.read(TRUTH_FILE)?).map_err(|e| PipelineError::validation(e.to_string()))
    }

    /// Executes one stage and returns the artifact names it produced.
    fn stage(&mut self, stage: Stage) -> Result<Vec<String>, PipelineError> {
        let cfg = self.cfg;
        let s = &cfg.settings;
        match stage {
            Stage::Sample => {
                let schema = s.load_schema()?;
                let profile = sample_persona(&schema, s.seed)?;
                self.write(SCHEMA_FILE, &schema.to_canonical_json())?;
                self.write(TRUTH_FILE, &profile.to_canonical_json())?;
                Ok(vec![SCHEMA_FILE.into(), TRUTH_FILE.into()])
            }
            Stage::Condition => {
                let truth = self.truth()?;
                truth.validate_against(&self.schema()?)?;
                self.write(HIDDEN_PROMPT_FILE, &render_hidden_prompt(&truth))?;
                Ok(vec![HIDDEN_PROMPT_FILE.into()])
            }
            Stage::Interview => {
                let hidden = self.read(HIDDEN_PROMPT_FILE)?;
                let topics = s.topics();
                let topic = choose_topic(&topics, s.seed).to_string();
                let config = InterviewConfig {
                    n_turns: s.n_turns,
                    bounds: s.protocol.bounds(),
                    pd_params: cfg.pd.params.clone(),
                    target_params: cfg.target.params.clone(),
                };
                let out = self.path(TRANSCRIPT_FILE);
                let p = self.providers()?;
                run_interview(&p.pd, &p.target, &hidden, &topic, &config, Some(&out))?;
                Ok(vec![TRANSCRIPT_FILE.into()])
            }
            Stage::Extract => {
                let transcript = DialogueTranscript::load(&self.path(TRANSCRIPT_FILE))?;
                let params = self.cfg.pd.params.clone();
                let p = self.providers()?;
                let report = extract_bridging_relations(&transcript, &default_few_shots(), &p.pd, &params)?;
                let (rp, rel) = (self.path(EXTRACTION_REPORT_FILE), self.path(RELATIONS_FILE));
                report.save(&rp, &rel).map_err(|e| PipelineError::io(&rp, e))?;
                Ok(vec![RELATIONS_FILE.into(), EXTRACTION_REPORT_FILE.into()])
            }
            Stage::Graph => {
                let relations = load_relations(&self.path(RELATIONS_FILE))?;
                let g = build_graph(&relations);
                self.write(GRAPH_FILE, &g.to_canonical_json())?;
                self.write(GRAPH_DOT_FILE, &g.to_dot())?;
                Ok(vec![GRAPH_FILE.into(), GRAPH_DOT_FILE.into()])
            }
            Stage::Infer => {
                let schema = self.schema()?;
                let transcript = DialogueTranscript::load(&self.path(TRANSCRIPT_FILE))?;
                let graph = SemanticGraph::from_canonical_json(&self.read(GRAPH_FILE)?)?;
                let params = self.cfg.pd.params.clone();
                let strategies: Vec<Strategy> = Strategy::ALL.into_iter().filter(|st| s.strategies.contains(st)).collect();
                let mut artifacts = Vec::new();
                for strategy in strategies {
                    let p = self.providers()?;
                    let run = match strategy {
                        Strategy::Vanilla => infer_vanilla(&transcript, &schema, &p.pd, &params),
                        Strategy::FrequencyAware => infer_frequency_aware(&transcript, &schema, s.top_tokens, &p.pd, &params),
                        Strategy::PdAgent => infer_persona_pd(&graph, &schema, s.top_hubs, &p.pd, &params),
                    }?;
                    let (pf, tf) = (prediction_file(strategy), prompt_file(strategy));
                    self.write(&pf, &to_json_pretty(&run.prediction))?;
                    self.write(&tf, &run.prompt)?;
                    artifacts.push(pf);
                    artifacts.push(tf);
                }
                Ok(artifacts)
            }
            Stage::Evaluate => {
                let embedder = build_embedder(&s.embedder);
                let report = evaluate_run_dir(self.dir, embedder.as_ref())?;
                self.write(REPORT_FILE, &to_json_pretty(&report))?;
                self.write(REPORT_MD_FILE, &report.to_markdown())?;
                Ok(vec![REPORT_FILE.into(), REPORT_MD_FILE.into()])
            }
        }
    }

    fn save_recorded_fixtures(&self) {
        if let Some(p) = &self.providers {
            for (path, rec) in &p.recorders {
                if let Err(e) = rec.save(path) {
                    log::warn!("could not save fixtures to {}: {e}", path.display());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Present when the evaluate stage has completed.
    pub report: Option<RunReport>,
    /// Stages executed by this invocation (skipped stages excluded).
    pub executed: Vec<Stage>,
}

/// Runs sample → condition → interview → extract → graph → infer → evaluate
/// in `cfg.output_dir`. With `options.resume`, stages whose artifacts still
/// match the manifest are skipped. A failing stage is marked in the manifest
/// and reported with its name.
pub fn run_pipeline(cfg: &RunConfig, options: PipelineOptions) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let snapshot = serde_json::to_value(cfg).expect("config serializes");

    let mut manifest = match RunManifest::load(dir) {
        Ok(m) if options.resume => {
            if m.config != snapshot {
                return Err(PipelineError::config(format!(
                    "{} holds a run with a different configuration",
                    dir.display()
                )));
            }
            m
        }
        _ => RunManifest::new(snapshot),
    };
    let start = if options.resume {
        Stage::ALL.into_iter().position(|st| !manifest.verified(dir, st)).unwrap_or(Stage::ALL.len())
    } else {
        0
    };
    for st in &Stage::ALL[start..] {
        let r = manifest.record_mut(*st);
        r.status = StageStatus::Pending;
        r.finished_at = None;
        r.error = None;
        r.artifacts.clear();
    }
    manifest.save(dir)?;

    let log_path = dir.join(PROVIDER_LOG_FILE);
    let log = CallLog::with_file(&log_path).map_err(|e| PipelineError::io(&log_path, e))?;
    let mut run = Run { dir, cfg, providers: None, log };
    let mut executed = Vec::new();
    let stop_index = options.stop_after.map(|s| s as usize);

    for (i, stage) in Stage::ALL.into_iter().enumerate().skip(start) {
        if stop_index.is_some_and(|stop| i > stop) {
            break;
        }
        log::info!("{}: running stage {stage}", dir.display());
        let result = run.stage(stage);
        executed.push(stage);
        match result {
            Ok(artifacts) => {
                let mut sums = BTreeMap::new();
                for name in artifacts {
                    let p = dir.join(&name);
                    sums.insert(name, sha256_file(&p).map_err(|e| PipelineError::io(&p, e).at(stage))?);
                }
                let r = manifest.record_mut(stage);
                r.status = StageStatus::Completed;
                r.finished_at = Some(now());
                r.artifacts = sums;
                manifest.save(dir)?;
            }
            Err(e) => {
                let e = e.at(stage);
                let r = manifest.record_mut(stage);
                r.status = StageStatus::Failed;
                r.finished_at = Some(now());
                r.error = Some(e.message.clone());
                manifest.save(dir)?;
                run.save_recorded_fixtures();
                return Err(e);
            }
        }
    }
    run.save_recorded_fixtures();

    let report = if manifest.record(Stage::Evaluate).status == StageStatus::Completed {
        Some(serde_json::from_str(&run.read(REPORT_FILE)?).map_err(|e| PipelineError::validation(e.to_string()))?)
    } else {
        None
    };
    Ok(RunOutcome { dir: dir.to_path_buf(), manifest, report, executed })
}

/// Scores every persisted prediction in a run directory against its
/// persisted ground truth. Makes no chat calls.
pub fn evaluate_run_dir(dir: &Path, embedder: &dyn Embedder) -> Result<RunReport, PipelineError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))
    };
    let truth: PersonaProfile =
        serde_json::from_str(&read(TRUTH_FILE)?).map_err(|e| PipelineError::validation(e.to_string()))?;
    let graph = SemanticGraph::from_canonical_json(&read(GRAPH_FILE)?)?;
    let extraction = ExtractionReport::load(&dir.join(EXTRACTION_REPORT_FILE))?;
    let mut results = Vec::new();
    let mut errors = BTreeMap::new();
    for strategy in Strategy::ALL {
        let path = dir.join(prediction_file(strategy));
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let pred: Prediction = serde_json::from_str(&text).map_err(|e| PipelineError::validation(format!("{}: {e}", path.display())))?;
        let evaluation = score_strategy_prediction(&pred, &truth, embedder)?;
        errors.insert(strategy, error_breakdown(std::slice::from_ref(&evaluation), std::slice::from_ref(&truth))?);
        results.push(StrategyResult { strategy, evaluation, warnings: pred.warnings });
    }
    if results.is_empty() {
        return Err(PipelineError::validation(format!("{} holds no predictions", dir.display())));
    }
    Ok(RunReport {
        truth,
        graph_nodes: graph.node_count(),
        graph_edges: graph.edge_count(),
        relations_accepted: extraction.accepted.len(),
        relations_rejected: extraction.rejected.len(),
        results,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    #[serde(flatten)]
    pub role: RoleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub settings: PipelineSettings,
    pub output_dir: PathBuf,
    pub backbones: Vec<RoleConfig>,
    pub targets: Vec<TargetConfig>,
    #[serde(default = "default_runs")]
    pub runs_per_cell: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_threshold")]
    pub stability_threshold: f64,
}

fn default_runs() -> usize {
    DEFAULT_EXPECTED_RUNS
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

fn default_threshold() -> f64 {
    DEFAULT_STABILITY_THRESHOLD
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, PipelineError> {
        let mut cfg: ExperimentConfig = read_config(path)?;
        let base = config_dir(path);
        cfg.settings.resolve_paths(&base);
        for b in &mut cfg.backbones {
            resolve_role(&base, b);
        }
        for t in &mut cfg.targets {
            resolve_role(&base, &mut t.role);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.backbones.is_empty() || self.targets.is_empty() {
            return Err(PipelineError::config("an experiment needs at least one backbone and one target"));
        }
        if self.runs_per_cell == 0 || self.concurrency == 0 {
            return Err(PipelineError::config("runs_per_cell and concurrency must be positive"));
        }
        let mut ids = std::collections::HashSet::new();
        for b in &self.backbones {
            if !ids.insert(("b", dir_name(&b.id))) {
                return Err(PipelineError::config(format!("duplicate backbone id {}", b.id)));
            }
        }
        for t in &self.targets {
            if !ids.insert(("t", dir_name(&t.role.id))) {
                return Err(PipelineError::config(format!("duplicate target id {}", t.role.id)));
            }
        }
        let roles: Vec<&RoleConfig> = self.backbones.iter().chain(self.targets.iter().map(|t| &t.role)).collect();
        self.settings.validate(&roles)
    }

    /// Config of run `run` (0-based) for one backbone/target cell. Run `r`
    /// uses seed `seed + r`.
    pub fn run_config(&self, backbone: &RoleConfig, target: &TargetConfig, run: usize) -> RunConfig {
        let mut settings = self.settings.clone();
        settings.seed = self.settings.seed.wrapping_add(run as u64);
        RunConfig {
            settings,
            output_dir: self
                .output_dir
                .join(dir_name(&backbone.id))
                .join(dir_name(&target.role.id))
                .join(format!("run-{run}")),
            pd: backbone.clone(),
            target: target.role.clone(),
            record_fixtures: None,
        }
    }

    pub fn layout(&self) -> MatrixLayout {
        MatrixLayout {
            backbones: self.backbones.iter().map(|b| b.id.clone()).collect(),
            targets: self
                .targets
                .iter()
                .map(|t| TargetColumn { id: t.role.id.clone(), group: t.group.clone() })
                .collect(),
        }
    }
}

fn dir_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Runs every (backbone, target, run) pipeline with at most
/// `cfg.concurrency` in flight, then aggregates the matrix and per-cell
/// stability. Failed runs are listed in the report and leave gaps.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MatrixReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| PipelineError::io(&cfg.output_dir, e))?;
    let mut jobs = Vec::new();
    for b in &cfg.backbones {
        for t in &cfg.targets {
            for r in 0..cfg.runs_per_cell {
                jobs.push((b, t, r));
            }
        }
    }
    let queue = Mutex::new(jobs.iter().enumerate().collect::<VecDeque<_>>());
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..cfg.concurrency.min(jobs.len()) {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue poisoned").pop_front();
                let Some((i, (b, t, r))) = next else { break };
                let out = run_pipeline(&cfg.run_config(b, t, *r), PipelineOptions::default());
                if let Err(e) = &out {
                    log::warn!("{}/{} run {r}: {e}", b.id, t.role.id);
                }
                results.lock().expect("results poisoned").push((i, out));
            });
        }
    });
    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by_key(|(i, _)| *i);

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (i, out) in results {
        let (b, t, run) = jobs[i];
        match out.map(|o| o.report) {
            Ok(Some(report)) => {
                for res in &report.results {
                    scores.push(RunScore {
                        backbone: b.id.clone(),
                        target: t.role.id.clone(),
                        strategy: res.strategy,
                        run,
                        overall: res.evaluation.overall,
                    });
                }
            }
            Ok(None) => failures.push(CellFailure {
                backbone: b.id.clone(),
                target: t.role.id.clone(),
                strategy: None,
                run: Some(run),
                error: "run finished without a report".into(),
            }),
            Err(e) => failures.push(CellFailure {
                backbone: b.id.clone(),
                target: t.role.id.clone(),
                strategy: None,
                run: Some(run),
                error: e.to_string(),
            }),
        }
    }

    let mut report = aggregate_matrix(&scores, &cfg.layout());
    for cell in &report.cells {
        let result = stability(&cell.runs, cfg.runs_per_cell, cfg.stability_threshold).map_err(|e| e.to_string());
        report.stability.push(CellStability {
            backbone: cell.backbone.clone(),
            target: cell.target.clone(),
            strategy: cell.strategy,
            result,
        });
    }
    report.failures = failures;
    let json_path = cfg.output_dir.join(REPORT_FILE);
    write_json(&json_path, &report).map_err(|e| PipelineError::io(&json_path, e))?;
    let md_path = cfg.output_dir.join(REPORT_MD_FILE);
    write_atomic(&md_path, report.to_markdown().as_bytes()).map_err(|e| PipelineError::io(&md_path, e))?;
    Ok(report)
}
