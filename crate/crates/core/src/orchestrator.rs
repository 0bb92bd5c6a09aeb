//! Three-phase experiment driver. Each (topic, run) gets its own platform
//! behind a recording proxy; phases are barriers and the accounts of one
//! phase run concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::Classifier;
use crate::clone::{
    replay, rewrite_trace, verify_clones, CloneError, IdentityRewrite, Pacing, ReplayReport, VerifyParams,
};
use crate::http::Transport;
use crate::platform::{
    generate_corpus, Calibration, Corpus, Platform, PlatformConfig, PlatformError, Registration, Sampling,
};
use crate::proxy::{ProxyError, RecordingProxy};
use crate::puppet::{
    run_phase, seed_account, BehaviorLog, BehaviorPolicy, Client, PhaseFailure, PuppetError, Role, DEFAULT_PAGE_SIZE,
    DEFAULT_PHASE_LENGTH, DEFAULT_SEED_COUNT,
};
use crate::report::{analyze_run, RunAnalysis};
use crate::topics::{default_topics, find, TopicProfile};
use crate::wire::Dictionary;

pub const PLAN_FILE: &str = "plan.json";
pub const RUNS_FILE: &str = "runs.json";
pub const ACCOUNTS_FILE: &str = "accounts.json";
pub const PRECHECK_FILE: &str = "precheck.json";
pub const STATS_FILE: &str = "stats.json";
pub const ERROR_FILE: &str = "error.txt";

pub const WATCH: &str = "watch_topic";
pub const BASELINE: &str = "baseline";
pub const SEED_LOG: &str = "seed";
pub const IMPLICIT_CEASES: &str = "implicit_ceases";
pub const IMPLICIT_CONTINUES: &str = "implicit_continues";
pub const EXPLICIT_CEASES: &str = "explicit_ceases";
pub const EXPLICIT_CONTINUES: &str = "explicit_continues";
pub const CLONED_BASELINE: &str = "cloned_baseline";
pub const NON_CLONED_BASELINE: &str = "non_cloned_baseline";

struct Slot {
    label: &'static str,
    source: Option<&'static str>,
    phase2: Role,
    phase3: Role,
}

/// Phase 2 and 3 accounts in registration order.
const SLOTS: [Slot; 6] = [
    Slot { label: IMPLICIT_CEASES, source: Some(WATCH), phase2: Role::GivesImplicit, phase3: Role::CeasesImplicit },
    Slot { label: IMPLICIT_CONTINUES, source: Some(WATCH), phase2: Role::GivesImplicit, phase3: Role::GivesImplicit },
    Slot { label: EXPLICIT_CEASES, source: Some(WATCH), phase2: Role::GivesExplicit, phase3: Role::CeasesExplicit },
    Slot { label: EXPLICIT_CONTINUES, source: Some(WATCH), phase2: Role::GivesExplicit, phase3: Role::GivesExplicit },
    Slot { label: CLONED_BASELINE, source: Some(BASELINE), phase2: Role::BaselineSkip, phase3: Role::BaselineSkip },
    Slot { label: NON_CLONED_BASELINE, source: None, phase2: Role::BaselineSkip, phase3: Role::BaselineSkip },
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("phase {phase} agent {label}: {error}")]
    Agent { phase: u8, label: String, error: PuppetError },
    #[error("cloning {label}: {error}")]
    Clone { label: String, error: CloneError },
    #[error("clone verification pre-check failed: {0}")]
    Precheck(String),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Platform(PlatformError::Config(_)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub topics: Vec<String>,
    pub runs: usize,
    pub phase_length: usize,
    pub seed_count: usize,
    /// Videos per feed request.
    pub page_size: u32,
    pub confidence: f64,
    /// Run seeds derive from this unless `run_seeds` lists them.
    pub seed: u64,
    pub run_seeds: Vec<u64>,
    pub calibration_profile: String,
    /// Replaces the named profile when set.
    pub calibration: Option<Calibration>,
    pub sampling: Sampling,
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub corpus_topics: Vec<TopicProfile>,
    pub verify: VerifyParams,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            topics: default_topics().into_iter().map(|t| t.topic_id).collect(),
            runs: 5,
            phase_length: DEFAULT_PHASE_LENGTH,
            seed_count: DEFAULT_SEED_COUNT,
            page_size: DEFAULT_PAGE_SIZE,
            confidence: 0.99,
            seed: 1,
            run_seeds: Vec::new(),
            calibration_profile: "default".into(),
            calibration: None,
            sampling: Sampling::default(),
            corpus_size: 50_000,
            corpus_seed: 1,
            corpus_topics: default_topics(),
            verify: VerifyParams::default(),
        }
    }
}

pub fn mix_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p.as_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: String| Err(ExperimentError::Config(m));
        if self.runs == 0 || self.phase_length == 0 || self.seed_count == 0 || self.page_size == 0 {
            return err("runs, phase_length, seed_count and page_size must be >= 1".into());
        }
        if self.corpus_size == 0 || self.verify.fetch_count == 0 || self.verify.page_size == 0 {
            return err("corpus_size and verify counts must be >= 1".into());
        }
        for c in [self.confidence, self.verify.confidence] {
            if !(c > 0.0 && c < 1.0) {
                return err(format!("confidence {c} not in (0, 1)"));
            }
        }
        if self.topics.is_empty() {
            return err("no topics".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.topics {
            if !seen.insert(t) {
                return err(format!("topic {t} listed twice"));
            }
            if find(&self.corpus_topics, t).is_none() {
                return err(format!("topic {t} is not in the corpus profile"));
            }
        }
        for t in &self.corpus_topics {
            t.validate().map_err(ExperimentError::Config)?;
        }
        if !self.run_seeds.is_empty() && self.run_seeds.len() != self.runs {
            return err(format!("{} run_seeds for {} runs", self.run_seeds.len(), self.runs));
        }
        self.resolved_calibration()?.validate()?;
        Ok(())
    }

    pub fn resolved_calibration(&self) -> Result<Calibration, ExperimentError> {
        match &self.calibration {
            Some(c) => Ok(c.clone()),
            None => Ok(Calibration::profile(&self.calibration_profile)?),
        }
    }

    /// Seed of run `index` (0-based).
    pub fn run_seed(&self, index: usize) -> u64 {
        match self.run_seeds.get(index) {
            Some(&s) => s,
            None => mix_seed(self.seed, &["run", &index.to_string()]),
        }
    }

    pub fn platform_seed(&self, topic: &str, index: usize) -> u64 {
        mix_seed(self.run_seed(index), &["platform", topic])
    }

    pub fn generate_corpus(&self) -> Result<Corpus, ExperimentError> {
        Ok(generate_corpus(&self.corpus_topics, self.corpus_size, self.corpus_seed)?)
    }

    fn policy(&self, role: Role, topic: &str) -> BehaviorPolicy {
        BehaviorPolicy {
            phase_length: self.phase_length,
            seed_count: self.seed_count,
            page_size: self.page_size,
            ..BehaviorPolicy::new(role, topic)
        }
    }
}

pub fn run_dir_name(index: usize) -> String {
    format!("run-{:02}", index + 1)
}

/// Every behavior log of one run, keyed by account label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLogs {
    pub seed: Option<BehaviorLog>,
    pub phase1: BTreeMap<String, BehaviorLog>,
    pub phase2: BTreeMap<String, BehaviorLog>,
    pub phase3: BTreeMap<String, BehaviorLog>,
}

fn log_path(run_dir: &Path, phase: u8, label: &str) -> PathBuf {
    run_dir.join("logs").join(format!("phase{phase}")).join(format!("{label}.jsonl"))
}

fn write_log(run_dir: &Path, phase: u8, label: &str, log: &BehaviorLog) -> Result<(), ExperimentError> {
    let path = log_path(run_dir, phase, label);
    fs::create_dir_all(path.parent().expect("log dir")).map_err(io_err(&path))?;
    let mut out = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    log.write_jsonl(&mut out).and_then(|_| out.flush()).map_err(io_err(&path))
}

fn read_logs(dir: &Path) -> Result<BTreeMap<String, BehaviorLog>, ExperimentError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(label) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".jsonl")) else {
            continue;
        };
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        out.insert(label.to_string(), BehaviorLog::read_jsonl(BufReader::new(file)).map_err(io_err(&path))?);
    }
    Ok(out)
}

impl RunLogs {
    pub fn load(run_dir: &Path) -> Result<Self, ExperimentError> {
        let logs = run_dir.join("logs");
        let mut phase1 = read_logs(&logs.join("phase1"))?;
        let seed = phase1.remove(SEED_LOG);
        Ok(Self { seed, phase1, phase2: read_logs(&logs.join("phase2"))?, phase3: read_logs(&logs.join("phase3"))? })
    }

    pub fn is_complete(&self, phase_length: usize) -> bool {
        let full = |m: &BTreeMap<String, BehaviorLog>, labels: &[&str]| {
            labels.iter().all(|l| m.get(*l).is_some_and(|log| log.len() == phase_length))
        };
        let slots: Vec<&str> = SLOTS.iter().map(|s| s.label).collect();
        full(&self.phase1, &[WATCH, BASELINE]) && full(&self.phase2, &slots) && full(&self.phase3, &slots)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRole {
    pub phase: u8,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub label: String,
    pub account_id: String,
    pub device_id: String,
    pub key_id: String,
    pub cloned_from: Option<String>,
    pub replay: Option<ReplayReport>,
    pub roles: Vec<PhaseRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub topic: String,
    pub run: usize,
    pub run_seed: u64,
    /// Unset when the platform was external.
    pub platform_seed: Option<u64>,
    /// Relative to the results directory.
    pub dir: String,
    pub completed: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub analysis: Option<RunAnalysis>,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

struct Agent<'p, U> {
    record: AccountRecord,
    client: Client<&'p RecordingProxy<U>>,
}

impl<'p, U: Transport> Agent<'p, U> {
    fn new(label: &str, creds: Registration, proxy: &'p RecordingProxy<U>, dict: &Dictionary) -> Self {
        let record = AccountRecord {
            label: label.to_string(),
            account_id: creds.account_id.clone(),
            device_id: creds.device_id.clone(),
            key_id: creds.key.key_id.clone(),
            cloned_from: None,
            replay: None,
            roles: Vec::new(),
        };
        Self { record, client: Client::new(proxy, creds, dict.clone()) }
    }
}

struct RunCtx<'a> {
    plan: &'a ExperimentPlan,
    topic: &'a TopicProfile,
    run_seed: u64,
    classifier: &'a dyn Classifier,
    dictionary: &'a Dictionary,
    dir: &'a Path,
}

impl RunCtx<'_> {
    fn rng(&self, phase: u8, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.run_seed, &["agent", &self.topic.topic_id, &phase.to_string(), label]))
    }

    /// Runs one experimental column concurrently and persists each log,
    /// partial ones included.
    fn column<U: Transport + Sync>(
        &self,
        phase: u8,
        agents: &mut [&mut Agent<'_, U>],
        roles: &[Role],
        seed_first: Option<&str>,
    ) -> Result<BTreeMap<String, BehaviorLog>, ExperimentError> {
        type Outcome = (Option<Result<BehaviorLog, PhaseFailure>>, Result<BehaviorLog, PhaseFailure>);
        let results: Vec<(String, Outcome)> = std::thread::scope(|s| {
            let handles: Vec<_> = agents
                .iter_mut()
                .zip(roles)
                .map(|(agent, &role)| {
                    agent.record.roles.push(PhaseRole { phase, role });
                    let label = agent.record.label.clone();
                    let seeded = seed_first == Some(label.as_str());
                    s.spawn(move || {
                        let policy = self.plan.policy(role, &self.topic.topic_id);
                        let mut rng = self.rng(phase, &label);
                        let seed = seeded.then(|| {
                            seed_account(&mut agent.client, self.topic, self.plan.seed_count, self.classifier)
                        });
                        let main = match &seed {
                            Some(Err(f)) => {
                                Err(PhaseFailure { error: f.error.clone(), partial: BehaviorLog::default() })
                            }
                            _ => run_phase(&mut agent.client, &policy, self.topic, self.classifier, &mut rng),
                        };
                        (label, (seed, main))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
        });

        let mut logs = BTreeMap::new();
        let mut first_error = None;
        for (label, (seed, main)) in results {
            if let Some(seed) = seed {
                let log = match seed {
                    Ok(log) => log,
                    Err(f) => {
                        first_error.get_or_insert(ExperimentError::Agent {
                            phase,
                            label: label.clone(),
                            error: f.error,
                        });
                        f.partial
                    }
                };
                write_log(self.dir, phase, SEED_LOG, &log)?;
            }
            let log = match main {
                Ok(log) => log,
                Err(f) => {
                    first_error.get_or_insert(ExperimentError::Agent { phase, label: label.clone(), error: f.error });
                    f.partial
                }
            };
            write_log(self.dir, phase, &label, &log)?;
            logs.insert(label, log);
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(logs),
        }
    }
}

fn register<U: Transport>(upstream: &U, dict: &Dictionary) -> Result<Registration, ExperimentError> {
    Client::register(upstream, dict.clone()).map(|c| c.credentials().clone()).map_err(|error| ExperimentError::Agent {
        phase: 0,
        label: "register".into(),
        error,
    })
}

fn save_accounts<U>(dir: &Path, agents: &[&Agent<'_, U>]) -> Result<(), ExperimentError> {
    let records: Vec<&AccountRecord> = agents.iter().map(|a| &a.record).collect();
    write_json(&dir.join(ACCOUNTS_FILE), &records)
}

/// Phases 1 to 3 of one run against `upstream`, recording every account's
/// traffic under `<dir>/traces`.
fn execute_run<U: Transport + Sync>(ctx: &RunCtx<'_>, upstream: &U) -> Result<RunLogs, ExperimentError> {
    let dict = ctx.dictionary;
    let proxy = RecordingProxy::with_trace_dir(upstream, &ctx.dir.join("traces"))?;
    let topic_id = ctx.topic.topic_id.as_str();

    log::info!("{topic_id} {}: phase 1", ctx.dir.display());
    let mut watch = Agent::new(WATCH, register(upstream, dict)?, &proxy, dict);
    let mut baseline = Agent::new(BASELINE, register(upstream, dict)?, &proxy, dict);
    for a in [&watch, &baseline] {
        proxy.open_session(&a.record.account_id)?;
    }
    let phase1 = ctx.column(1, &mut [&mut watch, &mut baseline], &[Role::WatchTopic, Role::BaselineSkip], Some(WATCH));
    save_accounts(ctx.dir, &[&watch, &baseline])?;
    let phase1 = phase1?;

    log::info!("{topic_id} {}: phase 2", ctx.dir.display());
    let sources = BTreeMap::from([
        (WATCH, (proxy.extract(&watch.record.account_id)?, watch.client.credentials().key.clone())),
        (BASELINE, (proxy.extract(&baseline.record.account_id)?, baseline.client.credentials().key.clone())),
    ]);
    let mut agents: Vec<Agent<'_, &U>> = Vec::new();
    for slot in &SLOTS {
        let creds = register(upstream, dict)?;
        let mut agent = Agent::new(slot.label, creds.clone(), &proxy, dict);
        if let Some(source) = slot.source {
            let (trace, key) = &sources[source];
            let clone_err = |error| ExperimentError::Clone { label: slot.label.to_string(), error };
            let rewritten = rewrite_trace(trace, &IdentityRewrite::new(trace, &creds), key, dict).map_err(clone_err)?;
            let clones_dir = ctx.dir.join("clones");
            fs::create_dir_all(&clones_dir).map_err(io_err(&clones_dir))?;
            rewritten.save(&clones_dir.join(format!("{}.fltrace", slot.label)))?;
            let report = replay(&rewritten, upstream, Pacing::None, dict).map_err(clone_err)?;
            agent.client.resume_after(report.last_nonce, report.last_timestamp_ms);
            agent.record.cloned_from = Some(trace.account_id.clone());
            agent.record.replay = Some(report);
        }
        proxy.open_session(&agent.record.account_id)?;
        agents.push(agent);
    }
    {
        let mut all: Vec<&Agent<'_, &U>> = vec![&watch, &baseline];
        all.extend(agents.iter());
        save_accounts(ctx.dir, &all)?;
    }

    let reader = |a: &Agent<'_, &U>| Client::new(upstream, a.client.credentials().clone(), dict.clone());
    let original = reader(&watch);
    let clones: Vec<_> = agents
        .iter()
        .filter(|a| a.record.cloned_from.as_deref() == Some(&watch.record.account_id))
        .map(reader)
        .collect();
    let baselines: Vec<_> =
        agents.iter().filter(|a| a.record.label == NON_CLONED_BASELINE).chain([&baseline]).map(reader).collect();
    let verdict = verify_clones(
        &original,
        &clones.iter().collect::<Vec<_>>(),
        &baselines.iter().collect::<Vec<_>>(),
        &ctx.plan.verify,
        ctx.topic,
        ctx.classifier,
    )
    .map_err(|error| ExperimentError::Clone { label: "precheck".into(), error })?;
    write_json(&ctx.dir.join(PRECHECK_FILE), &verdict)?;
    if !verdict.pass {
        let pairs: Vec<String> =
            verdict.failing_pairs.iter().map(|p| format!("{} vs {}: {}", p.clone, p.other, p.reason)).collect();
        return Err(ExperimentError::Precheck(pairs.join("; ")));
    }

    let roles2: Vec<Role> = SLOTS.iter().map(|s| s.phase2).collect();
    let roles3: Vec<Role> = SLOTS.iter().map(|s| s.phase3).collect();
    let mut refs: Vec<&mut Agent<'_, &U>> = agents.iter_mut().collect();
    let phase2 = ctx.column(2, &mut refs, &roles2, None);
    let phase3 = match phase2 {
        Ok(_) => {
            log::info!("{topic_id} {}: phase 3", ctx.dir.display());
            Some(ctx.column(3, &mut refs, &roles3, None))
        }
        Err(_) => None,
    };
    drop(refs);
    let mut all: Vec<&Agent<'_, &U>> = vec![&watch, &baseline];
    all.extend(agents.iter());
    save_accounts(ctx.dir, &all)?;
    let phase2 = phase2?;
    let phase3 = phase3.expect("phase 3 ran")?;
    let seed = RunLogs::load(ctx.dir)?.seed;
    Ok(RunLogs { seed, phase1, phase2, phase3 })
}

fn prepare_out(out: &Path, plan: &ExperimentPlan) -> Result<(), ExperimentError> {
    if out.exists() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(ExperimentError::Config(format!("results directory {} is not empty", out.display())));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join(PLAN_FILE), plan)
}

fn run_one<U: Transport + Sync>(
    plan: &ExperimentPlan,
    topic: &TopicProfile,
    index: usize,
    upstream: &U,
    platform_seed: Option<u64>,
    classifier: &dyn Classifier,
    out: &Path,
) -> RunOutcome {
    let rel = format!("{}/{}", topic.topic_id, run_dir_name(index));
    let dir = out.join(&rel);
    let mut outcome = RunOutcome {
        topic: topic.topic_id.clone(),
        run: index + 1,
        run_seed: plan.run_seed(index),
        platform_seed,
        dir: rel,
        completed: false,
        error: None,
        analysis: None,
    };
    let dictionary = Dictionary::default_app_log();
    let ctx = RunCtx { plan, topic, run_seed: outcome.run_seed, classifier, dictionary: &dictionary, dir: &dir };
    let result =
        fs::create_dir_all(&dir).map_err(io_err(&dir)).and_then(|_| execute_run(&ctx, upstream)).and_then(|logs| {
            let analysis = analyze_run(&topic.topic_id, index + 1, &logs, plan.confidence)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            write_json(&dir.join(STATS_FILE), &analysis)?;
            Ok(analysis)
        });
    match result {
        Ok(analysis) => {
            outcome.completed = true;
            outcome.analysis = Some(analysis);
        }
        Err(e) => {
            log::error!("{} run {} failed: {e}", topic.topic_id, index + 1);
            let _ = fs::write(dir.join(ERROR_FILE), format!("{e}\n"));
            outcome.error = Some(e.to_string());
        }
    }
    outcome
}

/// Runs every (topic, run) pair of the plan on its own in-process platform,
/// at most `jobs` at a time. Failed runs leave `error.txt` and their partial
/// artifacts; completed runs are kept either way.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out: &Path,
    classifier: &dyn Classifier,
    jobs: usize,
) -> Result<Vec<RunOutcome>, ExperimentError> {
    plan.validate()?;
    prepare_out(out, plan)?;
    let corpus = Arc::new(plan.generate_corpus()?);
    let calibration = plan.resolved_calibration()?;
    let work: Vec<(&TopicProfile, usize)> = plan
        .topics
        .iter()
        .flat_map(|t| {
            let profile = find(&plan.corpus_topics, t).expect("validated topic");
            (0..plan.runs).map(move |i| (profile, i))
        })
        .collect();

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; work.len()]);
    let mut setup_error = None;
    std::thread::scope(|s| {
        let workers: Vec<_> = (0..jobs.clamp(1, work.len()))
            .map(|_| {
                s.spawn(|| -> Result<(), ExperimentError> {
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&(topic, index)) = work.get(i) else { return Ok(()) };
                        let seed = plan.platform_seed(&topic.topic_id, index);
                        let config = PlatformConfig {
                            seed,
                            calibration: calibration.clone(),
                            sampling: plan.sampling,
                            ..PlatformConfig::default()
                        };
                        let platform = Platform::new(Arc::clone(&corpus), config, Dictionary::default_app_log())?;
                        let outcome = run_one(plan, topic, index, &platform, Some(seed), classifier, out);
                        slots.lock().expect("outcome table poisoned")[i] = Some(outcome);
                    }
                })
            })
            .collect();
        for w in workers {
            if let Err(e) = w.join().expect("run worker panicked") {
                setup_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = setup_error {
        return Err(e);
    }
    let outcomes: Vec<RunOutcome> = slots.into_inner().expect("outcome table poisoned").into_iter().flatten().collect();
    write_json(&out.join(RUNS_FILE), &outcomes)?;
    Ok(outcomes)
}

/// Same design against an already running platform, one run at a time.
/// Accounts are registered through the platform's registration endpoint.
pub fn run_experiment_remote<U: Transport + Sync>(
    plan: &ExperimentPlan,
    upstream: &U,
    out: &Path,
    classifier: &dyn Classifier,
) -> Result<Vec<RunOutcome>, ExperimentError> {
    plan.validate()?;
    prepare_out(out, plan)?;
    let mut outcomes = Vec::new();
    for t in &plan.topics {
        let topic = find(&plan.corpus_topics, t).expect("validated topic");
        for index in 0..plan.runs {
            outcomes.push(run_one(plan, topic, index, upstream, None, classifier, out));
        }
    }
    write_json(&out.join(RUNS_FILE), &outcomes)?;
    Ok(outcomes)
}

pub fn read_plan(results: &Path) -> Result<ExperimentPlan, ExperimentError> {
    let path = results.join(PLAN_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

pub fn read_accounts(run_dir: &Path) -> Result<Vec<AccountRecord>, ExperimentError> {
    let path = run_dir.join(ACCOUNTS_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}
