//! Experiment grid execution, the append-only record log, and aggregation
//! of records into outcome tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, DecisionContext};
use crate::game::{classify_outcome, OutcomeType, Profile, Role};
use crate::prompting::{AgentReply, Condition, PromptBuilder, RegistryError};
use crate::scenarios::{Family, Scenario, ScenarioBundle};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_REPETITIONS: u32 = 5;

/// One simulated round: all four roles prompted once under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub scenario_id: String,
    pub family: Family,
    pub condition: Condition,
    pub repetition: u32,
    pub seed: u64,
    /// Role-indexed; `None` where the agent produced no usable reply.
    pub replies: [Option<AgentReply>; 4],
    pub profile: Option<Profile>,
    pub nash: Option<bool>,
    pub outcome: Option<OutcomeType>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

/// Identity of a record within a grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub model_id: String,
    pub scenario_id: String,
    pub condition: Condition,
    pub repetition: u32,
}

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            model_id: self.model_id.clone(),
            scenario_id: self.scenario_id.clone(),
            condition: self.condition.clone(),
            repetition: self.repetition,
        }
    }

    /// Canonical JSON with timestamp fields removed.
    pub fn content_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("records serialize");
        let obj = v.as_object_mut().expect("record is an object");
        obj.remove("started_ms");
        obj.remove("finished_ms");
        v.to_string()
    }
}

/// SHA-256 over the records' timestamp-free content, independent of the
/// order records were written in.
pub fn content_hash(records: &[RunRecord]) -> String {
    let mut lines: Vec<String> = records.iter().map(RunRecord::content_json).collect();
    lines.sort();
    let mut h = Sha256::new();
    for line in lines {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-record seed from the global seed and the record's key.
pub fn record_seed(global_seed: u64, model_id: &str, scenario_id: &str, condition: &Condition, repetition: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    for part in [model_id, scenario_id, &condition.key()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(repetition.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("no conditions given")]
    NoConditions,
    #[error(transparent)]
    Prompt(#[from] RegistryError),
    #[error("record log {path}: line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Plays one round of `scenario` and returns its record. Agent failures
/// yield an invalid record instead of an error.
pub fn play_round(
    agent: &Agent,
    builder: &PromptBuilder,
    scenario: &Scenario,
    condition: &Condition,
    repetition: u32,
    global_seed: u64,
) -> Result<RunRecord, RunError> {
    let seed = record_seed(global_seed, agent.id(), scenario.id(), condition, repetition);
    let started_ms = now_ms();
    let mut replies: [Option<AgentReply>; 4] = Default::default();
    let mut errors = Vec::new();
    for role in Role::ALL {
        let bundle = builder.build_prompt(scenario, role, condition, &[])?;
        let ctx = DecisionContext { repetition, seed };
        match agent.decide(role, &bundle, scenario, ctx) {
            Ok(reply) => replies[role.index()] = Some(reply),
            Err(e) => errors.push(format!("{role}: {e}")),
        }
    }
    let (profile, nash, outcome, valid, error) = if errors.is_empty() {
        let actions = Role::ALL.map(|r| replies[r.index()].as_ref().expect("all replies present").action);
        let profile = Profile::from_actions(actions);
        (Some(profile), Some(scenario.table().is_nash(profile)), Some(classify_outcome(profile)), true, None)
    } else {
        (None, None, None, false, Some(errors.join("; ")))
    };
    Ok(RunRecord {
        model_id: agent.id().to_string(),
        scenario_id: scenario.id().to_string(),
        family: scenario.family(),
        condition: condition.clone(),
        repetition,
        seed,
        replies,
        profile,
        nash,
        outcome,
        valid,
        error,
        started_ms,
        finished_ms: now_ms(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestEntry {
    #[serde(flatten)]
    key: RecordKey,
    valid: bool,
}

/// Result of reading a record log.
#[derive(Debug, Clone, Default)]
pub struct LoadedLog {
    pub records: Vec<RunRecord>,
    /// Bytes of a trailing partial line that was ignored.
    pub truncated_bytes: u64,
}

/// Reads a JSONL record log. A final line without a newline is a torn
/// write and is skipped; a malformed complete line is an error.
pub fn read_records(path: impl AsRef<Path>) -> Result<LoadedLog, RunError> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LoadedLog::default()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut out = LoadedLog::default();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            out.truncated_bytes = read as u64;
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let record = serde_json::from_str(text).map_err(|e| RunError::CorruptLog {
            path: path.to_path_buf(),
            line: n,
            message: e.to_string(),
        })?;
        out.records.push(record);
    }
    Ok(out)
}

/// Append-only record log plus manifest in one output directory. Writes
/// are serialized; each record is flushed before `append` returns.
pub struct RecordLog {
    dir: PathBuf,
    inner: Mutex<(File, File)>,
    done: Mutex<HashSet<RecordKey>>,
}

impl RecordLog {
    /// Opens (creating if needed) the log in `dir`, drops any torn final
    /// line, and rewrites the manifest from the surviving records.
    pub fn open(dir: impl AsRef<Path>) -> Result<(RecordLog, LoadedLog), RunError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let records_path = dir.join(RECORDS_FILE);
        let loaded = read_records(&records_path)?;
        let mut records = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&records_path)?;
        let len = records.metadata()?.len();
        records.set_len(len - loaded.truncated_bytes)?;
        records.seek(SeekFrom::End(0))?;

        let mut manifest = File::create(dir.join(MANIFEST_FILE))?;
        for r in &loaded.records {
            writeln!(manifest, "{}", serde_json::to_string(&ManifestEntry { key: r.key(), valid: r.valid }).expect("serialize"))?;
        }
        manifest.flush()?;
        let done = loaded.records.iter().map(RunRecord::key).collect();
        Ok((RecordLog { dir, inner: Mutex::new((records, manifest)), done: Mutex::new(done) }, loaded))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.done.lock().expect("log lock").contains(key)
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), RunError> {
        let line = serde_json::to_string(record).expect("records serialize");
        let entry = serde_json::to_string(&ManifestEntry { key: record.key(), valid: record.valid }).expect("serialize");
        let mut guard = self.inner.lock().expect("log lock");
        let (records, manifest) = &mut *guard;
        records.write_all(format!("{line}\n").as_bytes())?;
        records.flush()?;
        writeln!(manifest, "{entry}")?;
        manifest.flush()?;
        self.done.lock().expect("log lock").insert(record.key());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub repetitions: u32,
    pub seed: u64,
    pub workers: usize,
    /// Stop after executing this many new records.
    pub max_records: Option<usize>,
    /// Sleep after each record; lets tests interrupt a run partway.
    pub pace: Option<Duration>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { repetitions: DEFAULT_REPETITIONS, seed: 0, workers: 1, max_records: None, pace: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Newly executed records, in grid order.
    pub executed: Vec<RunRecord>,
    /// Keys already present in the log and skipped.
    pub skipped: usize,
    /// Grid keys left unexecuted because of `max_records`.
    pub remaining: usize,
}

/// Runs `repetitions` rounds of one (scenario, condition) cell.
pub fn run_cell(
    agent: &Agent,
    builder: &PromptBuilder,
    scenario: &Scenario,
    condition: &Condition,
    repetitions: u32,
    seed: u64,
    log: Option<&RecordLog>,
) -> Result<Vec<RunRecord>, RunError> {
    if repetitions == 0 {
        return Err(RunError::NoRepetitions);
    }
    let mut out = Vec::with_capacity(repetitions as usize);
    for rep in 0..repetitions {
        let record = play_round(agent, builder, scenario, condition, rep, seed)?;
        if let Some(log) = log {
            log.append(&record)?;
        }
        out.push(record);
    }
    Ok(out)
}

/// Runs every scenario x condition x repetition, skipping keys already in
/// `log`. Records are appended as they finish.
pub fn run_grid(
    agent: &Agent,
    builder: &PromptBuilder,
    bundle: &ScenarioBundle,
    conditions: &[Condition],
    opts: &GridOptions,
    log: Option<&RecordLog>,
) -> Result<GridOutcome, RunError> {
    if conditions.is_empty() {
        return Err(RunError::NoConditions);
    }
    if opts.repetitions == 0 {
        return Err(RunError::NoRepetitions);
    }
    // Fail on unknown persona variants before any record is written.
    if let Some(s) = bundle.scenarios().first() {
        for c in conditions {
            builder.build_prompt(s, Role::Industrialist, c, &[])?;
        }
    }

    let mut jobs = Vec::new();
    let mut skipped = 0;
    for scenario in bundle.scenarios() {
        for condition in conditions {
            for rep in 0..opts.repetitions {
                let key = RecordKey {
                    model_id: agent.id().to_string(),
                    scenario_id: scenario.id().to_string(),
                    condition: condition.clone(),
                    repetition: rep,
                };
                if log.is_some_and(|l| l.contains(&key)) {
                    skipped += 1;
                } else {
                    jobs.push((scenario, condition, rep));
                }
            }
        }
    }
    let budget = opts.max_records.unwrap_or(usize::MAX).min(jobs.len());
    let remaining = jobs.len() - budget;
    jobs.truncate(budget);

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, RunRecord)>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let failure: Mutex<Option<RunError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..opts.workers.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                if failure.lock().expect("lock").is_some() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(scenario, condition, rep)) = jobs.get(i) else { return };
                let result = play_round(agent, builder, scenario, condition, rep, opts.seed)
                    .and_then(|r| log.map_or(Ok(()), |l| l.append(&r)).map(|_| r));
                match result {
                    Ok(r) => results.lock().expect("lock").push((i, r)),
                    Err(e) => {
                        failure.lock().expect("lock").get_or_insert(e);
                        return;
                    }
                }
                if let Some(p) = opts.pace {
                    std::thread::sleep(p);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let mut results = results.into_inner().expect("lock");
    results.sort_by_key(|(i, _)| *i);
    Ok(GridOutcome { executed: results.into_iter().map(|(_, r)| r).collect(), skipped, remaining })
}

/// Which record fields form an aggregation group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupBy {
    pub family: bool,
    pub model: bool,
    pub condition: bool,
}

impl GroupBy {
    pub const ALL: GroupBy = GroupBy { family: true, model: true, condition: true };

    pub fn key(&self, r: &RunRecord) -> GroupKey {
        GroupKey {
            family: self.family.then_some(r.family),
            model: self.model.then(|| r.model_id.clone()),
            condition: self.condition.then(|| r.condition.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GroupKey {
    pub family: Option<Family>,
    pub model: Option<String>,
    pub condition: Option<Condition>,
}

/// Outcome counts for one group of records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellAggregate {
    pub n_total: u64,
    pub n_nash: u64,
    pub n_green: u64,
    pub n_tragedy: u64,
    pub n_invalid: u64,
}

impl CellAggregate {
    pub fn add(&mut self, r: &RunRecord, include_invalid: bool) {
        if !r.valid {
            if include_invalid {
                self.n_total += 1;
                self.n_invalid += 1;
            }
            return;
        }
        self.n_total += 1;
        self.n_nash += u64::from(r.nash == Some(true));
        self.n_green += u64::from(r.outcome == Some(OutcomeType::GreenTransition));
        self.n_tragedy += u64::from(r.outcome == Some(OutcomeType::TragedyOfCommons));
    }

    pub fn merge(&mut self, other: &CellAggregate) {
        self.n_total += other.n_total;
        self.n_nash += other.n_nash;
        self.n_green += other.n_green;
        self.n_tragedy += other.n_tragedy;
        self.n_invalid += other.n_invalid;
    }

    fn pct(&self, n: u64) -> Option<f64> {
        (self.n_total > 0).then(|| 100.0 * n as f64 / self.n_total as f64)
    }

    pub fn nash_pct(&self) -> Option<f64> {
        self.pct(self.n_nash)
    }

    pub fn green_pct(&self) -> Option<f64> {
        self.pct(self.n_green)
    }

    pub fn tragedy_pct(&self) -> Option<f64> {
        self.pct(self.n_tragedy)
    }
}

/// Percentage with one decimal, or an em dash when undefined.
pub fn format_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "\u{2014}".to_string(), |v| format!("{v:.1}"))
}

/// Groups records and counts outcomes. Invalid records are left out of
/// every denominator unless `include_invalid` is set.
pub fn aggregate(records: &[RunRecord], group_by: GroupBy, include_invalid: bool) -> BTreeMap<GroupKey, CellAggregate> {
    let mut out: BTreeMap<GroupKey, CellAggregate> = BTreeMap::new();
    for r in records {
        out.entry(group_by.key(r)).or_default().add(r, include_invalid);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistinctMode {
    /// Distinct joint profiles.
    #[default]
    Profiles,
    /// Distinct outcome labels (Green, Tragedy, Other).
    OutcomeTypes,
}

impl DistinctMode {
    pub fn parse(s: &str) -> Option<DistinctMode> {
        match s {
            "profiles" => Some(DistinctMode::Profiles),
            "outcome_types" | "outcomes" => Some(DistinctMode::OutcomeTypes),
            _ => None,
        }
    }
}

/// Number of distinct outcomes among the valid records.
pub fn distinct_outcomes(records: &[RunRecord], mode: DistinctMode) -> usize {
    match mode {
        DistinctMode::Profiles => records.iter().filter_map(|r| r.profile).collect::<BTreeSet<_>>().len(),
        DistinctMode::OutcomeTypes => records.iter().filter_map(|r| r.outcome).collect::<BTreeSet<_>>().len(),
    }
}

/// Prompt-sensitivity summary for one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensitivity {
    pub model: String,
    /// Distinct outcomes per scenario across the persona-variant runs.
    pub per_scenario: BTreeMap<String, usize>,
    pub mean_distinct: Option<f64>,
}

/// Per model, the mean over scenarios of the number of distinct outcomes
/// observed across all persona-on conditions.
pub fn prompt_sensitivity(records: &[RunRecord], mode: DistinctMode) -> Vec<Sensitivity> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<RunRecord>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition.variant().is_some()) {
        groups.entry(&r.model_id).or_default().entry(&r.scenario_id).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(model, scenarios)| {
            let per_scenario: BTreeMap<String, usize> =
                scenarios.iter().map(|(s, rs)| (s.to_string(), distinct_outcomes(rs, mode))).collect();
            let mean_distinct = (!per_scenario.is_empty())
                .then(|| per_scenario.values().sum::<usize>() as f64 / per_scenario.len() as f64);
            Sensitivity { model: model.to_string(), per_scenario, mean_distinct }
        })
        .collect()
}
