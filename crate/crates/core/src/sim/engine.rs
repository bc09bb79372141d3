//! Deterministic discrete-event engine driving the whole stack: agents
//! poll brokers, simulated batch queues run jobs, transfer daemons walk
//! the three-phase copy against an in-memory filesystem, optimizers run
//! on a cadence and on task insertion, and faults fire on schedule.
//!
//! One event queue ordered by (time, schedule sequence) makes every run
//! with the same scenario byte-identical. All module invariants can be
//! swept continuously; a violation aborts the run.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::broker::Broker;
use crate::catalogue::{Catalogue, ReplicationKind, SeName};
use crate::descriptor::Descriptor;
use crate::jobs::{
    ComputingElement, JobSpec, ProcessMonitor, QueueConfig, RunOutcome, ValidatorRegistry,
};
use crate::optimizer::{BulkConfig, JobOptimizer, TransferOptimizer};
use crate::registry::{SignalAction, SiteRegistry};
use crate::store::{id_allocator, Status, TaskId, TaskKind, TaskStore};
use crate::trace::TraceLog;
use crate::transfers::{transport_by_name, FileTransferDaemon, TransferRequest};
use crate::Millis;

use super::scenario::{FaultEntry, Scenario};

#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Sweep all store/catalogue invariants during the run.
    pub assert_invariants: bool,
    /// Events between full sweeps when assertion is on.
    pub invariant_check_every: u64,
    /// Override the transfer optimizer's site tagging (None = on).
    pub tagging: Option<bool>,
    /// Enable bulk grouping of small transfers.
    pub bulk: Option<BulkConfig>,
    /// Enact replication suggestions as mirror transfers.
    pub auto_replicate: bool,
    /// Force one transport for every transfer.
    pub transport_override: Option<String>,
    /// Mirror the trace into this file as it is written.
    pub trace_file: Option<std::path::PathBuf>,
    /// Hard cap on processed events.
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            assert_invariants: true,
            invariant_check_every: 2048,
            tagging: None,
            bulk: None,
            auto_replicate: false,
            transport_override: None,
            trace_file: None,
            max_events: 50_000_000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invariant violation at t={at}: {detail}")]
    Invariant { at: Millis, detail: String },
    #[error("simulation setup: {0}")]
    Setup(String),
    #[error("event cap exceeded ({0} events)")]
    EventCap(u64),
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a test might want to poke at after a run.
pub struct SimReport {
    pub trace_text: String,
    pub metrics: BTreeMap<String, String>,
    pub end_ms: Millis,
    pub job_store: Arc<TaskStore>,
    pub transfer_store: Arc<TaskStore>,
    pub catalogue: Catalogue,
    pub registry: SiteRegistry,
    pub job_match_evals: u64,
    pub transfer_match_evals: u64,
    /// (agent path, scratch pfn) left behind at the end.
    pub scratch_leftovers: Vec<(String, String)>,
    /// Process-monitor lifetimes, for the handle-window invariant.
    pub monitor_spans: Vec<MonitorSpan>,
    /// Captured partial-output probes (task, at, bytes).
    pub probes: Vec<(TaskId, Millis, Vec<u8>)>,
}

#[derive(Debug, Clone)]
pub struct MonitorSpan {
    pub task: TaskId,
    pub created_at: Millis,
    pub destroyed_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ev {
    Submit(usize),
    Poll(usize),
    QueueSubmit { agent: usize, task: TaskId },
    JobStart { agent: usize, task: TaskId },
    JobFinish { agent: usize, task: TaskId },
    JobProbe { task: TaskId },
    XferEndStage { task: TaskId },
    XferEndFetch { task: TaskId },
    XferEndClean { task: TaskId },
    OptPass(TaskKind),
    Fault(usize),
}

impl Ev {
    /// Work events keep the simulation alive; polls, optimizer passes and
    /// probes alone do not prevent quiescence.
    fn is_work(&self) -> bool {
        !matches!(self, Ev::Poll(_) | Ev::OptPass(_) | Ev::JobProbe { .. })
    }
}

#[derive(PartialEq, Eq)]
struct Sched {
    at: Millis,
    seq: u64,
    ev: Ev,
}

impl Ord for Sched {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for Sched {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// In-memory filesystem: SE -> pfn -> bytes.
#[derive(Default)]
struct SimFs {
    ses: BTreeMap<SeName, BTreeMap<String, Vec<u8>>>,
}

impl SimFs {
    fn write(&mut self, se: &SeName, pfn: &str, bytes: Vec<u8>) {
        self.ses
            .entry(se.clone())
            .or_default()
            .insert(pfn.to_string(), bytes);
    }

    fn read(&self, se: &SeName, pfn: &str) -> Option<&Vec<u8>> {
        self.ses.get(se)?.get(pfn)
    }

    fn checksum(&self, se: &SeName, pfn: &str) -> Option<String> {
        self.read(se, pfn).map(|bytes| sha_hex(bytes))
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic synthetic content for a seeded file.
fn synth_bytes(lfn: &str, size: u64) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(lfn.as_bytes());
    let seed = hasher.finalize();
    let mut out = Vec::with_capacity(size as usize);
    let mut i = 0usize;
    while (out.len() as u64) < size {
        out.push(seed[i % seed.len()] ^ (i as u8));
        i += 1;
    }
    out
}

struct CeRuntime {
    cfg: ComputingElement,
    descriptor: Descriptor,
    inflight_submits: BTreeSet<TaskId>,
    queued: VecDeque<TaskId>,
    starting: BTreeSet<TaskId>,
    running: BTreeSet<TaskId>,
}

impl CeRuntime {
    fn backlog(&self) -> usize {
        self.inflight_submits.len() + self.queued.len() + self.starting.len()
    }
}

struct FtdRuntime {
    cfg: FileTransferDaemon,
    busy: Option<TaskId>,
    cache_free: u64,
    scratch: BTreeMap<String, Vec<u8>>,
}

enum AgentKind {
    Ce(CeRuntime),
    Ftd(FtdRuntime),
}

struct Agent {
    site: String,
    name: String,
    crashed: bool,
    kind: AgentKind,
}

impl Agent {
    fn path(&self) -> String {
        format!("{}/{}", self.site, self.name)
    }
}

struct XferItem {
    lfn: String,
    src_se: SeName,
    src_pfn: String,
    dst_pfn: String,
    member: Option<TaskId>,
}

struct ActiveXfer {
    dest_agent: usize,
    src_ftd: Option<usize>,
    dst_se: SeName,
    kind: ReplicationKind,
    size: u64,
    staged: bool,
    reserved: u64,
    scratch_pfns: Vec<String>,
    items: Vec<XferItem>,
}

struct Engine {
    scenario: Scenario,
    opts: SimOptions,
    now: Millis,
    seq: u64,
    heap: BinaryHeap<Reverse<Sched>>,
    pending_work: u64,
    submits_remaining: usize,
    faults_remaining: usize,
    processed: u64,

    trace: TraceLog,
    catalogue: Catalogue,
    registry: SiteRegistry,
    job_store: Arc<TaskStore>,
    transfer_store: Arc<TaskStore>,
    job_broker: Broker,
    transfer_broker: Broker,
    job_optimizer: JobOptimizer,
    transfer_optimizer: TransferOptimizer,
    validators: ValidatorRegistry,

    agents: Vec<Agent>,
    fs: SimFs,
    se_sim: BTreeMap<SeName, (bool, u64)>, // (mss, bandwidth)
    active: BTreeMap<TaskId, ActiveXfer>,
    monitors: BTreeMap<TaskId, ProcessMonitor>,
    monitor_spans: Vec<MonitorSpan>,
    probes: Vec<(TaskId, Millis, Vec<u8>)>,
    /// Time of the next scheduled pass per kind; an event that pops at a
    /// different time is stale.
    opt_next: BTreeMap<TaskKind, Millis>,
    transport_fail: BTreeSet<TaskId>,
    stage_fail: BTreeSet<TaskId>,
    clean_fail: BTreeSet<TaskId>,
    fault_count: u64,
    metrics_cache: Option<BTreeMap<String, String>>,
}

pub fn run_simulation(scenario: &Scenario, opts: &SimOptions) -> Result<SimReport, SimError> {
    scenario
        .validate()
        .map_err(|e| SimError::Setup(e.to_string()))?;
    let mut engine = Engine::build(scenario.clone(), opts.clone())?;
    engine.run()?;
    Ok(engine.into_report())
}

impl Engine {
    fn build(scenario: Scenario, opts: SimOptions) -> Result<Engine, SimError> {
        let trace = match &opts.trace_file {
            Some(path) => TraceLog::with_file(path)?,
            None => TraceLog::new(),
        };
        trace.comment("pullgrid trace v1");
        trace.comment(&format!("seed {}", scenario.seed));

        let ids = id_allocator();
        let job_store = Arc::new(TaskStore::new(TaskKind::Job, Arc::clone(&ids), trace.clone()));
        let transfer_store = Arc::new(TaskStore::new(TaskKind::Transfer, ids, trace.clone()));
        let job_broker = Broker::new(Arc::clone(&job_store), trace.clone(), scenario.retry_hint_ms);
        let transfer_broker = Broker::new(
            Arc::clone(&transfer_store),
            trace.clone(),
            scenario.retry_hint_ms,
        );
        let mut job_optimizer = JobOptimizer::new(trace.clone());
        job_optimizer.auto_replicate = opts.auto_replicate;
        let mut transfer_optimizer = TransferOptimizer::new(trace.clone());
        if let Some(tagging) = opts.tagging {
            transfer_optimizer.tagging = tagging;
        }
        transfer_optimizer.bulk = opts.bulk;

        let catalogue = Catalogue::new();
        let registry = SiteRegistry::new();
        let mut agents = Vec::new();
        let mut fs = SimFs::default();
        let mut se_sim = BTreeMap::new();

        for site in &scenario.sites {
            registry
                .add_site(&site.name)
                .map_err(|e| SimError::Setup(e.to_string()))?;
            for se in &site.ses {
                let full = format!("{}::{}", site.name, se.name);
                let name = registry
                    .register_se_everywhere(&catalogue, &site.name, &full, se.capacity_bytes)
                    .map_err(|e| SimError::Setup(e.to_string()))?;
                se_sim.insert(name, (se.mss, se.bandwidth_bytes_per_ms.max(1)));
            }
            for ce in &site.ces {
                let requirements = match &ce.requirements {
                    Some(text) => Some(
                        crate::descriptor::parse_expression(text)
                            .map_err(|e| SimError::Setup(e.to_string()))?,
                    ),
                    None => None,
                };
                let cfg = ComputingElement {
                    name: ce.name.clone(),
                    hostname: format!("{}.{}", ce.name, site.name),
                    partitions: ce.partitions.clone(),
                    close_se: ce
                        .close_se
                        .iter()
                        .map(|s| SeName::parse(s).map_err(|e| SimError::Setup(e.to_string())))
                        .collect::<Result<_, _>>()?,
                    packages: ce.packages.clone(),
                    site: site.name.clone(),
                    requirements,
                    queue: QueueConfig {
                        slots: ce.slots,
                        start_latency_ms: ce.start_latency_ms,
                        submit_latency_ms: ce.submit_latency_ms,
                        depth: ce.queue_depth,
                    },
                    poll_interval_ms: ce.poll_interval_ms,
                };
                registry
                    .add_ce(cfg.clone())
                    .map_err(|e| SimError::Setup(e.to_string()))?;
                let descriptor = cfg.descriptor();
                agents.push(Agent {
                    site: site.name.clone(),
                    name: ce.name.clone(),
                    crashed: false,
                    kind: AgentKind::Ce(CeRuntime {
                        cfg,
                        descriptor,
                        inflight_submits: BTreeSet::new(),
                        queued: VecDeque::new(),
                        starting: BTreeSet::new(),
                        running: BTreeSet::new(),
                    }),
                });
            }
            for ftd in &site.ftds {
                let cfg = FileTransferDaemon {
                    name: ftd.name.clone(),
                    close_se: SeName::parse(&ftd.close_se)
                        .map_err(|e| SimError::Setup(e.to_string()))?,
                    cache_bytes: ftd.cache_bytes,
                    site: site.name.clone(),
                    poll_interval_ms: ftd.poll_interval_ms,
                };
                registry
                    .add_ftd(cfg.clone())
                    .map_err(|e| SimError::Setup(e.to_string()))?;
                agents.push(Agent {
                    site: site.name.clone(),
                    name: ftd.name.clone(),
                    crashed: false,
                    kind: AgentKind::Ftd(FtdRuntime {
                        cache_free: cfg.cache_bytes,
                        cfg,
                        busy: None,
                        scratch: BTreeMap::new(),
                    }),
                });
            }
        }

        for file in &scenario.files {
            let se = SeName::parse(&file.se).map_err(|e| SimError::Setup(e.to_string()))?;
            let pfn = format!("srm://{}{}", se, file.lfn);
            catalogue
                .register_file(&file.lfn, &pfn, &se, file.size_bytes, 0)
                .map_err(|e| SimError::Setup(e.to_string()))?;
            fs.write(&se, &pfn, synth_bytes(&file.lfn, file.size_bytes));
        }

        let submits_remaining = scenario.workload.len();
        let faults_remaining = scenario.faults.len();
        let mut engine = Engine {
            opts,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            pending_work: 0,
            submits_remaining,
            faults_remaining,
            processed: 0,
            trace,
            catalogue,
            registry,
            job_store,
            transfer_store,
            job_broker,
            transfer_broker,
            job_optimizer,
            transfer_optimizer,
            validators: ValidatorRegistry::new(),
            agents,
            fs,
            se_sim,
            active: BTreeMap::new(),
            monitors: BTreeMap::new(),
            monitor_spans: Vec::new(),
            probes: Vec::new(),
            opt_next: BTreeMap::new(),
            transport_fail: BTreeSet::new(),
            stage_fail: BTreeSet::new(),
            clean_fail: BTreeSet::new(),
            fault_count: 0,
            metrics_cache: None,
            scenario,
        };

        // Sort submissions by time (stable in workload order) so ids are
        // predictable; schedule everything else directly.
        let mut order: Vec<usize> = (0..engine.scenario.workload.len()).collect();
        order.sort_by_key(|&i| engine.scenario.workload[i].at_ms);
        for i in order {
            let at = engine.scenario.workload[i].at_ms;
            engine.schedule(at, Ev::Submit(i));
        }
        for i in 0..engine.scenario.faults.len() {
            let at = engine.scenario.faults[i].at_ms;
            engine.schedule(at, Ev::Fault(i));
        }
        for i in 0..engine.agents.len() {
            // small deterministic stagger so same-interval agents do not
            // always poll in the same breath
            engine.schedule(1 + i as Millis, Ev::Poll(i));
        }
        let interval = engine.scenario.optimizer_interval_ms;
        engine.schedule_opt_pass(TaskKind::Job, interval);
        engine.schedule_opt_pass(TaskKind::Transfer, interval);
        Ok(engine)
    }

    fn schedule(&mut self, at: Millis, ev: Ev) {
        if ev.is_work() {
            self.pending_work += 1;
        }
        self.seq += 1;
        self.heap.push(Reverse(Sched {
            at: at.max(self.now),
            seq: self.seq,
            ev,
        }));
    }

    /// Keep one live pass event per kind; an earlier request supersedes a
    /// later pending one (the later event goes stale).
    fn schedule_opt_pass(&mut self, kind: TaskKind, at: Millis) {
        let at = at.max(self.now);
        match self.opt_next.get(&kind) {
            Some(&pending) if pending <= at => return,
            _ => {}
        }
        self.opt_next.insert(kind, at);
        self.schedule(at, Ev::OptPass(kind));
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(sched)) = self.heap.pop() {
            if sched.at > self.scenario.horizon_ms {
                break;
            }
            self.now = sched.at;
            if sched.ev.is_work() {
                self.pending_work -= 1;
            }
            self.dispatch(sched.ev)?;
            self.processed += 1;
            if self.processed > self.opts.max_events {
                return Err(SimError::EventCap(self.processed));
            }
            if self.opts.assert_invariants
                && self.processed % self.opts.invariant_check_every == 0
            {
                self.sweep_invariants()?;
            }
            if self.quiescent() {
                break;
            }
        }
        if self.opts.assert_invariants {
            self.sweep_invariants()?;
        }
        self.finish();
        Ok(())
    }

    fn quiescent(&self) -> bool {
        self.submits_remaining == 0
            && self.faults_remaining == 0
            && self.pending_work == 0
            && self.job_store.non_terminal_count() == 0
            && self.transfer_store.non_terminal_count() == 0
    }

    fn sweep_invariants(&self) -> Result<(), SimError> {
        let fail = |detail: String| -> Result<(), SimError> {
            Err(SimError::Invariant {
                at: self.now,
                detail,
            })
        };
        if let Err(e) = self.job_store.check_invariants() {
            return fail(format!("job store: {e}"));
        }
        if let Err(e) = self.transfer_store.check_invariants() {
            return fail(format!("transfer store: {e}"));
        }
        if let Err(e) = self.catalogue.check_invariants() {
            return fail(format!("catalogue: {e}"));
        }
        // every catalogued replica must have its bytes in the sim fs
        for entry in self.catalogue.entries() {
            for replica in entry.replicas() {
                match self.fs.read(&replica.se, &replica.pfn) {
                    Some(bytes) if bytes.len() as u64 == entry.size => {}
                    Some(_) => {
                        return fail(format!(
                            "{}: replica {} has wrong size",
                            entry.lfn, replica.pfn
                        ))
                    }
                    None => {
                        return fail(format!(
                            "{}: replica {}@{} missing from fs",
                            entry.lfn, replica.pfn, replica.se
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Submit(i) => self.on_submit(i),
            Ev::Poll(i) => self.on_poll(i),
            Ev::QueueSubmit { agent, task } => self.on_queue_submit(agent, task),
            Ev::JobStart { agent, task } => self.on_job_start(agent, task),
            Ev::JobFinish { agent, task } => self.on_job_finish(agent, task),
            Ev::JobProbe { task } => {
                if let Some(pm) = self.monitors.get(&task) {
                    self.probes
                        .push((task, self.now, pm.partial_output(self.now).to_vec()));
                }
                Ok(())
            }
            Ev::XferEndStage { task } => self.on_xfer_end_stage(task),
            Ev::XferEndFetch { task } => self.on_xfer_end_fetch(task),
            Ev::XferEndClean { task } => self.on_xfer_end_clean(task),
            Ev::OptPass(kind) => self.on_opt_pass(kind),
            Ev::Fault(i) => self.on_fault(i),
        }
    }

    fn on_submit(&mut self, index: usize) -> Result<(), SimError> {
        self.submits_remaining -= 1;
        let entry = self.scenario.workload[index].clone();
        let kind: TaskKind = entry.kind.parse().expect("validated");
        match kind {
            TaskKind::Job => {
                let spec = JobSpec::from_text(&entry.spec)
                    .map_err(|e| SimError::Setup(format!("workload[{index}]: {e}")))?;
                crate::jobs::submit_job(&self.job_store, &self.catalogue, &spec, self.now)
                    .map_err(|e| SimError::Setup(format!("workload[{index}]: {e}")))?;
            }
            TaskKind::Transfer => {
                let mut request = TransferRequest::from_text(&entry.spec)
                    .map_err(|e| SimError::Setup(format!("workload[{index}]: {e}")))?;
                if let Some(transport) = &self.opts.transport_override {
                    request.transport = Some(transport.clone());
                }
                crate::transfers::request_transfer(
                    &self.transfer_store,
                    &self.catalogue,
                    &request,
                    self.now,
                )
                .map_err(|e| SimError::Setup(format!("workload[{index}]: {e}")))?;
            }
        }
        // a fresh task wakes the matching optimizer immediately
        self.schedule_opt_pass(kind, self.now);
        Ok(())
    }

    fn on_opt_pass(&mut self, kind: TaskKind) -> Result<(), SimError> {
        if self.opt_next.get(&kind) != Some(&self.now) {
            return Ok(()); // superseded by an earlier pass
        }
        self.opt_next.remove(&kind);
        match kind {
            TaskKind::Job => {
                self.job_optimizer.pass(
                    &self.job_store,
                    &self.catalogue,
                    &self.registry,
                    Some(&self.transfer_store),
                    self.now,
                );
            }
            TaskKind::Transfer => {
                self.transfer_optimizer
                    .pass(&self.transfer_store, &self.catalogue, self.now);
            }
        }
        // steady cadence on top of insertion-triggered passes
        let interval = self.scenario.optimizer_interval_ms;
        self.schedule_opt_pass(kind, self.now + interval);
        Ok(())
    }

    fn on_poll(&mut self, agent_idx: usize) -> Result<(), SimError> {
        if self.agents[agent_idx].crashed {
            return Ok(());
        }
        let is_ce = matches!(self.agents[agent_idx].kind, AgentKind::Ce(_));
        if is_ce {
            self.poll_ce(agent_idx)
        } else {
            self.poll_ftd(agent_idx)
        }
    }

    fn poll_ce(&mut self, agent_idx: usize) -> Result<(), SimError> {
        let agent = &self.agents[agent_idx];
        let path = agent.path();
        let site = agent.site.clone();
        let AgentKind::Ce(ce) = &agent.kind else {
            unreachable!()
        };
        let interval = ce.cfg.poll_interval_ms;
        // the site proxy refuses polls of stopped CEs
        if self.registry.ce_stopped(&site, &agent.name) || ce.backlog() >= ce.cfg.queue.depth {
            self.schedule(self.now + interval, Ev::Poll(agent_idx));
            return Ok(());
        }
        let descriptor = ce.descriptor.clone();
        let outcome = self
            .job_broker
            .request_task(&descriptor, &path, &site, self.now)
            .map_err(|e| SimError::Setup(e.to_string()))?;
        match outcome {
            crate::broker::MatchOutcome::Assigned(assignment) => {
                let task = assignment.task_id;
                let submit_latency = {
                    let AgentKind::Ce(ce) = &mut self.agents[agent_idx].kind else {
                        unreachable!()
                    };
                    ce.inflight_submits.insert(task);
                    ce.cfg.queue.submit_latency_ms
                };
                self.schedule(
                    self.now + submit_latency,
                    Ev::QueueSubmit {
                        agent: agent_idx,
                        task,
                    },
                );
                // eager re-poll while there is work to pull
                self.schedule(self.now + 1, Ev::Poll(agent_idx));
            }
            crate::broker::MatchOutcome::NoMatch { retry_after_ms } => {
                self.schedule(self.now + retry_after_ms.max(1), Ev::Poll(agent_idx));
            }
        }
        Ok(())
    }

    fn on_queue_submit(&mut self, agent_idx: usize, task: TaskId) -> Result<(), SimError> {
        if self.agents[agent_idx].crashed {
            return Ok(());
        }
        {
            let AgentKind::Ce(ce) = &mut self.agents[agent_idx].kind else {
                unreachable!()
            };
            if !ce.inflight_submits.remove(&task) {
                return Ok(()); // stale
            }
            ce.queued.push_back(task);
        }
        self.transition_or_abort(TaskKind::Job, task, Status::Queued)?;
        self.try_start(agent_idx)
    }

    fn try_start(&mut self, agent_idx: usize) -> Result<(), SimError> {
        let mut starts = Vec::new();
        {
            let AgentKind::Ce(ce) = &mut self.agents[agent_idx].kind else {
                unreachable!()
            };
            while ce.running.len() + ce.starting.len() < ce.cfg.queue.slots {
                match ce.queued.pop_front() {
                    Some(task) => {
                        ce.starting.insert(task);
                        starts.push((task, ce.cfg.queue.start_latency_ms));
                    }
                    None => break,
                }
            }
        }
        for (task, latency) in starts {
            self.schedule(
                self.now + latency,
                Ev::JobStart {
                    agent: agent_idx,
                    task,
                },
            );
        }
        Ok(())
    }

    fn on_job_start(&mut self, agent_idx: usize, task: TaskId) -> Result<(), SimError> {
        if self.agents[agent_idx].crashed {
            return Ok(());
        }
        let ce_name = {
            let AgentKind::Ce(ce) = &mut self.agents[agent_idx].kind else {
                unreachable!()
            };
            if !ce.starting.remove(&task) {
                return Ok(()); // stale
            }
            ce.running.insert(task);
            ce.cfg.name.clone()
        };
        self.transition_or_abort(TaskKind::Job, task, Status::Running)?;
        let snapshot = self.job_store.task(task).expect("running task exists");
        let duration = snapshot
            .descriptor
            .get_int("SimDurationMs")
            .map(|v| v.max(0) as Millis)
            .unwrap_or(1000);
        let output = snapshot
            .descriptor
            .get_str("SimOutput")
            .map(|s| s.into_bytes())
            .unwrap_or_default();
        self.monitors.insert(
            task,
            ProcessMonitor::new(task, ce_name, self.now, duration, output),
        );
        if let Some(probe_ms) = snapshot.descriptor.get_int("SimProbeMs") {
            let probe_at = self.now + (probe_ms.max(0) as Millis).min(duration);
            self.schedule(probe_at, Ev::JobProbe { task });
        }
        self.schedule(
            self.now + duration,
            Ev::JobFinish {
                agent: agent_idx,
                task,
            },
        );
        Ok(())
    }

    fn on_job_finish(&mut self, agent_idx: usize, task: TaskId) -> Result<(), SimError> {
        if self.agents[agent_idx].crashed {
            return Ok(());
        }
        {
            let AgentKind::Ce(ce) = &mut self.agents[agent_idx].kind else {
                unreachable!()
            };
            if !ce.running.remove(&task) {
                return Ok(()); // stale
            }
        }
        let snapshot = self.job_store.task(task).expect("finishing task exists");
        let exit_code = snapshot
            .descriptor
            .get_int("SimExitCode")
            .unwrap_or(0) as i32;
        if exit_code == 0 {
            self.transition_or_abort(TaskKind::Job, task, Status::Done)?;
            if snapshot.wants_validation {
                let spec = JobSpec::from_descriptor(&snapshot.descriptor)
                    .map_err(|e| SimError::Setup(e.to_string()))?;
                let outcome = RunOutcome {
                    exit_code,
                    produced_files: snapshot
                        .descriptor
                        .get_str_list("SimProducedFiles")
                        .unwrap_or_default(),
                    output: snapshot
                        .descriptor
                        .get_str("SimOutput")
                        .map(|s| s.into_bytes())
                        .unwrap_or_default(),
                };
                let verdict = if self.validators.validate(&spec, &outcome) {
                    Status::Validated
                } else {
                    Status::Failed
                };
                self.transition_or_abort(TaskKind::Job, task, verdict)?;
            }
        } else {
            self.transition_or_abort(TaskKind::Job, task, Status::FailedRun)?;
        }
        self.drop_monitor(task);
        self.try_start(agent_idx)
    }

    fn drop_monitor(&mut self, task: TaskId) {
        if let Some(pm) = self.monitors.remove(&task) {
            self.monitor_spans.push(MonitorSpan {
                task,
                created_at: pm.started_at,
                destroyed_at: self.now,
            });
        }
    }

    fn poll_ftd(&mut self, agent_idx: usize) -> Result<(), SimError> {
        let agent = &self.agents[agent_idx];
        let path = agent.path();
        let site = agent.site.clone();
        let AgentKind::Ftd(ftd) = &agent.kind else {
            unreachable!()
        };
        if ftd.busy.is_some() {
            // no pending poll while busy; the completion schedules one
            return Ok(());
        }
        let descriptor = ftd.cfg.descriptor(ftd.cache_free);
        let outcome = self
            .transfer_broker
            .request_task(&descriptor, &path, &site, self.now)
            .map_err(|e| SimError::Setup(e.to_string()))?;
        match outcome {
            crate::broker::MatchOutcome::Assigned(assignment) => {
                self.begin_transfer(agent_idx, assignment.task_id)?;
            }
            crate::broker::MatchOutcome::NoMatch { retry_after_ms } => {
                self.schedule(self.now + retry_after_ms.max(1), Ev::Poll(agent_idx));
            }
        }
        Ok(())
    }

    /// Resolve sources, claim bulk members, enter LOCAL_COPYING and
    /// schedule the end of the staging phase.
    fn begin_transfer(&mut self, agent_idx: usize, task: TaskId) -> Result<(), SimError> {
        if let AgentKind::Ftd(ftd) = &mut self.agents[agent_idx].kind {
            ftd.busy = Some(task);
        }
        let snapshot = self.transfer_store.task(task).expect("assigned transfer");
        let d = &snapshot.descriptor;
        let dst_se = d
            .get_str("DestinationSE")
            .and_then(|s| SeName::parse(&s).ok());
        let kind = d
            .get_str("Type")
            .and_then(|s| s.parse::<ReplicationKind>().ok());
        let size = d.get_int("Size").map(|v| v.max(0) as u64);
        let sources = crate::transfers::parse_sources(d);
        let (Some(dst_se), Some(kind), Some(size), Some(sources)) = (dst_se, kind, size, sources)
        else {
            self.transition_or_abort(TaskKind::Transfer, task, Status::FailedLocal)?;
            self.finish_ftd(agent_idx);
            return Ok(());
        };

        // members follow the leader through every edge
        let members: Vec<TaskId> = d
            .get_value("BulkMembers")
            .and_then(|v| match v {
                crate::descriptor::Value::List(items) => Some(
                    items
                        .into_iter()
                        .filter_map(|v| match v {
                            crate::descriptor::Value::Int(i) => Some(TaskId(i as u64)),
                            _ => None,
                        })
                        .collect(),
                ),
                _ => None,
            })
            .unwrap_or_default();
        for member in &members {
            use crate::store::ClaimOutcome;
            match self.transfer_store.claim_if_waiting(*member, self.now) {
                Ok(ClaimOutcome::Claimed) => {}
                _ => {
                    return Err(SimError::Invariant {
                        at: self.now,
                        detail: format!("bulk member {member} was not claimable"),
                    })
                }
            }
        }

        // pick the first workable source: non-MSS SEs are read directly,
        // MSS SEs need an alive FTD at that SE to stage
        let mut chosen: Option<(SeName, String, bool, Option<usize>)> = None;
        for (se, pfn) in &sources {
            let Some(&(mss, _)) = self.se_sim.get(se) else {
                continue;
            };
            if !mss {
                chosen = Some((se.clone(), pfn.clone(), false, None));
                break;
            }
            let src_ftd = self.agents.iter().position(|a| {
                !a.crashed
                    && matches!(&a.kind, AgentKind::Ftd(f) if f.cfg.close_se == *se)
            });
            if let Some(idx) = src_ftd {
                chosen = Some((se.clone(), pfn.clone(), true, Some(idx)));
                break;
            }
        }
        let Some((src_se, src_pfn, staged, src_ftd)) = chosen else {
            self.transition_lockstep(task, &members, Status::FailedLocal)?;
            self.finish_ftd(agent_idx);
            return Ok(());
        };

        // build the item list: one per bulk member (leader included),
        // otherwise just the single file
        let mut items = Vec::new();
        if members.is_empty() {
            let lfn = d.get_str("LFN").unwrap_or_default();
            items.push(XferItem {
                dst_pfn: format!("srm://{dst_se}{lfn}"),
                lfn,
                src_se: src_se.clone(),
                src_pfn,
                member: None,
            });
        } else {
            for id in std::iter::once(task).chain(members.iter().copied()) {
                let member_task = self.transfer_store.task(id).expect("bulk member");
                let lfn = member_task.descriptor.get_str("LFN").unwrap_or_default();
                let member_sources =
                    crate::transfers::parse_sources(&member_task.descriptor).unwrap_or_default();
                let (m_se, m_pfn) = member_sources
                    .into_iter()
                    .find(|(se, _)| se.site() == src_se.site())
                    .unwrap_or((src_se.clone(), format!("srm://{src_se}{lfn}")));
                items.push(XferItem {
                    dst_pfn: format!("srm://{dst_se}{lfn}"),
                    lfn,
                    src_se: m_se,
                    src_pfn: m_pfn,
                    member: (id != task).then_some(id),
                });
            }
        }

        let mut reserved = 0;
        let mut scratch_pfns = Vec::new();
        if staged {
            let src_idx = src_ftd.expect("staged transfers have a source ftd");
            let AgentKind::Ftd(src) = &mut self.agents[src_idx].kind else {
                unreachable!()
            };
            if src.cache_free < size {
                self.transition_lockstep(task, &members, Status::FailedLocal)?;
                self.finish_ftd(agent_idx);
                return Ok(());
            }
            src.cache_free -= size;
            reserved = size;
            for item in &items {
                scratch_pfns.push(format!("scratch/{}/{}", task, item.lfn));
            }
        }

        self.transition_lockstep(task, &members, Status::LocalCopying)?;
        let stage_dur = if staged {
            let bw = self.se_sim.get(&src_se).map(|&(_, bw)| bw).unwrap_or(1);
            size.div_ceil(bw)
        } else {
            0
        };
        self.active.insert(
            task,
            ActiveXfer {
                dest_agent: agent_idx,
                src_ftd,
                dst_se,
                kind,
                size,
                staged,
                reserved,
                scratch_pfns,
                items,
            },
        );
        self.schedule(self.now + stage_dur, Ev::XferEndStage { task });
        Ok(())
    }

    fn transition_lockstep(
        &mut self,
        leader: TaskId,
        members: &[TaskId],
        to: Status,
    ) -> Result<(), SimError> {
        self.transition_or_abort(TaskKind::Transfer, leader, to)?;
        for member in members {
            self.transition_or_abort(TaskKind::Transfer, *member, to)?;
        }
        Ok(())
    }

    fn xfer_members(&self, task: TaskId) -> Vec<TaskId> {
        self.active
            .get(&task)
            .map(|x| x.items.iter().filter_map(|i| i.member).collect())
            .unwrap_or_default()
    }

    fn on_xfer_end_stage(&mut self, task: TaskId) -> Result<(), SimError> {
        if !self.active.contains_key(&task) {
            return Ok(()); // stale (crash removed it)
        }
        let members = self.xfer_members(task);
        if self.stage_fail.contains(&task) {
            self.transition_lockstep(task, &members, Status::FailedLocal)?;
            self.cleanup_scratch(task, true);
            let dest = self.active.remove(&task).unwrap().dest_agent;
            self.finish_ftd(dest);
            return Ok(());
        }
        // materialize the scratch copies now that staging is done
        let (staged, src_ftd, copies) = {
            let x = self.active.get(&task).unwrap();
            let copies: Vec<(String, SeName, String)> = x
                .scratch_pfns
                .iter()
                .cloned()
                .zip(x.items.iter().map(|i| (i.src_se.clone(), i.src_pfn.clone())))
                .map(|(scratch, (se, pfn))| (scratch, se, pfn))
                .collect();
            (x.staged, x.src_ftd, copies)
        };
        if staged {
            for (scratch_pfn, se, pfn) in copies {
                let bytes = self.fs.read(&se, &pfn).cloned().ok_or(SimError::Invariant {
                    at: self.now,
                    detail: format!("source {pfn}@{se} vanished during staging"),
                })?;
                let idx = src_ftd.expect("staged");
                let AgentKind::Ftd(src) = &mut self.agents[idx].kind else {
                    unreachable!()
                };
                src.scratch.insert(scratch_pfn, bytes);
            }
        }
        self.transition_lockstep(task, &members, Status::Transferring)?;
        let (size, src_bw, dst_bw, transport_name) = {
            let x = self.active.get(&task).unwrap();
            let src_bw = self
                .se_sim
                .get(&x.items[0].src_se)
                .map(|&(_, bw)| bw)
                .unwrap_or(1);
            let dst_bw = self.se_sim.get(&x.dst_se).map(|&(_, bw)| bw).unwrap_or(1);
            let name = self
                .transfer_store
                .task(task)
                .and_then(|t| t.descriptor.get_str("Transport"))
                .unwrap_or_else(|| crate::transfers::DEFAULT_TRANSPORT.to_string());
            (x.size, src_bw, dst_bw, name)
        };
        let transport = transport_by_name(&transport_name)
            .unwrap_or_else(|| transport_by_name(crate::transfers::DEFAULT_TRANSPORT).unwrap());
        let dur = transport.duration_ms(size, src_bw, dst_bw);
        self.schedule(self.now + dur, Ev::XferEndFetch { task });
        Ok(())
    }

    fn on_xfer_end_fetch(&mut self, task: TaskId) -> Result<(), SimError> {
        if !self.active.contains_key(&task) {
            return Ok(());
        }
        let members = self.xfer_members(task);
        if self.transport_fail.contains(&task) {
            // the fetch failed; the scratch copy is still cleaned
            self.transition_lockstep(task, &members, Status::FailedTransfer)?;
            self.cleanup_scratch(task, true);
            let dest = self.active.remove(&task).unwrap().dest_agent;
            self.finish_ftd(dest);
            return Ok(());
        }
        let writes: Vec<(SeName, String, Vec<u8>)> = {
            let x = self.active.get(&task).unwrap();
            let mut out = Vec::new();
            for (i, item) in x.items.iter().enumerate() {
                let bytes = if x.staged {
                    let idx = x.src_ftd.expect("staged");
                    let AgentKind::Ftd(src) = &self.agents[idx].kind else {
                        unreachable!()
                    };
                    src.scratch.get(&x.scratch_pfns[i]).cloned()
                } else {
                    self.fs.read(&item.src_se, &item.src_pfn).cloned()
                };
                let bytes = bytes.ok_or(SimError::Invariant {
                    at: self.now,
                    detail: format!("bytes for {} vanished mid-transfer", item.lfn),
                })?;
                out.push((x.dst_se.clone(), item.dst_pfn.clone(), bytes));
            }
            out
        };
        for (se, pfn, bytes) in writes {
            self.fs.write(&se, &pfn, bytes);
        }
        self.transition_lockstep(task, &members, Status::Cleaning)?;
        let clean_dur = if self.active.get(&task).unwrap().staged {
            self.scenario.mss_clean_ms
        } else {
            0
        };
        self.schedule(self.now + clean_dur, Ev::XferEndClean { task });
        Ok(())
    }

    fn on_xfer_end_clean(&mut self, task: TaskId) -> Result<(), SimError> {
        if !self.active.contains_key(&task) {
            return Ok(());
        }
        let members = self.xfer_members(task);
        if self.clean_fail.contains(&task) {
            // the one file that failed to delete stays in scratch
            self.transition_lockstep(task, &members, Status::FailedClean)?;
            let dest = self.active.remove(&task).unwrap().dest_agent;
            self.finish_ftd(dest);
            return Ok(());
        }
        self.cleanup_scratch(task, true);
        self.transition_lockstep(task, &members, Status::Done)?;

        let x = self.active.remove(&task).unwrap();
        for item in &x.items {
            let registered = self.catalogue.add_replica(
                &item.lfn,
                &item.dst_pfn,
                &x.dst_se,
                x.kind,
                self.now,
            );
            if let Err(e) = registered {
                return Err(SimError::Invariant {
                    at: self.now,
                    detail: format!("finalize of {} failed: {e}", item.lfn),
                });
            }
            let src_sha = self
                .fs
                .checksum(&item.src_se, &item.src_pfn)
                .unwrap_or_default();
            let dst_sha = self.fs.checksum(&x.dst_se, &item.dst_pfn).unwrap_or_default();
            let id = item.member.unwrap_or(task);
            self.trace
                .transfer_checksums(self.now, id.0, &src_sha, &dst_sha);
            if src_sha != dst_sha {
                return Err(SimError::Invariant {
                    at: self.now,
                    detail: format!("checksum mismatch for {}", item.lfn),
                });
            }
        }
        // a catalogue change may widen job requirements
        self.schedule_opt_pass(TaskKind::Job, self.now);
        self.finish_ftd(x.dest_agent);
        Ok(())
    }

    /// Remove scratch files and restore the staging reservation.
    fn cleanup_scratch(&mut self, task: TaskId, restore_cache: bool) {
        let Some(x) = self.active.get(&task) else {
            return;
        };
        let (src_ftd, reserved, pfns) = (x.src_ftd, x.reserved, x.scratch_pfns.clone());
        if let Some(idx) = src_ftd {
            let AgentKind::Ftd(src) = &mut self.agents[idx].kind else {
                unreachable!()
            };
            for pfn in &pfns {
                src.scratch.remove(pfn);
            }
            if restore_cache {
                src.cache_free += reserved;
            }
        }
    }

    /// Free the destination daemon and let it ask again right away.
    fn finish_ftd(&mut self, agent_idx: usize) {
        if let AgentKind::Ftd(ftd) = &mut self.agents[agent_idx].kind {
            ftd.busy = None;
        }
        if !self.agents[agent_idx].crashed {
            self.schedule(self.now + 1, Ev::Poll(agent_idx));
        }
    }

    fn transition_or_abort(
        &self,
        kind: TaskKind,
        task: TaskId,
        to: Status,
    ) -> Result<(), SimError> {
        let store = match kind {
            TaskKind::Job => &self.job_store,
            TaskKind::Transfer => &self.transfer_store,
        };
        store
            .transition(task, to, self.now)
            .map(|_| ())
            .map_err(|e| SimError::Invariant {
                at: self.now,
                detail: e.to_string(),
            })
    }

    fn on_fault(&mut self, index: usize) -> Result<(), SimError> {
        self.faults_remaining -= 1;
        self.fault_count += 1;
        let fault: FaultEntry = self.scenario.faults[index].clone();
        let target = fault.target.clone().unwrap_or_default();
        self.trace.fault(
            self.now,
            &fault.kind,
            &fault
                .task
                .map(|t| t.to_string())
                .unwrap_or_else(|| target.clone()),
        );
        match fault.kind.as_str() {
            "broker-pause" | "broker-resume" => {
                let pause = fault.kind == "broker-pause";
                let apply = |broker: &Broker| {
                    if pause {
                        broker.pause()
                    } else {
                        broker.resume()
                    }
                };
                match target.as_str() {
                    "job" => apply(&self.job_broker),
                    "transfer" => apply(&self.transfer_broker),
                    _ => {
                        apply(&self.job_broker);
                        apply(&self.transfer_broker);
                    }
                }
            }
            "agent-crash" => {
                if let Some(idx) = self.agents.iter().position(|a| a.path() == target) {
                    self.crash_agent(idx)?;
                }
            }
            "ce-stop" | "ce-start" => {
                let action = if fault.kind == "ce-stop" {
                    SignalAction::Stop
                } else {
                    SignalAction::Start
                };
                let (site, ce) = match target.split_once('/') {
                    Some((site, ce)) => (site.to_string(), Some(ce.to_string())),
                    None => (target.clone(), None),
                };
                self.registry
                    .signal(&site, ce.as_deref(), action)
                    .map_err(|e| SimError::Setup(e.to_string()))?;
            }
            "transport-failure" => {
                self.transport_fail.insert(TaskId(fault.task.unwrap_or(0)));
            }
            "stage-failure" => {
                self.stage_fail.insert(TaskId(fault.task.unwrap_or(0)));
            }
            "clean-failure" => {
                self.clean_fail.insert(TaskId(fault.task.unwrap_or(0)));
            }
            "assign-reject" => {
                // delivered but refused by the resource: straight to
                // FAILED_ASSIGN while still WAITING
                let task = TaskId(fault.task.unwrap_or(0));
                if let Some(t) = self.job_store.task(task) {
                    if t.status == Status::Waiting {
                        self.transition_or_abort(TaskKind::Job, task, Status::FailedAssign)?;
                    }
                }
            }
            other => {
                return Err(SimError::Setup(format!("unknown fault kind `{other}`")));
            }
        }
        Ok(())
    }

    fn crash_agent(&mut self, idx: usize) -> Result<(), SimError> {
        self.agents[idx].crashed = true;
        let mut job_failures: Vec<(TaskId, Status)> = Vec::new();
        let mut dead_monitor: Vec<TaskId> = Vec::new();
        let mut owned_transfer: Option<TaskId> = None;
        match &mut self.agents[idx].kind {
            AgentKind::Ce(ce) => {
                for &task in &ce.inflight_submits {
                    job_failures.push((task, Status::FailedQueue));
                }
                for &task in &ce.queued {
                    job_failures.push((task, Status::FailedQueue));
                }
                for &task in &ce.starting {
                    job_failures.push((task, Status::FailedQueue));
                }
                for &task in &ce.running {
                    job_failures.push((task, Status::FailedRun));
                    dead_monitor.push(task);
                }
                ce.inflight_submits.clear();
                ce.queued.clear();
                ce.starting.clear();
                ce.running.clear();
            }
            AgentKind::Ftd(ftd) => {
                owned_transfer = ftd.busy.take();
            }
        }
        for (task, status) in job_failures {
            self.transition_or_abort(TaskKind::Job, task, status)?;
        }
        for task in dead_monitor {
            self.drop_monitor(task);
        }
        if let Some(task) = owned_transfer {
            if let Some(snapshot) = self.transfer_store.task(task) {
                let members = self.xfer_members(task);
                match snapshot.status {
                    Status::Assigned | Status::LocalCopying => {
                        self.transition_lockstep(task, &members, Status::FailedLocal)?;
                        self.cleanup_scratch(task, true);
                    }
                    Status::Transferring => {
                        self.transition_lockstep(task, &members, Status::FailedTransfer)?;
                        self.cleanup_scratch(task, true);
                    }
                    Status::Cleaning => {
                        // mid-delete crash leaves the scratch copy behind
                        self.transition_lockstep(task, &members, Status::FailedClean)?;
                    }
                    _ => {}
                }
            }
            self.active.remove(&task);
        }
        Ok(())
    }

    fn finish(&mut self) {
        // close out leftover monitors as destroyed at end for the span log
        let leftover: Vec<TaskId> = self.monitors.keys().copied().collect();
        for task in leftover {
            self.drop_monitor(task);
        }

        let mut metrics: BTreeMap<String, String> = BTreeMap::new();
        metrics.insert("end_ms".into(), self.now.to_string());
        metrics.insert(
            "events".into(),
            self.processed.to_string(),
        );
        metrics.insert("faults".into(), self.fault_count.to_string());
        if let Some(label) = &self.scenario.label {
            metrics.insert("workload.label".into(), label.clone());
        }

        for (kind, store, broker) in [
            (TaskKind::Job, &self.job_store, &self.job_broker),
            (TaskKind::Transfer, &self.transfer_store, &self.transfer_broker),
        ] {
            let tasks = store.tasks();
            metrics.insert(format!("{kind}.submitted"), tasks.len().to_string());
            metrics.insert(
                format!("{kind}.pending"),
                store.non_terminal_count().to_string(),
            );
            let mut by_status: BTreeMap<&'static str, usize> = BTreeMap::new();
            let mut state_totals: BTreeMap<&'static str, Millis> = BTreeMap::new();
            for task in &tasks {
                *by_status.entry(task.status.name()).or_default() += 1;
                for (status, dur) in task.state_timing(self.now) {
                    *state_totals.entry(status.name()).or_default() += dur;
                }
            }
            for (status, count) in by_status {
                metrics.insert(format!("{kind}.status.{status}"), count.to_string());
            }
            for (status, total) in state_totals {
                metrics.insert(format!("{kind}.state_ms.{status}"), total.to_string());
            }
            metrics.insert(
                format!("{kind}.assignments"),
                broker.stats.assignments().to_string(),
            );
            metrics.insert(format!("{kind}.polls"), broker.stats.polls().to_string());
            metrics.insert(
                format!("{kind}.match_evals"),
                broker.stats.match_evaluations().to_string(),
            );
        }

        // leftover scratch files, if any, close the trace before metrics
        for agent in &self.agents {
            if let AgentKind::Ftd(ftd) = &agent.kind {
                for pfn in ftd.scratch.keys() {
                    self.trace.scratch_leftover(&agent.path(), pfn);
                }
            }
        }
        self.trace.comment("metrics");
        for (key, value) in &metrics {
            self.trace.metric(key, value);
        }
        self.trace.flush();
        self.metrics_cache = Some(metrics);
    }

    fn into_report(self) -> SimReport {
        let scratch_leftovers = self
            .agents
            .iter()
            .filter_map(|a| match &a.kind {
                AgentKind::Ftd(ftd) if !ftd.scratch.is_empty() => Some(
                    ftd.scratch
                        .keys()
                        .map(|pfn| (a.path(), pfn.clone()))
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            })
            .flatten()
            .collect();
        SimReport {
            trace_text: self.trace.text(),
            metrics: self.metrics_cache.unwrap_or_default(),
            end_ms: self.now,
            job_store: self.job_store,
            transfer_store: self.transfer_store,
            catalogue: self.catalogue,
            registry: self.registry,
            job_match_evals: self.job_broker.stats.match_evaluations(),
            transfer_match_evals: self.transfer_broker.stats.match_evaluations(),
            scratch_leftovers,
            monitor_spans: self.monitor_spans,
            probes: self.probes,
        }
    }
}
