//! Task store: one per task kind, holding every task with its status,
//! priority, per-state timing, and the optional site-affinity tag the
//! transfer optimizer uses to prefilter matching.
//!
//! Transitions are linearizable: every mutation happens under one store
//! lock, and the broker's lock-check-assign protocol is built on
//! `claim_if_waiting`. Each transition appends a journal line
//! `ts <tab> id <tab> old <tab> new` to the shared trace (`-` for the
//! initial WAITING entry).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::descriptor::Descriptor;
use crate::trace::TraceLog;
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Job,
    Transfer,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Job => "job",
            TaskKind::Transfer => "transfer",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "job" => Ok(TaskKind::Job),
            "transfer" => Ok(TaskKind::Transfer),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// Task status across both kinds. Which edges are legal depends on the
/// kind (and, for DONE, on whether the job asked to be validated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Waiting,
    Assigned,
    Queued,
    Running,
    Done,
    Validated,
    Failed,
    FailedAssign,
    FailedQueue,
    FailedRun,
    LocalCopying,
    Transferring,
    Cleaning,
    FailedLocal,
    FailedTransfer,
    FailedClean,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Waiting => "WAITING",
            Status::Assigned => "ASSIGNED",
            Status::Queued => "QUEUED",
            Status::Running => "RUNNING",
            Status::Done => "DONE",
            Status::Validated => "VALIDATED",
            Status::Failed => "FAILED",
            Status::FailedAssign => "FAILED_ASSIGN",
            Status::FailedQueue => "FAILED_QUEUE",
            Status::FailedRun => "FAILED_RUN",
            Status::LocalCopying => "LOCAL_COPYING",
            Status::Transferring => "TRANSFERRING",
            Status::Cleaning => "CLEANING",
            Status::FailedLocal => "FAILED_LOCAL",
            Status::FailedTransfer => "FAILED_TRANSFER",
            Status::FailedClean => "FAILED_CLEAN",
        }
    }

    /// Terminal for a task of the given kind. DONE is terminal for jobs
    /// only when no validation was requested.
    pub fn is_terminal(self, kind: TaskKind, wants_validation: bool) -> bool {
        match self {
            Status::Done => kind == TaskKind::Transfer || !wants_validation,
            Status::Validated
            | Status::Failed
            | Status::FailedAssign
            | Status::FailedQueue
            | Status::FailedRun
            | Status::FailedLocal
            | Status::FailedTransfer
            | Status::FailedClean => true,
            _ => false,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "WAITING" => Status::Waiting,
            "ASSIGNED" => Status::Assigned,
            "QUEUED" => Status::Queued,
            "RUNNING" => Status::Running,
            "DONE" => Status::Done,
            "VALIDATED" => Status::Validated,
            "FAILED" => Status::Failed,
            "FAILED_ASSIGN" => Status::FailedAssign,
            "FAILED_QUEUE" => Status::FailedQueue,
            "FAILED_RUN" => Status::FailedRun,
            "LOCAL_COPYING" => Status::LocalCopying,
            "TRANSFERRING" => Status::Transferring,
            "CLEANING" => Status::Cleaning,
            "FAILED_LOCAL" => Status::FailedLocal,
            "FAILED_TRANSFER" => Status::FailedTransfer,
            "FAILED_CLEAN" => Status::FailedClean,
            other => return Err(format!("unknown status `{other}`")),
        })
    }
}

/// Legal edges of the job state machine. DONE → VALIDATED/FAILED is
/// additionally gated on the job having requested validation.
pub fn job_edge_is_legal(from: Status, to: Status) -> bool {
    matches!(
        (from, to),
        (Status::Waiting, Status::Assigned)
            | (Status::Waiting, Status::FailedAssign)
            | (Status::Assigned, Status::Queued)
            | (Status::Assigned, Status::FailedQueue)
            | (Status::Queued, Status::Running)
            | (Status::Queued, Status::FailedQueue)
            | (Status::Running, Status::Done)
            | (Status::Running, Status::FailedRun)
            | (Status::Done, Status::Validated)
            | (Status::Done, Status::Failed)
    )
}

/// Legal edges of the transfer state machine. WAITING → FAILED_LOCAL is
/// the optimizer's rejection edge for transfers it cannot prepare.
pub fn transfer_edge_is_legal(from: Status, to: Status) -> bool {
    matches!(
        (from, to),
        (Status::Waiting, Status::Assigned)
            | (Status::Waiting, Status::FailedLocal)
            | (Status::Assigned, Status::LocalCopying)
            | (Status::Assigned, Status::FailedLocal)
            | (Status::LocalCopying, Status::Transferring)
            | (Status::LocalCopying, Status::FailedLocal)
            | (Status::Transferring, Status::Cleaning)
            | (Status::Transferring, Status::FailedTransfer)
            | (Status::Cleaning, Status::Done)
            | (Status::Cleaning, Status::FailedClean)
    )
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub descriptor: Arc<Descriptor>,
    pub priority: i64,
    pub status: Status,
    pub site_affinity: Option<String>,
    pub inserted_at: Millis,
    /// `(status, entered_at)` per state, non-decreasing in time; the
    /// current status is always the last entry.
    pub state_log: Vec<(Status, Millis)>,
    pub wants_validation: bool,
}

impl Task {
    pub fn is_terminal(&self) -> bool {
        self.status.is_terminal(self.kind, self.wants_validation)
    }

    /// Time spent in each visited state, the last one measured up to
    /// `now`. Durations always sum to `now - inserted_at`.
    pub fn state_timing(&self, now: Millis) -> Vec<(Status, Millis)> {
        let mut out = Vec::with_capacity(self.state_log.len());
        for (i, &(status, entered)) in self.state_log.iter().enumerate() {
            let end = match self.state_log.get(i + 1) {
                Some(&(_, next)) => next,
                None => now.max(entered),
            };
            out.push((status, end - entered));
        }
        out
    }
}

/// Snapshot of a WAITING task handed to the broker for matching.
#[derive(Debug, Clone)]
pub struct WaitingTask {
    pub id: TaskId,
    pub priority: i64,
    pub descriptor: Arc<Descriptor>,
    pub site_affinity: Option<String>,
    pub inserted_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("task {0} does not exist")]
    UnknownTask(TaskId),
    #[error("illegal {kind} transition {from} -> {to} for task {id}")]
    IllegalTransition {
        id: TaskId,
        kind: TaskKind,
        from: Status,
        to: Status,
    },
    #[error("job descriptor lacks the compulsory Executable attribute")]
    MissingExecutable,
}

/// Outcome of the atomic claim primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimOutcome {
    Claimed,
    /// Another claimer got there first (or the task already moved on);
    /// carries the status seen under the lock.
    LostRace(Status),
}

struct Inner {
    tasks: BTreeMap<TaskId, Task>,
    non_terminal: usize,
}

/// Store for one task kind. Shared freely via `Arc`; all mutation is
/// serialized by the inner lock.
pub struct TaskStore {
    kind: TaskKind,
    inner: Mutex<Inner>,
    ids: Arc<AtomicU64>,
    trace: TraceLog,
}

/// Id allocator shared between the job and transfer stores so task ids
/// stay unique across one deployment's merged trace.
pub fn id_allocator() -> Arc<AtomicU64> {
    Arc::new(AtomicU64::new(1))
}

impl TaskStore {
    pub fn new(kind: TaskKind, ids: Arc<AtomicU64>, trace: TraceLog) -> TaskStore {
        TaskStore {
            kind,
            inner: Mutex::new(Inner {
                tasks: BTreeMap::new(),
                non_terminal: 0,
            }),
            ids,
            trace,
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    /// Insert a parsed descriptor as a WAITING task. Jobs must carry an
    /// Executable attribute.
    pub fn insert(
        &self,
        descriptor: Descriptor,
        priority: i64,
        at: Millis,
    ) -> Result<Task, StoreError> {
        if self.kind == TaskKind::Job && descriptor.get_str("Executable").is_none() {
            return Err(StoreError::MissingExecutable);
        }
        let wants_validation =
            self.kind == TaskKind::Job && descriptor.get_bool("Validate") == Some(true);
        let id = TaskId(self.ids.fetch_add(1, Ordering::Relaxed));
        let task = Task {
            id,
            kind: self.kind,
            descriptor: Arc::new(descriptor),
            priority,
            status: Status::Waiting,
            site_affinity: None,
            inserted_at: at,
            state_log: vec![(Status::Waiting, at)],
            wants_validation,
        };
        let mut inner = self.inner.lock();
        inner.tasks.insert(id, task.clone());
        inner.non_terminal += 1;
        self.trace
            .task(at, id.0, &self.kind.to_string(), priority, &task.descriptor.to_line());
        self.trace.journal(at, id.0, "-", Status::Waiting.name());
        Ok(task)
    }

    pub fn task(&self, id: TaskId) -> Option<Task> {
        self.inner.lock().tasks.get(&id).cloned()
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.inner.lock().tasks.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of tasks not yet in a terminal state.
    pub fn non_terminal_count(&self) -> usize {
        self.inner.lock().non_terminal
    }

    /// Apply a status transition, enforcing the kind's edge set. The
    /// timestamp is clamped to keep the state log non-decreasing.
    pub fn transition(&self, id: TaskId, to: Status, at: Millis) -> Result<Task, StoreError> {
        let mut inner = self.inner.lock();
        let kind = self.kind;
        let task = inner
            .tasks
            .get_mut(&id)
            .ok_or(StoreError::UnknownTask(id))?;
        let from = task.status;
        let legal = match kind {
            TaskKind::Job => {
                job_edge_is_legal(from, to)
                    && !(from == Status::Done && !task.wants_validation)
            }
            TaskKind::Transfer => transfer_edge_is_legal(from, to),
        };
        if !legal {
            return Err(StoreError::IllegalTransition { id, kind, from, to });
        }
        let at = at.max(task.state_log.last().map(|&(_, t)| t).unwrap_or(0));
        task.status = to;
        task.state_log.push((to, at));
        let now_terminal = task.is_terminal();
        let snapshot = task.clone();
        if now_terminal {
            inner.non_terminal -= 1;
        }
        // Journal while still holding the store lock so line order is the
        // linearization order.
        self.trace.journal(at, id.0, from.name(), to.name());
        Ok(snapshot)
    }

    /// Lock-check-assign: under the store lock, verify the task is still
    /// WAITING and move it to ASSIGNED. Matching runs outside; only this
    /// check-and-claim is serialized.
    pub fn claim_if_waiting(&self, id: TaskId, at: Millis) -> Result<ClaimOutcome, StoreError> {
        let mut inner = self.inner.lock();
        let task = inner
            .tasks
            .get_mut(&id)
            .ok_or(StoreError::UnknownTask(id))?;
        if task.status != Status::Waiting {
            return Ok(ClaimOutcome::LostRace(task.status));
        }
        let at = at.max(task.state_log.last().map(|&(_, t)| t).unwrap_or(0));
        task.status = Status::Assigned;
        task.state_log.push((Status::Assigned, at));
        self.trace
            .journal(at, id.0, Status::Waiting.name(), Status::Assigned.name());
        Ok(ClaimOutcome::Claimed)
    }

    /// Atomically replace descriptor and/or site affinity if the task is
    /// still WAITING. Returns false (a no-op) once the task has moved on.
    pub fn rewrite_if_waiting(
        &self,
        id: TaskId,
        descriptor: Option<Arc<Descriptor>>,
        site_affinity: Option<Option<String>>,
        at: Millis,
    ) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        let task = inner
            .tasks
            .get_mut(&id)
            .ok_or(StoreError::UnknownTask(id))?;
        if task.status != Status::Waiting {
            return Ok(false);
        }
        if let Some(d) = descriptor {
            task.descriptor = d;
        }
        if let Some(affinity) = site_affinity {
            task.site_affinity = affinity;
        }
        let affinity = task.site_affinity.clone();
        let line = task.descriptor.to_line();
        self.trace.rewrite(at, id.0, affinity.as_deref(), &line);
        Ok(true)
    }

    /// WAITING tasks visible to a resource at `site`: unset affinity or
    /// an exact site match; `None` lists every WAITING task. Ordered by
    /// priority descending, then insertion time, then id.
    pub fn waiting_tasks(&self, site: Option<&str>) -> Vec<WaitingTask> {
        let inner = self.inner.lock();
        let mut out: Vec<WaitingTask> = inner
            .tasks
            .values()
            .filter(|t| t.status == Status::Waiting)
            .filter(|t| match (site, &t.site_affinity) {
                (None, _) | (_, None) => true,
                (Some(site), Some(affinity)) => affinity == site,
            })
            .map(|t| WaitingTask {
                id: t.id,
                priority: t.priority,
                descriptor: Arc::clone(&t.descriptor),
                site_affinity: t.site_affinity.clone(),
                inserted_at: t.inserted_at,
            })
            .collect();
        drop(inner);
        out.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then(a.inserted_at.cmp(&b.inserted_at))
                .then(a.id.cmp(&b.id))
        });
        out
    }

    /// Per-state durations for one task, measured to `now`.
    pub fn state_timing_report(
        &self,
        id: TaskId,
        now: Millis,
    ) -> Result<Vec<(Status, Millis)>, StoreError> {
        let inner = self.inner.lock();
        let task = inner.tasks.get(&id).ok_or(StoreError::UnknownTask(id))?;
        Ok(task.state_timing(now))
    }

    /// Store-wide invariant sweep for the simulator's assertion mode.
    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.inner.lock();
        let mut non_terminal = 0;
        for task in inner.tasks.values() {
            if task.state_log.is_empty() {
                return Err(format!("task {}: empty state log", task.id));
            }
            if task.state_log[0].0 != Status::Waiting {
                return Err(format!("task {}: first state is not WAITING", task.id));
            }
            if task.state_log.last().unwrap().0 != task.status {
                return Err(format!("task {}: status out of sync with log", task.id));
            }
            for pair in task.state_log.windows(2) {
                if pair[1].1 < pair[0].1 {
                    return Err(format!("task {}: state log goes backwards", task.id));
                }
            }
            let terminal_entries = task
                .state_log
                .iter()
                .filter(|(s, _)| s.is_terminal(task.kind, task.wants_validation))
                .count();
            if terminal_entries > 1 {
                return Err(format!("task {}: multiple terminal states", task.id));
            }
            if !task.is_terminal() {
                non_terminal += 1;
            }
        }
        if non_terminal != inner.non_terminal {
            return Err(format!(
                "non-terminal counter {} disagrees with scan {}",
                inner.non_terminal, non_terminal
            ));
        }
        Ok(())
    }
}
