//! Trace replay and audit: independent checks of the scheduling
//! guarantees, computed from the journal/trace text alone.
//!
//! The audits deliberately rebuild task state from the trace rather than
//! asking the live stores, so a buggy store cannot vouch for itself.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use crate::descriptor::{symmetric_match, Descriptor};
use crate::store::{job_edge_is_legal, transfer_edge_is_legal, Status, TaskKind};
use crate::Millis;

#[derive(Debug, Clone)]
pub enum TraceEvent {
    Insert {
        ts: Millis,
        task: u64,
        kind: TaskKind,
        priority: i64,
        descriptor: String,
    },
    Edge {
        ts: Millis,
        task: u64,
        from: Option<Status>,
        to: Status,
    },
    Assign {
        ts: Millis,
        task: u64,
        resource_id: String,
        resource_site: String,
        resource_descriptor: String,
    },
    Rewrite {
        ts: Millis,
        task: u64,
        affinity: Option<String>,
        descriptor: String,
    },
    OptimizerPass {
        ts: Millis,
        kind: TaskKind,
        examined: u64,
        rewritten: u64,
        tagged: u64,
        suggested: u64,
    },
    Fault {
        ts: Millis,
        kind: String,
        target: String,
    },
    Xfer {
        ts: Millis,
        task: u64,
        src_sha: String,
        dst_sha: String,
    },
    Scratch {
        ftd: String,
        pfn: String,
    },
    Metric {
        key: String,
        value: String,
    },
    Suggest {
        ts: Millis,
        task: u64,
        lfn: String,
        candidates: String,
    },
    Comment(String),
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
#[error("trace line {line}: {msg}")]
pub struct TraceParseError {
    pub line: usize,
    pub msg: String,
}

fn bad(line: usize, msg: impl Into<String>) -> TraceParseError {
    TraceParseError {
        line,
        msg: msg.into(),
    }
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceParseError> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        if raw.is_empty() {
            continue;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            events.push(TraceEvent::Comment(comment.trim().to_string()));
            continue;
        }
        if let Some(tagged) = raw.strip_prefix('!') {
            let mut fields = tagged.split('\t');
            let tag = fields.next().unwrap_or_default();
            let mut field = |name: &str| {
                fields
                    .next()
                    .map(|s| s.to_string())
                    .ok_or_else(|| bad(n, format!("missing {name}")))
            };
            match tag {
                "task" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let task = field("task")?.parse().map_err(|_| bad(n, "bad task"))?;
                    let kind = TaskKind::from_str(&field("kind")?).map_err(|e| bad(n, e))?;
                    let priority = field("priority")?.parse().map_err(|_| bad(n, "bad priority"))?;
                    let descriptor = fields.collect::<Vec<_>>().join("\t");
                    events.push(TraceEvent::Insert {
                        ts,
                        task,
                        kind,
                        priority,
                        descriptor,
                    });
                }
                "rewrite" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let task = field("task")?.parse().map_err(|_| bad(n, "bad task"))?;
                    let affinity = match field("affinity")?.as_str() {
                        "-" => None,
                        s => Some(s.to_string()),
                    };
                    let descriptor = fields.collect::<Vec<_>>().join("\t");
                    events.push(TraceEvent::Rewrite {
                        ts,
                        task,
                        affinity,
                        descriptor,
                    });
                }
                "assign" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let task = field("task")?.parse().map_err(|_| bad(n, "bad task"))?;
                    let resource_id = field("resource")?;
                    let resource_site = field("site")?;
                    let resource_descriptor = fields.collect::<Vec<_>>().join("\t");
                    events.push(TraceEvent::Assign {
                        ts,
                        task,
                        resource_id,
                        resource_site,
                        resource_descriptor,
                    });
                }
                "fault" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let kind = field("kind")?;
                    let target = field("target")?;
                    events.push(TraceEvent::Fault { ts, kind, target });
                }
                "xfer" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let task = field("task")?.parse().map_err(|_| bad(n, "bad task"))?;
                    let src_sha = field("src")?;
                    let dst_sha = field("dst")?;
                    events.push(TraceEvent::Xfer {
                        ts,
                        task,
                        src_sha,
                        dst_sha,
                    });
                }
                "scratch" => {
                    let ftd = field("ftd")?;
                    let pfn = field("pfn")?;
                    events.push(TraceEvent::Scratch { ftd, pfn });
                }
                "metric" => {
                    let key = field("key")?;
                    let value = field("value")?;
                    events.push(TraceEvent::Metric { key, value });
                }
                "suggest" => {
                    let ts = field("ts")?.parse().map_err(|_| bad(n, "bad ts"))?;
                    let task = field("task")?.parse().map_err(|_| bad(n, "bad task"))?;
                    let lfn = field("lfn")?;
                    let candidates = field("candidates")?;
                    events.push(TraceEvent::Suggest {
                        ts,
                        task,
                        lfn,
                        candidates,
                    });
                }
                other => return Err(bad(n, format!("unknown tag `{other}`"))),
            }
            continue;
        }
        // journal or optimizer line
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad(n, "journal line needs four fields"));
        }
        let ts: Millis = fields[0].parse().map_err(|_| bad(n, "bad ts"))?;
        if let Ok(task) = fields[1].parse::<u64>() {
            let from = match fields[2] {
                "-" => None,
                s => Some(Status::from_str(s).map_err(|e| bad(n, e))?),
            };
            let to = Status::from_str(fields[3]).map_err(|e| bad(n, e))?;
            events.push(TraceEvent::Edge { ts, task, from, to });
        } else {
            let kind = TaskKind::from_str(fields[1]).map_err(|e| bad(n, e))?;
            if fields.len() < 6 {
                return Err(bad(n, "optimizer line needs six fields"));
            }
            let parse = |s: &str| s.parse::<u64>().map_err(|_| bad(n, "bad count"));
            events.push(TraceEvent::OptimizerPass {
                ts,
                kind,
                examined: parse(fields[2])?,
                rewritten: parse(fields[3])?,
                tagged: parse(fields[4])?,
                suggested: parse(fields[5])?,
            });
        }
    }
    Ok(Trace { events })
}

impl Trace {
    pub fn metric(&self, key: &str) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match e {
            TraceEvent::Metric { key: k, value } if k == key => Some(value.as_str()),
            _ => None,
        })
    }

    pub fn end_ms(&self) -> Millis {
        self.metric("end_ms")
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                self.events
                    .iter()
                    .filter_map(|e| match e {
                        TraceEvent::Edge { ts, .. } => Some(*ts),
                        TraceEvent::Insert { ts, .. } => Some(*ts),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(0)
            })
    }

    /// Reconstructed per-task state logs, in trace order.
    pub fn state_logs(&self) -> BTreeMap<u64, Vec<(Status, Millis)>> {
        let mut out: BTreeMap<u64, Vec<(Status, Millis)>> = BTreeMap::new();
        for event in &self.events {
            if let TraceEvent::Edge { ts, task, to, .. } = event {
                out.entry(*task).or_default().push((*to, *ts));
            }
        }
        out
    }

    pub fn task_kinds(&self) -> BTreeMap<u64, TaskKind> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Insert { task, kind, .. } => Some((*task, *kind)),
                _ => None,
            })
            .collect()
    }
}

/// Task ids with more than one WAITING -> ASSIGNED edge. Must always be
/// empty: this is the no-double-assignment guarantee.
pub fn duplicate_assignments(trace: &Trace) -> Vec<u64> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for event in &trace.events {
        if let TraceEvent::Edge {
            task,
            from: Some(Status::Waiting),
            to: Status::Assigned,
            ..
        } = event
        {
            *counts.entry(*task).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c > 1)
        .map(|(t, _)| t)
        .collect()
}

#[derive(Debug, Clone)]
pub struct PriorityViolation {
    pub assigned_task: u64,
    pub assigned_priority: i64,
    pub skipped_task: u64,
    pub skipped_priority: i64,
    pub at: Millis,
}

struct ReplayTask {
    priority: i64,
    descriptor: Arc<Descriptor>,
    affinity: Option<String>,
    waiting: bool,
}

/// Replay the trace and flag every broker assignment that skipped over a
/// strictly-higher-priority WAITING task which also symmetric-matched the
/// same resource descriptor at claim time.
pub fn priority_violations(trace: &Trace) -> Vec<PriorityViolation> {
    // resource descriptor per assigned task (at most one per task)
    let mut assignment_of: BTreeMap<u64, (String, Arc<Descriptor>)> = BTreeMap::new();
    for event in &trace.events {
        if let TraceEvent::Assign {
            task,
            resource_site,
            resource_descriptor,
            ..
        } = event
        {
            if let Ok(d) = Descriptor::parse(resource_descriptor) {
                assignment_of
                    .entry(*task)
                    .or_insert((resource_site.clone(), Arc::new(d)));
            }
        }
    }

    let mut tasks: BTreeMap<u64, ReplayTask> = BTreeMap::new();
    let mut violations = Vec::new();
    for event in &trace.events {
        match event {
            TraceEvent::Insert {
                task,
                priority,
                descriptor,
                ..
            } => {
                if let Ok(d) = Descriptor::parse(descriptor) {
                    tasks.insert(
                        *task,
                        ReplayTask {
                            priority: *priority,
                            descriptor: Arc::new(d),
                            affinity: None,
                            waiting: true,
                        },
                    );
                }
            }
            TraceEvent::Rewrite {
                task,
                affinity,
                descriptor,
                ..
            } => {
                if let Some(entry) = tasks.get_mut(task) {
                    if let Ok(d) = Descriptor::parse(descriptor) {
                        entry.descriptor = Arc::new(d);
                    }
                    entry.affinity = affinity.clone();
                }
            }
            TraceEvent::Edge {
                ts,
                task,
                from: Some(Status::Waiting),
                to,
            } => {
                if *to == Status::Assigned {
                    if let (Some((site, resource)), Some(assigned)) =
                        (assignment_of.get(task), tasks.get(task))
                    {
                        let assigned_priority = assigned.priority;
                        for (other_id, other) in &tasks {
                            if other_id == task || !other.waiting {
                                continue;
                            }
                            if other.priority <= assigned_priority {
                                continue;
                            }
                            if let Some(affinity) = &other.affinity {
                                if affinity != site {
                                    continue;
                                }
                            }
                            if symmetric_match(&other.descriptor, resource) {
                                violations.push(PriorityViolation {
                                    assigned_task: *task,
                                    assigned_priority,
                                    skipped_task: *other_id,
                                    skipped_priority: other.priority,
                                    at: *ts,
                                });
                            }
                        }
                    }
                }
                if let Some(entry) = tasks.get_mut(task) {
                    entry.waiting = false;
                }
            }
            _ => {}
        }
    }
    violations
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConservationSummary {
    pub submitted: usize,
    pub terminal: usize,
    pub pending: usize,
}

impl ConservationSummary {
    pub fn balanced(&self) -> bool {
        self.submitted == self.terminal + self.pending
    }
}

/// Submitted = terminal + still-pending, per kind, judged from the trace.
pub fn conservation(trace: &Trace) -> BTreeMap<TaskKind, ConservationSummary> {
    let kinds = trace.task_kinds();
    let mut wants_validation: BTreeMap<u64, bool> = BTreeMap::new();
    for event in &trace.events {
        if let TraceEvent::Insert {
            task, descriptor, ..
        } = event
        {
            let wants = Descriptor::parse(descriptor)
                .ok()
                .and_then(|d| d.get_bool("Validate"))
                .unwrap_or(false);
            wants_validation.insert(*task, wants);
        }
    }
    let mut out: BTreeMap<TaskKind, ConservationSummary> = BTreeMap::new();
    let logs = trace.state_logs();
    for (task, kind) in &kinds {
        let summary = out.entry(*kind).or_default();
        summary.submitted += 1;
        let last = logs.and_last(task);
        let terminal = last
            .map(|status| status.is_terminal(*kind, wants_validation.get(task).copied().unwrap_or(false)))
            .unwrap_or(false);
        if terminal {
            summary.terminal += 1;
        } else {
            summary.pending += 1;
        }
    }
    out
}

trait LastStatus {
    fn and_last(&self, task: &u64) -> Option<Status>;
}

impl LastStatus for BTreeMap<u64, Vec<(Status, Millis)>> {
    fn and_last(&self, task: &u64) -> Option<Status> {
        self.get(task).and_then(|log| log.last()).map(|&(s, _)| s)
    }
}

#[derive(Debug, Clone)]
pub struct EdgeViolation {
    pub task: u64,
    pub from: Option<Status>,
    pub to: Status,
    pub at: Millis,
}

/// Re-check every journal edge against the state machines, independently
/// of the store that produced them.
pub fn edge_violations(trace: &Trace) -> Vec<EdgeViolation> {
    let kinds = trace.task_kinds();
    let mut current: BTreeMap<u64, Status> = BTreeMap::new();
    let mut out = Vec::new();
    for event in &trace.events {
        if let TraceEvent::Edge { ts, task, from, to } = event {
            let kind = kinds.get(task).copied();
            let legal = match (from, kind) {
                (None, _) => *to == Status::Waiting && !current.contains_key(task),
                (Some(from), Some(TaskKind::Job)) => {
                    current.get(task) == Some(from) && job_edge_is_legal(*from, *to)
                }
                (Some(from), Some(TaskKind::Transfer)) => {
                    current.get(task) == Some(from) && transfer_edge_is_legal(*from, *to)
                }
                (Some(_), None) => false,
            };
            if !legal {
                out.push(EdgeViolation {
                    task: *task,
                    from: *from,
                    to: *to,
                    at: *ts,
                });
            }
            current.insert(*task, *to);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TimingError {
    pub task: u64,
    pub expected: Millis,
    pub actual: Millis,
}

/// Per-state durations recomputed from the journal must sum exactly to
/// each task's lifetime under the integer clock.
pub fn timing_errors(trace: &Trace) -> Vec<TimingError> {
    let end = trace.end_ms();
    let mut out = Vec::new();
    for (task, log) in trace.state_logs() {
        if log.is_empty() {
            continue;
        }
        let inserted = log[0].1;
        let mut sum: Millis = 0;
        for (i, &(_, entered)) in log.iter().enumerate() {
            let until = log.get(i + 1).map(|&(_, t)| t).unwrap_or(end.max(entered));
            sum += until - entered;
        }
        let expected = end.max(inserted) - inserted;
        if sum != expected {
            out.push(TimingError {
                task,
                expected,
                actual: sum,
            });
        }
    }
    out
}

/// DONE transfers whose recorded destination checksum differs from the
/// source checksum.
pub fn checksum_mismatches(trace: &Trace) -> Vec<u64> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Xfer {
                task,
                src_sha,
                dst_sha,
                ..
            } if src_sha != dst_sha => Some(*task),
            _ => None,
        })
        .collect()
}

/// Scratch files left at the end of the run, per agent path.
pub fn scratch_leftovers(trace: &Trace) -> Vec<(String, String)> {
    trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Scratch { ftd, pfn } => Some((ftd.clone(), pfn.clone())),
            _ => None,
        })
        .collect()
}
