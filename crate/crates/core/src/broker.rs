//! The broker: receive a resource descriptor, walk the priority-ordered
//! waiting tasks of its kind, and atomically hand over at most one.
//!
//! Matching runs outside any lock; only the claim itself (lock, check
//! the task is still WAITING, assign) serializes through the store. A
//! lost race just continues the scan. The broker never tracks resource
//! state: the resource's descriptor is the whole credential of a poll.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::descriptor::{symmetric_match, Descriptor};
use crate::store::{ClaimOutcome, StoreError, TaskId, TaskStore};
use crate::trace::TraceLog;
use crate::Millis;

pub const DEFAULT_RETRY_HINT_MS: Millis = 30_000;
pub const DEFAULT_WORKER_COUNT: usize = 5;

/// The atomic binding of one task to one resource.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub task_id: TaskId,
    pub resource_id: String,
    pub resource_site: String,
    pub matched_at: Millis,
    /// Task descriptor as delivered to the resource.
    pub task_descriptor: Arc<Descriptor>,
}

#[derive(Debug, Clone)]
pub enum MatchOutcome {
    Assigned(Assignment),
    /// Nothing matched; the resource should sleep for the hint and ask
    /// again.
    NoMatch { retry_after_ms: Millis },
}

impl MatchOutcome {
    pub fn assignment(&self) -> Option<&Assignment> {
        match self {
            MatchOutcome::Assigned(a) => Some(a),
            MatchOutcome::NoMatch { .. } => None,
        }
    }
}

#[derive(Debug, Default)]
pub struct BrokerStats {
    /// symmetric_match evaluations performed while scanning.
    pub match_evaluations: AtomicU64,
    pub assignments: AtomicU64,
    pub polls: AtomicU64,
    pub lost_races: AtomicU64,
}

impl BrokerStats {
    pub fn match_evaluations(&self) -> u64 {
        self.match_evaluations.load(Ordering::Relaxed)
    }

    pub fn assignments(&self) -> u64 {
        self.assignments.load(Ordering::Relaxed)
    }

    pub fn polls(&self) -> u64 {
        self.polls.load(Ordering::Relaxed)
    }
}

pub struct Broker {
    store: Arc<TaskStore>,
    trace: TraceLog,
    retry_hint_ms: Millis,
    paused: AtomicBool,
    pub stats: BrokerStats,
}

impl Broker {
    pub fn new(store: Arc<TaskStore>, trace: TraceLog, retry_hint_ms: Millis) -> Broker {
        Broker {
            store,
            trace,
            retry_hint_ms,
            paused: AtomicBool::new(false),
            stats: BrokerStats::default(),
        }
    }

    pub fn store(&self) -> &Arc<TaskStore> {
        &self.store
    }

    pub fn retry_hint_ms(&self) -> Millis {
        self.retry_hint_ms
    }

    /// While paused every poll comes back NoMatch without scanning.
    pub fn pause(&self) {
        self.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.paused.store(false, Ordering::SeqCst);
    }

    pub fn is_paused(&self) -> bool {
        self.paused.load(Ordering::SeqCst)
    }

    /// Handle one resource poll: scan the waiting tasks visible to the
    /// resource's site in priority order and claim the first symmetric
    /// match. Lost races continue the scan.
    pub fn request_task(
        &self,
        resource: &Descriptor,
        resource_id: &str,
        resource_site: &str,
        now: Millis,
    ) -> Result<MatchOutcome, StoreError> {
        self.stats.polls.fetch_add(1, Ordering::Relaxed);
        if self.is_paused() {
            return Ok(MatchOutcome::NoMatch {
                retry_after_ms: self.retry_hint_ms,
            });
        }
        let candidates = self.store.waiting_tasks(Some(resource_site));
        for candidate in candidates {
            self.stats.match_evaluations.fetch_add(1, Ordering::Relaxed);
            if !symmetric_match(&candidate.descriptor, resource) {
                continue;
            }
            match self.store.claim_if_waiting(candidate.id, now)? {
                ClaimOutcome::Claimed => {
                    self.stats.assignments.fetch_add(1, Ordering::Relaxed);
                    self.trace.assign(
                        now,
                        candidate.id.0,
                        resource_id,
                        resource_site,
                        &resource.to_line(),
                    );
                    return Ok(MatchOutcome::Assigned(Assignment {
                        task_id: candidate.id,
                        resource_id: resource_id.to_string(),
                        resource_site: resource_site.to_string(),
                        matched_at: now,
                        task_descriptor: candidate.descriptor,
                    }));
                }
                ClaimOutcome::LostRace(_) => {
                    self.stats.lost_races.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
            }
        }
        Ok(MatchOutcome::NoMatch {
            retry_after_ms: self.retry_hint_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::Expr;
    use crate::store::{id_allocator, Status, TaskKind};

    fn broker_with_store() -> (Arc<TaskStore>, Broker, TraceLog) {
        let trace = TraceLog::new();
        let store = Arc::new(TaskStore::new(TaskKind::Job, id_allocator(), trace.clone()));
        let broker = Broker::new(Arc::clone(&store), trace.clone(), DEFAULT_RETRY_HINT_MS);
        (store, broker, trace)
    }

    fn job(executable: &str) -> Descriptor {
        let mut d = Descriptor::new();
        d.set("Executable", Expr::str(executable));
        d
    }

    fn any_resource() -> Descriptor {
        let mut d = Descriptor::new();
        d.set("Name", Expr::str("CE1"));
        d.set("Site", Expr::str("SiteA"));
        d
    }

    #[test]
    fn higher_priority_task_is_assigned_first() {
        let (store, broker, _) = broker_with_store();
        let production = store.insert(job("prod.sh"), 0, 0).unwrap();
        let user = store.insert(job("user.sh"), 100, 1).unwrap();

        let outcome = broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 10)
            .unwrap();
        let a = outcome.assignment().expect("should assign");
        assert_eq!(a.task_id, user.id);

        let outcome = broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 11)
            .unwrap();
        assert_eq!(outcome.assignment().unwrap().task_id, production.id);
    }

    #[test]
    fn empty_store_yields_no_match_with_hint() {
        let (_, broker, _) = broker_with_store();
        match broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 0)
            .unwrap()
        {
            MatchOutcome::NoMatch { retry_after_ms } => {
                assert_eq!(retry_after_ms, DEFAULT_RETRY_HINT_MS)
            }
            MatchOutcome::Assigned(_) => panic!("nothing to assign"),
        }
    }

    #[test]
    fn claimed_task_is_assigned_in_store() {
        let (store, broker, _) = broker_with_store();
        let t = store.insert(job("a.sh"), 0, 0).unwrap();
        broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 5)
            .unwrap();
        assert_eq!(store.task(t.id).unwrap().status, Status::Assigned);
    }

    #[test]
    fn scan_skips_non_matching_tasks() {
        let (store, broker, _) = broker_with_store();
        let mut pinned = job("pinned.sh");
        pinned.set(
            "Requirements",
            Expr::binary(
                crate::descriptor::BinOp::Eq,
                Expr::other("Site"),
                Expr::str("SiteB"),
            ),
        );
        store.insert(pinned, 100, 0).unwrap();
        let open = store.insert(job("open.sh"), 0, 1).unwrap();

        let outcome = broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 5)
            .unwrap();
        assert_eq!(outcome.assignment().unwrap().task_id, open.id);
        assert_eq!(broker.stats.match_evaluations(), 2);
    }

    #[test]
    fn paused_broker_answers_no_match_without_scanning() {
        let (store, broker, _) = broker_with_store();
        store.insert(job("a.sh"), 0, 0).unwrap();
        broker.pause();
        let outcome = broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 5)
            .unwrap();
        assert!(outcome.assignment().is_none());
        assert_eq!(broker.stats.match_evaluations(), 0);
        broker.resume();
        let outcome = broker
            .request_task(&any_resource(), "SiteA/CE1", "SiteA", 6)
            .unwrap();
        assert!(outcome.assignment().is_some());
    }

    #[test]
    fn site_affine_tasks_hidden_from_other_sites() {
        let trace = TraceLog::new();
        let store = Arc::new(TaskStore::new(
            TaskKind::Transfer,
            id_allocator(),
            trace.clone(),
        ));
        let broker = Broker::new(Arc::clone(&store), trace, 1000);
        let mut d = Descriptor::new();
        d.set("LFN", Expr::str("/a"));
        let t = store.insert(d, 0, 0).unwrap();
        store
            .rewrite_if_waiting(t.id, None, Some(Some("SiteB".into())), 1)
            .unwrap();

        let outcome = broker
            .request_task(&any_resource(), "SiteA/FTD1", "SiteA", 5)
            .unwrap();
        assert!(outcome.assignment().is_none());
        // hidden by the prefilter, not by evaluation
        assert_eq!(broker.stats.match_evaluations(), 0);
    }

    /// Fifty threads fight over ten matchable tasks; exactly ten claims
    /// may succeed and no task may be handed out twice.
    #[test]
    fn concurrent_polls_never_double_assign() {
        let (store, broker, trace) = broker_with_store();
        for i in 0..10 {
            store.insert(job(&format!("job{i}.sh")), 0, 0).unwrap();
        }
        let broker = Arc::new(broker);
        let assigned: Vec<TaskId> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..50 {
                let broker = Arc::clone(&broker);
                handles.push(scope.spawn(move || {
                    broker
                        .request_task(&any_resource(), &format!("SiteA/CE{worker}"), "SiteA", 5)
                        .unwrap()
                        .assignment()
                        .map(|a| a.task_id)
                }));
            }
            handles
                .into_iter()
                .filter_map(|h| h.join().unwrap())
                .collect()
        });
        assert_eq!(assigned.len(), 10);
        let mut unique = assigned.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 10, "a task was assigned twice: {assigned:?}");

        // journal agrees: one WAITING->ASSIGNED edge per task
        let edges: Vec<String> = trace
            .lines()
            .into_iter()
            .filter(|l| l.ends_with("WAITING\tASSIGNED"))
            .collect();
        assert_eq!(edges.len(), 10);
    }
}
