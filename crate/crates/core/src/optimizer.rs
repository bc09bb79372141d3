//! The two background optimizers. Both rewrite WAITING tasks so that more
//! resources can run them and so the broker compares fewer descriptors.
//!
//! The job optimizer re-derives each waiting job's input-data constraint
//! against the current catalogue (widening it when new replicas exist)
//! and reports replication suggestions for jobs whose inputs are near no
//! CE. The transfer optimizer fills in size, current source replicas and
//! the requirement expression of new transfers, then tags them with the
//! destination site so brokers skip resources that provably cannot take
//! them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::catalogue::{Catalogue, ReplicationKind, SeName};
use crate::descriptor::Expr;
use crate::jobs::build_job_requirements;
use crate::registry::SiteRegistry;
use crate::store::{Status, TaskId, TaskKind, TaskStore};
use crate::trace::TraceLog;
use crate::transfers::{default_transfer_requirement, sources_expr};
use crate::Millis;

/// Suggested (not enacted) replication for a starved job input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicationSuggestion {
    pub task_id: TaskId,
    pub lfn: String,
    pub candidate_ses: Vec<SeName>,
}

#[derive(Debug, Clone, Default)]
pub struct OptimizerReport {
    pub pass_id: u64,
    pub tasks_examined: usize,
    pub tasks_rewritten: usize,
    pub site_tags_set: usize,
    pub suggestions: Vec<ReplicationSuggestion>,
}

/// Rewrites waiting jobs when the catalogue has changed under them.
pub struct JobOptimizer {
    trace: TraceLog,
    passes: u64,
    /// Catalogue version seen per task at its last rewrite check; inputs
    /// unchanged since then are skipped.
    seen_versions: BTreeMap<TaskId, u64>,
    suggested: BTreeSet<(TaskId, String)>,
    auto_submitted: BTreeSet<(String, SeName)>,
    /// Enact replication suggestions as mirror transfers.
    pub auto_replicate: bool,
    /// Also tag jobs with a site when their input constraint is provably
    /// satisfiable at exactly one site. Off by default.
    pub tag_jobs: bool,
}

impl JobOptimizer {
    pub fn new(trace: TraceLog) -> JobOptimizer {
        JobOptimizer {
            trace,
            passes: 0,
            seen_versions: BTreeMap::new(),
            suggested: BTreeSet::new(),
            auto_submitted: BTreeSet::new(),
            auto_replicate: false,
            tag_jobs: false,
        }
    }

    pub fn pass(
        &mut self,
        store: &TaskStore,
        catalogue: &Catalogue,
        registry: &SiteRegistry,
        transfer_store: Option<&TaskStore>,
        now: Millis,
    ) -> OptimizerReport {
        assert_eq!(store.kind(), TaskKind::Job);
        self.passes += 1;
        let mut report = OptimizerReport {
            pass_id: self.passes,
            ..OptimizerReport::default()
        };
        let close_ses = registry.ses_close_to_ces();

        for waiting in store.waiting_tasks(None) {
            report.tasks_examined += 1;
            let d = &waiting.descriptor;
            let inputs = d.get_str_list("InputData").unwrap_or_default();
            if inputs.is_empty() {
                continue;
            }

            // Skip when none of the input entries changed since we last
            // looked at this task.
            let mut max_version = 0;
            let mut entries = Vec::with_capacity(inputs.len());
            let mut missing = false;
            for lfn in &inputs {
                match catalogue.entry(lfn) {
                    Some(entry) => {
                        max_version = max_version.max(entry.version);
                        entries.push(entry);
                    }
                    None => missing = true,
                }
            }
            if missing {
                continue;
            }
            if self.seen_versions.get(&waiting.id) == Some(&max_version) {
                continue;
            }
            self.seen_versions.insert(waiting.id, max_version);

            let user = d.get("UserRequirements").cloned();
            let packages = d.get_str_list("Packages").unwrap_or_default();
            let rebuilt = match build_job_requirements(user.as_ref(), &inputs, &packages, catalogue)
            {
                Ok(expr) => expr,
                Err(_) => continue,
            };
            let mut affinity_change = None;
            if self.tag_jobs {
                if let Some(site) = sole_feasible_site(&entries) {
                    if waiting.site_affinity.as_deref() != Some(site.as_str()) {
                        affinity_change = Some(Some(site));
                    }
                }
            }
            let requirement_changed = d.requirements() != Some(&rebuilt);
            if requirement_changed || affinity_change.is_some() {
                let mut new_d = (**d).clone();
                new_d.set("Requirements", rebuilt);
                let applied = store
                    .rewrite_if_waiting(
                        waiting.id,
                        Some(Arc::new(new_d)),
                        affinity_change.clone(),
                        now,
                    )
                    .unwrap_or(false);
                if applied {
                    if requirement_changed {
                        report.tasks_rewritten += 1;
                    }
                    if affinity_change.is_some() {
                        report.site_tags_set += 1;
                    }
                }
            }

            // Inputs near no CE: suggest replication towards the SEs CEs
            // actually sit next to.
            for entry in &entries {
                let replica_ses = entry.replica_ses();
                let reachable = replica_ses.iter().any(|se| close_ses.contains(se));
                if reachable {
                    continue;
                }
                let candidates: Vec<SeName> = close_ses
                    .iter()
                    .filter(|se| !replica_ses.contains(se))
                    .cloned()
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                if self.suggested.insert((waiting.id, entry.lfn.clone())) {
                    self.trace.suggestion(
                        now,
                        waiting.id.0,
                        &entry.lfn,
                        &candidates
                            .iter()
                            .map(|s| s.as_str())
                            .collect::<Vec<_>>()
                            .join(","),
                    );
                }
                if self.auto_replicate {
                    if let Some(transfer_store) = transfer_store {
                        let dest = candidates[0].clone();
                        if self.auto_submitted.insert((entry.lfn.clone(), dest.clone())) {
                            let request = crate::transfers::TransferRequest {
                                lfn: entry.lfn.clone(),
                                destination_se: dest,
                                kind: ReplicationKind::Mirror,
                                priority: 0,
                                transport: None,
                            };
                            let _ = crate::transfers::request_transfer(
                                transfer_store,
                                catalogue,
                                &request,
                                now,
                            );
                        }
                    }
                }
                report.suggestions.push(ReplicationSuggestion {
                    task_id: waiting.id,
                    lfn: entry.lfn.clone(),
                    candidate_ses: candidates,
                });
            }
        }

        self.trace.optimizer(
            now,
            "job",
            report.tasks_examined,
            report.tasks_rewritten,
            report.site_tags_set,
            report.suggestions.len(),
        );
        report
    }
}

/// The only site that can host every input of a job, if there is exactly
/// one: each input must have a replica at an SE of that site.
fn sole_feasible_site(entries: &[crate::catalogue::CatalogueEntry]) -> Option<String> {
    let mut feasible: Option<BTreeSet<String>> = None;
    for entry in entries {
        let sites: BTreeSet<String> = entry
            .replica_ses()
            .iter()
            .map(|se| se.site().to_string())
            .collect();
        feasible = Some(match feasible {
            None => sites,
            Some(prev) => prev.intersection(&sites).cloned().collect(),
        });
    }
    let feasible = feasible?;
    if feasible.len() == 1 {
        feasible.into_iter().next()
    } else {
        None
    }
}

/// Optional bulk grouping of small same-route transfers.
#[derive(Debug, Clone, Copy)]
pub struct BulkConfig {
    /// Only transfers at or below this size are grouped.
    pub max_file_size: u64,
}

/// Fills in new transfers and tags them with their destination site.
pub struct TransferOptimizer {
    trace: TraceLog,
    passes: u64,
    /// Site tagging on by default; disabling it must not change
    /// assignments, only the number of match evaluations.
    pub tagging: bool,
    pub bulk: Option<BulkConfig>,
}

impl TransferOptimizer {
    pub fn new(trace: TraceLog) -> TransferOptimizer {
        TransferOptimizer {
            trace,
            passes: 0,
            tagging: true,
            bulk: None,
        }
    }

    pub fn pass(
        &mut self,
        store: &TaskStore,
        catalogue: &Catalogue,
        now: Millis,
    ) -> OptimizerReport {
        assert_eq!(store.kind(), TaskKind::Transfer);
        self.passes += 1;
        let mut report = OptimizerReport {
            pass_id: self.passes,
            ..OptimizerReport::default()
        };

        for waiting in store.waiting_tasks(None) {
            report.tasks_examined += 1;
            let d = &waiting.descriptor;
            if d.contains("BulkLeader") {
                continue; // folded into a bulk leader already
            }
            let optimized = d.contains("Size") && d.contains("Sources") && d.contains("Requirements");
            let lfn = match d.get_str("LFN") {
                Some(lfn) => lfn,
                None => continue,
            };
            let dest = match d.get_str("DestinationSE").and_then(|s| SeName::parse(&s).ok()) {
                Some(se) => se,
                None => {
                    self.reject(store, waiting.id, "malformed DestinationSE", now);
                    continue;
                }
            };
            if !catalogue.se_exists(&dest) {
                self.reject(
                    store,
                    waiting.id,
                    &format!("destination SE `{dest}` is not registered"),
                    now,
                );
                continue;
            }
            let wants_tag = self.tagging && waiting.site_affinity.as_deref() != Some(dest.site());
            if optimized && !wants_tag {
                continue;
            }

            let mut descriptor_change = None;
            if !optimized {
                let entry = match catalogue.entry(&lfn) {
                    Some(e) => e,
                    None => {
                        self.reject(store, waiting.id, &format!("lfn `{lfn}` vanished"), now);
                        continue;
                    }
                };
                let sources: Vec<(SeName, String)> = match catalogue.lookup(&lfn, dest.site()) {
                    Ok(replicas) => replicas.into_iter().map(|r| (r.se, r.pfn)).collect(),
                    Err(_) => continue,
                };
                let mut new_d = (**d).clone();
                new_d.set("Size", Expr::Int(entry.size.min(i64::MAX as u64) as i64));
                new_d.set("Sources", sources_expr(&sources));
                new_d.set("Requirements", default_transfer_requirement(&dest, entry.size));
                descriptor_change = Some(Arc::new(new_d));
            }
            let affinity_change = wants_tag.then(|| Some(dest.site().to_string()));

            let applied = store
                .rewrite_if_waiting(waiting.id, descriptor_change.clone(), affinity_change, now)
                .unwrap_or(false);
            if applied {
                if descriptor_change.is_some() {
                    report.tasks_rewritten += 1;
                }
                if wants_tag {
                    report.site_tags_set += 1;
                }
            }
        }

        if let Some(bulk) = self.bulk {
            self.group_small_transfers(store, bulk, &mut report, now);
        }

        self.trace.optimizer(
            now,
            "transfer",
            report.tasks_examined,
            report.tasks_rewritten,
            report.site_tags_set,
            report.suggestions.len(),
        );
        report
    }

    fn reject(&self, store: &TaskStore, id: TaskId, why: &str, now: Millis) {
        self.trace
            .comment(&format!("transfer-optimizer rejected task {id}: {why}"));
        let _ = store.transition(id, Status::FailedLocal, now);
    }

    /// Fold groups of small optimized transfers sharing source site,
    /// destination SE, kind and transport into their lowest-id member;
    /// the others follow the leader's execution in lockstep.
    fn group_small_transfers(
        &self,
        store: &TaskStore,
        bulk: BulkConfig,
        report: &mut OptimizerReport,
        now: Millis,
    ) {
        let mut groups: BTreeMap<(String, String, String, String), Vec<(TaskId, String, u64)>> =
            BTreeMap::new();
        for waiting in store.waiting_tasks(None) {
            let d = &waiting.descriptor;
            if d.contains("Manifest") || d.contains("BulkLeader") {
                continue;
            }
            let (Some(size), Some(sources), Some(dest), Some(kind), Some(transport), Some(lfn)) = (
                d.get_int("Size"),
                crate::transfers::parse_sources(d),
                d.get_str("DestinationSE"),
                d.get_str("Type"),
                d.get_str("Transport"),
                d.get_str("LFN"),
            ) else {
                continue;
            };
            if size < 0 || size as u64 > bulk.max_file_size {
                continue;
            }
            let Some((first_se, _)) = sources.first() else {
                continue;
            };
            groups
                .entry((first_se.site().to_string(), dest, kind, transport))
                .or_default()
                .push((waiting.id, lfn, size as u64));
        }

        for (_, members) in groups {
            if members.len() < 2 {
                continue;
            }
            let leader = members.iter().map(|(id, _, _)| *id).min().unwrap();
            let total: u64 = members.iter().map(|(_, _, s)| s).sum();
            let leader_task = match store.task(leader) {
                Some(t) => t,
                None => continue,
            };
            let dest = match leader_task
                .descriptor
                .get_str("DestinationSE")
                .and_then(|s| SeName::parse(&s).ok())
            {
                Some(se) => se,
                None => continue,
            };
            let mut new_leader = (*leader_task.descriptor).clone();
            new_leader.set(
                "Manifest",
                Expr::List(
                    members
                        .iter()
                        .map(|(_, lfn, size)| {
                            Expr::List(vec![
                                Expr::str(lfn.clone()),
                                Expr::Int(*size as i64),
                            ])
                        })
                        .collect(),
                ),
            );
            new_leader.set(
                "BulkMembers",
                Expr::List(
                    members
                        .iter()
                        .filter(|(id, _, _)| *id != leader)
                        .map(|(id, _, _)| Expr::Int(id.0 as i64))
                        .collect(),
                ),
            );
            new_leader.set("Size", Expr::Int(total.min(i64::MAX as u64) as i64));
            new_leader.set("Requirements", default_transfer_requirement(&dest, total));
            if !store
                .rewrite_if_waiting(leader, Some(Arc::new(new_leader)), None, now)
                .unwrap_or(false)
            {
                continue;
            }
            report.tasks_rewritten += 1;
            for (id, _, _) in &members {
                if *id == leader {
                    continue;
                }
                if let Some(task) = store.task(*id) {
                    let mut follower = (*task.descriptor).clone();
                    // never matched directly; driven by the leader
                    follower.set("Requirements", Expr::Bool(false));
                    follower.set("BulkLeader", Expr::Int(leader.0 as i64));
                    if store
                        .rewrite_if_waiting(*id, Some(Arc::new(follower)), None, now)
                        .unwrap_or(false)
                    {
                        report.tasks_rewritten += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::symmetric_match;
    use crate::jobs::{submit_job, JobSpec, QueueConfig};
    use crate::store::id_allocator;
    use crate::transfers::{request_transfer, FileTransferDaemon, TransferRequest};

    struct World {
        job_store: Arc<TaskStore>,
        transfer_store: Arc<TaskStore>,
        catalogue: Catalogue,
        registry: SiteRegistry,
        trace: TraceLog,
    }

    fn world() -> World {
        let trace = TraceLog::new();
        let ids = id_allocator();
        let catalogue = Catalogue::new();
        let registry = SiteRegistry::new();
        for site in ["SiteA", "SiteB"] {
            registry.add_site(site).unwrap();
            let se = format!("{site}::SE1");
            registry
                .register_se_everywhere(&catalogue, site, &se, 1_000_000)
                .unwrap();
        }
        World {
            job_store: Arc::new(TaskStore::new(TaskKind::Job, Arc::clone(&ids), trace.clone())),
            transfer_store: Arc::new(TaskStore::new(TaskKind::Transfer, ids, trace.clone())),
            catalogue,
            registry,
            trace,
        }
    }

    fn ce_at(w: &World, site: &str) -> crate::jobs::ComputingElement {
        let ce = crate::jobs::ComputingElement {
            name: format!("CE-{site}"),
            hostname: "h".into(),
            partitions: vec![],
            close_se: vec![SeName::parse(&format!("{site}::SE1")).unwrap()],
            packages: vec![],
            site: site.to_string(),
            requirements: None,
            queue: QueueConfig::default(),
            poll_interval_ms: 1000,
        };
        w.registry.add_ce(ce.clone()).unwrap();
        ce
    }

    fn se(name: &str) -> SeName {
        SeName::parse(name).unwrap()
    }

    #[test]
    fn replica_added_later_widens_job_requirement() {
        let w = world();
        let ce_b = ce_at(&w, "SiteB");
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/d/f\"];").unwrap();
        let task = submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();
        assert!(!symmetric_match(&task.descriptor, &ce_b.descriptor()));

        let mut opt = JobOptimizer::new(w.trace.clone());
        let first = opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 1);
        assert_eq!(first.tasks_rewritten, 0, "nothing changed yet");

        w.catalogue
            .add_replica("/d/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 2)
            .unwrap();
        let second = opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 3);
        assert_eq!(second.tasks_rewritten, 1);
        let rewritten = w.job_store.task(task.id).unwrap();
        assert!(symmetric_match(&rewritten.descriptor, &ce_b.descriptor()));
    }

    #[test]
    fn rewrite_never_shrinks_match_set_here() {
        // the widened requirement still matches the original CE
        let w = world();
        let ce_a = ce_at(&w, "SiteA");
        let ce_b = ce_at(&w, "SiteB");
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/d/f\"];").unwrap();
        let task = submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();
        w.catalogue
            .add_replica("/d/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 1)
            .unwrap();
        let mut opt = JobOptimizer::new(w.trace.clone());
        opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 2);
        let rewritten = w.job_store.task(task.id).unwrap();
        assert!(symmetric_match(&rewritten.descriptor, &ce_a.descriptor()));
        assert!(symmetric_match(&rewritten.descriptor, &ce_b.descriptor()));
    }

    #[test]
    fn job_without_input_untouched() {
        let w = world();
        ce_at(&w, "SiteA");
        let spec = JobSpec::from_text("Executable = \"x\";").unwrap();
        submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();
        let mut opt = JobOptimizer::new(w.trace.clone());
        let report = opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 1);
        assert_eq!(report.tasks_examined, 1);
        assert_eq!(report.tasks_rewritten, 0);
    }

    #[test]
    fn starved_input_emits_suggestion() {
        let w = world();
        ce_at(&w, "SiteB");
        // SiteC SE has the file but no CE anywhere near it
        w.registry.add_site("SiteC").unwrap();
        w.registry
            .register_se_everywhere(&w.catalogue, "SiteC", "SiteC::SE1", 1_000_000)
            .unwrap();
        w.catalogue
            .register_file("/d/f", "pC", &se("SiteC::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/d/f\"];").unwrap();
        let task = submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();

        let mut opt = JobOptimizer::new(w.trace.clone());
        let report = opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 1);
        assert_eq!(report.suggestions.len(), 1);
        assert_eq!(report.suggestions[0].task_id, task.id);
        assert_eq!(report.suggestions[0].candidate_ses, vec![se("SiteB::SE1")]);
    }

    #[test]
    fn auto_replicate_submits_one_mirror_transfer() {
        let w = world();
        ce_at(&w, "SiteB");
        w.registry.add_site("SiteC").unwrap();
        w.registry
            .register_se_everywhere(&w.catalogue, "SiteC", "SiteC::SE1", 1_000_000)
            .unwrap();
        w.catalogue
            .register_file("/d/f", "pC", &se("SiteC::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/d/f\"];").unwrap();
        submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();

        let mut opt = JobOptimizer::new(w.trace.clone());
        opt.auto_replicate = true;
        opt.pass(&w.job_store, &w.catalogue, &w.registry, Some(&w.transfer_store), 1);
        assert_eq!(w.transfer_store.len(), 1);
        // second pass does not resubmit
        opt.pass(&w.job_store, &w.catalogue, &w.registry, Some(&w.transfer_store), 2);
        assert_eq!(w.transfer_store.len(), 1);
    }

    #[test]
    fn transfer_fill_in_and_tagging() {
        let w = world();
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 123, 0)
            .unwrap();
        let req = TransferRequest {
            lfn: "/d/f".into(),
            destination_se: se("SiteB::SE1"),
            kind: ReplicationKind::Mirror,
            priority: 0,
            transport: None,
        };
        let task = request_transfer(&w.transfer_store, &w.catalogue, &req, 0).unwrap();

        let mut opt = TransferOptimizer::new(w.trace.clone());
        let report = opt.pass(&w.transfer_store, &w.catalogue, 1);
        assert_eq!(report.tasks_rewritten, 1);
        assert_eq!(report.site_tags_set, 1);

        let optimized = w.transfer_store.task(task.id).unwrap();
        assert_eq!(optimized.site_affinity.as_deref(), Some("SiteB"));
        assert_eq!(optimized.descriptor.get_int("Size"), Some(123));
        assert_eq!(
            crate::transfers::parse_sources(&optimized.descriptor).unwrap(),
            vec![(se("SiteA::SE1"), "pA".to_string())]
        );

        // now it matches the destination daemon and only that one
        let ftd_b = FileTransferDaemon {
            name: "FTD".into(),
            close_se: se("SiteB::SE1"),
            cache_bytes: 1000,
            site: "SiteB".into(),
            poll_interval_ms: 1000,
        };
        let ftd_a = FileTransferDaemon {
            name: "FTD".into(),
            close_se: se("SiteA::SE1"),
            cache_bytes: 1000,
            site: "SiteA".into(),
            poll_interval_ms: 1000,
        };
        assert!(symmetric_match(&optimized.descriptor, &ftd_b.descriptor(1000)));
        assert!(!symmetric_match(&optimized.descriptor, &ftd_a.descriptor(1000)));
    }

    #[test]
    fn transfer_pass_is_idempotent() {
        let w = world();
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 123, 0)
            .unwrap();
        let req = TransferRequest {
            lfn: "/d/f".into(),
            destination_se: se("SiteB::SE1"),
            kind: ReplicationKind::Cache,
            priority: 0,
            transport: None,
        };
        request_transfer(&w.transfer_store, &w.catalogue, &req, 0).unwrap();
        let mut opt = TransferOptimizer::new(w.trace.clone());
        let first = opt.pass(&w.transfer_store, &w.catalogue, 1);
        assert_eq!(first.tasks_rewritten, 1);
        let second = opt.pass(&w.transfer_store, &w.catalogue, 2);
        assert_eq!(second.tasks_rewritten, 0);
        assert_eq!(second.site_tags_set, 0);
    }

    #[test]
    fn job_passes_are_idempotent() {
        let w = world();
        ce_at(&w, "SiteA");
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/d/f\"];").unwrap();
        submit_job(&w.job_store, &w.catalogue, &spec, 0).unwrap();
        let mut opt = JobOptimizer::new(w.trace.clone());
        opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 1);
        let again = opt.pass(&w.job_store, &w.catalogue, &w.registry, None, 2);
        assert_eq!(again.tasks_rewritten, 0);
    }

    #[test]
    fn optimizers_skip_non_waiting_tasks() {
        let w = world();
        w.catalogue
            .register_file("/d/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let req = TransferRequest {
            lfn: "/d/f".into(),
            destination_se: se("SiteB::SE1"),
            kind: ReplicationKind::Mirror,
            priority: 0,
            transport: None,
        };
        let task = request_transfer(&w.transfer_store, &w.catalogue, &req, 0).unwrap();
        w.transfer_store
            .claim_if_waiting(task.id, 1)
            .unwrap();
        let mut opt = TransferOptimizer::new(w.trace.clone());
        let report = opt.pass(&w.transfer_store, &w.catalogue, 2);
        assert_eq!(report.tasks_examined, 0);
        let untouched = w.transfer_store.task(task.id).unwrap();
        assert!(untouched.descriptor.get("Size").is_none());
    }

    #[test]
    fn bulk_grouping_folds_small_same_route_transfers() {
        let w = world();
        for (lfn, size) in [("/d/a", 10u64), ("/d/b", 20), ("/d/big", 90_000)] {
            w.catalogue
                .register_file(lfn, &format!("p{lfn}"), &se("SiteA::SE1"), size, 0)
                .unwrap();
        }
        for lfn in ["/d/a", "/d/b", "/d/big"] {
            let req = TransferRequest {
                lfn: lfn.into(),
                destination_se: se("SiteB::SE1"),
                kind: ReplicationKind::Mirror,
                priority: 0,
                transport: None,
            };
            request_transfer(&w.transfer_store, &w.catalogue, &req, 0).unwrap();
        }
        let mut opt = TransferOptimizer::new(w.trace.clone());
        opt.bulk = Some(BulkConfig { max_file_size: 100 });
        opt.pass(&w.transfer_store, &w.catalogue, 1);

        let tasks = w.transfer_store.tasks();
        let leaders: Vec<_> = tasks
            .iter()
            .filter(|t| t.descriptor.contains("Manifest"))
            .collect();
        let followers: Vec<_> = tasks
            .iter()
            .filter(|t| t.descriptor.contains("BulkLeader"))
            .collect();
        assert_eq!(leaders.len(), 1);
        assert_eq!(followers.len(), 1);
        assert_eq!(leaders[0].descriptor.get_int("Size"), Some(30));
        // the big one stays independent
        assert!(tasks
            .iter()
            .any(|t| t.descriptor.get_str("LFN").as_deref() == Some("/d/big")
                && !t.descriptor.contains("Manifest")
                && !t.descriptor.contains("BulkLeader")));
        // followers never match a daemon directly
        let ftd = FileTransferDaemon {
            name: "FTD".into(),
            close_se: se("SiteB::SE1"),
            cache_bytes: 1_000_000,
            site: "SiteB".into(),
            poll_interval_ms: 1000,
        };
        assert!(!symmetric_match(
            &followers[0].descriptor,
            &ftd.descriptor(1_000_000)
        ));
    }
}
