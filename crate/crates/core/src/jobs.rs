//! Job side of the computing model: submission with manager fill-in,
//! computing-element descriptors, and the validation step.
//!
//! A submitted job only has to name its executable. The manager defaults
//! the rest and converts the user's data needs into matching
//! requirements: input data pins the job to CEs close to an SE holding a
//! replica, packages become membership constraints on the CE's installed
//! package list.

use std::collections::BTreeMap;


use crate::catalogue::{Catalogue, CatalogueError, SeName};
use crate::descriptor::{parse_expression, Descriptor, Expr, ParseError};
use crate::store::{StoreError, Task, TaskStore};
use crate::Millis;

/// Parsed job submission. Only `executable` is compulsory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobSpec {
    pub executable: String,
    pub arguments: Vec<String>,
    pub requirements: Option<Expr>,
    pub input_data: Vec<String>,
    pub output_data: Vec<String>,
    pub packages: Vec<String>,
    pub validate: bool,
    pub priority: Option<i64>,
    /// Attributes outside the ingestion keys, carried through verbatim
    /// (simulation workload hints ride here).
    pub extra: Vec<(String, Expr)>,
}

/// Default priority of user jobs; production jobs submit with 0.
pub const DEFAULT_JOB_PRIORITY: i64 = 100;

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("job spec: {0}")]
    Parse(#[from] ParseError),
    #[error("job spec lacks the compulsory Executable attribute")]
    MissingExecutable,
    #[error("job spec attribute `{0}` has the wrong shape")]
    BadAttribute(&'static str),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

const INGESTION_KEYS: &[&str] = &[
    "executable",
    "arguments",
    "requirements",
    "inputdata",
    "outputdata",
    "packages",
    "validate",
    "priority",
];

impl JobSpec {
    /// Read a spec from ingestion descriptor text (keys Executable,
    /// Arguments, Requirements, InputData, OutputData, Packages,
    /// Validate, Priority; anything else is carried through).
    pub fn from_text(text: &str) -> Result<JobSpec, JobError> {
        let d = Descriptor::parse(text)?;
        JobSpec::from_descriptor(&d)
    }

    pub fn from_descriptor(d: &Descriptor) -> Result<JobSpec, JobError> {
        let executable = match d.get("Executable") {
            None => return Err(JobError::MissingExecutable),
            Some(_) => d
                .get_str("Executable")
                .ok_or(JobError::BadAttribute("Executable"))?,
        };
        if executable.is_empty() {
            return Err(JobError::MissingExecutable);
        }
        let str_list = |name: &'static str| -> Result<Vec<String>, JobError> {
            match d.get(name) {
                None => Ok(Vec::new()),
                Some(_) => d.get_str_list(name).ok_or(JobError::BadAttribute(name)),
            }
        };
        let extra = d
            .iter()
            .filter(|(name, _)| !INGESTION_KEYS.contains(&name.to_ascii_lowercase().as_str()))
            .map(|(name, expr)| (name.to_string(), expr.clone()))
            .collect();
        Ok(JobSpec {
            executable,
            arguments: str_list("Arguments")?,
            requirements: d.get("Requirements").cloned(),
            input_data: str_list("InputData")?,
            output_data: str_list("OutputData")?,
            packages: str_list("Packages")?,
            validate: d.get_bool("Validate").unwrap_or(false),
            priority: d.get_int("Priority"),
            extra,
        })
    }
}

/// Requirement pinning a job near its input data: a conjunction over
/// input files of a disjunction over that file's replica SEs of
/// `member(other.CloseSE, se)`.
pub fn derive_input_requirements(
    input_lfns: &[String],
    catalogue: &Catalogue,
) -> Result<Expr, CatalogueError> {
    let mut terms = Vec::with_capacity(input_lfns.len());
    for lfn in input_lfns {
        let entry = catalogue
            .entry(lfn)
            .ok_or_else(|| CatalogueError::UnknownLfn(lfn.clone()))?;
        let ses = entry.replica_ses();
        terms.push(Expr::disj(ses.iter().map(|se| {
            Expr::member(Expr::other("CloseSE"), Expr::str(se.as_str()))
        })));
    }
    Ok(Expr::conj(terms))
}

/// Full Requirements expression for a job: user requirement, then the
/// input-data constraint, then one package membership term each. The
/// optimizer rebuilds through this same function, so an unchanged
/// catalogue reproduces the stored expression exactly.
pub fn build_job_requirements(
    user: Option<&Expr>,
    input_lfns: &[String],
    packages: &[String],
    catalogue: &Catalogue,
) -> Result<Expr, CatalogueError> {
    let mut terms = Vec::new();
    if let Some(user) = user {
        terms.push(user.clone());
    }
    if !input_lfns.is_empty() {
        terms.push(derive_input_requirements(input_lfns, catalogue)?);
    }
    for package in packages {
        terms.push(Expr::member(
            Expr::other("Packages"),
            Expr::str(package.clone()),
        ));
    }
    Ok(Expr::conj(terms))
}

/// Build the stored task descriptor from a spec and insert it WAITING.
pub fn submit_job(
    store: &TaskStore,
    catalogue: &Catalogue,
    spec: &JobSpec,
    at: Millis,
) -> Result<Task, JobError> {
    let requirements =
        build_job_requirements(spec.requirements.as_ref(), &spec.input_data, &spec.packages, catalogue)?;
    let priority = spec.priority.unwrap_or(DEFAULT_JOB_PRIORITY);

    let mut d = Descriptor::new();
    d.set("Executable", Expr::str(spec.executable.clone()));
    d.set("Arguments", Expr::str_list(spec.arguments.clone()));
    d.set("Requirements", requirements);
    d.set("InputData", Expr::str_list(spec.input_data.clone()));
    d.set("OutputData", Expr::str_list(spec.output_data.clone()));
    d.set("Packages", Expr::str_list(spec.packages.clone()));
    d.set("Validate", Expr::Bool(spec.validate));
    d.set("Priority", Expr::Int(priority));
    if let Some(user) = &spec.requirements {
        // Kept separate so the optimizer can rebuild Requirements against
        // a changed catalogue without losing the user's own constraint.
        d.set("UserRequirements", user.clone());
    }
    for (name, expr) in &spec.extra {
        d.set(name, expr.clone());
    }
    Ok(store.insert(d, priority, at)?)
}

/// Per-CE batch queue model parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueConfig {
    /// Concurrently running jobs.
    pub slots: usize,
    /// Delay between dequeue and RUNNING.
    pub start_latency_ms: Millis,
    /// Delay between assignment and QUEUED.
    pub submit_latency_ms: Millis,
    /// How many not-yet-running jobs the CE will hold before it stops
    /// asking for more.
    pub depth: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            slots: 1,
            start_latency_ms: 100,
            submit_latency_ms: 10,
            depth: 1,
        }
    }
}

/// A computing element: a job-executing resource fronting a (simulated)
/// batch queue, polling the job broker through its site proxy.
#[derive(Debug, Clone)]
pub struct ComputingElement {
    pub name: String,
    pub hostname: String,
    pub partitions: Vec<String>,
    pub close_se: Vec<SeName>,
    pub packages: Vec<String>,
    pub site: String,
    pub requirements: Option<Expr>,
    pub queue: QueueConfig,
    pub poll_interval_ms: Millis,
}

impl ComputingElement {
    /// Descriptor this CE presents when polling for work.
    pub fn descriptor(&self) -> Descriptor {
        let mut d = Descriptor::new();
        d.set("Name", Expr::str(self.name.clone()));
        d.set("Host", Expr::str(self.hostname.clone()));
        d.set("Partitions", Expr::str_list(self.partitions.clone()));
        d.set(
            "CloseSE",
            Expr::str_list(self.close_se.iter().map(|s| s.as_str().to_string())),
        );
        d.set("Packages", Expr::str_list(self.packages.clone()));
        d.set("Site", Expr::str(self.site.clone()));
        if let Some(req) = &self.requirements {
            d.set("Requirements", req.clone());
        }
        d
    }

    pub fn agent_id(&self) -> String {
        format!("{}/{}", self.site, self.name)
    }

    pub fn parse_requirements(text: &str) -> Result<Expr, ParseError> {
        parse_expression(text)
    }
}

/// What a finished (simulated) job run produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub produced_files: Vec<String>,
    pub output: Vec<u8>,
}

/// Live view of a running job, available from QUEUED until the job
/// reaches a terminal state.
#[derive(Debug, Clone)]
pub struct ProcessMonitor {
    pub job_id: crate::store::TaskId,
    pub ce_name: String,
    pub started_at: Millis,
    pub duration_ms: Millis,
    output: Vec<u8>,
}

impl ProcessMonitor {
    pub fn new(
        job_id: crate::store::TaskId,
        ce_name: String,
        started_at: Millis,
        duration_ms: Millis,
        output: Vec<u8>,
    ) -> ProcessMonitor {
        ProcessMonitor {
            job_id,
            ce_name,
            started_at,
            duration_ms,
            output,
        }
    }

    /// Output bytes visible at `now`: proportional to run progress, the
    /// full output once the run time has elapsed.
    pub fn partial_output(&self, now: Millis) -> &[u8] {
        if self.duration_ms == 0 {
            return &self.output;
        }
        let elapsed = now.saturating_sub(self.started_at).min(self.duration_ms);
        let visible = (self.output.len() as u128 * elapsed as u128 / self.duration_ms as u128) as usize;
        &self.output[..visible.min(self.output.len())]
    }
}

/// Validation hook; implementations may be registered per executable.
pub trait Validator: Send + Sync {
    fn validate(&self, spec: &JobSpec, outcome: &RunOutcome) -> bool;
}

/// Default validation: clean exit and every declared output pattern
/// matched at least one produced file.
pub struct DefaultValidator;

impl Validator for DefaultValidator {
    fn validate(&self, spec: &JobSpec, outcome: &RunOutcome) -> bool {
        if outcome.exit_code != 0 {
            return false;
        }
        spec.output_data.iter().all(|pattern| {
            outcome
                .produced_files
                .iter()
                .any(|f| glob_match(pattern, f))
        })
    }
}

/// Executable-keyed validator registry with the default as fallback.
pub struct ValidatorRegistry {
    by_executable: BTreeMap<String, Box<dyn Validator>>,
    default: Box<dyn Validator>,
}

impl Default for ValidatorRegistry {
    fn default() -> Self {
        ValidatorRegistry {
            by_executable: BTreeMap::new(),
            default: Box::new(DefaultValidator),
        }
    }
}

impl ValidatorRegistry {
    pub fn new() -> ValidatorRegistry {
        ValidatorRegistry::default()
    }

    pub fn register(&mut self, executable: &str, validator: Box<dyn Validator>) {
        self.by_executable.insert(executable.to_string(), validator);
    }

    pub fn validate(&self, spec: &JobSpec, outcome: &RunOutcome) -> bool {
        self.by_executable
            .get(&spec.executable)
            .unwrap_or(&self.default)
            .validate(spec, outcome)
    }
}

/// `*`-only glob: `*` matches any (possibly empty) substring.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    fn inner(p: &[char], n: &[char]) -> bool {
        match p.first() {
            None => n.is_empty(),
            Some('*') => (0..=n.len()).any(|k| inner(&p[1..], &n[k..])),
            Some(&c) => n.first() == Some(&c) && inner(&p[1..], &n[1..]),
        }
    }
    inner(&p, &n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::symmetric_match;
    use crate::store::{id_allocator, TaskKind};
    use crate::trace::TraceLog;

    fn setup() -> (TaskStore, Catalogue) {
        let store = TaskStore::new(TaskKind::Job, id_allocator(), TraceLog::new());
        let catalogue = Catalogue::new();
        for se in ["SiteA::SE1", "SiteB::SE1", "SiteC::SE1"] {
            catalogue.register_se(se, 1_000_000).unwrap();
        }
        (store, catalogue)
    }

    fn se(name: &str) -> SeName {
        SeName::parse(name).unwrap()
    }

    fn bare_ce(site: &str, close: &[&str], packages: &[&str]) -> ComputingElement {
        ComputingElement {
            name: "CE1".into(),
            hostname: "ce1.example".into(),
            partitions: vec![],
            close_se: close.iter().map(|s| se(s)).collect(),
            packages: packages.iter().map(|s| s.to_string()).collect(),
            site: site.into(),
            requirements: None,
            queue: QueueConfig::default(),
            poll_interval_ms: 5000,
        }
    }

    #[test]
    fn executable_only_spec_matches_any_ce() {
        let (store, catalogue) = setup();
        let spec = JobSpec::from_text("Executable = \"sim.sh\";").unwrap();
        let task = submit_job(&store, &catalogue, &spec, 0).unwrap();
        assert_eq!(task.priority, DEFAULT_JOB_PRIORITY);
        let ce = bare_ce("SiteA", &["SiteA::SE1"], &[]);
        assert!(symmetric_match(&task.descriptor, &ce.descriptor()));
    }

    #[test]
    fn missing_executable_is_an_error() {
        assert!(matches!(
            JobSpec::from_text("Arguments = [\"x\"];"),
            Err(JobError::MissingExecutable)
        ));
    }

    #[test]
    fn input_data_pins_to_close_se() {
        let (store, catalogue) = setup();
        catalogue
            .register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let spec = JobSpec::from_text("Executable = \"sim.sh\"; InputData = [\"/a/f\"];").unwrap();
        let task = submit_job(&store, &catalogue, &spec, 0).unwrap();

        let near = bare_ce("SiteA", &["SiteA::SE1"], &[]);
        let far = bare_ce("SiteB", &["SiteB::SE1"], &[]);
        assert!(symmetric_match(&task.descriptor, &near.descriptor()));
        assert!(!symmetric_match(&task.descriptor, &far.descriptor()));
    }

    #[test]
    fn unknown_input_lfn_is_an_error() {
        let (store, catalogue) = setup();
        let spec = JobSpec::from_text("Executable = \"x\"; InputData = [\"/missing\"];").unwrap();
        assert!(matches!(
            submit_job(&store, &catalogue, &spec, 0),
            Err(JobError::Catalogue(CatalogueError::UnknownLfn(_)))
        ));
    }

    #[test]
    fn single_replica_requirement_shape() {
        let (_, catalogue) = setup();
        catalogue
            .register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        let req = derive_input_requirements(&["/a/f".into()], &catalogue).unwrap();
        assert_eq!(
            req,
            Expr::member(Expr::other("CloseSE"), Expr::str("SiteA::SE1"))
        );
    }

    // Oracle: brute-force intersection of the CE's CloseSE set with each
    // input file's replica-SE set; the derived expression must agree on
    // every CE in a small enumerated population.
    #[test]
    fn multi_replica_requirement_matches_brute_force() {
        let (_, catalogue) = setup();
        catalogue
            .register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        catalogue
            .add_replica("/a/f", "pB", &se("SiteB::SE1"), crate::catalogue::ReplicationKind::Mirror, 1)
            .unwrap();
        catalogue
            .register_file("/a/g", "pC", &se("SiteC::SE1"), 10, 2)
            .unwrap();

        let inputs = vec!["/a/f".to_string(), "/a/g".to_string()];
        let req = build_job_requirements(None, &inputs, &[], &catalogue).unwrap();
        let mut task = Descriptor::new();
        task.set("Requirements", req);

        let all_ses = ["SiteA::SE1", "SiteB::SE1", "SiteC::SE1"];
        // every subset of SEs as a CloseSE list
        for mask in 0..(1u32 << all_ses.len()) {
            let close: Vec<&str> = all_ses
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| *s)
                .collect();
            let expected = inputs.iter().all(|lfn| {
                let replica_ses = catalogue.entry(lfn).unwrap().replica_ses();
                close
                    .iter()
                    .any(|c| replica_ses.iter().any(|r| r.as_str() == *c))
            });
            let mut ce = Descriptor::new();
            ce.set("CloseSE", Expr::str_list(close.iter().map(|s| s.to_string())));
            assert_eq!(
                symmetric_match(&task, &ce),
                expected,
                "CloseSE mask {mask:b}"
            );
        }
    }

    #[test]
    fn empty_input_list_requires_nothing() {
        let (_, catalogue) = setup();
        let req = derive_input_requirements(&[], &catalogue).unwrap();
        assert_eq!(req, Expr::Bool(true));
    }

    #[test]
    fn packages_become_membership_terms() {
        let (store, catalogue) = setup();
        let spec =
            JobSpec::from_text("Executable = \"x\"; Packages = [\"Root\", \"Geant\"];").unwrap();
        let task = submit_job(&store, &catalogue, &spec, 0).unwrap();
        let with_both = bare_ce("SiteA", &["SiteA::SE1"], &["Root", "Geant", "Extra"]);
        let with_one = bare_ce("SiteA", &["SiteA::SE1"], &["Root"]);
        assert!(symmetric_match(&task.descriptor, &with_both.descriptor()));
        assert!(!symmetric_match(&task.descriptor, &with_one.descriptor()));
    }

    #[test]
    fn user_requirements_are_conjoined() {
        let (store, catalogue) = setup();
        let spec = JobSpec::from_text(
            "Executable = \"x\"; Requirements = other.Site == \"SiteA\";",
        )
        .unwrap();
        let task = submit_job(&store, &catalogue, &spec, 0).unwrap();
        let a = bare_ce("SiteA", &["SiteA::SE1"], &[]);
        let b = bare_ce("SiteB", &["SiteB::SE1"], &[]);
        assert!(symmetric_match(&task.descriptor, &a.descriptor()));
        assert!(!symmetric_match(&task.descriptor, &b.descriptor()));
    }

    #[test]
    fn priority_defaults_to_user_level() {
        let (store, catalogue) = setup();
        let user = JobSpec::from_text("Executable = \"x\";").unwrap();
        let production = JobSpec::from_text("Executable = \"x\"; Priority = 0;").unwrap();
        assert_eq!(submit_job(&store, &catalogue, &user, 0).unwrap().priority, 100);
        assert_eq!(
            submit_job(&store, &catalogue, &production, 0).unwrap().priority,
            0
        );
    }

    #[test]
    fn default_validator_checks_exit_and_outputs() {
        let spec = JobSpec {
            executable: "x".into(),
            output_data: vec!["*.root".into()],
            ..JobSpec::default()
        };
        let validators = ValidatorRegistry::new();
        let good = RunOutcome {
            exit_code: 0,
            produced_files: vec!["histo.root".into()],
            output: vec![],
        };
        let missing = RunOutcome {
            exit_code: 0,
            produced_files: vec!["histo.log".into()],
            output: vec![],
        };
        let bad_exit = RunOutcome {
            exit_code: 1,
            produced_files: vec!["histo.root".into()],
            output: vec![],
        };
        assert!(validators.validate(&spec, &good));
        assert!(!validators.validate(&spec, &missing));
        assert!(!validators.validate(&spec, &bad_exit));
    }

    #[test]
    fn command_specific_validators_take_precedence() {
        struct AlwaysFail;
        impl Validator for AlwaysFail {
            fn validate(&self, _: &JobSpec, _: &RunOutcome) -> bool {
                false
            }
        }
        let mut validators = ValidatorRegistry::new();
        validators.register("picky", Box::new(AlwaysFail));
        let spec = JobSpec {
            executable: "picky".into(),
            ..JobSpec::default()
        };
        let clean = RunOutcome::default();
        assert!(!validators.validate(&spec, &clean));
    }

    #[test]
    fn glob_matching() {
        assert!(glob_match("*.root", "a.root"));
        assert!(glob_match("out*", "out"));
        assert!(glob_match("*", ""));
        assert!(glob_match("a*b*c", "aXbYc"));
        assert!(!glob_match("*.root", "a.log"));
        assert!(!glob_match("ab", "abc"));
    }

    #[test]
    fn partial_output_is_progress_proportional() {
        let pm = ProcessMonitor::new(crate::store::TaskId(1), "CE1".into(), 100, 10, b"0123456789".to_vec());
        assert_eq!(pm.partial_output(100), b"");
        assert_eq!(pm.partial_output(105), b"01234");
        assert_eq!(pm.partial_output(110), b"0123456789");
        assert_eq!(pm.partial_output(200), b"0123456789");
    }

    #[test]
    fn extra_attributes_survive_submission() {
        let (store, catalogue) = setup();
        let spec =
            JobSpec::from_text("Executable = \"x\"; SimDurationMs = 250;").unwrap();
        let task = submit_job(&store, &catalogue, &spec, 0).unwrap();
        assert_eq!(task.descriptor.get_int("SimDurationMs"), Some(250));
    }
}
