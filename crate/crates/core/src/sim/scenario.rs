//! Scenario files: the declarative description of a simulated grid —
//! sites with their SEs, CEs and FTDs, pre-registered files, a timed
//! workload, and timed fault injections. TOML on disk.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalogue::SeName;
use crate::descriptor::parse_expression;
use crate::jobs::JobSpec;
use crate::store::TaskKind;
use crate::transfers::TransferRequest;
use crate::Millis;

fn default_horizon() -> Millis {
    3_600_000
}

fn default_retry_hint() -> Millis {
    crate::broker::DEFAULT_RETRY_HINT_MS
}

fn default_optimizer_interval() -> Millis {
    60_000
}

fn default_mss_clean_ms() -> Millis {
    10
}

fn default_slots() -> usize {
    1
}

fn default_queue_depth() -> usize {
    1
}

fn default_start_latency() -> Millis {
    100
}

fn default_submit_latency() -> Millis {
    10
}

fn default_poll_interval() -> Millis {
    5_000
}

fn default_bandwidth() -> u64 {
    1_000
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_ms: Millis,
    #[serde(default = "default_retry_hint")]
    pub retry_hint_ms: Millis,
    #[serde(default = "default_optimizer_interval")]
    pub optimizer_interval_ms: Millis,
    /// Scratch-delete time at MSS-backed sources.
    #[serde(default = "default_mss_clean_ms")]
    pub mss_clean_ms: Millis,
    /// Free-form workload label carried into the metrics block.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub sites: Vec<SiteConfig>,
    #[serde(default)]
    pub files: Vec<FileSeed>,
    #[serde(default)]
    pub workload: Vec<WorkloadEntry>,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SiteConfig {
    pub name: String,
    #[serde(default)]
    pub ses: Vec<SeConfig>,
    #[serde(default)]
    pub ces: Vec<CeConfig>,
    #[serde(default)]
    pub ftds: Vec<FtdConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeConfig {
    /// Short name; the full SE name is `Site::Name`.
    pub name: String,
    pub capacity_bytes: u64,
    /// Mass-storage backed: sources here must stage into scratch first.
    #[serde(default)]
    pub mss: bool,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bytes_per_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CeConfig {
    pub name: String,
    /// Full SE names; must belong to the same site.
    #[serde(default)]
    pub close_se: Vec<String>,
    #[serde(default)]
    pub packages: Vec<String>,
    #[serde(default)]
    pub partitions: Vec<String>,
    /// Optional requirement expression text the CE adds to its descriptor.
    #[serde(default)]
    pub requirements: Option<String>,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_queue_depth")]
    pub queue_depth: usize,
    #[serde(default = "default_start_latency")]
    pub start_latency_ms: Millis,
    #[serde(default = "default_submit_latency")]
    pub submit_latency_ms: Millis,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: Millis,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FtdConfig {
    pub name: String,
    /// Full SE name; must belong to the same site.
    pub close_se: String,
    pub cache_bytes: u64,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: Millis,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileSeed {
    pub lfn: String,
    /// Full SE name of the master copy.
    pub se: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorkloadEntry {
    pub at_ms: Millis,
    /// "job" or "transfer".
    pub kind: String,
    /// Ingestion descriptor text. Jobs understand the simulation hints
    /// SimDurationMs, SimExitCode, SimOutput, SimProducedFiles and
    /// SimProbeMs as extra attributes.
    pub spec: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FaultEntry {
    pub at_ms: Millis,
    /// broker-pause | broker-resume | agent-crash | ce-stop | ce-start |
    /// transport-failure | stage-failure | clean-failure | assign-reject
    pub kind: String,
    /// broker faults: "job", "transfer" or "all"; agent faults:
    /// "Site/Name" (ce-stop/start also accept a bare site name).
    #[serde(default)]
    pub target: Option<String>,
    /// Task id for task-targeted faults. Task ids are assigned in
    /// submission order: 1, 2, ... following the workload sorted by
    /// (at_ms, position).
    #[serde(default)]
    pub task: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every `Site::Name` declared by the scenario.
    pub fn full_se_names(&self) -> BTreeSet<String> {
        self.sites
            .iter()
            .flat_map(|site| {
                site.ses
                    .iter()
                    .map(move |se| format!("{}::{}", site.name, se.name))
            })
            .collect()
    }

    /// Reject dangling references before anything runs.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon_ms == 0 {
            return Err(invalid("horizon_ms must be positive"));
        }
        let mut site_names = BTreeSet::new();
        for site in &self.sites {
            if !site_names.insert(site.name.clone()) {
                return Err(invalid(format!("duplicate site `{}`", site.name)));
            }
            if site.name.contains("::") || site.name.contains('/') {
                return Err(invalid(format!("site name `{}` contains reserved characters", site.name)));
            }
            if site.ces.is_empty() && site.ftds.is_empty() {
                return Err(invalid(format!(
                    "site `{}` has neither CEs nor FTDs",
                    site.name
                )));
            }
            let mut ses = BTreeSet::new();
            for se in &site.ses {
                if !ses.insert(se.name.clone()) {
                    return Err(invalid(format!(
                        "site `{}`: duplicate SE `{}`",
                        site.name, se.name
                    )));
                }
            }
            let full: BTreeSet<String> = site
                .ses
                .iter()
                .map(|se| format!("{}::{}", site.name, se.name))
                .collect();
            let mut resources = BTreeSet::new();
            for ce in &site.ces {
                if !resources.insert(ce.name.clone()) {
                    return Err(invalid(format!(
                        "site `{}`: duplicate resource `{}`",
                        site.name, ce.name
                    )));
                }
                for close in &ce.close_se {
                    if !full.contains(close) {
                        return Err(invalid(format!(
                            "CE `{}/{}`: close SE `{close}` is not an SE of its site",
                            site.name, ce.name
                        )));
                    }
                }
                if ce.slots == 0 {
                    return Err(invalid(format!("CE `{}/{}`: slots must be positive", site.name, ce.name)));
                }
                if let Some(req) = &ce.requirements {
                    parse_expression(req).map_err(|e| {
                        invalid(format!("CE `{}/{}` requirements: {e}", site.name, ce.name))
                    })?;
                }
            }
            for ftd in &site.ftds {
                if !resources.insert(ftd.name.clone()) {
                    return Err(invalid(format!(
                        "site `{}`: duplicate resource `{}`",
                        site.name, ftd.name
                    )));
                }
                if !full.contains(&ftd.close_se) {
                    return Err(invalid(format!(
                        "FTD `{}/{}`: close SE `{}` is not an SE of its site",
                        site.name, ftd.name, ftd.close_se
                    )));
                }
            }
        }

        let all_ses = self.full_se_names();
        let mut lfns = BTreeSet::new();
        for file in &self.files {
            if !lfns.insert(file.lfn.clone()) {
                return Err(invalid(format!("duplicate file `{}`", file.lfn)));
            }
            if !all_ses.contains(&file.se) {
                return Err(invalid(format!(
                    "file `{}` references undefined SE `{}`",
                    file.lfn, file.se
                )));
            }
            SeName::parse(&file.se).map_err(|e| invalid(e.to_string()))?;
        }

        for (i, entry) in self.workload.iter().enumerate() {
            let kind: TaskKind = entry
                .kind
                .parse()
                .map_err(|e: String| invalid(format!("workload[{i}]: {e}")))?;
            match kind {
                TaskKind::Job => {
                    let spec = JobSpec::from_text(&entry.spec)
                        .map_err(|e| invalid(format!("workload[{i}]: {e}")))?;
                    for lfn in &spec.input_data {
                        if !lfns.contains(lfn) {
                            return Err(invalid(format!(
                                "workload[{i}]: input `{lfn}` is not a declared file"
                            )));
                        }
                    }
                }
                TaskKind::Transfer => {
                    let req = TransferRequest::from_text(&entry.spec)
                        .map_err(|e| invalid(format!("workload[{i}]: {e}")))?;
                    if !lfns.contains(&req.lfn) {
                        return Err(invalid(format!(
                            "workload[{i}]: lfn `{}` is not a declared file",
                            req.lfn
                        )));
                    }
                    if !all_ses.contains(req.destination_se.as_str()) {
                        return Err(invalid(format!(
                            "workload[{i}]: destination SE `{}` is undefined",
                            req.destination_se
                        )));
                    }
                }
            }
        }

        let agent_paths: BTreeSet<String> = self
            .sites
            .iter()
            .flat_map(|site| {
                site.ces
                    .iter()
                    .map(move |ce| format!("{}/{}", site.name, ce.name))
                    .chain(
                        site.ftds
                            .iter()
                            .map(move |f| format!("{}/{}", site.name, f.name)),
                    )
            })
            .collect();
        for (i, fault) in self.faults.iter().enumerate() {
            let need_target = |name: &str| {
                fault
                    .target
                    .clone()
                    .ok_or_else(|| invalid(format!("faults[{i}]: `{name}` needs a target")))
            };
            match fault.kind.as_str() {
                "broker-pause" | "broker-resume" => {
                    let target = need_target(&fault.kind)?;
                    if !matches!(target.as_str(), "job" | "transfer" | "all") {
                        return Err(invalid(format!(
                            "faults[{i}]: broker target must be job, transfer or all"
                        )));
                    }
                }
                "agent-crash" => {
                    let target = need_target("agent-crash")?;
                    if !agent_paths.contains(&target) {
                        return Err(invalid(format!(
                            "faults[{i}]: unknown agent `{target}`"
                        )));
                    }
                }
                "ce-stop" | "ce-start" => {
                    let target = need_target(&fault.kind)?;
                    let known_site = site_names.contains(&target);
                    if !known_site && !agent_paths.contains(&target) {
                        return Err(invalid(format!(
                            "faults[{i}]: unknown CE or site `{target}`"
                        )));
                    }
                }
                "transport-failure" | "stage-failure" | "clean-failure" | "assign-reject" => {
                    if fault.task.is_none() {
                        return Err(invalid(format!(
                            "faults[{i}]: `{}` needs a task id",
                            fault.kind
                        )));
                    }
                }
                other => {
                    return Err(invalid(format!("faults[{i}]: unknown fault kind `{other}`")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1

[[sites]]
name = "SiteA"

[[sites.ses]]
name = "SE1"
capacity_bytes = 1000000

[[sites.ces]]
name = "CE1"
close_se = ["SiteA::SE1"]
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.sites.len(), 1);
        assert_eq!(s.horizon_ms, default_horizon());
        assert_eq!(s.sites[0].ces[0].slots, 1);
    }

    #[test]
    fn dangling_close_se_is_rejected() {
        let bad = MINIMAL.replace("SiteA::SE1", "SiteB::SE9");
        let err = Scenario::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("SiteB::SE9"), "{err}");
    }

    #[test]
    fn workload_references_are_checked() {
        let text = format!(
            "{MINIMAL}\n[[workload]]\nat_ms = 0\nkind = \"job\"\nspec = 'Executable = \"x\"; InputData = [\"/nope\"];'\n"
        );
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("/nope"), "{err}");
    }

    #[test]
    fn fault_targets_are_checked() {
        let text = format!(
            "{MINIMAL}\n[[faults]]\nat_ms = 5\nkind = \"agent-crash\"\ntarget = \"SiteA/CEX\"\n"
        );
        assert!(Scenario::from_toml(&text).is_err());
        let ok = format!(
            "{MINIMAL}\n[[faults]]\nat_ms = 5\nkind = \"agent-crash\"\ntarget = \"SiteA/CE1\"\n"
        );
        assert!(Scenario::from_toml(&ok).is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(s, again);
    }
}
