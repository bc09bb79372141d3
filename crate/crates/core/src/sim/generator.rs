//! Seeded scenario generator for campaign-scale runs. Durations and
//! sizes are drawn from uniform ranges; generated scenarios are labeled
//! synthetic so reports say so.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    CeConfig, FaultEntry, FileSeed, FtdConfig, Scenario, SeConfig, SiteConfig, WorkloadEntry,
};
use crate::Millis;

#[derive(Debug, Clone)]
pub struct GenParams {
    pub seed: u64,
    pub sites: usize,
    pub jobs: usize,
    pub transfers: usize,
    /// Fraction of jobs carrying input data.
    pub input_data_fraction: f64,
    /// Fraction of jobs submitted at user priority (100); the rest are
    /// production priority (0).
    pub user_priority_fraction: f64,
    /// Fraction of sites whose SE is MSS-backed.
    pub mss_fraction: f64,
    /// Jobs arrive uniformly over this window.
    pub submit_window_ms: Millis,
    pub min_duration_ms: Millis,
    pub max_duration_ms: Millis,
    pub file_size_range: (u64, u64),
    /// Fraction of transfer tasks hit by an injected transport failure.
    pub transport_fault_fraction: f64,
    pub horizon_ms: Millis,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            seed: 1,
            sites: 2,
            jobs: 10,
            transfers: 0,
            input_data_fraction: 0.3,
            user_priority_fraction: 0.5,
            mss_fraction: 0.25,
            submit_window_ms: 10_000,
            min_duration_ms: 200,
            max_duration_ms: 2_000,
            file_size_range: (1_024, 8_192),
            transport_fault_fraction: 0.0,
            horizon_ms: 24 * 3_600_000,
        }
    }
}

pub fn generate_scenario(params: &GenParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sites = Vec::with_capacity(params.sites);
    let mut all_ses = Vec::new();
    let packages = ["Root", "Geant", "Fluka"];

    for i in 0..params.sites {
        let name = format!("Site{i:02}");
        let se_full = format!("{name}::SE1");
        let mss = rng.gen_bool(params.mss_fraction.clamp(0.0, 1.0));
        let ces = (0..1 + (i % 2))
            .map(|c| CeConfig {
                name: format!("CE{c}"),
                close_se: vec![se_full.clone()],
                packages: packages
                    .iter()
                    .filter(|_| rng.gen_bool(0.7))
                    .map(|s| s.to_string())
                    .collect(),
                partitions: vec!["prod".into()],
                requirements: None,
                slots: rng.gen_range(2..=4),
                queue_depth: 2,
                start_latency_ms: rng.gen_range(10..50),
                submit_latency_ms: rng.gen_range(1..10),
                poll_interval_ms: rng.gen_range(2_000..6_000),
            })
            .collect();
        sites.push(SiteConfig {
            name: name.clone(),
            ses: vec![SeConfig {
                name: "SE1".into(),
                capacity_bytes: 1 << 32,
                mss,
                bandwidth_bytes_per_ms: rng.gen_range(64..1_024),
            }],
            ces,
            ftds: vec![FtdConfig {
                name: "FTD0".into(),
                close_se: se_full.clone(),
                cache_bytes: 1 << 30,
                poll_interval_ms: rng.gen_range(1_000..4_000),
            }],
        });
        all_ses.push(se_full);
    }

    // a pool of input files spread round-robin over the SEs
    let file_count = (params.jobs / 8).clamp(4, 400).max(params.transfers);
    let mut files = Vec::with_capacity(file_count);
    for f in 0..file_count {
        let se = all_ses[f % all_ses.len()].clone();
        files.push(FileSeed {
            lfn: format!("/data/f{f:05}"),
            se,
            size_bytes: rng.gen_range(params.file_size_range.0..=params.file_size_range.1),
        });
    }

    let mut workload = Vec::with_capacity(params.jobs + params.transfers);
    for j in 0..params.jobs {
        let priority = if rng.gen_bool(params.user_priority_fraction.clamp(0.0, 1.0)) {
            100
        } else {
            0
        };
        let duration = rng.gen_range(params.min_duration_ms..=params.max_duration_ms);
        let exit_code = if rng.gen_bool(0.02) { 1 } else { 0 };
        let mut spec = format!(
            "Executable = \"sim.sh\";\nArguments = [\"--job\", \"{j}\"];\nPriority = {priority};\nSimDurationMs = {duration};\nSimExitCode = {exit_code};\n"
        );
        if rng.gen_bool(params.input_data_fraction.clamp(0.0, 1.0)) {
            let file = &files[rng.gen_range(0..files.len())];
            spec.push_str(&format!("InputData = [\"{}\"];\n", file.lfn));
        }
        if rng.gen_bool(0.3) {
            let pkg = packages[rng.gen_range(0..packages.len())];
            spec.push_str(&format!("Packages = [\"{pkg}\"];\n"));
        }
        workload.push(WorkloadEntry {
            at_ms: rng.gen_range(0..params.submit_window_ms.max(1)),
            kind: "job".into(),
            spec,
        });
    }

    // transfers mirror distinct files to a different site's SE
    let mut faults = Vec::new();
    for t in 0..params.transfers {
        let file = &files[t % files.len()];
        let src_site = file.se.split("::").next().unwrap_or_default().to_string();
        let dest = all_ses
            .iter()
            .cycle()
            .skip(t % all_ses.len())
            .find(|se| !se.starts_with(&src_site))
            .cloned()
            .unwrap_or_else(|| all_ses[0].clone());
        let kind = match t % 3 {
            0 => "mirror",
            1 => "cache",
            _ => "masterCopy",
        };
        // mirror/masterCopy of the same file twice to the same SE would
        // be rejected; cycle destinations per file occurrence
        let spec = format!(
            "LFN = \"{}\";\nDestinationSE = \"{dest}\";\nType = \"{kind}\";\nPriority = {};\n",
            file.lfn,
            rng.gen_range(0..10)
        );
        workload.push(WorkloadEntry {
            at_ms: rng.gen_range(0..params.submit_window_ms.max(1)),
            kind: "transfer".into(),
            spec,
        });
    }

    // Task ids follow submission order: stable sort by at_ms.
    let mut order: Vec<usize> = (0..workload.len()).collect();
    order.sort_by_key(|&i| workload[i].at_ms);
    for (rank, &idx) in order.iter().enumerate() {
        if workload[idx].kind == "transfer"
            && rng.gen_bool(params.transport_fault_fraction.clamp(0.0, 1.0))
        {
            faults.push(FaultEntry {
                at_ms: 0,
                kind: "transport-failure".into(),
                target: None,
                task: Some(rank as u64 + 1),
            });
        }
    }

    Scenario {
        seed: params.seed,
        horizon_ms: params.horizon_ms,
        retry_hint_ms: 2_000,
        optimizer_interval_ms: 5_000,
        mss_clean_ms: 10,
        label: Some("synthetic-uniform".into()),
        sites,
        files,
        workload,
        faults,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate_and_are_deterministic() {
        let params = GenParams {
            sites: 35,
            jobs: 50,
            transfers: 10,
            transport_fault_fraction: 0.2,
            ..GenParams::default()
        };
        let a = generate_scenario(&params);
        let b = generate_scenario(&params);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.sites.len(), 35);
        assert_eq!(
            a.workload.iter().filter(|w| w.kind == "job").count(),
            50
        );
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_scenario(&GenParams::default());
        let b = generate_scenario(&GenParams {
            seed: 2,
            ..GenParams::default()
        });
        assert_ne!(a, b);
    }
}
