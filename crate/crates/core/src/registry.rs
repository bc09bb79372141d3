//! Registry of sites and the resources they run. One cluster-monitor
//! style proxy per site fronts its computing elements: all broker calls
//! from a site funnel through it, and it can start or stop CEs on signal.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::catalogue::{Catalogue, SeName};
use crate::jobs::ComputingElement;
use crate::transfers::FileTransferDaemon;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("site `{0}` is not registered")]
    UnknownSite(String),
    #[error("site `{0}` is already registered")]
    DuplicateSite(String),
    #[error("CE `{0}` is not registered at site `{1}`")]
    UnknownCe(String, String),
    #[error("resource `{0}` already exists at site `{1}`")]
    DuplicateResource(String, String),
    #[error("close SE `{se}` of `{resource}` is not a registered SE of site `{site}`")]
    CloseSeNotLocal {
        resource: String,
        se: String,
        site: String,
    },
}

#[derive(Debug, Clone)]
pub struct CeEntry {
    pub config: ComputingElement,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct FtdEntry {
    pub config: FileTransferDaemon,
}

#[derive(Debug, Clone, Default)]
pub struct Site {
    pub name: String,
    pub ces: BTreeMap<String, CeEntry>,
    pub ftds: BTreeMap<String, FtdEntry>,
    pub ses: Vec<SeName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalAction {
    Start,
    Stop,
}

#[derive(Default)]
struct Inner {
    sites: BTreeMap<String, Site>,
}

#[derive(Clone, Default)]
pub struct SiteRegistry {
    inner: Arc<RwLock<Inner>>,
}

impl SiteRegistry {
    pub fn new() -> SiteRegistry {
        SiteRegistry::default()
    }

    pub fn add_site(&self, name: &str) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        if inner.sites.contains_key(name) {
            return Err(RegistryError::DuplicateSite(name.to_string()));
        }
        inner.sites.insert(
            name.to_string(),
            Site {
                name: name.to_string(),
                ..Site::default()
            },
        );
        Ok(())
    }

    pub fn add_se(&self, site: &str, se: SeName) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        let entry = inner
            .sites
            .get_mut(site)
            .ok_or_else(|| RegistryError::UnknownSite(site.to_string()))?;
        entry.ses.push(se);
        Ok(())
    }

    /// Register a CE, checking that all of its close SEs are registered
    /// SEs of its own site.
    pub fn add_ce(&self, ce: ComputingElement) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        let site = inner
            .sites
            .get_mut(&ce.site)
            .ok_or_else(|| RegistryError::UnknownSite(ce.site.clone()))?;
        for se in &ce.close_se {
            if !site.ses.contains(se) {
                return Err(RegistryError::CloseSeNotLocal {
                    resource: ce.name.clone(),
                    se: se.to_string(),
                    site: ce.site.clone(),
                });
            }
        }
        if site.ces.contains_key(&ce.name) {
            return Err(RegistryError::DuplicateResource(ce.name, site.name.clone()));
        }
        site.ces.insert(
            ce.name.clone(),
            CeEntry {
                config: ce,
                stopped: false,
            },
        );
        Ok(())
    }

    pub fn add_ftd(&self, ftd: FileTransferDaemon) -> Result<(), RegistryError> {
        let mut inner = self.inner.write();
        let site = inner
            .sites
            .get_mut(&ftd.site)
            .ok_or_else(|| RegistryError::UnknownSite(ftd.site.clone()))?;
        if !site.ses.contains(&ftd.close_se) {
            return Err(RegistryError::CloseSeNotLocal {
                resource: ftd.name.clone(),
                se: ftd.close_se.to_string(),
                site: ftd.site.clone(),
            });
        }
        if site.ftds.contains_key(&ftd.name) {
            return Err(RegistryError::DuplicateResource(ftd.name, site.name.clone()));
        }
        site.ftds.insert(ftd.name.clone(), FtdEntry { config: ftd });
        Ok(())
    }

    pub fn site(&self, name: &str) -> Option<Site> {
        self.inner.read().sites.get(name).cloned()
    }

    pub fn sites(&self) -> Vec<Site> {
        self.inner.read().sites.values().cloned().collect()
    }

    pub fn site_exists(&self, name: &str) -> bool {
        self.inner.read().sites.contains_key(name)
    }

    pub fn ces(&self) -> Vec<ComputingElement> {
        self.inner
            .read()
            .sites
            .values()
            .flat_map(|s| s.ces.values().map(|e| e.config.clone()))
            .collect()
    }

    pub fn ce_stopped(&self, site: &str, ce: &str) -> bool {
        self.inner
            .read()
            .sites
            .get(site)
            .and_then(|s| s.ces.get(ce))
            .map(|e| e.stopped)
            .unwrap_or(false)
    }

    /// Cluster-monitor signal: start or stop one CE (or all CEs of the
    /// site when `ce` is None). Returns the affected CE names.
    pub fn signal(
        &self,
        site: &str,
        ce: Option<&str>,
        action: SignalAction,
    ) -> Result<Vec<String>, RegistryError> {
        let mut inner = self.inner.write();
        let entry = inner
            .sites
            .get_mut(site)
            .ok_or_else(|| RegistryError::UnknownSite(site.to_string()))?;
        let stopped = action == SignalAction::Stop;
        match ce {
            Some(name) => {
                let ce = entry
                    .ces
                    .get_mut(name)
                    .ok_or_else(|| RegistryError::UnknownCe(name.to_string(), site.to_string()))?;
                ce.stopped = stopped;
                Ok(vec![name.to_string()])
            }
            None => {
                let mut affected = Vec::new();
                for (name, ce) in entry.ces.iter_mut() {
                    ce.stopped = stopped;
                    affected.push(name.clone());
                }
                Ok(affected)
            }
        }
    }

    /// All SEs that appear in some CE's close list — the candidate
    /// destinations for replication suggestions.
    pub fn ses_close_to_ces(&self) -> Vec<SeName> {
        let mut out = Vec::new();
        for site in self.inner.read().sites.values() {
            for ce in site.ces.values() {
                for se in &ce.config.close_se {
                    if !out.contains(se) {
                        out.push(se.clone());
                    }
                }
            }
        }
        out
    }

    /// Convenience used by configuration loaders: register a site's SEs
    /// into both the registry and the catalogue.
    pub fn register_se_everywhere(
        &self,
        catalogue: &Catalogue,
        site: &str,
        se_name: &str,
        capacity: u64,
    ) -> Result<SeName, crate::catalogue::CatalogueError> {
        let name = catalogue.register_se(se_name, capacity)?;
        self.add_se(site, name.clone())
            .map_err(|e| crate::catalogue::CatalogueError::UnknownSe(e.to_string()))?;
        Ok(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobs::QueueConfig;

    fn ce(name: &str, site: &str, close: &[&str]) -> ComputingElement {
        ComputingElement {
            name: name.to_string(),
            hostname: format!("{name}.example"),
            partitions: vec![],
            close_se: close.iter().map(|s| SeName::parse(s).unwrap()).collect(),
            packages: vec![],
            site: site.to_string(),
            requirements: None,
            queue: QueueConfig::default(),
            poll_interval_ms: 5000,
        }
    }

    #[test]
    fn close_se_must_be_local() {
        let reg = SiteRegistry::new();
        reg.add_site("SiteA").unwrap();
        reg.add_se("SiteA", SeName::parse("SiteA::SE1").unwrap()).unwrap();
        assert!(reg.add_ce(ce("CE1", "SiteA", &["SiteA::SE1"])).is_ok());
        let err = reg.add_ce(ce("CE2", "SiteA", &["SiteB::SE1"])).unwrap_err();
        assert!(matches!(err, RegistryError::CloseSeNotLocal { .. }));
    }

    #[test]
    fn signal_stops_and_starts() {
        let reg = SiteRegistry::new();
        reg.add_site("SiteA").unwrap();
        reg.add_se("SiteA", SeName::parse("SiteA::SE1").unwrap()).unwrap();
        reg.add_ce(ce("CE1", "SiteA", &["SiteA::SE1"])).unwrap();
        reg.add_ce(ce("CE2", "SiteA", &["SiteA::SE1"])).unwrap();

        let affected = reg.signal("SiteA", None, SignalAction::Stop).unwrap();
        assert_eq!(affected.len(), 2);
        assert!(reg.ce_stopped("SiteA", "CE1"));

        reg.signal("SiteA", Some("CE1"), SignalAction::Start).unwrap();
        assert!(!reg.ce_stopped("SiteA", "CE1"));
        assert!(reg.ce_stopped("SiteA", "CE2"));

        assert!(reg.signal("SiteA", Some("CEX"), SignalAction::Stop).is_err());
        assert!(reg.signal("SiteX", None, SignalAction::Stop).is_err());
    }
}
