//! Replica catalogue: logical file names mapped to one master physical
//! copy plus mirror replicas across storage elements.
//!
//! Storage elements are named `Site::Name` so the owning site can always
//! be derived from an SE name. Replication kinds follow the three-way
//! convention: `cache` copies are never catalogued, `mirror` adds a
//! replica, `masterCopy` promotes the new copy and demotes the previous
//! master to a mirror.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::Millis;

/// Storage element name of the form `Site::Name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeName(String);

impl SeName {
    pub fn parse(name: &str) -> Result<SeName, CatalogueError> {
        let (site, short) = name
            .split_once("::")
            .ok_or_else(|| CatalogueError::BadSeName(name.to_string()))?;
        if site.is_empty() || short.is_empty() || short.contains("::") {
            return Err(CatalogueError::BadSeName(name.to_string()));
        }
        Ok(SeName(name.to_string()))
    }

    pub fn site(&self) -> &str {
        self.0.split_once("::").map(|(s, _)| s).unwrap_or("")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SeName {
    type Err = CatalogueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SeName::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageElement {
    pub name: SeName,
    pub capacity: u64,
    pub used: u64,
}

impl StorageElement {
    pub fn free(&self) -> u64 {
        self.capacity.saturating_sub(self.used)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    pub pfn: String,
    pub se: SeName,
    pub registered_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogueEntry {
    pub lfn: String,
    pub size: u64,
    pub master: Replica,
    pub mirrors: Vec<Replica>,
    /// Bumped on every mutation of this entry; used by the optimizers to
    /// skip tasks whose inputs have not changed.
    pub version: u64,
}

impl CatalogueEntry {
    pub fn replicas(&self) -> impl Iterator<Item = &Replica> {
        std::iter::once(&self.master).chain(self.mirrors.iter())
    }

    /// SEs holding this file: master's first, then mirrors in
    /// registration order, duplicates removed.
    pub fn replica_ses(&self) -> Vec<SeName> {
        let mut out = Vec::new();
        for r in self.replicas() {
            if !out.contains(&r.se) {
                out.push(r.se.clone());
            }
        }
        out
    }

    pub fn holds_replica_at(&self, se: &SeName) -> bool {
        self.replicas().any(|r| &r.se == se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicationKind {
    Cache,
    Mirror,
    MasterCopy,
}

impl fmt::Display for ReplicationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplicationKind::Cache => "cache",
            ReplicationKind::Mirror => "mirror",
            ReplicationKind::MasterCopy => "masterCopy",
        })
    }
}

impl FromStr for ReplicationKind {
    type Err = CatalogueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cache" => Ok(ReplicationKind::Cache),
            "mirror" => Ok(ReplicationKind::Mirror),
            "masterCopy" => Ok(ReplicationKind::MasterCopy),
            _ => Err(CatalogueError::BadReplicationKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogueError {
    #[error("lfn `{0}` is already registered")]
    DuplicateLfn(String),
    #[error("lfn `{0}` is not registered")]
    UnknownLfn(String),
    #[error("storage element `{0}` is not registered")]
    UnknownSe(String),
    #[error("storage element `{0}` is already registered")]
    DuplicateSe(String),
    #[error("replica ({se}, {pfn}) already exists for `{lfn}`")]
    DuplicateReplica { lfn: String, se: String, pfn: String },
    #[error("storage element `{se}` lacks capacity for {need} bytes ({free} free)")]
    InsufficientCapacity { se: String, need: u64, free: u64 },
    #[error("`{0}` is not a Site::Name storage element name")]
    BadSeName(String),
    #[error("`{0}` is not a replication kind (cache, mirror or masterCopy)")]
    BadReplicationKind(String),
    #[error("catalogue dump line {0} is malformed: {1}")]
    BadDumpLine(usize, String),
}

#[derive(Default)]
struct Inner {
    ses: BTreeMap<SeName, StorageElement>,
    entries: BTreeMap<String, CatalogueEntry>,
    version: u64,
}

/// The catalogue. Writes are serialized behind one writer lock; reads see
/// consistent snapshots.
#[derive(Clone, Default)]
pub struct Catalogue {
    inner: Arc<RwLock<Inner>>,
}

impl Catalogue {
    pub fn new() -> Catalogue {
        Catalogue::default()
    }

    pub fn register_se(&self, name: &str, capacity: u64) -> Result<SeName, CatalogueError> {
        let name = SeName::parse(name)?;
        let mut inner = self.inner.write();
        if inner.ses.contains_key(&name) {
            return Err(CatalogueError::DuplicateSe(name.to_string()));
        }
        inner.ses.insert(
            name.clone(),
            StorageElement {
                name: name.clone(),
                capacity,
                used: 0,
            },
        );
        Ok(name)
    }

    pub fn se(&self, name: &SeName) -> Option<StorageElement> {
        self.inner.read().ses.get(name).cloned()
    }

    pub fn se_exists(&self, name: &SeName) -> bool {
        self.inner.read().ses.contains_key(name)
    }

    pub fn ses(&self) -> Vec<StorageElement> {
        self.inner.read().ses.values().cloned().collect()
    }

    /// Global mutation counter; bumped by every successful entry change.
    pub fn version(&self) -> u64 {
        self.inner.read().version
    }

    pub fn entry(&self, lfn: &str) -> Option<CatalogueEntry> {
        self.inner.read().entries.get(lfn).cloned()
    }

    pub fn entries(&self) -> Vec<CatalogueEntry> {
        self.inner.read().entries.values().cloned().collect()
    }

    pub fn register_file(
        &self,
        lfn: &str,
        pfn: &str,
        se: &SeName,
        size: u64,
        at: Millis,
    ) -> Result<CatalogueEntry, CatalogueError> {
        let mut inner = self.inner.write();
        if inner.entries.contains_key(lfn) {
            return Err(CatalogueError::DuplicateLfn(lfn.to_string()));
        }
        reserve(&mut inner, se, size)?;
        inner.version += 1;
        let version = inner.version;
        let entry = CatalogueEntry {
            lfn: lfn.to_string(),
            size,
            master: Replica {
                pfn: pfn.to_string(),
                se: se.clone(),
                registered_at: at,
            },
            mirrors: Vec::new(),
            version,
        };
        inner.entries.insert(lfn.to_string(), entry.clone());
        Ok(entry)
    }

    /// Register the outcome of a replication. `cache` leaves the
    /// catalogue untouched; `mirror` appends a replica; `masterCopy`
    /// promotes the new replica and demotes the old master.
    pub fn add_replica(
        &self,
        lfn: &str,
        pfn: &str,
        se: &SeName,
        kind: ReplicationKind,
        at: Millis,
    ) -> Result<CatalogueEntry, CatalogueError> {
        let mut inner = self.inner.write();
        if !inner.ses.contains_key(se) {
            return Err(CatalogueError::UnknownSe(se.to_string()));
        }
        let entry = inner
            .entries
            .get(lfn)
            .ok_or_else(|| CatalogueError::UnknownLfn(lfn.to_string()))?
            .clone();
        if kind == ReplicationKind::Cache {
            return Ok(entry);
        }
        if entry.replicas().any(|r| &r.se == se && r.pfn == pfn) {
            return Err(CatalogueError::DuplicateReplica {
                lfn: lfn.to_string(),
                se: se.to_string(),
                pfn: pfn.to_string(),
            });
        }
        let size = entry.size;
        reserve(&mut inner, se, size)?;
        inner.version += 1;
        let version = inner.version;
        let entry = inner.entries.get_mut(lfn).expect("checked above");
        let replica = Replica {
            pfn: pfn.to_string(),
            se: se.clone(),
            registered_at: at,
        };
        match kind {
            ReplicationKind::Mirror => entry.mirrors.push(replica),
            ReplicationKind::MasterCopy => {
                let old = std::mem::replace(&mut entry.master, replica);
                entry.mirrors.push(old);
            }
            ReplicationKind::Cache => unreachable!(),
        }
        entry.version = version;
        Ok(entry.clone())
    }

    /// Replicas ordered for a reader at `requesting_site`: local replicas
    /// first, master before mirrors within each group, then registration
    /// time, then PFN.
    pub fn lookup(&self, lfn: &str, requesting_site: &str) -> Result<Vec<Replica>, CatalogueError> {
        let inner = self.inner.read();
        let entry = inner
            .entries
            .get(lfn)
            .ok_or_else(|| CatalogueError::UnknownLfn(lfn.to_string()))?;
        let mut out: Vec<(bool, bool, Millis, String, Replica)> = entry
            .replicas()
            .map(|r| {
                (
                    r.se.site() != requesting_site,
                    r != &entry.master,
                    r.registered_at,
                    r.pfn.clone(),
                    r.clone(),
                )
            })
            .collect();
        out.sort_by(|a, b| (&a.0, &a.1, &a.2, &a.3).cmp(&(&b.0, &b.1, &b.2, &b.3)));
        Ok(out.into_iter().map(|t| t.4).collect())
    }

    /// Line-oriented dump: `LFN <tab> SIZE <tab> master=SE,PFN
    /// <tab> mirror=SE,PFN ...`, entries sorted by LFN.
    pub fn dump(&self) -> String {
        let inner = self.inner.read();
        let mut out = String::new();
        for entry in inner.entries.values() {
            out.push_str(&entry.lfn);
            out.push('\t');
            out.push_str(&entry.size.to_string());
            out.push_str(&format!("\tmaster={},{}", entry.master.se, entry.master.pfn));
            for m in &entry.mirrors {
                out.push_str(&format!("\tmirror={},{}", m.se, m.pfn));
            }
            out.push('\n');
        }
        out
    }

    /// Rebuild entries from a dump. Storage elements must already be
    /// registered; replicas are re-timestamped in dump order starting at
    /// `at`.
    pub fn load(&self, text: &str, at: Millis) -> Result<usize, CatalogueError> {
        let mut count = 0;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let bad = |msg: &str| CatalogueError::BadDumpLine(idx + 1, msg.to_string());
            let lfn = fields.next().ok_or_else(|| bad("missing lfn"))?;
            let size: u64 = fields
                .next()
                .ok_or_else(|| bad("missing size"))?
                .parse()
                .map_err(|_| bad("bad size"))?;
            let mut ts = at;
            let mut master_seen = false;
            for field in fields {
                let (role, rest) = field
                    .split_once('=')
                    .ok_or_else(|| bad("missing role="))?;
                let (se, pfn) = rest.split_once(',').ok_or_else(|| bad("missing se,pfn"))?;
                let se = SeName::parse(se)?;
                match role {
                    "master" => {
                        self.register_file(lfn, pfn, &se, size, ts)?;
                        master_seen = true;
                    }
                    "mirror" => {
                        if !master_seen {
                            return Err(bad("mirror before master"));
                        }
                        self.add_replica(lfn, pfn, &se, ReplicationKind::Mirror, ts)?;
                    }
                    other => return Err(bad(&format!("unknown role `{other}`"))),
                }
                ts += 1;
            }
            if !master_seen {
                return Err(bad("no master replica"));
            }
            count += 1;
        }
        Ok(count)
    }

    /// Invariant sweep used by the simulator's continuous assertion mode.
    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.inner.read();
        for entry in inner.entries.values() {
            let mut seen = std::collections::BTreeSet::new();
            for r in entry.replicas() {
                if !inner.ses.contains_key(&r.se) {
                    return Err(format!("{}: replica at unregistered SE {}", entry.lfn, r.se));
                }
                if !seen.insert((r.se.clone(), r.pfn.clone())) {
                    return Err(format!(
                        "{}: duplicate replica ({}, {})",
                        entry.lfn, r.se, r.pfn
                    ));
                }
            }
        }
        for se in inner.ses.values() {
            if se.used > se.capacity {
                return Err(format!("{}: used {} exceeds capacity {}", se.name, se.used, se.capacity));
            }
        }
        Ok(())
    }
}

fn reserve(inner: &mut Inner, se: &SeName, size: u64) -> Result<(), CatalogueError> {
    let element = inner
        .ses
        .get_mut(se)
        .ok_or_else(|| CatalogueError::UnknownSe(se.to_string()))?;
    if element.free() < size {
        return Err(CatalogueError::InsufficientCapacity {
            se: se.to_string(),
            need: size,
            free: element.free(),
        });
    }
    element.used += size;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se(name: &str) -> SeName {
        SeName::parse(name).unwrap()
    }

    fn catalogue_with_ses() -> Catalogue {
        let c = Catalogue::new();
        for name in ["SiteA::SE1", "SiteB::SE1", "SiteC::SE1", "SiteD::SE1"] {
            c.register_se(name, 1_000_000).unwrap();
        }
        c
    }

    #[test]
    fn register_creates_master() {
        let c = catalogue_with_ses();
        let entry = c
            .register_file("/a/f", "srm://s1/f", &se("SiteA::SE1"), 10, 0)
            .unwrap();
        assert_eq!(entry.master.se, se("SiteA::SE1"));
        assert!(entry.mirrors.is_empty());
        assert_eq!(c.se(&se("SiteA::SE1")).unwrap().used, 10);
    }

    #[test]
    fn duplicate_lfn_rejected() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "p1", &se("SiteA::SE1"), 10, 0).unwrap();
        let err = c.register_file("/a/f", "p2", &se("SiteB::SE1"), 10, 1).unwrap_err();
        assert!(matches!(err, CatalogueError::DuplicateLfn(_)));
    }

    #[test]
    fn unknown_se_rejected() {
        let c = catalogue_with_ses();
        let err = c
            .register_file("/a/f", "p1", &se("Nowhere::SE9"), 10, 0)
            .unwrap_err();
        assert!(matches!(err, CatalogueError::UnknownSe(_)));
    }

    #[test]
    fn capacity_enforced() {
        let c = Catalogue::new();
        c.register_se("SiteA::Tiny", 5).unwrap();
        let err = c
            .register_file("/a/f", "p1", &se("SiteA::Tiny"), 10, 0)
            .unwrap_err();
        assert!(matches!(err, CatalogueError::InsufficientCapacity { .. }));
    }

    #[test]
    fn mirror_appends_and_master_unchanged() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        let entry = c
            .add_replica("/a/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 5)
            .unwrap();
        assert_eq!(entry.master.pfn, "pA");
        assert_eq!(entry.mirrors.len(), 1);
        assert_eq!(entry.mirrors[0].se, se("SiteB::SE1"));
    }

    #[test]
    fn master_copy_promotes_and_demotes() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        let entry = c
            .add_replica("/a/f", "pC", &se("SiteC::SE1"), ReplicationKind::MasterCopy, 5)
            .unwrap();
        assert_eq!(entry.master.pfn, "pC");
        assert_eq!(entry.master.se, se("SiteC::SE1"));
        assert_eq!(entry.mirrors.len(), 1);
        assert_eq!(entry.mirrors[0].pfn, "pA");
    }

    #[test]
    fn cache_leaves_catalogue_bit_identical() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        let before = c.dump();
        c.add_replica("/a/f", "pD", &se("SiteD::SE1"), ReplicationKind::Cache, 5)
            .unwrap();
        assert_eq!(c.dump(), before);
    }

    #[test]
    fn duplicate_replica_rejected() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        let err = c
            .add_replica("/a/f", "pA", &se("SiteA::SE1"), ReplicationKind::Mirror, 5)
            .unwrap_err();
        assert!(matches!(err, CatalogueError::DuplicateReplica { .. }));
    }

    #[test]
    fn lookup_prefers_local_replica() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        c.add_replica("/a/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 5)
            .unwrap();
        let from_b = c.lookup("/a/f", "SiteB").unwrap();
        assert_eq!(from_b[0].pfn, "pB");
        assert_eq!(from_b[1].pfn, "pA");
    }

    #[test]
    fn lookup_falls_back_to_master_first() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        c.add_replica("/a/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 5)
            .unwrap();
        let from_elsewhere = c.lookup("/a/f", "SiteZ").unwrap();
        assert_eq!(from_elsewhere[0].pfn, "pA");
    }

    #[test]
    fn lookup_unknown_lfn_errors() {
        let c = catalogue_with_ses();
        assert!(matches!(
            c.lookup("/nope", "SiteA").unwrap_err(),
            CatalogueError::UnknownLfn(_)
        ));
    }

    #[test]
    fn lookup_tie_break_is_registration_time_then_pfn() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        c.add_replica("/a/f", "pB2", &se("SiteB::SE1"), ReplicationKind::Mirror, 7)
            .unwrap();
        c.add_replica("/a/f", "pB1", &se("SiteB::SE1"), ReplicationKind::Mirror, 5)
            .unwrap();
        c.add_replica("/a/f", "pB0", &se("SiteB::SE1"), ReplicationKind::Mirror, 7)
            .unwrap();
        let from_b = c.lookup("/a/f", "SiteB").unwrap();
        let pfns: Vec<_> = from_b.iter().map(|r| r.pfn.as_str()).collect();
        assert_eq!(pfns, ["pB1", "pB0", "pB2", "pA"]);
    }

    #[test]
    fn dump_and_load_round_trip() {
        let c = catalogue_with_ses();
        c.register_file("/a/f", "pA", &se("SiteA::SE1"), 10, 0).unwrap();
        c.add_replica("/a/f", "pB", &se("SiteB::SE1"), ReplicationKind::Mirror, 5)
            .unwrap();
        c.register_file("/a/g", "pG", &se("SiteC::SE1"), 20, 1).unwrap();
        let dump = c.dump();

        let c2 = catalogue_with_ses();
        assert_eq!(c2.load(&dump, 100).unwrap(), 2);
        assert_eq!(c2.dump(), dump);
    }

    #[test]
    fn se_name_site_extraction() {
        assert_eq!(se("CERN::MSS").site(), "CERN");
        assert!(SeName::parse("no-separator").is_err());
        assert!(SeName::parse("::x").is_err());
        assert!(SeName::parse("a::").is_err());
    }
}
