//! Transfer side of the model: user-facing transfer requests, transfer
//! daemon descriptors, and the transport abstraction behind the
//! three-phase copy (stage to scratch, fetch, clean).
//!
//! A freshly requested transfer carries only the user fields (LFN,
//! destination SE, replication kind, priority). The transfer optimizer
//! fills in size, current source replicas, and the requirement
//! expression before any daemon can pick it up.

use std::str::FromStr;

use crate::catalogue::{Catalogue, CatalogueError, ReplicationKind, SeName};
use crate::descriptor::{BinOp, Descriptor, Expr, ParseError, Value};
use crate::store::{StoreError, Task, TaskStore};
use crate::Millis;

pub const DEFAULT_TRANSPORT: &str = "sim-copy";

/// User-specified transfer request; everything else is optimizer work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRequest {
    pub lfn: String,
    pub destination_se: SeName,
    pub kind: ReplicationKind,
    pub priority: i64,
    pub transport: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error("transfer spec: {0}")]
    Parse(#[from] ParseError),
    #[error("transfer spec lacks attribute `{0}`")]
    MissingAttribute(&'static str),
    #[error("transfer spec attribute `{0}` has the wrong shape")]
    BadAttribute(&'static str),
    #[error(transparent)]
    Catalogue(#[from] CatalogueError),
    #[error("`{se}` already holds a replica of `{lfn}`")]
    AlreadyReplicated { lfn: String, se: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl TransferRequest {
    /// Read a request from ingestion descriptor text (keys LFN,
    /// DestinationSE, Type, Priority, optional Transport).
    pub fn from_text(text: &str) -> Result<TransferRequest, TransferError> {
        let d = Descriptor::parse(text)?;
        TransferRequest::from_descriptor(&d)
    }

    pub fn from_descriptor(d: &Descriptor) -> Result<TransferRequest, TransferError> {
        let lfn = d
            .get_str("LFN")
            .ok_or(TransferError::MissingAttribute("LFN"))?;
        let destination = d
            .get_str("DestinationSE")
            .ok_or(TransferError::MissingAttribute("DestinationSE"))?;
        let destination_se = SeName::parse(&destination)?;
        let kind = d
            .get_str("Type")
            .ok_or(TransferError::MissingAttribute("Type"))?;
        let kind = ReplicationKind::from_str(&kind)?;
        let priority = match d.get("Priority") {
            None => 0,
            Some(_) => d.get_int("Priority").ok_or(TransferError::BadAttribute("Priority"))?,
        };
        let transport = d.get_str("Transport");
        Ok(TransferRequest {
            lfn,
            destination_se,
            kind,
            priority,
            transport,
        })
    }
}

/// Validate a request against the catalogue and insert it WAITING with
/// only the user fields set.
pub fn request_transfer(
    store: &TaskStore,
    catalogue: &Catalogue,
    request: &TransferRequest,
    at: Millis,
) -> Result<Task, TransferError> {
    let entry = catalogue
        .entry(&request.lfn)
        .ok_or_else(|| CatalogueError::UnknownLfn(request.lfn.clone()))?;
    if !catalogue.se_exists(&request.destination_se) {
        return Err(CatalogueError::UnknownSe(request.destination_se.to_string()).into());
    }
    if request.kind != ReplicationKind::Cache && entry.holds_replica_at(&request.destination_se) {
        return Err(TransferError::AlreadyReplicated {
            lfn: request.lfn.clone(),
            se: request.destination_se.to_string(),
        });
    }
    let mut d = Descriptor::new();
    d.set("LFN", Expr::str(request.lfn.clone()));
    d.set("DestinationSE", Expr::str(request.destination_se.as_str()));
    d.set("Type", Expr::str(request.kind.to_string()));
    d.set("Priority", Expr::Int(request.priority));
    d.set(
        "Transport",
        Expr::str(request.transport.clone().unwrap_or_else(|| DEFAULT_TRANSPORT.to_string())),
    );
    Ok(store.insert(d, request.priority, at)?)
}

/// Default requirement the optimizer attaches to a transfer: the daemon
/// must be close to the destination SE and have cache room for the file.
pub fn default_transfer_requirement(destination_se: &SeName, size: u64) -> Expr {
    Expr::binary(
        BinOp::And,
        Expr::member(Expr::other("CloseSE"), Expr::str(destination_se.as_str())),
        Expr::binary(
            BinOp::Ge,
            Expr::other("CacheFree"),
            Expr::Int(size.min(i64::MAX as u64) as i64),
        ),
    )
}

/// Source replicas the optimizer recorded, as `[se, pfn]` pairs.
pub fn sources_expr(sources: &[(SeName, String)]) -> Expr {
    Expr::List(
        sources
            .iter()
            .map(|(se, pfn)| Expr::List(vec![Expr::str(se.as_str()), Expr::str(pfn.clone())]))
            .collect(),
    )
}

pub fn parse_sources(d: &Descriptor) -> Option<Vec<(SeName, String)>> {
    let value = d.get_value("Sources")?;
    let Value::List(items) = value else {
        return None;
    };
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let Value::List(pair) = item else { return None };
        let [Value::Str(se), Value::Str(pfn)] = pair.as_slice() else {
            return None;
        };
        out.push((SeName::parse(se).ok()?, pfn.clone()));
    }
    Some(out)
}

/// A per-site file transfer daemon. Its descriptor advertises the single
/// SE it serves (as a one-element CloseSE list) and its free cache; its
/// own requirement refuses transfers whose size is undeclared or larger
/// than the cache, which also keeps not-yet-optimized transfers from
/// matching anything.
#[derive(Debug, Clone)]
pub struct FileTransferDaemon {
    pub name: String,
    pub close_se: SeName,
    pub cache_bytes: u64,
    pub site: String,
    pub poll_interval_ms: Millis,
}

impl FileTransferDaemon {
    pub fn descriptor(&self, cache_free: u64) -> Descriptor {
        let mut d = Descriptor::new();
        d.set("Name", Expr::str(self.name.clone()));
        d.set("CloseSE", Expr::str_list([self.close_se.as_str().to_string()]));
        d.set("CacheFree", Expr::Int(cache_free.min(i64::MAX as u64) as i64));
        d.set("Site", Expr::str(self.site.clone()));
        d.set(
            "Requirements",
            Expr::binary(BinOp::Le, Expr::other("Size"), Expr::attr("CacheFree")),
        );
        d
    }

    pub fn agent_id(&self) -> String {
        format!("{}/{}", self.site, self.name)
    }
}

/// Transport timing model. Swapping transports never changes status
/// semantics, only the modeled duration.
pub trait Transport: Send + Sync {
    fn name(&self) -> &'static str;
    /// Modeled duration of moving `size` bytes between two SEs with the
    /// given bandwidths (bytes per millisecond).
    fn duration_ms(&self, size: u64, src_bandwidth: u64, dst_bandwidth: u64) -> Millis;
}

/// Byte copy at the bottleneck bandwidth.
pub struct SimCopy;

impl Transport for SimCopy {
    fn name(&self) -> &'static str {
        "sim-copy"
    }

    fn duration_ms(&self, size: u64, src_bandwidth: u64, dst_bandwidth: u64) -> Millis {
        let bw = src_bandwidth.min(dst_bandwidth).max(1);
        size.div_ceil(bw)
    }
}

/// Instant transfer, for tests and loop-back moves.
pub struct Loopback;

impl Transport for Loopback {
    fn name(&self) -> &'static str {
        "loopback"
    }

    fn duration_ms(&self, _size: u64, _src: u64, _dst: u64) -> Millis {
        0
    }
}

pub fn transport_by_name(name: &str) -> Option<Box<dyn Transport>> {
    match name {
        "sim-copy" => Some(Box::new(SimCopy)),
        "loopback" => Some(Box::new(Loopback)),
        _ => None,
    }
}
