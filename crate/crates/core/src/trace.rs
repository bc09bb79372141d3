//! Shared append-only trace: the per-task status journal plus auxiliary
//! records (task inserts, assignments, rewrites, faults, transfer
//! checksums, metrics).
//!
//! Journal lines are `ts <tab> task_id <tab> old_status <tab> new_status`
//! with `-` as the old status of the initial WAITING entry. Optimizer
//! passes append `ts <tab> kind <tab> examined <tab> rewritten <tab>
//! tagged <tab> suggested`. Auxiliary records start with `!`, comments
//! and the metrics block with `#`. Line order is the linearization order
//! of the run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::Millis;

#[derive(Default)]
struct Inner {
    lines: Vec<String>,
    file: Option<BufWriter<File>>,
}

/// Thread-safe trace collector. Cheap to clone via `Arc`.
#[derive(Clone, Default)]
pub struct TraceLog {
    inner: Arc<Mutex<Inner>>,
}

impl TraceLog {
    pub fn new() -> TraceLog {
        TraceLog::default()
    }

    /// Also mirror every line to a file, flushed on drop or `flush`.
    pub fn with_file(path: &Path) -> std::io::Result<TraceLog> {
        let file = BufWriter::new(File::create(path)?);
        Ok(TraceLog {
            inner: Arc::new(Mutex::new(Inner {
                lines: Vec::new(),
                file: Some(file),
            })),
        })
    }

    pub fn push(&self, line: String) {
        let mut inner = self.inner.lock();
        if let Some(file) = inner.file.as_mut() {
            let _ = writeln!(file, "{line}");
        }
        inner.lines.push(line);
    }

    pub fn comment(&self, text: &str) {
        self.push(format!("# {text}"));
    }

    pub fn journal(&self, ts: Millis, task: u64, old: &str, new: &str) {
        self.push(format!("{ts}\t{task}\t{old}\t{new}"));
    }

    pub fn optimizer(
        &self,
        ts: Millis,
        kind: &str,
        examined: usize,
        rewritten: usize,
        tagged: usize,
        suggested: usize,
    ) {
        self.push(format!(
            "{ts}\t{kind}\t{examined}\t{rewritten}\t{tagged}\t{suggested}"
        ));
    }

    pub fn task(&self, ts: Millis, task: u64, kind: &str, priority: i64, descriptor: &str) {
        self.push(format!("!task\t{ts}\t{task}\t{kind}\t{priority}\t{descriptor}"));
    }

    pub fn rewrite(&self, ts: Millis, task: u64, affinity: Option<&str>, descriptor: &str) {
        self.push(format!(
            "!rewrite\t{ts}\t{task}\t{}\t{descriptor}",
            affinity.unwrap_or("-")
        ));
    }

    pub fn assign(
        &self,
        ts: Millis,
        task: u64,
        resource_id: &str,
        resource_site: &str,
        resource_descriptor: &str,
    ) {
        self.push(format!(
            "!assign\t{ts}\t{task}\t{resource_id}\t{resource_site}\t{resource_descriptor}"
        ));
    }

    pub fn fault(&self, ts: Millis, kind: &str, target: &str) {
        self.push(format!("!fault\t{ts}\t{kind}\t{target}"));
    }

    pub fn transfer_checksums(&self, ts: Millis, task: u64, src_sha: &str, dst_sha: &str) {
        self.push(format!("!xfer\t{ts}\t{task}\t{src_sha}\t{dst_sha}"));
    }

    pub fn scratch_leftover(&self, ftd: &str, pfn: &str) {
        self.push(format!("!scratch\t{ftd}\t{pfn}"));
    }

    pub fn metric(&self, key: &str, value: &str) {
        self.push(format!("!metric\t{key}\t{value}"));
    }

    pub fn suggestion(&self, ts: Millis, task: u64, lfn: &str, candidates: &str) {
        self.push(format!("!suggest\t{ts}\t{task}\t{lfn}\t{candidates}"));
    }

    pub fn lines(&self) -> Vec<String> {
        self.inner.lock().lines.clone()
    }

    pub fn text(&self) -> String {
        let inner = self.inner.lock();
        let mut out = inner.lines.join("\n");
        out.push('\n');
        out
    }

    pub fn flush(&self) {
        if let Some(file) = self.inner.lock().file.as_mut() {
            let _ = file.flush();
        }
    }
}
