//! Latency accounting, remanence statistics and report rendering.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Sub};

use serde::Serialize;
use thiserror::Error;

use crate::controller::DeletionOutcome;
use crate::device::{CacheId, Tick};

/// Device time in microseconds, split by the Table-1 style columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Charges {
    pub rd: u64,
    pub wr: u64,
    pub gen: u64,
    pub erase: u64,
    /// Page migrations done by garbage collection.
    pub gc: u64,
}

impl Charges {
    pub fn total(&self) -> u64 {
        self.rd + self.wr + self.gen + self.erase + self.gc
    }
}

impl Add for Charges {
    type Output = Charges;

    fn add(self, o: Charges) -> Charges {
        Charges {
            rd: self.rd + o.rd,
            wr: self.wr + o.wr,
            gen: self.gen + o.gen,
            erase: self.erase + o.erase,
            gc: self.gc + o.gc,
        }
    }
}

impl AddAssign for Charges {
    fn add_assign(&mut self, o: Charges) {
        *self = *self + o;
    }
}

impl Sub for Charges {
    type Output = Charges;

    /// Difference of two running totals. Panics if `o` is not an earlier
    /// snapshot of the same accumulator.
    fn sub(self, o: Charges) -> Charges {
        Charges {
            rd: self.rd - o.rd,
            wr: self.wr - o.wr,
            gen: self.gen - o.gen,
            erase: self.erase - o.erase,
            gc: self.gc - o.gc,
        }
    }
}

/// One line of the JSON-lines report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeletionRecord {
    pub tick: Tick,
    pub cache_id: CacheId,
    pub policy: String,
    pub rd_us: u64,
    pub wr_us: u64,
    pub gen_us: u64,
    pub erase_us: u64,
    pub gc_us: u64,
    pub residual_cells: usize,
    pub slot_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemanenceSample {
    pub tick: Tick,
    pub invalidated_cells_total: u64,
    pub residual_cells: u64,
    pub remanence_rate: f64,
}

/// Accumulated device time and per-deletion records for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyLedger {
    deletions: Charges,
    background: Charges,
    records: Vec<DeletionRecord>,
    residual_cells: u64,
    invalidated_cells: u64,
}

impl LatencyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_deletion(&mut self, outcome: &DeletionOutcome) {
        let c = outcome.charges;
        self.deletions += c;
        self.residual_cells += outcome.residual_cells as u64;
        self.invalidated_cells += outcome.slot_cells as u64;
        self.records.push(DeletionRecord {
            tick: outcome.tick,
            cache_id: outcome.cache_id,
            policy: outcome.policy.to_string(),
            rd_us: c.rd,
            wr_us: c.wr,
            gen_us: c.gen,
            erase_us: c.erase,
            gc_us: c.gc,
            residual_cells: outcome.residual_cells,
            slot_cells: outcome.slot_cells,
        });
    }

    /// Device time not attributable to a deletion (flush writes, space
    /// reclamation).
    pub fn record_background(&mut self, charges: Charges) {
        self.background += charges;
    }

    pub fn records(&self) -> &[DeletionRecord] {
        &self.records
    }

    pub fn deletion_count(&self) -> usize {
        self.records.len()
    }

    /// Sum of all deletion charges.
    pub fn deletion_totals(&self) -> Charges {
        self.deletions
    }

    pub fn background_totals(&self) -> Charges {
        self.background
    }

    /// All device time seen by the ledger.
    pub fn device_total(&self) -> Charges {
        self.deletions + self.background
    }

    /// Cumulative residual / invalidated cells, or `None` before any
    /// deletion.
    pub fn remanence_rate(&self) -> Option<f64> {
        (self.invalidated_cells > 0).then(|| self.residual_cells as f64 / self.invalidated_cells as f64)
    }

    /// One sample per tick with at least one deletion; the rate is
    /// cumulative over every slot invalidated up to and including that tick.
    pub fn remanence_curve(&self) -> Vec<RemanenceSample> {
        let mut out: Vec<RemanenceSample> = Vec::new();
        let (mut residual, mut total) = (0u64, 0u64);
        for r in &self.records {
            residual += r.residual_cells as u64;
            total += r.slot_cells as u64;
            let rate = if total == 0 { 0.0 } else { residual as f64 / total as f64 };
            let sample = RemanenceSample {
                tick: r.tick,
                invalidated_cells_total: total,
                residual_cells: residual,
                remanence_rate: rate,
            };
            match out.last_mut() {
                Some(last) if last.tick == r.tick => *last = sample,
                _ => out.push(sample),
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Everything the comparison table needs from one policy run.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub policy: String,
    /// Fingerprint of the trace the run replayed.
    pub trace_digest: String,
    pub ledger: LatencyLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no policy runs to compare")]
    Empty,
    #[error("policy {policy} replayed a different trace ({got}) than {first_policy} ({expected})")]
    TraceMismatch { policy: String, first_policy: String, expected: String, got: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub deletions: usize,
    /// Mean microseconds per deletion.
    pub rd: f64,
    pub wr: f64,
    pub gen: f64,
    pub erase: f64,
    pub gc: f64,
    /// Total microseconds charged to deletions.
    pub total_us: u64,
    pub remanence: f64,
}

impl ComparisonRow {
    /// Mean total cost of one deletion.
    pub fn mean_total(&self) -> f64 {
        if self.deletions == 0 {
            0.0
        } else {
            self.total_us as f64 / self.deletions as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const CSV_HEADER: &str = "POLICY,DELETIONS,RD,WR,GEN,ERASE,GC,TOTAL_US,REMANENCE";

impl ComparisonTable {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{:.6}",
                r.policy, r.deletions, r.rd, r.wr, r.gen, r.erase, r.gc, r.total_us, r.remanence
            )
            .unwrap();
        }
        out
    }
}

/// One row per run with mean per-deletion cost in each column. Runs must
/// share a trace. A run with no deletions reports zeros.
pub fn comparison_table(runs: &[PolicyRun]) -> Result<ComparisonTable, ReportError> {
    let first = runs.first().ok_or(ReportError::Empty)?;
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.trace_digest != first.trace_digest {
            return Err(ReportError::TraceMismatch {
                policy: run.policy.clone(),
                first_policy: first.policy.clone(),
                expected: first.trace_digest.clone(),
                got: run.trace_digest.clone(),
            });
        }
        let n = run.ledger.deletion_count();
        let t = run.ledger.deletion_totals();
        let mean = |v: u64| if n == 0 { 0.0 } else { v as f64 / n as f64 };
        rows.push(ComparisonRow {
            policy: run.policy.clone(),
            deletions: n,
            rd: mean(t.rd),
            wr: mean(t.wr),
            gen: mean(t.gen),
            erase: mean(t.erase),
            gc: mean(t.gc),
            total_us: t.total(),
            remanence: run.ledger.remanence_rate().unwrap_or(0.0),
        });
    }
    Ok(ComparisonTable { rows })
}
