//! Run driver: replays a trace once per policy on fresh state.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, OutputFormat, RunConfig};
use crate::controller::{BasePolicy, ControllerError, DeletionPolicy, NvmController, SecureMode};
use crate::device::{DeviceError, NvmDevice};
use crate::host::{DramCache, Host, HostError, TraceError, TraceLine};
use crate::metrics::{comparison_table, ComparisonTable, LatencyLedger, PolicyRun, ReportError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("device allocation failed for cache id {id}: {source}")]
    Allocation { id: u64, source: DeviceError },
    #[error("controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("host: {0}")]
    Host(HostError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 3,
            RunError::Trace(_) => 4,
            RunError::Allocation { .. } => 5,
            RunError::Report(_) => 6,
            RunError::Io(_) => 7,
            RunError::Controller(_) | RunError::Host(_) => 1,
        }
    }
}

impl From<HostError> for RunError {
    fn from(e: HostError) -> Self {
        match e {
            HostError::Trace(t) => RunError::Trace(t),
            HostError::Flush { id, source } => RunError::Allocation { id, source },
            HostError::Controller(c) => RunError::Controller(c),
            other => RunError::Host(other),
        }
    }
}

/// One policy's host, controller and ledger.
#[derive(Debug, Clone)]
pub struct Simulation {
    host: Host,
    ledger: LatencyLedger,
}

impl Simulation {
    pub fn new(config: &RunConfig, policy: BasePolicy) -> Result<Self, RunError> {
        config.validate()?;
        let device = NvmDevice::new(config.device_kind, config.geometry, config.latency, config.nop_limit)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut deletion = DeletionPolicy::new(policy);
        if let Some(t) = config.t_secure {
            deletion = deletion.with_secure_mode(SecureMode::new(t).expect("validated"));
        }
        let mut controller = NvmController::new(device, deletion, config.seed)?;
        controller.set_reclaim_on_full(config.reclaim_on_full);
        let dram = DramCache::new(config.dram_capacity, config.flush_idle_threshold);
        Ok(Simulation { host: Host::new(controller, dram), ledger: LatencyLedger::new() })
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn ledger(&self) -> &LatencyLedger {
        &self.ledger
    }

    /// Applies one trace line and sends any resulting invalidation requests
    /// to the controller.
    pub fn step(&mut self, line: &TraceLine) -> Result<(), RunError> {
        let fx = self.host.apply_line(line)?;
        for f in &fx.flushed {
            self.ledger.record_background(f.charges);
        }
        for scrub in &fx.scrubs {
            self.ledger.record_deletion(scrub);
        }
        let now = self.host.now();
        for req in fx.requests {
            let outcome = self.host.controller_mut().handle_invalidation(req, now)?;
            self.ledger.record_deletion(&outcome);
        }
        Ok(())
    }

    pub fn replay(&mut self, trace: &[TraceLine]) -> Result<(), RunError> {
        trace.iter().try_for_each(|line| self.step(line))
    }

    pub fn into_ledger(self) -> LatencyLedger {
        self.ledger
    }
}

/// SHA-256 over the canonical rendering of the trace.
pub fn trace_digest(trace: &[TraceLine]) -> String {
    let mut hasher = Sha256::new();
    for line in trace {
        hasher.update(line.event.to_line().as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_policy(config: &RunConfig, policy: BasePolicy, trace: &[TraceLine]) -> Result<PolicyRun, RunError> {
    let mut sim = Simulation::new(config, policy)?;
    sim.replay(trace)?;
    Ok(PolicyRun { policy: policy.to_string(), trace_digest: trace_digest(trace), ledger: sim.into_ledger() })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub runs: Vec<PolicyRun>,
    pub table: ComparisonTable,
}

impl RunReport {
    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.table.to_csv(),
            OutputFormat::Jsonl => self.runs.iter().map(|r| r.ledger.to_jsonl()).collect(),
        }
    }
}

/// Replays `trace` under every configured policy, each on fresh state with
/// the same seed.
pub fn run(config: &RunConfig, trace: &[TraceLine]) -> Result<RunReport, RunError> {
    config.validate()?;
    let runs = config
        .policies
        .iter()
        .map(|&p| run_policy(config, p, trace))
        .collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&runs)?;
    Ok(RunReport { runs, table })
}
