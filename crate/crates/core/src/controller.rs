//! The NVM controller and its deletion unit.
//!
//! Invalidation requests carry the cache id whose physical address the
//! controller resolves through the cache table. After clearing the valid
//! bit the configured [`BasePolicy`] decides what happens to the stale data.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cell::{self, DataWord, FillKind};
use crate::device::{CacheId, DeviceError, DeviceKind, NvmDevice, PhysAddr, Tick};
use crate::metrics::Charges;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasePolicy {
    /// Clear the valid bit only; data stays on the medium.
    MarkOnly,
    /// Garbage-collect and erase the block holding the stale slot.
    EraseBased,
    /// Overwrite the stale slot with generated random data.
    DdnRandom,
    /// Overwrite the stale slot with a fixed pattern.
    DdnNonRandom(FillKind),
}

impl BasePolicy {
    fn overwrite_mode(self) -> Option<OverwriteMode> {
        match self {
            BasePolicy::DdnRandom => Some(OverwriteMode::Random),
            BasePolicy::DdnNonRandom(kind) => Some(OverwriteMode::Fill(kind)),
            _ => None,
        }
    }
}

impl fmt::Display for BasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasePolicy::MarkOnly => write!(f, "MarkOnly"),
            BasePolicy::EraseBased => write!(f, "EraseBased"),
            BasePolicy::DdnRandom => write!(f, "DdnRandom"),
            BasePolicy::DdnNonRandom(kind) => write!(f, "DdnNonRandom({kind})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy {0:?}")]
pub struct ParsePolicyError(pub String);

impl FromStr for BasePolicy {
    type Err = ParsePolicyError;

    /// Accepts the display names (`MarkOnly`, `DdnNonRandom(AllMax)`,
    /// `DdnNonRandom(Level3)`) and kebab-case aliases (`mark-only`,
    /// `erase-based`, `ddn-random`, `ddn-allmax`, `ddn-level:3`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePolicyError(s.to_string());
        let norm: String = s.trim().chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
        let level = |rest: &str| rest.parse::<u8>().map(|l| BasePolicy::DdnNonRandom(FillKind::ConstantLevel(l)));
        match norm.as_str() {
            "markonly" => Ok(BasePolicy::MarkOnly),
            "erasebased" | "erase" => Ok(BasePolicy::EraseBased),
            "ddnrandom" => Ok(BasePolicy::DdnRandom),
            "ddnnonrandom" | "ddnnonrandom(allmax)" | "ddnallmax" => Ok(BasePolicy::DdnNonRandom(FillKind::AllMax)),
            other => {
                if let Some(rest) = other.strip_prefix("ddnnonrandom(level").and_then(|r| r.strip_suffix(')')) {
                    level(rest).map_err(|_| err())
                } else if let Some(rest) = other.strip_prefix("ddnlevel:") {
                    level(rest).map_err(|_| err())
                } else {
                    Err(err())
                }
            }
        }
    }
}

/// Periodic scrub of valid data older than `t_secure` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureMode {
    t_secure: Tick,
}

impl SecureMode {
    pub fn new(t_secure: Tick) -> Option<Self> {
        (t_secure >= 1).then_some(SecureMode { t_secure })
    }

    pub fn t_secure(self) -> Tick {
        self.t_secure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeletionPolicy {
    pub base: BasePolicy,
    pub secure_mode: Option<SecureMode>,
}

impl DeletionPolicy {
    pub fn new(base: BasePolicy) -> Self {
        DeletionPolicy { base, secure_mode: None }
    }

    pub fn with_secure_mode(mut self, mode: SecureMode) -> Self {
        self.secure_mode = Some(mode);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OverwriteMode {
    Random,
    Fill(FillKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Invalidate,
    /// Handled exactly like [`RequestKind::Invalidate`].
    DeIdentify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidationRequest {
    pub cache_id: CacheId,
    pub kind: RequestKind,
    pub issued_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Request(RequestKind),
    SecureScrub,
}

/// What physically happened to the slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeletionAction {
    MarkOnly,
    Erased { migrated_pages: usize },
    Overwritten { written: DataWord },
    /// The physical step failed; the data is still in place.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// The overwrite could not be programmed, so the block was erased.
    EraseAfter(OverwriteFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverwriteFailure {
    NopExceeded,
    MonotoneViolation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionOutcome {
    pub cache_id: CacheId,
    pub tick: Tick,
    pub addr: PhysAddr,
    pub policy: BasePolicy,
    pub trigger: Trigger,
    pub action: DeletionAction,
    pub charges: Charges,
    /// Cells of the slot still holding their pre-deletion level. Erased
    /// cells never count.
    pub residual_cells: usize,
    pub slot_cells: usize,
    pub fallback: Option<Fallback>,
    pub error: Option<DeviceError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdnOutcome {
    pub written: DataWord,
    pub charges: Charges,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("cache id {0} is not in the cache table")]
    UnknownCacheId(CacheId),
    #[error("cache id {0} is already invalid")]
    AlreadyInvalid(CacheId),
    #[error("fill level {0} is out of range for the device cells")]
    FillLevel(u8),
    #[error("secure mode is not configured")]
    SecureModeDisabled,
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Outcome of writing a flushed cache line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushWrite {
    pub addr: PhysAddr,
    pub charges: Charges,
    /// Blocks erased to make room before the write.
    pub reclaimed_blocks: usize,
}

#[derive(Debug, Clone)]
pub struct NvmController {
    device: NvmDevice,
    policy: DeletionPolicy,
    rng: ChaCha8Rng,
    reclaim_on_full: bool,
}

impl NvmController {
    pub fn new(device: NvmDevice, policy: DeletionPolicy, seed: u64) -> Result<Self, ControllerError> {
        if let BasePolicy::DdnNonRandom(FillKind::ConstantLevel(l)) = policy.base {
            if u32::from(l) >= device.geometry().bits.states() {
                return Err(ControllerError::FillLevel(l));
            }
        }
        let mut controller =
            NvmController { device, policy, rng: ChaCha8Rng::seed_from_u64(seed), reclaim_on_full: true };
        controller.set_reclaim_on_full(true);
        Ok(controller)
    }

    /// When set (the default), a full device garbage-collects the block with
    /// the most dead slots before giving up on an allocation, and one block's
    /// worth of free pages is held back as migration space.
    pub fn set_reclaim_on_full(&mut self, on: bool) {
        self.reclaim_on_full = on;
        let g = *self.device.geometry();
        let reserve = if on && g.blocks > 1 { g.pages_per_block } else { 0 };
        self.device.set_gc_reserve_pages(reserve);
    }

    pub fn device(&self) -> &NvmDevice {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut NvmDevice {
        &mut self.device
    }

    pub fn policy(&self) -> DeletionPolicy {
        self.policy
    }

    pub fn is_valid(&self, id: CacheId) -> bool {
        self.device.table().is_valid(id)
    }

    /// Valid stored copy of `id`, read without charging device time.
    pub fn peek_valid(&self, id: CacheId) -> Option<DataWord> {
        let e = self.device.table().get(id).filter(|e| e.valid)?;
        self.device.peek_slot(e.addr).ok()
    }

    /// Writes a flushed cache line to a newly allocated slot.
    pub fn flush(&mut self, id: CacheId, data: &DataWord, now: Tick) -> Result<FlushWrite, DeviceError> {
        let before = self.device.charges();
        let mut reclaimed_blocks = 0;
        let addr = loop {
            match self.device.write_new(id, data, now) {
                Err(DeviceError::NvmFull) if self.reclaim_on_full => {
                    let victim = self.device.reclaim_victim().ok_or(DeviceError::NvmFull)?;
                    self.device.garbage_collect(victim)?;
                    reclaimed_blocks += 1;
                }
                other => break other?,
            }
        };
        Ok(FlushWrite { addr, charges: self.device.charges() - before, reclaimed_blocks })
    }

    pub fn handle_invalidation(
        &mut self,
        req: InvalidationRequest,
        now: Tick,
    ) -> Result<DeletionOutcome, ControllerError> {
        let entry = *self
            .device
            .table()
            .get(req.cache_id)
            .ok_or(ControllerError::UnknownCacheId(req.cache_id))?;
        if !entry.valid {
            return Err(ControllerError::AlreadyInvalid(req.cache_id));
        }
        let base = self.policy.base;
        Ok(self.delete(req.cache_id, entry.addr, now, base, Trigger::Request(req.kind)))
    }

    /// Overwrites the slot at `addr` using the configured policy's pattern
    /// (random data unless the policy is a fixed-pattern one).
    pub fn ddn_process(&mut self, addr: PhysAddr) -> Result<DdnOutcome, DeviceError> {
        let mode = self.policy.base.overwrite_mode().unwrap_or(OverwriteMode::Random);
        self.overwrite(addr, mode)
    }

    fn overwrite(&mut self, addr: PhysAddr, mode: OverwriteMode) -> Result<DdnOutcome, DeviceError> {
        let before = self.device.charges();
        let bits = self.device.geometry().bits;
        let len = self.device.geometry().cells_per_slot;
        let written = match (self.device.kind(), mode) {
            (DeviceKind::Overwritable, OverwriteMode::Random) => {
                self.device.peek_slot(addr)?;
                self.device.charge_generation();
                cell::gen_uniform_word(len, bits, &mut self.rng)
            }
            (DeviceKind::NonOverwritable, OverwriteMode::Random) => {
                let current = self.device.read_slot(addr)?;
                self.device.charge_generation();
                cell::gen_upward_word(&current, &mut self.rng)
            }
            (_, OverwriteMode::Fill(kind)) => {
                cell::gen_fill_word(kind, len, bits).expect("fill level checked at construction")
            }
        };
        self.device.partial_program(addr, &written)?;
        Ok(DdnOutcome { written, charges: self.device.charges() - before })
    }

    fn delete(
        &mut self,
        cache_id: CacheId,
        addr: PhysAddr,
        now: Tick,
        base: BasePolicy,
        trigger: Trigger,
    ) -> DeletionOutcome {
        let before = self.device.charges();
        let original = self.device.peek_slot(addr).expect("table addresses are in range");
        let erases_before = self.device.erase_count(addr.block).expect("table addresses are in range");
        self.device
            .set_valid_bit(cache_id, false, now)
            .expect("entry checked by caller");

        let mode = match trigger {
            Trigger::SecureScrub => Some(base.overwrite_mode().unwrap_or(OverwriteMode::Random)),
            Trigger::Request(_) => base.overwrite_mode(),
        };
        let mut fallback = None;
        let mut error = None;
        let action = match (base, mode) {
            (_, Some(mode)) => match self.overwrite(addr, mode) {
                Ok(out) => DeletionAction::Overwritten { written: out.written },
                Err(e @ (DeviceError::NopExceeded { .. } | DeviceError::MonotoneViolation { .. })) => {
                    debug_assert!(
                        !(matches!(e, DeviceError::MonotoneViolation { .. })
                            && matches!(mode, OverwriteMode::Random | OverwriteMode::Fill(FillKind::AllMax))),
                        "upward and all-max overwrites never lower a cell"
                    );
                    let failure = match e {
                        DeviceError::NopExceeded { .. } => OverwriteFailure::NopExceeded,
                        _ => OverwriteFailure::MonotoneViolation,
                    };
                    fallback = Some(Fallback::EraseAfter(failure));
                    self.erase_for(addr, &mut error)
                }
                Err(e) => {
                    error = Some(e);
                    DeletionAction::Failed
                }
            },
            (BasePolicy::MarkOnly, None) => DeletionAction::MarkOnly,
            (_, None) => self.erase_for(addr, &mut error),
        };

        let erased = self.device.erase_count(addr.block).expect("in range") != erases_before;
        let residual_cells = if erased {
            0
        } else {
            let now_stored = self.device.peek_slot(addr).expect("in range");
            original.cells().iter().zip(now_stored.cells()).filter(|(a, b)| a == b).count()
        };
        DeletionOutcome {
            cache_id,
            tick: now,
            addr,
            policy: base,
            trigger,
            action,
            charges: self.device.charges() - before,
            residual_cells,
            slot_cells: original.len(),
            fallback,
            error,
        }
    }

    fn erase_for(&mut self, addr: PhysAddr, error: &mut Option<DeviceError>) -> DeletionAction {
        match self.device.garbage_collect(addr.block) {
            Ok(report) => DeletionAction::Erased { migrated_pages: report.migrated_pages },
            Err(e) => {
                *error = Some(e);
                DeletionAction::Failed
            }
        }
    }

    /// Earliest tick at which a valid entry becomes due for a secure scrub.
    pub fn next_secure_due(&self) -> Option<Tick> {
        let t = self.policy.secure_mode?.t_secure;
        self.device
            .table()
            .iter()
            .filter(|(_, e)| e.valid)
            .map(|(_, e)| e.written_at.saturating_add(t))
            .min()
    }

    /// Scrubs every valid entry with `now - written_at >= t_secure`, in
    /// ascending cache id order, and clears its valid bit.
    pub fn secure_tick(&mut self, now: Tick) -> Result<Vec<DeletionOutcome>, ControllerError> {
        let t = self.policy.secure_mode.ok_or(ControllerError::SecureModeDisabled)?.t_secure;
        let due: Vec<(CacheId, PhysAddr)> = self
            .device
            .table()
            .iter()
            .filter(|(_, e)| e.valid && now.saturating_sub(e.written_at) >= t && now >= e.written_at)
            .map(|(id, e)| (id, e.addr))
            .collect();
        let base = self.policy.base;
        Ok(due
            .into_iter()
            .map(|(id, addr)| self.delete(id, addr, now, base, Trigger::SecureScrub))
            .collect())
    }
}
