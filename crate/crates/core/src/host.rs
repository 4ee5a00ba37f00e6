//! CPU + DRAM front end.
//!
//! Writes land in DRAM as dirty lines. Lines idle for `flush_idle_threshold`
//! ticks are flushed to NVM, and once a line has a valid NVM copy any later
//! write to it sends an invalidation request for that copy.
//!
//! Trace grammar, one event per line:
//!
//! ```text
//! W <id> <hexpayload>   write
//! U <id> <hexpayload>   update (needs an earlier W of the same id)
//! I <id>                invalidate
//! D <id>                de-identify
//! T <n>                 advance n ticks
//! F                     flush every dirty line now
//! # comment
//! ```

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cell::{CellError, DataWord};
use crate::controller::{ControllerError, DeletionOutcome, InvalidationRequest, NvmController, RequestKind};
use crate::device::{CacheId, DeviceError, Geometry, PhysAddr, Tick};
use crate::metrics::Charges;

pub const DEFAULT_FLUSH_IDLE_THRESHOLD: Tick = 10;
pub const DEFAULT_DRAM_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Write(CacheId, DataWord),
    Update(CacheId, DataWord),
    Invalidate(CacheId),
    DeIdentify(CacheId),
    Tick(u64),
    Flush,
}

impl TraceEvent {
    /// Trace-file form of the event.
    pub fn to_line(&self) -> String {
        match self {
            TraceEvent::Write(id, p) => format!("W {id} {}", p.to_hex()),
            TraceEvent::Update(id, p) => format!("U {id} {}", p.to_hex()),
            TraceEvent::Invalidate(id) => format!("I {id}"),
            TraceEvent::DeIdentify(id) => format!("D {id}"),
            TraceEvent::Tick(n) => format!("T {n}"),
            TraceEvent::Flush => "F".to_string(),
        }
    }
}

/// An event with the 1-based source line it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub line: usize,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Payload { line: usize, source: CellError },
    #[error("line {line}: cache id {id} has not been written")]
    UnknownId { line: usize, id: CacheId },
}

impl TraceError {
    pub fn line(&self) -> usize {
        match self {
            TraceError::Syntax { line, .. } | TraceError::Payload { line, .. } | TraceError::UnknownId { line, .. } => {
                *line
            }
        }
    }
}

/// Parses trace text. Payload width is checked against `geometry`, and
/// `U` / `I` / `D` must follow a `W` of the same id.
pub fn parse_trace(text: &str, geometry: &Geometry) -> Result<Vec<TraceLine>, TraceError> {
    let mut events = Vec::new();
    let mut written = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let syntax = |message: String| TraceError::Syntax { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let id = |s: Option<&&str>| -> Result<CacheId, TraceError> {
            let s = s.ok_or_else(|| syntax("missing cache id".into()))?;
            s.parse().map_err(|_| syntax(format!("bad cache id {s:?}")))
        };
        let payload = |s: Option<&&str>| -> Result<DataWord, TraceError> {
            let s = s.ok_or_else(|| syntax("missing payload".into()))?;
            DataWord::from_hex(s, geometry.bits, geometry.cells_per_slot)
                .map_err(|source| TraceError::Payload { line, source })
        };
        let arity = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(syntax(format!("{} takes {} field(s), got {}", fields[0], n - 1, fields.len() - 1)))
            }
        };
        let event = match fields[0] {
            "W" => {
                arity(3)?;
                let id = id(fields.get(1))?;
                written.insert(id);
                TraceEvent::Write(id, payload(fields.get(2))?)
            }
            op @ ("U" | "I" | "D") => {
                arity(if op == "U" { 3 } else { 2 })?;
                let id = id(fields.get(1))?;
                if !written.contains(&id) {
                    return Err(TraceError::UnknownId { line, id });
                }
                match op {
                    "U" => TraceEvent::Update(id, payload(fields.get(2))?),
                    "I" => TraceEvent::Invalidate(id),
                    _ => TraceEvent::DeIdentify(id),
                }
            }
            "T" => {
                arity(2)?;
                let n = fields[1].parse().map_err(|_| syntax(format!("bad tick count {:?}", fields[1])))?;
                TraceEvent::Tick(n)
            }
            "F" => {
                arity(1)?;
                TraceEvent::Flush
            }
            other => return Err(syntax(format!("unknown event {other:?}"))),
        };
        events.push(TraceLine { line, event });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramSlot {
    pub payload: DataWord,
    pub dirty: bool,
    pub last_used: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramCache {
    slots: BTreeMap<CacheId, DramSlot>,
    /// Every resident line keyed by `(last_used, id)`.
    by_use: BTreeSet<(Tick, CacheId)>,
    /// Dirty lines keyed by `(last_used, id)`.
    dirty: BTreeSet<(Tick, CacheId)>,
    capacity: usize,
    flush_idle_threshold: Tick,
}

impl DramCache {
    pub fn new(capacity: usize, flush_idle_threshold: Tick) -> Self {
        DramCache {
            slots: BTreeMap::new(),
            by_use: BTreeSet::new(),
            dirty: BTreeSet::new(),
            capacity: capacity.max(1),
            flush_idle_threshold,
        }
    }

    pub fn get(&self, id: CacheId) -> Option<&DramSlot> {
        self.slots.get(&id)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn insert(&mut self, id: CacheId, slot: DramSlot) {
        self.remove(id);
        self.by_use.insert((slot.last_used, id));
        if slot.dirty {
            self.dirty.insert((slot.last_used, id));
        }
        self.slots.insert(id, slot);
    }

    fn remove(&mut self, id: CacheId) -> Option<DramSlot> {
        let slot = self.slots.remove(&id)?;
        self.by_use.remove(&(slot.last_used, id));
        self.dirty.remove(&(slot.last_used, id));
        Some(slot)
    }

    fn mark_clean(&mut self, id: CacheId) {
        if let Some(slot) = self.slots.get_mut(&id) {
            slot.dirty = false;
            self.dirty.remove(&(slot.last_used, id));
        }
    }

    fn lru(&self) -> Option<CacheId> {
        self.by_use.first().map(|&(_, id)| id)
    }

    fn next_idle_due(&self) -> Option<Tick> {
        self.dirty.first().map(|&(t, _)| t.saturating_add(self.flush_idle_threshold))
    }

    /// Dirty lines in ascending id order.
    fn dirty_ids(&self) -> Vec<CacheId> {
        let mut ids: Vec<CacheId> = self.dirty.iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }

    /// Dirty lines last used at or before `tick`, in ascending id order.
    fn dirty_ids_used_by(&self, tick: Tick) -> Vec<CacheId> {
        let mut ids: Vec<CacheId> =
            self.dirty.iter().take_while(|&&(t, _)| t <= tick).map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids
    }
}

/// A dirty line written to NVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushRecord {
    pub cache_id: CacheId,
    pub tick: Tick,
    pub addr: PhysAddr,
    pub charges: Charges,
}

/// Everything one event caused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventEffects {
    /// Requests for the controller, in emission order.
    pub requests: Vec<InvalidationRequest>,
    pub flushed: Vec<FlushRecord>,
    /// Secure-mode scrubs run while time advanced.
    pub scrubs: Vec<DeletionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("cache id {0} has not been written")]
    UnknownId(CacheId),
    #[error("payload has {got} cells, cache slots hold {expected}")]
    PayloadWidth { expected: usize, got: usize },
    #[error("flushing cache id {id}: {source}")]
    Flush { id: CacheId, source: DeviceError },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone)]
pub struct Host {
    controller: NvmController,
    dram: DramCache,
    now: Tick,
    known: BTreeSet<CacheId>,
}

impl Host {
    pub fn new(controller: NvmController, dram: DramCache) -> Self {
        Host { controller, dram, now: 0, known: BTreeSet::new() }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn controller(&self) -> &NvmController {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut NvmController {
        &mut self.controller
    }

    pub fn dram(&self) -> &DramCache {
        &self.dram
    }

    /// Current contents of `id` as the CPU sees them: DRAM first, then the
    /// valid NVM copy.
    pub fn read(&self, id: CacheId) -> Option<DataWord> {
        match self.dram.get(id) {
            Some(slot) => Some(slot.payload.clone()),
            None => self.controller.peek_valid(id),
        }
    }

    /// Like [`Host::apply_event`], reporting unknown ids against the trace
    /// line.
    pub fn apply_line(&mut self, line: &TraceLine) -> Result<EventEffects, HostError> {
        self.apply_event(&line.event).map_err(|e| match e {
            HostError::UnknownId(id) => HostError::Trace(TraceError::UnknownId { line: line.line, id }),
            other => other,
        })
    }

    pub fn apply_event(&mut self, ev: &TraceEvent) -> Result<EventEffects, HostError> {
        let mut fx = EventEffects::default();
        match ev {
            TraceEvent::Write(id, payload) => {
                self.store(*id, payload, &mut fx)?;
            }
            TraceEvent::Update(id, payload) => {
                if !self.known.contains(id) {
                    return Err(HostError::UnknownId(*id));
                }
                self.store(*id, payload, &mut fx)?;
            }
            TraceEvent::Invalidate(id) | TraceEvent::DeIdentify(id) => {
                if !self.known.contains(id) {
                    return Err(HostError::UnknownId(*id));
                }
                let kind = match ev {
                    TraceEvent::Invalidate(_) => RequestKind::Invalidate,
                    _ => RequestKind::DeIdentify,
                };
                self.dram.remove(*id);
                self.invalidate_copy(*id, kind, &mut fx);
            }
            TraceEvent::Tick(n) => self.advance(*n, &mut fx)?,
            TraceEvent::Flush => {
                for id in self.dram.dirty_ids() {
                    self.flush_one(id, &mut fx)?;
                }
            }
        }
        Ok(fx)
    }

    fn invalidate_copy(&mut self, id: CacheId, kind: RequestKind, fx: &mut EventEffects) {
        if self.controller.is_valid(id) {
            fx.requests.push(InvalidationRequest { cache_id: id, kind, issued_at: self.now });
        }
    }

    fn store(&mut self, id: CacheId, payload: &DataWord, fx: &mut EventEffects) -> Result<(), HostError> {
        let expected = self.controller.device().geometry().cells_per_slot;
        if payload.len() != expected {
            return Err(HostError::PayloadWidth { expected, got: payload.len() });
        }
        if !self.dram.slots.contains_key(&id) && self.dram.slots.len() >= self.dram.capacity {
            self.evict(fx)?;
        }
        self.known.insert(id);
        self.dram.insert(id, DramSlot { payload: payload.clone(), dirty: true, last_used: self.now });
        self.invalidate_copy(id, RequestKind::Invalidate, fx);
        Ok(())
    }

    /// Drops the least recently used line, flushing it first unless NVM
    /// already holds a valid copy of it.
    fn evict(&mut self, fx: &mut EventEffects) -> Result<(), HostError> {
        let Some(victim) = self.dram.lru() else { return Ok(()) };
        let slot = &self.dram.slots[&victim];
        if slot.dirty || !self.controller.is_valid(victim) {
            self.flush_one(victim, fx)?;
        }
        self.dram.remove(victim);
        Ok(())
    }

    fn flush_one(&mut self, id: CacheId, fx: &mut EventEffects) -> Result<(), HostError> {
        let now = self.now;
        let slot = &self.dram.slots[&id];
        let write = self
            .controller
            .flush(id, &slot.payload, now)
            .map_err(|source| HostError::Flush { id, source })?;
        self.dram.mark_clean(id);
        fx.flushed.push(FlushRecord { cache_id: id, tick: now, addr: write.addr, charges: write.charges });
        Ok(())
    }

    /// Flushes every dirty line idle for at least the threshold. Returns the
    /// flushed ids in ascending order.
    pub fn flush_idle(&mut self, now: Tick) -> Result<Vec<FlushRecord>, HostError> {
        self.now = self.now.max(now);
        let threshold = self.dram.flush_idle_threshold;
        let idle = match self.now.checked_sub(threshold) {
            Some(cutoff) => self.dram.dirty_ids_used_by(cutoff),
            None => Vec::new(),
        };
        let mut fx = EventEffects::default();
        for id in idle {
            self.flush_one(id, &mut fx)?;
        }
        Ok(fx.flushed)
    }

    /// Advances `n` ticks, stopping at every tick where an idle flush or a
    /// secure scrub falls due.
    fn advance(&mut self, n: u64, fx: &mut EventEffects) -> Result<(), HostError> {
        let target = self.now.saturating_add(n);
        let secure = self.controller.policy().secure_mode.is_some();
        while self.now < target {
            let flush_due = self.dram.next_idle_due();
            let scrub_due = if secure { self.controller.next_secure_due() } else { None };
            let next = match flush_due.into_iter().chain(scrub_due).min() {
                Some(due) => due.clamp(self.now + 1, target),
                None => target,
            };
            self.now = next;
            let flushed = self.flush_idle(next)?;
            fx.flushed.extend(flushed);
            if secure {
                fx.scrubs.extend(self.controller.secure_tick(next)?);
            }
        }
        Ok(())
    }
}
