//! NVM array model: blocks of pages of multi-level cells, the cache table,
//! and the program / erase / garbage-collection machinery.
//!
//! Every device-time operation charges its latency into the device's
//! [`Charges`] accumulator. Reads and programs are charged per page access.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::cell::{BitsPerCell, CellLevel, DataWord};
use crate::metrics::Charges;

pub type CacheId = u64;
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeviceKind {
    /// PRAM / MRAM / ReRAM / 3D XPoint style memory: any cell can be set to
    /// any level in place.
    Overwritable,
    /// NAND style memory: in-place programming may only raise levels, and a
    /// page accepts a bounded number of partial programs before erase.
    NonOverwritable,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceKind::Overwritable => write!(f, "overwritable"),
            DeviceKind::NonOverwritable => write!(f, "non-overwritable"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub blocks: usize,
    pub pages_per_block: usize,
    pub cells_per_page: usize,
    pub bits: BitsPerCell,
    pub cells_per_slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("cells_per_page ({page}) is not a multiple of cells_per_cache_slot ({slot})")]
    SlotSize { page: usize, slot: usize },
}

impl Geometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("blocks", self.blocks),
            ("pages_per_block", self.pages_per_block),
            ("cells_per_page", self.cells_per_page),
            ("cells_per_cache_slot", self.cells_per_slot),
        ] {
            if v == 0 {
                return Err(GeometryError::Zero(name));
            }
        }
        if !self.cells_per_page.is_multiple_of(self.cells_per_slot) {
            return Err(GeometryError::SlotSize { page: self.cells_per_page, slot: self.cells_per_slot });
        }
        Ok(())
    }

    pub fn slots_per_page(&self) -> usize {
        self.cells_per_page / self.cells_per_slot
    }

    pub fn slots_per_block(&self) -> usize {
        self.pages_per_block * self.slots_per_page()
    }

    pub fn total_slots(&self) -> usize {
        self.blocks * self.slots_per_block()
    }

    /// Bit width of one cache slot.
    pub fn slot_bits(&self) -> usize {
        self.cells_per_slot * usize::from(self.bits.get())
    }

    fn linear(&self, addr: PhysAddr) -> usize {
        addr.block * self.slots_per_block() + addr.page * self.slots_per_page() + addr.slot
    }

    fn addr_at(&self, idx: usize) -> PhysAddr {
        let block = idx / self.slots_per_block();
        let rem = idx % self.slots_per_block();
        PhysAddr { block, page: rem / self.slots_per_page(), slot: rem % self.slots_per_page() }
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            blocks: 64,
            pages_per_block: 64,
            cells_per_page: 16,
            bits: BitsPerCell::default(),
            cells_per_slot: 8,
        }
    }
}

/// Device latencies in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyParams {
    pub t_read: u64,
    pub t_program: u64,
    pub t_gen: u64,
    pub t_erase: u64,
}

impl LatencyParams {
    /// Cost of moving one page during garbage collection.
    pub fn gc_migration_per_page(&self) -> u64 {
        self.t_read + self.t_program
    }
}

impl Default for LatencyParams {
    /// 3D NAND page read 49 us, page program 0.6 ms, block erase 4 ms, and
    /// the 100 us upper bound on generating a page of random data.
    fn default() -> Self {
        LatencyParams { t_read: 49, t_program: 600, t_gen: 100, t_erase: 4000 }
    }
}

pub const DEFAULT_NOP_LIMIT: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhysAddr {
    pub block: usize,
    pub page: usize,
    pub slot: usize,
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.block, self.page, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageStatus {
    Free,
    Programmed,
}

/// Allocation state of a slot between erases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Free,
    /// Holds data written by an allocation.
    Occupied,
    /// Holds data that has already been overwritten in place.
    Scrubbed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    cells: Vec<CellLevel>,
    status: PageStatus,
    partial_program_count: u32,
    slots: Vec<SlotState>,
}

impl Page {
    fn new(geometry: &Geometry) -> Self {
        Page {
            cells: vec![CellLevel::ERASED; geometry.cells_per_page],
            status: PageStatus::Free,
            partial_program_count: 0,
            slots: vec![SlotState::Free; geometry.slots_per_page()],
        }
    }

    pub fn cells(&self) -> &[CellLevel] {
        &self.cells
    }

    pub fn status(&self) -> PageStatus {
        self.status
    }

    pub fn partial_program_count(&self) -> u32 {
        self.partial_program_count
    }

    pub fn slot_state(&self, slot: usize) -> SlotState {
        self.slots[slot]
    }

    fn unscrubbed(&self) -> u32 {
        self.slots.iter().filter(|s| **s == SlotState::Occupied).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pages: Vec<Page>,
    erase_count: u64,
}

impl Block {
    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn erase_count(&self) -> u64 {
        self.erase_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub addr: PhysAddr,
    pub valid: bool,
    pub written_at: Tick,
    pub invalidated_at: Option<Tick>,
}

/// Cache identifier to physical location, with a valid/invalid bit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheTable {
    entries: BTreeMap<CacheId, CacheEntry>,
    by_block: BTreeMap<usize, BTreeSet<CacheId>>,
}

impl CacheTable {
    pub fn get(&self, id: CacheId) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending cache id order.
    pub fn iter(&self) -> impl Iterator<Item = (CacheId, &CacheEntry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }

    pub fn is_valid(&self, id: CacheId) -> bool {
        self.entries.get(&id).is_some_and(|e| e.valid)
    }

    pub fn set_valid_bit(&mut self, id: CacheId, valid: bool, now: Tick) -> Result<(), DeviceError> {
        let entry = self.entries.get_mut(&id).ok_or(DeviceError::UnknownCacheId(id))?;
        if entry.valid && !valid {
            entry.invalidated_at = Some(now);
        } else if valid {
            entry.invalidated_at = None;
        }
        entry.valid = valid;
        Ok(())
    }

    fn insert(&mut self, id: CacheId, entry: CacheEntry) -> Option<CacheEntry> {
        let old = self.entries.insert(id, entry);
        if let Some(prev) = &old {
            self.unindex(id, prev.addr.block);
        }
        self.by_block.entry(entry.addr.block).or_default().insert(id);
        old
    }

    fn unindex(&mut self, id: CacheId, block: usize) {
        if let Some(ids) = self.by_block.get_mut(&block) {
            ids.remove(&id);
        }
    }

    /// Ids whose entry points into `block`, ascending.
    fn ids_in_block(&self, block: usize) -> Vec<CacheId> {
        self.by_block.get(&block).map(|ids| ids.iter().copied().collect()).unwrap_or_default()
    }

    fn relocate(&mut self, id: CacheId, addr: PhysAddr) {
        if let Some(e) = self.entries.get_mut(&id) {
            let from = e.addr.block;
            e.addr = addr;
            self.unindex(id, from);
            self.by_block.entry(addr.block).or_default().insert(id);
        }
    }

    fn remove_block(&mut self, block: usize) {
        for id in self.by_block.remove(&block).unwrap_or_default() {
            self.entries.remove(&id);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("address {addr} is outside the device geometry")]
    Address { addr: PhysAddr },
    #[error("block {0} is outside the device geometry")]
    BlockAddress(usize),
    #[error("data word has {got} cells, slot holds {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("data word uses {got}-bit cells, device uses {expected}-bit")]
    BitsMismatch { expected: u8, got: u8 },
    #[error("programming {addr} would lower cell {cell} from level {from} to {to}")]
    MonotoneViolation { addr: PhysAddr, cell: usize, from: u8, to: u8 },
    #[error("page of {addr} has used all {limit} partial programs")]
    NopExceeded { addr: PhysAddr, limit: u32 },
    #[error("no free page outside block {block} to migrate valid data into")]
    NoFreePages { block: usize },
    #[error("no free slot left on the device")]
    NvmFull,
    #[error("cache id {0} is not in the cache table")]
    UnknownCacheId(CacheId),
}

/// Result of one [`NvmDevice::garbage_collect`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcReport {
    pub migrated_pages: usize,
    pub charges: Charges,
}

#[derive(Debug, Clone)]
pub struct NvmDevice {
    kind: DeviceKind,
    geometry: Geometry,
    latency: LatencyParams,
    nop_limit: u32,
    blocks: Vec<Block>,
    table: CacheTable,
    charges: Charges,
    free_slots: BTreeSet<usize>,
    free_pages: usize,
    gc_reserve_pages: usize,
}

impl NvmDevice {
    pub fn new(
        kind: DeviceKind,
        geometry: Geometry,
        latency: LatencyParams,
        nop_limit: u32,
    ) -> Result<Self, GeometryError> {
        geometry.validate()?;
        let blocks = (0..geometry.blocks)
            .map(|_| Block {
                pages: (0..geometry.pages_per_block).map(|_| Page::new(&geometry)).collect(),
                erase_count: 0,
            })
            .collect();
        Ok(NvmDevice {
            kind,
            geometry,
            latency,
            nop_limit,
            blocks,
            table: CacheTable::default(),
            charges: Charges::default(),
            free_slots: (0..geometry.total_slots()).collect(),
            free_pages: geometry.blocks * geometry.pages_per_block,
            gc_reserve_pages: 0,
        })
    }

    pub fn kind(&self) -> DeviceKind {
        self.kind
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn latency(&self) -> &LatencyParams {
        &self.latency
    }

    pub fn nop_limit(&self) -> u32 {
        self.nop_limit
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn table(&self) -> &CacheTable {
        &self.table
    }

    /// Running total of all device time charged so far.
    pub fn charges(&self) -> Charges {
        self.charges
    }

    /// Number of pages in the erased state.
    pub fn free_pages(&self) -> usize {
        self.free_pages
    }

    /// Free pages held back from allocation so garbage collection always has
    /// somewhere to migrate valid data.
    pub fn set_gc_reserve_pages(&mut self, pages: usize) {
        self.gc_reserve_pages = pages;
    }

    pub fn page(&self, block: usize, page: usize) -> Option<&Page> {
        self.blocks.get(block)?.pages.get(page)
    }

    pub fn erase_count(&self, block: usize) -> Result<u64, DeviceError> {
        self.blocks
            .get(block)
            .map(|b| b.erase_count)
            .ok_or(DeviceError::BlockAddress(block))
    }

    fn check_addr(&self, addr: PhysAddr) -> Result<(), DeviceError> {
        let g = &self.geometry;
        if addr.block >= g.blocks || addr.page >= g.pages_per_block || addr.slot >= g.slots_per_page() {
            return Err(DeviceError::Address { addr });
        }
        Ok(())
    }

    fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        let n = self.geometry.cells_per_slot;
        slot * n..(slot + 1) * n
    }

    /// Slot contents without charging device time.
    pub fn peek_slot(&self, addr: PhysAddr) -> Result<DataWord, DeviceError> {
        self.check_addr(addr)?;
        let page = &self.blocks[addr.block].pages[addr.page];
        let cells = page.cells[self.slot_range(addr.slot)].to_vec();
        Ok(DataWord::from_cells_unchecked(self.geometry.bits, cells))
    }

    /// Reads one slot, charging one page read. Free pages read as all zero.
    pub fn read_slot(&mut self, addr: PhysAddr) -> Result<DataWord, DeviceError> {
        let word = self.peek_slot(addr)?;
        self.charges.rd += self.latency.t_read;
        Ok(word)
    }

    /// Programs one slot in place.
    ///
    /// On a non-overwritable device every cell must stay at or above its
    /// current level, and a page that is already programmed consumes one
    /// partial program from its `nop_limit` budget. Programming a free page
    /// counts as its full program.
    pub fn program_slot(&mut self, addr: PhysAddr, data: &DataWord) -> Result<(), DeviceError> {
        self.check_addr(addr)?;
        if data.bits() != self.geometry.bits {
            return Err(DeviceError::BitsMismatch { expected: self.geometry.bits.get(), got: data.bits().get() });
        }
        if data.len() != self.geometry.cells_per_slot {
            return Err(DeviceError::WidthMismatch { expected: self.geometry.cells_per_slot, got: data.len() });
        }
        let range = self.slot_range(addr.slot);
        let kind = self.kind;
        let nop_limit = self.nop_limit;
        let page = &mut self.blocks[addr.block].pages[addr.page];
        if kind == DeviceKind::NonOverwritable {
            if let Some((cell, (cur, new))) = page.cells[range.clone()]
                .iter()
                .zip(data.cells())
                .enumerate()
                .find(|(_, (cur, new))| new < cur)
            {
                return Err(DeviceError::MonotoneViolation { addr, cell, from: cur.value(), to: new.value() });
            }
            if page.status == PageStatus::Programmed {
                if page.partial_program_count >= nop_limit {
                    return Err(DeviceError::NopExceeded { addr, limit: nop_limit });
                }
                page.partial_program_count += 1;
            }
        }
        page.cells[range].copy_from_slice(data.cells());
        if page.status == PageStatus::Free {
            self.free_pages -= 1;
        }
        page.status = PageStatus::Programmed;
        page.slots[addr.slot] = match page.slots[addr.slot] {
            SlotState::Free => SlotState::Occupied,
            _ => SlotState::Scrubbed,
        };
        let idx = self.geometry.linear(addr);
        self.free_slots.remove(&idx);
        self.charges.wr += self.latency.t_program;
        Ok(())
    }

    /// Programs one slot of a multi-slot page; the rest of the page is left
    /// untouched. Same rules and cost as [`NvmDevice::program_slot`].
    pub fn partial_program(&mut self, addr: PhysAddr, data: &DataWord) -> Result<(), DeviceError> {
        self.program_slot(addr, data)
    }

    /// Resets every page of `block` to the erased state. Cache table entries
    /// that point into the block are dropped.
    pub fn erase_block(&mut self, block: usize) -> Result<(), DeviceError> {
        if block >= self.geometry.blocks {
            return Err(DeviceError::BlockAddress(block));
        }
        let geometry = self.geometry;
        let b = &mut self.blocks[block];
        self.free_pages += b.pages.iter().filter(|p| p.status == PageStatus::Programmed).count();
        for page in &mut b.pages {
            *page = Page::new(&geometry);
        }
        b.erase_count += 1;
        self.table.remove_block(block);
        let start = block * geometry.slots_per_block();
        self.free_slots.extend(start..start + geometry.slots_per_block());
        self.charges.erase += self.latency.t_erase;
        Ok(())
    }

    /// Migrates every page of `block` that holds at least one valid cache
    /// slot to a free page in another block, then erases `block`.
    ///
    /// Only valid slots are copied; invalid data is not carried over. Each
    /// migrated page costs `t_read + t_program` in the GC column.
    pub fn garbage_collect(&mut self, block: usize) -> Result<GcReport, DeviceError> {
        if block >= self.geometry.blocks {
            return Err(DeviceError::BlockAddress(block));
        }
        let before = self.charges;
        let mut by_page: BTreeMap<usize, Vec<(CacheId, usize)>> = BTreeMap::new();
        for id in self.table.ids_in_block(block) {
            let e = &self.table.entries[&id];
            if e.valid {
                by_page.entry(e.addr.page).or_default().push((id, e.addr.slot));
            }
        }
        let destinations: Vec<(usize, usize)> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != block)
            .flat_map(|(b, blk)| {
                blk.pages
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.status == PageStatus::Free)
                    .map(move |(p, _)| (b, p))
            })
            .take(by_page.len())
            .collect();
        if destinations.len() < by_page.len() {
            return Err(DeviceError::NoFreePages { block });
        }
        let migrated_pages = by_page.len();
        for ((src_page, slots), (dst_block, dst_page)) in by_page.into_iter().zip(destinations) {
            for (id, slot) in slots {
                let range = self.slot_range(slot);
                let data: Vec<CellLevel> = self.blocks[block].pages[src_page].cells[range.clone()].to_vec();
                let dst = &mut self.blocks[dst_block].pages[dst_page];
                dst.cells[range].copy_from_slice(&data);
                if dst.status == PageStatus::Free {
                    self.free_pages -= 1;
                }
                dst.status = PageStatus::Programmed;
                dst.slots[slot] = SlotState::Occupied;
                let addr = PhysAddr { block: dst_block, page: dst_page, slot };
                self.free_slots.remove(&self.geometry.linear(addr));
                self.table.relocate(id, addr);
            }
            self.charges.gc += self.latency.gc_migration_per_page();
        }
        self.erase_block(block)?;
        Ok(GcReport { migrated_pages, charges: self.charges - before })
    }

    pub fn set_valid_bit(&mut self, id: CacheId, valid: bool, now: Tick) -> Result<(), DeviceError> {
        self.table.set_valid_bit(id, valid, now)
    }

    /// Charges one random-data generation.
    pub fn charge_generation(&mut self) {
        self.charges.gen += self.latency.t_gen;
    }

    fn allocatable(&self, addr: PhysAddr) -> bool {
        let page = &self.blocks[addr.block].pages[addr.page];
        if page.slots[addr.slot] != SlotState::Free {
            return false;
        }
        match (self.kind, page.status) {
            (_, PageStatus::Free) => self.free_pages > self.gc_reserve_pages,
            (DeviceKind::Overwritable, PageStatus::Programmed) => true,
            // Two partial programs for the new slot (its write and its later
            // overwrite), plus one for every slot of the page that may still
            // need an in-place overwrite.
            (DeviceKind::NonOverwritable, PageStatus::Programmed) => {
                page.partial_program_count + page.unscrubbed() + 2 <= self.nop_limit
            }
        }
    }

    /// First free slot in page order that can be programmed now.
    pub fn allocate_slot(&mut self) -> Result<PhysAddr, DeviceError> {
        let mut stale = Vec::new();
        let mut found = None;
        for &idx in &self.free_slots {
            let addr = self.geometry.addr_at(idx);
            if self.allocatable(addr) {
                found = Some(addr);
                break;
            }
            // A programmed page's budget only comes back on erase, which
            // re-adds the slot.
            if self.blocks[addr.block].pages[addr.page].status == PageStatus::Programmed {
                stale.push(idx);
            }
        }
        for idx in stale {
            self.free_slots.remove(&idx);
        }
        found.ok_or(DeviceError::NvmFull)
    }

    /// Allocates a slot for `id`, programs `data` there and registers a valid
    /// cache table entry. A previous entry for `id` is replaced; its old slot
    /// stays occupied until its block is erased.
    pub fn write_new(&mut self, id: CacheId, data: &DataWord, now: Tick) -> Result<PhysAddr, DeviceError> {
        let addr = self.allocate_slot()?;
        self.program_slot(addr, data)?;
        self.table.insert(id, CacheEntry { addr, valid: true, written_at: now, invalidated_at: None });
        Ok(addr)
    }

    /// Block with the most reclaimable slots (written but not holding valid
    /// cache data) whose valid pages fit into the free pages of the other
    /// blocks. Ties go to the lowest index. `None` when nothing can be
    /// reclaimed.
    pub fn reclaim_victim(&self) -> Option<usize> {
        let mut live = vec![0usize; self.geometry.blocks];
        let mut live_pages = BTreeSet::new();
        for (_, e) in self.table.iter() {
            if e.valid {
                live[e.addr.block] += 1;
                live_pages.insert((e.addr.block, e.addr.page));
            }
        }
        let mut migrations = vec![0usize; self.geometry.blocks];
        for (b, _) in &live_pages {
            migrations[*b] += 1;
        }
        self.blocks
            .iter()
            .enumerate()
            .filter(|(b, blk)| {
                let own_free = blk.pages.iter().filter(|p| p.status == PageStatus::Free).count();
                migrations[*b] <= self.free_pages - own_free
            })
            .map(|(b, blk)| {
                let written = blk
                    .pages
                    .iter()
                    .flat_map(|p| p.slots.iter())
                    .filter(|s| **s != SlotState::Free)
                    .count();
                (b, written - live[b])
            })
            .filter(|(_, reclaimable)| *reclaimable > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(b, _)| b)
    }
}
