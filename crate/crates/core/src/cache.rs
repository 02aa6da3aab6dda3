//! Processor-side cache: one unified set-associative LRU level with a
//! bounded file of miss status holding registers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::addrmap::PhysAddr;
use crate::line::{Line, LINE_BYTES};
use crate::timing::Ps;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("fill for {0:#x} without a pending miss")]
    NoPendingMiss(PhysAddr),
    #[error("invalid cache geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    /// Read-for-ownership ahead of a store.
    Rfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessOutcome<W> {
    Hit(Line),
    /// A new MSHR was allocated; the caller must send the memory request.
    MissIssued,
    /// Joined an in-flight miss to the same line.
    MissMerged,
    /// All MSHRs busy; the waiter is handed back to be retried later.
    MissBlocked(W),
}

/// A line leaving the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evicted {
    pub addr: PhysAddr,
    pub dirty: bool,
    pub data: Line,
}

#[derive(Debug, Clone, Copy)]
struct Way {
    addr: PhysAddr,
    valid: bool,
    dirty: bool,
    data: Line,
    stamp: u64,
}

/// Time-weighted average of an integer occupancy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OccupancyIntegral {
    current: u64,
    since: Ps,
    area: u128,
}

impl OccupancyIntegral {
    pub fn change(&mut self, now: Ps, up: bool) {
        self.area += u128::from(self.current) * u128::from(now.saturating_sub(self.since));
        self.since = now.max(self.since);
        if up {
            self.current += 1;
        } else {
            self.current -= 1;
        }
    }

    pub fn current(&self) -> u64 {
        self.current
    }

    /// Mean occupancy over `[0, until)`.
    pub fn average(&self, until: Ps) -> f64 {
        if until == 0 {
            return 0.0;
        }
        let tail = u128::from(self.current) * u128::from(until.saturating_sub(self.since));
        (self.area + tail) as f64 / until as f64
    }
}

#[derive(Debug, Clone)]
struct MshrEntry<W> {
    waiters: Vec<W>,
    tracked: bool,
}

/// Outstanding misses, at most `capacity` distinct lines.
#[derive(Debug, Clone)]
pub struct MshrFile<W> {
    capacity: usize,
    in_flight: BTreeMap<PhysAddr, MshrEntry<W>>,
    all: OccupancyIntegral,
    tracked: OccupancyIntegral,
    peak: usize,
}

impl<W> MshrFile<W> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            in_flight: BTreeMap::new(),
            all: OccupancyIntegral::default(),
            tracked: OccupancyIntegral::default(),
            peak: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.in_flight.len() >= self.capacity
    }

    pub fn is_pending(&self, addr: PhysAddr) -> bool {
        self.in_flight.contains_key(&addr)
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    fn open(&mut self, addr: PhysAddr, waiter: W, tracked: bool, now: Ps) {
        debug_assert!(!self.is_full());
        self.in_flight.insert(addr, MshrEntry { waiters: vec![waiter], tracked });
        self.all.change(now, true);
        if tracked {
            self.tracked.change(now, true);
        }
        self.peak = self.peak.max(self.in_flight.len());
    }

    fn close(&mut self, addr: PhysAddr, now: Ps) -> Option<Vec<W>> {
        let e = self.in_flight.remove(&addr)?;
        self.all.change(now, false);
        if e.tracked {
            self.tracked.change(now, false);
        }
        Some(e.waiters)
    }

    /// Time-weighted mean number of outstanding misses over `[0, until)`.
    pub fn average_outstanding(&self, until: Ps) -> f64 {
        self.all.average(until)
    }

    /// Same, restricted to misses opened with `tracked = true`.
    pub fn average_tracked(&self, until: Ps) -> f64 {
        self.tracked.average(until)
    }
}

pub struct FillResult<W> {
    pub evicted: Option<Evicted>,
    pub waiters: Vec<W>,
}

/// Set-associative write-back cache. `W` identifies whoever waits on a miss.
#[derive(Debug, Clone)]
pub struct CacheModel<W> {
    sets: usize,
    ways: usize,
    lines: Vec<Way>,
    clock: u64,
    pub mshr: MshrFile<W>,
    pub hits: u64,
    pub misses: u64,
}

impl<W> CacheModel<W> {
    pub fn new(sets: usize, ways: usize, mshr_capacity: usize) -> Result<Self, CacheError> {
        if sets == 0 || !sets.is_power_of_two() {
            return Err(CacheError::Geometry(format!("sets must be a power of two, got {sets}")));
        }
        if ways == 0 || mshr_capacity == 0 {
            return Err(CacheError::Geometry("ways and MSHR capacity must be positive".into()));
        }
        let empty = Way { addr: 0, valid: false, dirty: false, data: Line([0; LINE_BYTES]), stamp: 0 };
        Ok(Self {
            sets,
            ways,
            lines: vec![empty; sets * ways],
            clock: 0,
            mshr: MshrFile::new(mshr_capacity),
            hits: 0,
            misses: 0,
        })
    }

    pub fn set_index(&self, addr: PhysAddr) -> usize {
        ((addr / LINE_BYTES as u64) as usize) & (self.sets - 1)
    }

    fn set_range(&self, addr: PhysAddr) -> std::ops::Range<usize> {
        let s = self.set_index(addr) * self.ways;
        s..s + self.ways
    }

    fn find(&self, addr: PhysAddr) -> Option<usize> {
        self.set_range(addr).find(|&i| self.lines[i].valid && self.lines[i].addr == addr)
    }

    fn stamp(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn contains(&self, addr: PhysAddr) -> bool {
        self.find(addr).is_some()
    }

    pub fn peek(&self, addr: PhysAddr) -> Option<Line> {
        self.find(addr).map(|i| self.lines[i].data)
    }

    pub fn is_dirty(&self, addr: PhysAddr) -> bool {
        self.find(addr).is_some_and(|i| self.lines[i].dirty)
    }

    /// Looks `addr` up. `tracked` tags a newly opened MSHR for the
    /// restricted occupancy statistic.
    pub fn access(&mut self, addr: PhysAddr, _kind: AccessKind, waiter: W, tracked: bool, now: Ps) -> AccessOutcome<W> {
        if let Some(i) = self.find(addr) {
            self.hits += 1;
            let s = self.stamp();
            self.lines[i].stamp = s;
            return AccessOutcome::Hit(self.lines[i].data);
        }
        if let Some(e) = self.mshr.in_flight.get_mut(&addr) {
            e.waiters.push(waiter);
            return AccessOutcome::MissMerged;
        }
        if self.mshr.is_full() {
            return AccessOutcome::MissBlocked(waiter);
        }
        self.misses += 1;
        self.mshr.open(addr, waiter, tracked, now);
        AccessOutcome::MissIssued
    }

    /// Installs a line without touching the MSHRs. Returns the victim.
    pub fn install(&mut self, addr: PhysAddr, data: Line, dirty: bool) -> Option<Evicted> {
        let s = self.stamp();
        if let Some(i) = self.find(addr) {
            let w = &mut self.lines[i];
            w.data = data;
            w.dirty |= dirty;
            w.stamp = s;
            return None;
        }
        let range = self.set_range(addr);
        let slot = range
            .clone()
            .find(|&i| !self.lines[i].valid)
            .unwrap_or_else(|| range.min_by_key(|&i| self.lines[i].stamp).expect("ways > 0"));
        let old = self.lines[slot];
        self.lines[slot] = Way { addr, valid: true, dirty, data, stamp: s };
        old.valid.then_some(Evicted { addr: old.addr, dirty: old.dirty, data: old.data })
    }

    /// Completes the miss on `addr`: installs the line and releases its MSHR.
    pub fn fill(&mut self, addr: PhysAddr, data: Line, now: Ps) -> Result<FillResult<W>, CacheError> {
        let waiters = self.mshr.close(addr, now).ok_or(CacheError::NoPendingMiss(addr))?;
        let evicted = self.install(addr, data, false);
        Ok(FillResult { evicted, waiters })
    }

    /// Removes any copy of `addr`; the caller writes back a dirty victim.
    pub fn invalidate(&mut self, addr: PhysAddr) -> Option<Evicted> {
        let i = self.find(addr)?;
        let w = &mut self.lines[i];
        w.valid = false;
        Some(Evicted { addr: w.addr, dirty: w.dirty, data: w.data })
    }

    /// Atomic compare-and-swap of a whole cached line. `None` if absent.
    pub fn compare_and_swap(&mut self, addr: PhysAddr, expected: &Line, new: Line) -> Option<bool> {
        let i = self.find(addr)?;
        let s = self.stamp();
        let w = &mut self.lines[i];
        w.stamp = s;
        if w.data == *expected {
            w.data = new;
            w.dirty = true;
            Some(true)
        } else {
            Some(false)
        }
    }

    /// Plain store of one word into a cached line. `false` if absent.
    pub fn store_word(&mut self, addr: PhysAddr, index: usize, value: u64) -> bool {
        match self.find(addr) {
            Some(i) => {
                let s = self.stamp();
                let w = &mut self.lines[i];
                w.data.set_word(index, value);
                w.dirty = true;
                w.stamp = s;
                true
            }
            None => false,
        }
    }

    /// Every dirty line, in address order (used to flush at end of run).
    pub fn dirty_lines(&self) -> Vec<(PhysAddr, Line)> {
        let mut v: Vec<_> = self.lines.iter().filter(|w| w.valid && w.dirty).map(|w| (w.addr, w.data)).collect();
        v.sort_unstable_by_key(|&(a, _)| a);
        v
    }

    /// Time-weighted mean of outstanding read misses over `[0, until)`.
    pub fn outstanding_reads(&self, until: Ps) -> f64 {
        self.mshr.average_outstanding(until)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache() -> CacheModel<u32> {
        CacheModel::new(4, 2, 2).unwrap()
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut c = cache();
        assert_eq!(c.access(0x40, AccessKind::Load, 1, false, 0), AccessOutcome::MissIssued);
        assert_eq!(c.access(0x40, AccessKind::Load, 2, false, 0), AccessOutcome::MissMerged);
        let r = c.fill(0x40, Line::filled(7), 10).unwrap();
        assert_eq!(r.waiters, vec![1, 2]);
        assert!(r.evicted.is_none());
        assert_eq!(c.access(0x40, AccessKind::Load, 3, false, 11), AccessOutcome::Hit(Line::filled(7)));
    }

    #[test]
    fn mshr_capacity_blocks() {
        let mut c = cache();
        assert_eq!(c.access(0x000, AccessKind::Load, 1, false, 0), AccessOutcome::MissIssued);
        assert_eq!(c.access(0x040, AccessKind::Load, 2, false, 0), AccessOutcome::MissIssued);
        assert_eq!(c.access(0x080, AccessKind::Load, 3, false, 0), AccessOutcome::MissBlocked(3));
        assert_eq!(c.mshr.len(), 2);
    }

    #[test]
    fn fill_without_miss_is_error() {
        let mut c = cache();
        assert_eq!(c.fill(0x40, Line::filled(0), 0).err(), Some(CacheError::NoPendingMiss(0x40)));
    }

    #[test]
    fn lru_victim_and_dirty_writeback() {
        let mut c = cache();
        // Set 0 holds line addresses that are multiples of 4 * 64.
        assert!(c.install(0x000, Line::filled(1), true).is_none());
        assert!(c.install(0x100, Line::filled(2), false).is_none());
        c.access(0x100, AccessKind::Load, 0, false, 0);
        c.access(0x200, AccessKind::Load, 0, false, 0);
        let r = c.fill(0x200, Line::filled(3), 5).unwrap();
        assert_eq!(r.evicted, Some(Evicted { addr: 0x000, dirty: true, data: Line::filled(1) }));
    }

    #[test]
    fn invalidate_forces_miss() {
        let mut c = cache();
        c.install(0x40, Line::filled(1), false);
        assert!(c.invalidate(0x40).is_some());
        assert!(c.invalidate(0x40).is_none());
        assert_eq!(c.access(0x40, AccessKind::Load, 0, false, 0), AccessOutcome::MissIssued);
    }

    #[test]
    fn cas_compares_whole_line() {
        let mut c = cache();
        c.install(0x40, Line::filled(1), false);
        assert_eq!(c.compare_and_swap(0x40, &Line::filled(2), Line::filled(3)), Some(false));
        assert_eq!(c.compare_and_swap(0x40, &Line::filled(1), Line::filled(3)), Some(true));
        assert!(c.is_dirty(0x40));
        assert_eq!(c.compare_and_swap(0x80, &Line::filled(1), Line::filled(3)), None);
    }

    #[test]
    fn occupancy_average() {
        let mut c = cache();
        assert_eq!(c.outstanding_reads(100), 0.0);
        c.access(0x0, AccessKind::Load, 0, true, 0);
        c.access(0x40, AccessKind::Load, 0, false, 50);
        c.fill(0x0, Line::filled(0), 100).unwrap();
        c.fill(0x40, Line::filled(0), 100).unwrap();
        assert!((c.outstanding_reads(100) - 1.5).abs() < 1e-12);
        assert!((c.mshr.average_tracked(100) - 1.0).abs() < 1e-12);
    }
}
