//! DRAM used as a cache of hot NVM pages: frame bookkeeping, the migration
//! cost model and the adaptive migration threshold.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::config::Timing;
use crate::error::{Error, Result};
use crate::types::{Op, SMALL_PAGE_BYTES};

/// Latencies and move costs, all in CPU cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub t_nr: u64,
    pub t_nw: u64,
    pub t_dr: u64,
    pub t_dw: u64,
    pub t_mig: u64,
    pub t_writeback: u64,
}

impl CostModel {
    pub fn from_timing(timing: &Timing) -> Self {
        Self {
            t_nr: timing.t_nr,
            t_nw: timing.t_nw,
            t_dr: timing.t_dr,
            t_dw: timing.t_dw,
            t_mig: timing.t_mig,
            t_writeback: timing.t_writeback,
        }
    }

    /// Same latencies, move costs multiplied by `pages` (whole-superpage moves).
    pub fn scaled(self, pages: u64) -> Self {
        Self { t_mig: self.t_mig * pages, t_writeback: self.t_writeback * pages, ..self }
    }

    fn read_gain(&self) -> i128 {
        i128::from(self.t_nr) - i128::from(self.t_dr)
    }

    fn write_gain(&self) -> i128 {
        i128::from(self.t_nw) - i128::from(self.t_dw)
    }
}

fn clamp(v: i128) -> i64 {
    v.clamp(i128::from(i64::MIN), i128::from(i64::MAX)) as i64
}

/// Cycles saved by serving `c_r` reads and `c_w` writes from DRAM, less the
/// cost of moving the page there.
pub fn benefit(c_r: u64, c_w: u64, model: &CostModel) -> i64 {
    clamp(model.read_gain() * i128::from(c_r) + model.write_gain() * i128::from(c_w) - i128::from(model.t_mig))
}

/// Net gain of replacing DRAM-resident `p1` with incoming `p2`, which also
/// pays for writing `p1` back.
pub fn swap_benefit(c_r_p2: u64, c_w_p2: u64, c_r_p1: u64, c_w_p1: u64, model: &CostModel) -> i64 {
    let dr = i128::from(c_r_p2) - i128::from(c_r_p1);
    let dw = i128::from(c_w_p2) - i128::from(c_w_p1);
    clamp(
        model.read_gain() * dr + model.write_gain() * dw
            - i128::from(model.t_mig)
            - i128::from(model.t_writeback),
    )
}

/// Pure threshold update rule. `window_bytes` is the migration traffic (both
/// directions) seen since the last adjustment.
pub fn adjust_threshold(
    current: u64,
    initial: u64,
    max: u64,
    high_water: f64,
    low_water: f64,
    window_bytes: u64,
    dram_capacity_bytes: u64,
) -> u64 {
    let traffic = window_bytes as f64;
    let capacity = dram_capacity_bytes as f64;
    if traffic > high_water * capacity {
        current.saturating_mul(2).min(max)
    } else if traffic < low_water * capacity {
        initial.max(current / 2)
    } else {
        current
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdController {
    current: u64,
    initial: u64,
    max: u64,
    high_water: f64,
    low_water: f64,
    window_bytes: u64,
}

impl ThresholdController {
    pub fn new(initial: u64, max: u64, high_water: f64, low_water: f64) -> Self {
        Self { current: initial, initial, max, high_water, low_water, window_bytes: 0 }
    }

    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn current_signed(&self) -> i64 {
        i64::try_from(self.current).unwrap_or(i64::MAX)
    }

    pub fn record_traffic(&mut self, bytes: u64) {
        self.window_bytes += bytes;
    }

    pub fn window_bytes(&self) -> u64 {
        self.window_bytes
    }

    /// Applies the rule to the current window and starts a new one.
    pub fn end_window(&mut self, dram_capacity_bytes: u64) -> u64 {
        self.current = adjust_threshold(
            self.current,
            self.initial,
            self.max,
            self.high_water,
            self.low_water,
            self.window_bytes,
            dram_capacity_bytes,
        );
        self.window_bytes = 0;
        self.current
    }
}

/// Cycle charges for moving one DRAM frame's worth of data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MoveCosts {
    pub t_mig: u64,
    pub t_writeback: u64,
    pub clflush: u64,
    /// Dropping a clean copy: restoring the 8-byte redirect in NVM.
    pub clean_evict: u64,
    pub frame_bytes: u64,
}

impl MoveCosts {
    /// Costs for frames of `pages` 4 KB pages each.
    pub fn new(model: &CostModel, clflush: u64, pages: u64) -> Self {
        let scaled = model.scaled(pages);
        Self {
            t_mig: scaled.t_mig,
            t_writeback: scaled.t_writeback,
            clflush: clflush * pages,
            clean_evict: model.t_nw,
            frame_bytes: SMALL_PAGE_BYTES * pages,
        }
    }
}

/// Side effects outside the frame bookkeeping. Each returns extra cycles,
/// typically a TLB shootdown.
pub trait MigrationHooks {
    fn migrated(&mut self, key: u64, frame: u64) -> u64;
    fn evicted(&mut self, key: u64, frame: u64, dirty: bool) -> u64;
}

/// Hooks that do nothing and cost nothing.
pub struct NoHooks;

impl MigrationHooks for NoHooks {
    fn migrated(&mut self, _: u64, _: u64) -> u64 {
        0
    }

    fn evicted(&mut self, _: u64, _: u64, _: bool) -> u64 {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Eviction {
    pub frame: u64,
    pub key: u64,
    pub dirty: bool,
    pub charged_cycles: u64,
    pub traffic_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MigrationResult {
    pub frame: u64,
    /// Includes the victim's eviction charge.
    pub charged_cycles: u64,
    pub traffic_bytes: u64,
    pub victim: Option<Eviction>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DramStats {
    pub migrations: u64,
    pub clean_evictions: u64,
    pub dirty_evictions: u64,
    pub traffic_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameState {
    Free,
    Clean,
    Dirty,
}

#[derive(Clone, Copy, Debug)]
struct Occupant {
    key: u64,
    dirty: bool,
    /// Matches the queue entry that currently represents this frame.
    seq: u64,
    reads: u64,
    writes: u64,
}

/// Free/clean/dirty partition of DRAM frames plus the frame ↔ page remap.
///
/// A page is identified by a caller-chosen `key` (an NVM page or superpage
/// number). Clean and dirty lists are FIFO; an entry made stale by a state
/// change is skipped when it reaches the head.
#[derive(Clone, Debug)]
pub struct DramManager {
    frames: u64,
    costs: MoveCosts,
    /// Frames `next_untouched..frames` have never been used.
    next_untouched: u64,
    recycled: VecDeque<u64>,
    clean: VecDeque<(u64, u64)>,
    dirty: VecDeque<(u64, u64)>,
    clean_len: u64,
    dirty_len: u64,
    occupants: HashMap<u64, Occupant>,
    by_key: HashMap<u64, u64>,
    seq: u64,
    stats: DramStats,
}

impl DramManager {
    pub fn new(frames: u64, costs: MoveCosts) -> Self {
        Self {
            frames,
            costs,
            next_untouched: 0,
            recycled: VecDeque::new(),
            clean: VecDeque::new(),
            dirty: VecDeque::new(),
            clean_len: 0,
            dirty_len: 0,
            occupants: HashMap::new(),
            by_key: HashMap::new(),
            seq: 0,
            stats: DramStats::default(),
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn costs(&self) -> MoveCosts {
        self.costs
    }

    pub fn stats(&self) -> DramStats {
        self.stats
    }

    pub fn free_len(&self) -> u64 {
        self.frames - self.clean_len - self.dirty_len
    }

    pub fn clean_len(&self) -> u64 {
        self.clean_len
    }

    pub fn dirty_len(&self) -> u64 {
        self.dirty_len
    }

    pub fn frame_of(&self, key: u64) -> Option<u64> {
        self.by_key.get(&key).copied()
    }

    pub fn key_of(&self, frame: u64) -> Option<u64> {
        self.occupants.get(&frame).map(|o| o.key)
    }

    pub fn state(&self, frame: u64) -> FrameState {
        match self.occupants.get(&frame) {
            None => FrameState::Free,
            Some(o) if o.dirty => FrameState::Dirty,
            Some(_) => FrameState::Clean,
        }
    }

    /// Every `(frame, key)` pair, sorted by frame.
    pub fn occupied(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<_> = self.occupants.iter().map(|(&f, o)| (f, o.key)).collect();
        out.sort_unstable();
        out
    }

    /// Counts a demand reference to a resident frame; a write makes it dirty.
    pub fn record_access(&mut self, frame: u64, op: Op) {
        let Some(o) = self.occupants.get_mut(&frame) else { return };
        match op {
            Op::Read => o.reads += 1,
            Op::Write => {
                o.writes += 1;
                self.mark_dirty(frame);
            }
        }
    }

    /// Moves a resident clean frame to the tail of the dirty list.
    pub fn mark_dirty(&mut self, frame: u64) {
        let Some(o) = self.occupants.get_mut(&frame) else { return };
        if o.dirty {
            return;
        }
        o.dirty = true;
        self.seq += 1;
        o.seq = self.seq;
        self.clean_len -= 1;
        self.dirty_len += 1;
        self.dirty.push_back((frame, self.seq));
    }

    /// This interval's `(reads, writes)` for a resident frame.
    pub fn tallies(&self, frame: u64) -> (u64, u64) {
        self.occupants.get(&frame).map_or((0, 0), |o| (o.reads, o.writes))
    }

    pub fn end_interval(&mut self) {
        for o in self.occupants.values_mut() {
            o.reads = 0;
            o.writes = 0;
        }
    }

    fn prune(queue: &mut VecDeque<(u64, u64)>, occupants: &HashMap<u64, Occupant>, dirty: bool) -> Option<u64> {
        while let Some(&(frame, seq)) = queue.front() {
            match occupants.get(&frame) {
                Some(o) if o.seq == seq && o.dirty == dirty => return Some(frame),
                _ => {
                    queue.pop_front();
                }
            }
        }
        None
    }

    /// The frame that the next migration would take when no frame is free:
    /// the oldest clean frame, else the oldest dirty one.
    pub fn peek_victim(&mut self) -> Option<u64> {
        if self.free_len() > 0 {
            return None;
        }
        Self::prune(&mut self.clean, &self.occupants, false)
            .or_else(|| Self::prune(&mut self.dirty, &self.occupants, true))
    }

    fn take_free(&mut self) -> Option<u64> {
        if self.next_untouched < self.frames {
            self.next_untouched += 1;
            return Some(self.next_untouched - 1);
        }
        self.recycled.pop_front()
    }

    /// Moves page `key` into DRAM, evicting a victim if nothing is free.
    pub fn migrate_page(&mut self, key: u64, hooks: &mut dyn MigrationHooks) -> Result<MigrationResult> {
        if self.frames == 0 {
            return Err(Error::NoDramFrames);
        }
        if self.by_key.contains_key(&key) {
            return Err(Error::AlreadyMigrated(key));
        }
        let (frame, victim) = match self.take_free() {
            Some(frame) => (frame, None),
            None => {
                let frame = self.peek_victim().expect("full DRAM has an occupied frame");
                let eviction = self.evict_page(frame, hooks)?;
                self.recycled.pop_back();
                (frame, Some(eviction))
            }
        };
        self.seq += 1;
        self.occupants.insert(frame, Occupant { key, dirty: false, seq: self.seq, reads: 0, writes: 0 });
        self.by_key.insert(key, frame);
        self.clean.push_back((frame, self.seq));
        self.clean_len += 1;
        self.stats.migrations += 1;
        self.stats.traffic_bytes += self.costs.frame_bytes;

        let own = self.costs.t_mig + self.costs.clflush + hooks.migrated(key, frame);
        let (victim_cycles, victim_bytes) = victim.map_or((0, 0), |v| (v.charged_cycles, v.traffic_bytes));
        Ok(MigrationResult {
            frame,
            charged_cycles: own + victim_cycles,
            traffic_bytes: self.costs.frame_bytes + victim_bytes,
            victim,
        })
    }

    /// Returns `frame` to the free list, writing it back if dirty.
    pub fn evict_page(&mut self, frame: u64, hooks: &mut dyn MigrationHooks) -> Result<Eviction> {
        let o = self.occupants.remove(&frame).ok_or(Error::FrameNotOccupied(frame))?;
        self.by_key.remove(&o.key);
        let (cost, traffic) = if o.dirty {
            self.dirty_len -= 1;
            self.stats.dirty_evictions += 1;
            (self.costs.t_writeback, self.costs.frame_bytes)
        } else {
            self.clean_len -= 1;
            self.stats.clean_evictions += 1;
            (self.costs.clean_evict, 0)
        };
        self.stats.traffic_bytes += traffic;
        self.recycled.push_back(frame);
        let extra = hooks.evicted(o.key, frame, o.dirty);
        Ok(Eviction { frame, key: o.key, dirty: o.dirty, charged_cycles: cost + extra, traffic_bytes: traffic })
    }

    pub fn check_invariants(&self) -> bool {
        let occupied = self.occupants.len() as u64;
        let dirty = self.occupants.values().filter(|o| o.dirty).count() as u64;
        occupied == self.clean_len + self.dirty_len
            && dirty == self.dirty_len
            && self.by_key.len() == self.occupants.len()
            && self.by_key.iter().all(|(k, f)| self.occupants.get(f).is_some_and(|o| o.key == *k))
            && self.free_len() + self.clean_len + self.dirty_len == self.frames
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn model() -> CostModel {
        CostModel { t_nr: 62, t_nw: 547, t_dr: 43, t_dw: 91, t_mig: 1379, t_writeback: 1379 }
    }

    fn costs() -> MoveCosts {
        MoveCosts { t_mig: 1379, t_writeback: 1816, clflush: 512, clean_evict: 547, frame_bytes: 4096 }
    }

    #[derive(Default)]
    struct Recorder {
        migrated: Vec<(u64, u64)>,
        evicted: Vec<(u64, u64, bool)>,
    }

    impl MigrationHooks for Recorder {
        fn migrated(&mut self, key: u64, frame: u64) -> u64 {
            self.migrated.push((key, frame));
            0
        }

        fn evicted(&mut self, key: u64, frame: u64, dirty: bool) -> u64 {
            self.evicted.push((key, frame, dirty));
            4000
        }
    }

    #[test]
    fn benefit_examples() {
        let m = model();
        assert_eq!(benefit(0, 0, &m), -1379);
        assert_eq!(benefit(100, 10, &m), 5081);
        assert_eq!(benefit(200, 10, &m) - benefit(100, 10, &m), 19 * 100);
    }

    #[test]
    fn swap_benefit_examples() {
        let m = model();
        assert_eq!(swap_benefit(7, 3, 7, 3, &m), -2758);
        assert_eq!(swap_benefit(200, 20, 0, 0, &m), benefit(200, 20, &m) - 1379);
        assert_eq!(swap_benefit(200, 20, 50, 5, &m), 6932);
    }

    #[test]
    fn benefit_saturates_instead_of_wrapping() {
        assert_eq!(benefit(u64::MAX, u64::MAX, &model()), i64::MAX);
        assert_eq!(swap_benefit(0, 0, u64::MAX, u64::MAX, &model()), i64::MIN);
    }

    #[test]
    fn threshold_rule() {
        let cap = 4 << 30;
        assert_eq!(adjust_threshold(4096, 512, 1 << 24, 0.25, 0.05, 0, cap), 2048);
        assert_eq!(adjust_threshold(600, 512, 1 << 24, 0.25, 0.05, 0, cap), 512);
        assert_eq!(adjust_threshold(4096, 512, 1 << 24, 0.25, 0.05, cap, cap), 8192);
        assert_eq!(adjust_threshold(1 << 24, 512, 1 << 24, 0.25, 0.05, cap, cap), 1 << 24);
        // between the water marks: unchanged
        assert_eq!(adjust_threshold(4096, 512, 1 << 24, 0.25, 0.05, cap / 10, cap), 4096);
    }

    #[test]
    fn controller_resets_window() {
        let mut t = ThresholdController::new(512, 1 << 24, 0.25, 0.05);
        t.record_traffic(1000);
        assert_eq!(t.end_window(1000), 1024);
        assert_eq!(t.window_bytes(), 0);
        assert_eq!(t.end_window(1000), 512);
    }

    #[test]
    fn move_costs_scale_with_frame_size() {
        let m = model();
        let c = MoveCosts::new(&m, 512, 512);
        assert_eq!((c.t_mig, c.t_writeback, c.frame_bytes), (1379 * 512, 1379 * 512, 2 << 20));
    }

    #[test]
    fn free_frame_needs_no_victim() {
        let mut d = DramManager::new(2, costs());
        let r = d.migrate_page(10, &mut NoHooks).unwrap();
        assert_eq!(r, MigrationResult { frame: 0, charged_cycles: 1379 + 512, traffic_bytes: 4096, victim: None });
        assert!(d.check_invariants());
    }

    #[test]
    fn rejects_double_migration_and_empty_dram() {
        let mut d = DramManager::new(2, costs());
        d.migrate_page(10, &mut NoHooks).unwrap();
        assert!(matches!(d.migrate_page(10, &mut NoHooks), Err(Error::AlreadyMigrated(10))));
        let mut none = DramManager::new(0, costs());
        assert!(matches!(none.migrate_page(1, &mut NoHooks), Err(Error::NoDramFrames)));
        assert!(matches!(d.evict_page(1, &mut NoHooks), Err(Error::FrameNotOccupied(1))));
    }

    #[test]
    fn prefers_clean_victims_over_dirty() {
        let mut d = DramManager::new(2, costs());
        let mut h = Recorder::default();
        let a = d.migrate_page(1, &mut h).unwrap().frame;
        d.migrate_page(2, &mut h).unwrap();
        d.record_access(a, Op::Write);
        let r = d.migrate_page(3, &mut h).unwrap();
        let v = r.victim.unwrap();
        assert_eq!((v.key, v.dirty), (2, false));
        assert_eq!(v.charged_cycles, 547 + 4000);
        assert_eq!(r.charged_cycles, 1379 + 512 + 547 + 4000);
        assert_eq!(r.traffic_bytes, 4096);
    }

    #[test]
    fn dirty_victim_pays_writeback_and_shootdown() {
        let mut d = DramManager::new(1, costs());
        let mut h = Recorder::default();
        let f = d.migrate_page(1, &mut h).unwrap().frame;
        d.record_access(f, Op::Write);
        assert_eq!(d.peek_victim(), Some(f));
        let r = d.migrate_page(2, &mut h).unwrap();
        assert_eq!(r.charged_cycles, 1379 + 512 + 1816 + 4000);
        assert_eq!(r.traffic_bytes, 8192);
        assert_eq!(h.evicted, vec![(1, f, true)]);
        assert_eq!(d.stats().traffic_bytes, 3 * 4096);
    }

    #[test]
    fn evict_then_remigrate_round_trip() {
        let mut d = DramManager::new(4, costs());
        let f = d.migrate_page(7, &mut NoHooks).unwrap().frame;
        let e = d.evict_page(f, &mut NoHooks).unwrap();
        assert_eq!((e.dirty, e.charged_cycles, e.traffic_bytes), (false, 547, 0));
        assert_eq!(d.frame_of(7), None);
        let g = d.migrate_page(7, &mut NoHooks).unwrap().frame;
        assert_eq!(d.key_of(g), Some(7));
        assert!(d.check_invariants());
    }

    #[test]
    fn fifo_order_within_lists() {
        let mut d = DramManager::new(3, costs());
        for k in [1, 2, 3] {
            d.migrate_page(k, &mut NoHooks).unwrap();
        }
        for k in [2, 1, 3] {
            d.mark_dirty(d.frame_of(k).unwrap());
        }
        let mut victims = Vec::new();
        for k in [4, 5, 6] {
            let r = d.migrate_page(k, &mut NoHooks).unwrap();
            victims.push(r.victim.unwrap().key);
            d.mark_dirty(r.frame);
        }
        assert_eq!(victims, vec![2, 1, 3]);
    }

    #[test]
    fn tallies_reset_each_interval() {
        let mut d = DramManager::new(1, costs());
        let f = d.migrate_page(1, &mut NoHooks).unwrap().frame;
        d.record_access(f, Op::Read);
        d.record_access(f, Op::Write);
        d.record_access(f, Op::Write);
        assert_eq!(d.tallies(f), (1, 2));
        d.end_interval();
        assert_eq!(d.tallies(f), (0, 0));
        assert_eq!(d.state(f), FrameState::Dirty);
    }

    fn oracle_eq1(cr: u64, cw: u64, m: &CostModel) -> i128 {
        (m.t_nr as i128 - m.t_dr as i128) * cr as i128 + (m.t_nw as i128 - m.t_dw as i128) * cw as i128
            - m.t_mig as i128
    }

    proptest! {
        #[test]
        fn benefit_matches_oracle(cr in 0u64..1 << 30, cw in 0u64..1 << 30, pr in 0u64..1 << 30, pw in 0u64..1 << 30) {
            let m = model();
            prop_assert_eq!(i128::from(benefit(cr, cw, &m)), oracle_eq1(cr, cw, &m));
            prop_assert_eq!(swap_benefit(cr, cw, 0, 0, &m), benefit(cr, cw, &m) - m.t_writeback as i64);
            let expected = 19 * (cr as i128 - pr as i128) + 456 * (cw as i128 - pw as i128) - 2758;
            prop_assert_eq!(i128::from(swap_benefit(cr, cw, pr, pw, &m)), expected);
        }

        #[test]
        fn bookkeeping_invariants_hold(ops in prop::collection::vec((0u8..4, 0u64..40), 0..400)) {
            let mut d = DramManager::new(8, costs());
            let mut resident = std::collections::HashSet::new();
            for (kind, x) in ops {
                match kind {
                    0 | 1 => {
                        let r = d.migrate_page(x, &mut NoHooks);
                        if resident.contains(&x) {
                            prop_assert!(r.is_err());
                        } else {
                            let r = r.unwrap();
                            if let Some(v) = r.victim { resident.remove(&v.key); }
                            resident.insert(x);
                        }
                    }
                    2 => d.record_access(x % 8, Op::Write),
                    _ => {
                        if let Ok(e) = d.evict_page(x % 8, &mut NoHooks) { resident.remove(&e.key); }
                    }
                }
                prop_assert!(d.check_invariants());
                prop_assert_eq!(d.clean_len() + d.dirty_len(), resident.len() as u64);
                for &k in &resident {
                    prop_assert_eq!(d.key_of(d.frame_of(k).unwrap()), Some(k));
                }
            }
        }
    }
}
