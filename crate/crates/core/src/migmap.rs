//! Migration bitmaps: one bit per 4 KB page of every NVM superpage, set while
//! that page is cached in DRAM. The full bitmaps live in memory; the memory
//! controller keeps recently used ones in a small set-associative cache.

use std::collections::HashMap;

use serde::Serialize;

use crate::config::BitmapCacheConfig;
use crate::tlb::HitMiss;
use crate::types::{PAGES_PER_SUPERPAGE, SMALL_PAGE_BYTES, SUPERPAGE_BYTES};

const WORDS: usize = (PAGES_PER_SUPERPAGE / 64) as usize;

pub type BitmapRow = [u64; WORDS];

/// PSN tag plus the 512-bit row.
pub const BITMAP_CACHE_ENTRY_BYTES: u64 = 4 + PAGES_PER_SUPERPAGE / 8;

fn bit(row: &BitmapRow, idx: u16) -> bool {
    row[usize::from(idx) / 64] >> (idx % 64) & 1 == 1
}

/// The authoritative in-memory bitmaps.
#[derive(Clone, Debug, Default)]
pub struct MigrationBitmap {
    rows: HashMap<u64, BitmapRow>,
}

impl MigrationBitmap {
    pub fn get(&self, psn: u64, idx: u16) -> bool {
        self.rows.get(&psn).is_some_and(|row| bit(row, idx))
    }

    pub fn row(&self, psn: u64) -> BitmapRow {
        self.rows.get(&psn).copied().unwrap_or_default()
    }

    fn update(&mut self, psn: u64, idx: u16, value: bool) -> BitmapRow {
        let row = self.rows.entry(psn).or_default();
        let mask = 1u64 << (idx % 64);
        if value {
            row[usize::from(idx) / 64] |= mask;
        } else {
            row[usize::from(idx) / 64] &= !mask;
        }
        *row
    }

    pub fn popcount(&self, psn: u64) -> u32 {
        self.row(psn).iter().map(|w| w.count_ones()).sum()
    }

    /// Every `(psn, idx)` whose bit is set, in ascending order.
    pub fn set_bits(&self) -> Vec<(u64, u16)> {
        let mut out: Vec<(u64, u16)> = self
            .rows
            .iter()
            .flat_map(|(&psn, row)| (0..PAGES_PER_SUPERPAGE as u16).filter(|&i| bit(row, i)).map(move |i| (psn, i)))
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct CacheEntry {
    psn: u64,
    row: BitmapRow,
    stamp: u64,
}

/// Set-associative, write-through cache of bitmap rows with LRU replacement.
/// The set index is `psn mod sets`.
#[derive(Clone, Debug)]
pub struct BitmapCache {
    sets: usize,
    ways: usize,
    latency: u64,
    slots: Vec<Option<CacheEntry>>,
    clock: u64,
    stats: HitMiss,
}

impl BitmapCache {
    pub fn new(config: &BitmapCacheConfig) -> Self {
        let ways = config.ways as usize;
        let sets = (config.entries / config.ways) as usize;
        Self { sets, ways, latency: config.latency, slots: vec![None; sets * ways], clock: 0, stats: HitMiss::default() }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn stats(&self) -> HitMiss {
        self.stats
    }

    pub fn capacity_bytes(&self) -> u64 {
        (self.sets * self.ways) as u64 * BITMAP_CACHE_ENTRY_BYTES
    }

    fn set_range(&self, psn: u64) -> std::ops::Range<usize> {
        let set = (psn % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn position(&self, psn: u64) -> Option<usize> {
        self.set_range(psn).find(|&i| matches!(self.slots[i], Some(e) if e.psn == psn))
    }

    pub fn contains(&self, psn: u64) -> bool {
        self.position(psn).is_some()
    }

    /// Counted lookup; refreshes LRU on a hit.
    pub fn lookup(&mut self, psn: u64) -> Option<BitmapRow> {
        let found = self.position(psn);
        self.stats.record(found.is_some());
        let i = found?;
        self.clock += 1;
        let entry = self.slots[i].as_mut().expect("valid slot");
        entry.stamp = self.clock;
        Some(entry.row)
    }

    /// Installs `psn`, or refreshes it if resident. Returns the evicted PSN.
    pub fn fill(&mut self, psn: u64, row: BitmapRow) -> Option<u64> {
        self.clock += 1;
        let entry = CacheEntry { psn, row, stamp: self.clock };
        if let Some(i) = self.position(psn) {
            self.slots[i] = Some(entry);
            return None;
        }
        let range = self.set_range(psn);
        if let Some(i) = range.clone().find(|&i| self.slots[i].is_none()) {
            self.slots[i] = Some(entry);
            return None;
        }
        let victim = range.min_by_key(|&i| self.slots[i].map_or(0, |e| e.stamp)).expect("non-empty set");
        self.slots[victim].replace(entry).map(|e| e.psn)
    }

    /// Write-through update of a resident row; no LRU change.
    pub fn update(&mut self, psn: u64, row: BitmapRow) {
        if let Some(i) = self.position(psn) {
            if let Some(e) = self.slots[i].as_mut() {
                e.row = row;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitmapLookup {
    pub flag: bool,
    pub latency: u64,
    pub hit: bool,
}

/// Backing bitmaps plus the controller cache.
#[derive(Clone, Debug)]
pub struct MigrationMap {
    bitmap: MigrationBitmap,
    cache: BitmapCache,
    backing_read_cycles: u64,
}

impl MigrationMap {
    /// `backing_read_cycles` is charged on a cache miss, on top of the
    /// cache latency, for fetching the row from memory.
    pub fn new(config: &BitmapCacheConfig, backing_read_cycles: u64) -> Self {
        Self { bitmap: MigrationBitmap::default(), cache: BitmapCache::new(config), backing_read_cycles }
    }

    pub fn is_migrated(&mut self, psn: u64, idx: u16) -> BitmapLookup {
        let latency = self.cache.latency();
        match self.cache.lookup(psn) {
            Some(row) => BitmapLookup { flag: bit(&row, idx), latency, hit: true },
            None => {
                let row = self.bitmap.row(psn);
                self.cache.fill(psn, row);
                BitmapLookup { flag: bit(&row, idx), latency: latency + self.backing_read_cycles, hit: false }
            }
        }
    }

    pub fn set_migrated(&mut self, psn: u64, idx: u16) {
        let row = self.bitmap.update(psn, idx, true);
        self.cache.update(psn, row);
    }

    pub fn clear_migrated(&mut self, psn: u64, idx: u16) {
        let row = self.bitmap.update(psn, idx, false);
        self.cache.update(psn, row);
    }

    /// Prefetches the row for `psn`, as done alongside a superpage walk.
    pub fn cache_fill_on_sptlb_miss(&mut self, psn: u64) -> Option<u64> {
        let row = self.bitmap.row(psn);
        self.cache.fill(psn, row)
    }

    pub fn bitmap(&self) -> &MigrationBitmap {
        &self.bitmap
    }

    pub fn cache(&self) -> &BitmapCache {
        &self.cache
    }
}

/// Controller storage required by the monitoring and remapping structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StorageOverhead {
    pub bitmap_cache_bytes: u64,
    pub superpage_counter_bytes: u64,
    pub psn_list_bytes: u64,
    pub fine_grain_counter_bytes: u64,
    pub total_bytes: u64,
    /// Size of the complete in-memory bitmaps (not SRAM).
    pub full_bitmap_bytes: u64,
}

/// Itemised SRAM cost for an NVM of `nvm_bytes` monitoring `top_n`
/// superpages, with a bitmap cache of `bitmap_cache_entries` entries.
pub fn storage_accounting(nvm_bytes: u64, top_n: u64, bitmap_cache_entries: u64) -> StorageOverhead {
    let superpages = nvm_bytes / SUPERPAGE_BYTES;
    let bitmap_cache_bytes = bitmap_cache_entries * BITMAP_CACHE_ENTRY_BYTES;
    let superpage_counter_bytes = superpages * crate::monitor::SUPERPAGE_COUNTER_BYTES;
    let psn_list_bytes = 4 * top_n;
    let fine_grain_counter_bytes = top_n * PAGES_PER_SUPERPAGE * 2;
    StorageOverhead {
        bitmap_cache_bytes,
        superpage_counter_bytes,
        psn_list_bytes,
        fine_grain_counter_bytes,
        total_bytes: bitmap_cache_bytes + superpage_counter_bytes + psn_list_bytes + fine_grain_counter_bytes,
        full_bitmap_bytes: nvm_bytes / SMALL_PAGE_BYTES / 8,
    }
}
