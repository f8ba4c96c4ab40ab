//! Two-stage hot page identification at the NVM memory controller.
//!
//! Stage 1 keeps one 16-bit counter per physical superpage. At the end of an
//! interval the top-N superpages are selected and, during the next interval,
//! stage 2 counts every 4 KB page inside them with a 15-bit counter plus an
//! overflow flag. Hot pages are those whose migration benefit beats the
//! current threshold.

use std::collections::HashMap;

use serde::Serialize;

use crate::dramcache::{benefit, CostModel};
use crate::types::{Op, PAGES_PER_SUPERPAGE};

pub const COUNTER_VALUE_MAX: u16 = 0x7FFF;
pub const OVERFLOW_FLAG: u16 = 0x8000;
const SLOTS: usize = PAGES_PER_SUPERPAGE as usize;

/// Bytes of controller storage per stage-1 counter.
pub const SUPERPAGE_COUNTER_BYTES: u64 = 2;
/// Bytes of controller storage per stage-2 table: a 4-byte PSN and 512
/// two-byte counters.
pub const FINE_GRAIN_TABLE_BYTES: u64 = 4 + PAGES_PER_SUPERPAGE * 2;

fn weight_of(op: Op, write_weight: u16) -> u16 {
    match op {
        Op::Read => 1,
        Op::Write => write_weight,
    }
}

/// Stage-1 saturating access counters indexed by physical superpage number.
#[derive(Clone, Debug, Default)]
pub struct SuperpageCounterTable {
    counts: Vec<u16>,
}

impl SuperpageCounterTable {
    pub fn with_capacity(superpages: u64) -> Self {
        Self { counts: vec![0; superpages as usize] }
    }

    pub fn record(&mut self, psn: u64, op: Op, write_weight: u16) {
        let i = psn as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] = self.counts[i].saturating_add(weight_of(op, write_weight));
    }

    pub fn count(&self, psn: u64) -> u16 {
        self.counts.get(psn as usize).copied().unwrap_or(0)
    }

    pub fn reset(&mut self) {
        self.counts.fill(0);
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (u64, u16)> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(p, &c)| (p as u64, c))
    }
}

/// The `n` hottest superpages, ties broken by lower PSN. Zero counters are
/// never selected.
pub fn select_top_n(table: &SuperpageCounterTable, n: usize) -> Vec<u64> {
    let mut candidates: Vec<(u64, u16)> = table.nonzero().collect();
    candidates.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(n);
    candidates.into_iter().map(|(psn, _)| psn).collect()
}

/// Stage-2 counters for the 512 small pages of one monitored superpage.
///
/// `counters` is the hardware view (15-bit value, overflow flag in bit 15).
/// Unsaturated per-page read and write tallies are kept alongside for the
/// cost model.
#[derive(Clone, Debug)]
pub struct FineGrainTable {
    psn: u64,
    counters: Box<[u16; SLOTS]>,
    reads: Box<[u32; SLOTS]>,
    writes: Box<[u32; SLOTS]>,
}

impl FineGrainTable {
    pub fn new(psn: u64) -> Self {
        Self { psn, counters: Box::new([0; SLOTS]), reads: Box::new([0; SLOTS]), writes: Box::new([0; SLOTS]) }
    }

    pub fn psn(&self) -> u64 {
        self.psn
    }

    pub fn record(&mut self, idx: u16, op: Op, write_weight: u16) {
        let i = usize::from(idx);
        let raw = self.counters[i];
        let value = (raw & COUNTER_VALUE_MAX) as u32 + u32::from(weight_of(op, write_weight));
        self.counters[i] = if value > u32::from(COUNTER_VALUE_MAX) {
            COUNTER_VALUE_MAX | OVERFLOW_FLAG
        } else {
            (raw & OVERFLOW_FLAG) | value as u16
        };
        match op {
            Op::Read => self.reads[i] = self.reads[i].saturating_add(1),
            Op::Write => self.writes[i] = self.writes[i].saturating_add(1),
        }
    }

    /// The 15-bit counter value.
    pub fn value(&self, idx: u16) -> u16 {
        self.counters[usize::from(idx)] & COUNTER_VALUE_MAX
    }

    pub fn overflowed(&self, idx: u16) -> bool {
        self.counters[usize::from(idx)] & OVERFLOW_FLAG != 0
    }

    /// `(C_r, C_w)` for one small page.
    pub fn tallies(&self, idx: u16) -> (u64, u64) {
        let i = usize::from(idx);
        (u64::from(self.reads[i]), u64::from(self.writes[i]))
    }

    /// Summed `(C_r, C_w)` over the whole superpage.
    pub fn totals(&self) -> (u64, u64) {
        let r = self.reads.iter().map(|&v| u64::from(v)).sum();
        let w = self.writes.iter().map(|&v| u64::from(v)).sum();
        (r, w)
    }

    pub fn any_overflow(&self) -> bool {
        self.counters.iter().any(|&c| c & OVERFLOW_FLAG != 0)
    }

    pub fn touched(&self) -> impl Iterator<Item = u16> + '_ {
        (0..SLOTS as u16).filter(|&i| self.reads[usize::from(i)] > 0 || self.writes[usize::from(i)] > 0)
    }
}

/// The set of stage-2 tables for the currently monitored superpages.
#[derive(Clone, Debug, Default)]
pub struct FineGrainTables {
    tables: Vec<FineGrainTable>,
    index: HashMap<u64, usize>,
}

impl FineGrainTables {
    pub fn for_superpages(psns: &[u64]) -> Self {
        let tables: Vec<_> = psns.iter().map(|&p| FineGrainTable::new(p)).collect();
        let index = psns.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Self { tables, index }
    }

    /// Counts one access; accesses to unmonitored superpages are ignored.
    pub fn record(&mut self, psn: u64, idx: u16, op: Op, write_weight: u16) {
        if let Some(&i) = self.index.get(&psn) {
            self.tables[i].record(idx, op, write_weight);
        }
    }

    pub fn get(&self, psn: u64) -> Option<&FineGrainTable> {
        self.index.get(&psn).map(|&i| &self.tables[i])
    }

    pub fn is_monitored(&self, psn: u64) -> bool {
        self.index.contains_key(&psn)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FineGrainTable> {
        self.tables.iter()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn footprint_bytes(&self) -> u64 {
        FINE_GRAIN_TABLE_BYTES * self.tables.len() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HotPage {
    pub psn: u64,
    pub idx: u16,
    pub reads: u64,
    pub writes: u64,
    pub benefit: i64,
    pub overflow: bool,
}

/// Hot pages ordered by benefit, highest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HotClassification {
    pub pages: Vec<HotPage>,
}

fn sort_hot(pages: &mut [HotPage]) {
    pages.sort_unstable_by(|a, b| b.benefit.cmp(&a.benefit).then(a.psn.cmp(&b.psn)).then(a.idx.cmp(&b.idx)));
}

/// Small pages whose benefit exceeds `threshold`, plus every page whose
/// counter overflowed.
pub fn classify_hot(tables: &FineGrainTables, threshold: i64, model: &CostModel) -> HotClassification {
    let mut pages = Vec::new();
    for table in tables.iter() {
        for idx in table.touched() {
            let (reads, writes) = table.tallies(idx);
            let b = benefit(reads, writes, model);
            let overflow = table.overflowed(idx);
            if b > threshold || overflow {
                pages.push(HotPage { psn: table.psn(), idx, reads, writes, benefit: b, overflow });
            }
        }
    }
    sort_hot(&mut pages);
    HotClassification { pages }
}

/// Superpage-granularity variant: tallies are summed over each table and
/// `model` should carry whole-superpage move costs. `idx` is always 0.
pub fn classify_hot_superpages(tables: &FineGrainTables, threshold: i64, model: &CostModel) -> HotClassification {
    let mut pages = Vec::new();
    for table in tables.iter() {
        let (reads, writes) = table.totals();
        if reads + writes == 0 {
            continue;
        }
        let b = benefit(reads, writes, model);
        let overflow = table.any_overflow();
        if b > threshold || overflow {
            pages.push(HotPage { psn: table.psn(), idx: 0, reads, writes, benefit: b, overflow });
        }
    }
    sort_hot(&mut pages);
    HotClassification { pages }
}

/// Both stages, driven by the engine's interval scheduler.
#[derive(Clone, Debug)]
pub struct HotPageMonitor {
    stage1: SuperpageCounterTable,
    stage2: FineGrainTables,
    top_n: usize,
    write_weight: u16,
}

impl HotPageMonitor {
    pub fn new(superpages: u64, top_n: usize, write_weight: u16) -> Self {
        Self {
            stage1: SuperpageCounterTable::with_capacity(superpages),
            stage2: FineGrainTables::default(),
            top_n,
            write_weight,
        }
    }

    pub fn record_superpage_access(&mut self, psn: u64, op: Op) {
        self.stage1.record(psn, op, self.write_weight);
    }

    pub fn record_small_access(&mut self, psn: u64, idx: u16, op: Op) {
        self.stage2.record(psn, idx, op, self.write_weight);
    }

    /// Feeds one NVM reference to both stages.
    pub fn record_access(&mut self, psn: u64, idx: u16, op: Op) {
        self.record_superpage_access(psn, op);
        self.record_small_access(psn, idx, op);
    }

    pub fn stage1(&self) -> &SuperpageCounterTable {
        &self.stage1
    }

    pub fn stage2(&self) -> &FineGrainTables {
        &self.stage2
    }

    /// Interval boundary: hands back the finished stage-2 tables, replaces the
    /// monitored set with this interval's top-N and zeroes stage 1.
    pub fn reset_interval(&mut self) -> FineGrainTables {
        let next = select_top_n(&self.stage1, self.top_n);
        self.stage1.reset();
        std::mem::replace(&mut self.stage2, FineGrainTables::for_superpages(&next))
    }

    pub fn monitored_bytes(&self) -> u64 {
        self.stage2.footprint_bytes()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;

    fn model() -> CostModel {
        CostModel { t_nr: 62, t_nw: 547, t_dr: 43, t_dw: 91, t_mig: 1379, t_writeback: 1379 }
    }

    #[test]
    fn superpage_counter_examples() {
        let mut t = SuperpageCounterTable::default();
        t.record(3, Op::Read, 4);
        assert_eq!(t.count(3), 1);
        let mut t = SuperpageCounterTable::default();
        t.record(3, Op::Write, 4);
        assert_eq!(t.count(3), 4);
        for _ in 0..70_000 {
            t.record(9, Op::Read, 4);
        }
        assert_eq!(t.count(9), 65535);
    }

    #[test]
    fn top_n_examples() {
        let mut t = SuperpageCounterTable::default();
        for _ in 0..10 {
            t.record(5, Op::Read, 4);
        }
        for _ in 0..3 {
            t.record(7, Op::Read, 4);
        }
        assert_eq!(select_top_n(&t, 1), vec![5]);
        for _ in 0..7 {
            t.record(7, Op::Read, 4);
        }
        assert_eq!(select_top_n(&t, 1), vec![5]);
        assert_eq!(select_top_n(&t, 5), vec![5, 7]);
        assert!(select_top_n(&SuperpageCounterTable::with_capacity(64), 100).is_empty());
    }

    #[test]
    fn fine_grain_counter_examples() {
        let mut tables = FineGrainTables::for_superpages(&[4]);
        tables.record(4, 10, Op::Read, 4);
        let t = tables.get(4).unwrap();
        assert_eq!((t.value(10), t.overflowed(10)), (1, false));

        for _ in 0..40_000 {
            tables.record(4, 11, Op::Read, 4);
        }
        let t = tables.get(4).unwrap();
        assert_eq!((t.value(11), t.overflowed(11)), (32767, true));
        assert_eq!(t.tallies(11), (40_000, 0));

        let before: Vec<_> = (0..512).map(|i| tables.get(4).unwrap().tallies(i)).collect();
        tables.record(5, 10, Op::Write, 4);
        let after: Vec<_> = (0..512).map(|i| tables.get(4).unwrap().tallies(i)).collect();
        assert_eq!(before, after);
        assert!(tables.get(5).is_none());
    }

    #[test]
    fn table_footprint_is_1028_bytes() {
        assert_eq!(FINE_GRAIN_TABLE_BYTES, 1028);
        let tables = FineGrainTables::for_superpages(&[1, 2, 3]);
        assert_eq!(tables.footprint_bytes(), 3 * 1028);
    }

    #[test]
    fn classification_examples() {
        let mut tables = FineGrainTables::for_superpages(&[1]);
        // untouched pages are never hot
        assert!(classify_hot(&tables, 0, &model()).pages.is_empty());

        for _ in 0..100 {
            tables.record(1, 7, Op::Read, 4);
        }
        for _ in 0..10 {
            tables.record(1, 7, Op::Write, 4);
        }
        let hot = classify_hot(&tables, 0, &model());
        // (62-43)*100 + (547-91)*10 - 1379
        assert_eq!(hot.pages.len(), 1);
        assert_eq!(hot.pages[0].benefit, 1900 + 4560 - 1379);

        // a single access is not worth moving...
        tables.record(1, 8, Op::Read, 4);
        assert_eq!(classify_hot(&tables, 0, &model()).pages.len(), 1);
        // ...unless its counter overflowed
        for _ in 0..9000 {
            tables.record(1, 9, Op::Write, 4);
        }
        let hot = classify_hot(&tables, i64::MAX, &model());
        assert_eq!(hot.pages.len(), 1);
        assert!(hot.pages[0].overflow);
        assert_eq!(hot.pages[0].idx, 9);
    }

    #[test]
    fn reset_interval_rotates_stages() {
        let mut m = HotPageMonitor::new(16, 2, 4);
        for (psn, n) in [(3u64, 5), (4, 9), (5, 1)] {
            for _ in 0..n {
                m.record_access(psn, 0, Op::Read);
            }
        }
        let finished = m.reset_interval();
        assert!(finished.is_empty());
        assert!(select_top_n(m.stage1(), 10).is_empty());
        assert!(m.stage2().is_monitored(4) && m.stage2().is_monitored(3) && !m.stage2().is_monitored(5));
        assert_eq!(m.monitored_bytes(), 2 * 1028);

        m.record_access(4, 17, Op::Write);
        let finished = m.reset_interval();
        assert_eq!(finished.get(4).unwrap().tallies(17), (0, 1));
        // identical intervals select identical sets
        let mut a = HotPageMonitor::new(16, 2, 4);
        let mut b = HotPageMonitor::new(16, 2, 4);
        for m in [&mut a, &mut b] {
            for psn in [1u64, 2, 2, 3, 3, 3] {
                m.record_access(psn, 1, Op::Read);
            }
            m.reset_interval();
        }
        let psns = |m: &HotPageMonitor| m.stage2().iter().map(FineGrainTable::psn).collect::<Vec<_>>();
        assert_eq!(psns(&a), psns(&b));
    }

    proptest! {
        #[test]
        fn stage_two_matches_full_resolution_counts(
            first in prop::collection::vec((0u64..40, 0u16..512, any::<bool>()), 0..400),
            second in prop::collection::vec((0u64..40, 0u16..512, any::<bool>()), 0..2000),
            top_n in 0usize..12,
        ) {
            let op = |w: bool| if w { Op::Write } else { Op::Read };
            let mut m = HotPageMonitor::new(40, top_n, 4);
            for &(p, i, w) in &first {
                m.record_access(p, i, op(w));
            }
            m.reset_interval();
            let monitored: Vec<u64> = m.stage2().iter().map(FineGrainTable::psn).collect();
            let mut brute: HashMap<(u64, u16), (u64, u64)> = HashMap::new();
            for &(p, i, w) in &second {
                m.record_access(p, i, op(w));
                let e = brute.entry((p, i)).or_default();
                if w { e.1 += 1 } else { e.0 += 1 }
            }
            let tables = m.reset_interval();
            for psn in monitored {
                let t = tables.get(psn).unwrap();
                for idx in 0..512u16 {
                    prop_assert_eq!(t.tallies(idx), brute.get(&(psn, idx)).copied().unwrap_or_default());
                }
            }
        }

        #[test]
        fn classification_is_sorted_and_above_threshold(
            accesses in prop::collection::vec((0u16..512, 0u32..300, 0u32..30), 0..60),
            threshold in -2000i64..20_000,
        ) {
            let mut tables = FineGrainTables::for_superpages(&[0]);
            for &(idx, r, w) in &accesses {
                for _ in 0..r { tables.record(0, idx, Op::Read, 4); }
                for _ in 0..w { tables.record(0, idx, Op::Write, 4); }
            }
            let hot = classify_hot(&tables, threshold, &model());
            prop_assert_eq!(&hot, &classify_hot(&tables, threshold, &model()));
            for w in hot.pages.windows(2) {
                prop_assert!(w[0].benefit >= w[1].benefit);
            }
            for p in &hot.pages {
                prop_assert!(p.benefit > threshold || p.overflow);
            }
        }
    }
}
