//! Split two-level TLBs for 4 KB pages and 2 MB superpages.
//!
//! Each core owns an L1 per page size; the L2 of each page size is shared.
//! Both page-size pipes are probed together and a 4 KB hit always wins, since
//! a 4 KB mapping only exists for data that has moved to DRAM.

use serde::Serialize;

use crate::config::{SimConfig, TlbGeometry};
use crate::types::{PageSize, PhysicalLocation, VirtualAddress};

/// Radix levels walked for a 4 KB mapping; 2 MB mappings stop one level early.
pub const SMALL_PAGE_WALK_LEVELS: u64 = 4;
pub const SUPERPAGE_WALK_LEVELS: u64 = 3;

/// Page-walk cost given the read latency of the device holding the tables.
pub fn walk_cost(page_size: PageSize, table_read_cycles: u64) -> u64 {
    let levels = match page_size {
        PageSize::Small4K => SMALL_PAGE_WALK_LEVELS,
        PageSize::Super2M => SUPERPAGE_WALK_LEVELS,
    };
    levels * table_read_cycles
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HitMiss {
    pub hits: u64,
    pub misses: u64,
}

impl HitMiss {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }

    pub(crate) fn record(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
    }

    pub(crate) fn merge(&mut self, other: HitMiss) {
        self.hits += other.hits;
        self.misses += other.misses;
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    tag: u64,
    loc: PhysicalLocation,
    stamp: u64,
}

/// One set-associative TLB level with exact LRU per set.
#[derive(Clone, Debug)]
pub struct TlbLevel {
    sets: usize,
    ways: usize,
    latency: u64,
    slots: Vec<Option<Entry>>,
    clock: u64,
    stats: HitMiss,
}

impl TlbLevel {
    pub fn new(geometry: TlbGeometry) -> Self {
        let ways = geometry.ways as usize;
        let sets = (geometry.entries / geometry.ways) as usize;
        Self { sets, ways, latency: geometry.latency, slots: vec![None; sets * ways], clock: 0, stats: HitMiss::default() }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn stats(&self) -> HitMiss {
        self.stats
    }

    fn set_range(&self, tag: u64) -> std::ops::Range<usize> {
        let set = (tag % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn position(&self, tag: u64) -> Option<usize> {
        self.set_range(tag).find(|&i| matches!(self.slots[i], Some(e) if e.tag == tag))
    }

    /// Counted lookup; refreshes the LRU stamp on a hit.
    pub fn lookup(&mut self, tag: u64) -> Option<PhysicalLocation> {
        let found = self.position(tag);
        self.stats.record(found.is_some());
        let i = found?;
        self.clock += 1;
        let entry = self.slots[i].as_mut().expect("position points at a valid slot");
        entry.stamp = self.clock;
        Some(entry.loc)
    }

    /// Uncounted lookup with no LRU side effect.
    pub fn peek(&self, tag: u64) -> Option<PhysicalLocation> {
        self.position(tag).and_then(|i| self.slots[i].map(|e| e.loc))
    }

    /// Installs `tag -> loc`, returning the LRU victim if the set was full.
    pub fn insert(&mut self, tag: u64, loc: PhysicalLocation) -> Option<(u64, PhysicalLocation)> {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(i) = self.position(tag) {
            self.slots[i] = Some(Entry { tag, loc, stamp });
            return None;
        }
        let range = self.set_range(tag);
        if let Some(i) = range.clone().find(|&i| self.slots[i].is_none()) {
            self.slots[i] = Some(Entry { tag, loc, stamp });
            return None;
        }
        let victim = range
            .min_by_key(|&i| self.slots[i].map_or(0, |e| e.stamp))
            .expect("sets have at least one way");
        let old = self.slots[victim].replace(Entry { tag, loc, stamp }).expect("full set");
        Some((old.tag, old.loc))
    }

    pub fn invalidate(&mut self, tag: u64) -> bool {
        match self.position(tag) {
            Some(i) => {
                self.slots[i] = None;
                true
            }
            None => false,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, PhysicalLocation)> + '_ {
        self.slots.iter().flatten().map(|e| (e.tag, e.loc))
    }

    /// Checks the per-set invariants: unique tags and distinct LRU stamps.
    pub fn check_invariants(&self) -> bool {
        self.slots.chunks(self.ways).all(|set| {
            let live: Vec<_> = set.iter().flatten().collect();
            live.iter().enumerate().all(|(i, a)| {
                live[i + 1..].iter().all(|b| a.tag != b.tag && a.stamp != b.stamp)
            })
        })
    }
}

/// Which page-size pipes a policy uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Pipes {
    pub small: bool,
    pub superpage: bool,
}

impl Pipes {
    pub const SPLIT: Pipes = Pipes { small: true, superpage: true };
    pub const SMALL_ONLY: Pipes = Pipes { small: true, superpage: false };
    pub const SUPERPAGE_ONLY: Pipes = Pipes { small: false, superpage: true };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslationOutcome {
    Hit4k(PhysicalLocation),
    Hit2m(PhysicalLocation),
    MissBoth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub outcome: TranslationOutcome,
    pub latency: u64,
    /// Whether the 2 MB pipe hit, independent of the chosen outcome.
    pub superpage_hit: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FillOutcome {
    pub l1_evicted: Option<(u64, PhysicalLocation)>,
    pub l2_evicted: Option<(u64, PhysicalLocation)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TlbStats {
    pub l1_4k: HitMiss,
    pub l2_4k: HitMiss,
    pub l1_2m: HitMiss,
    pub l2_2m: HitMiss,
}

#[derive(Clone, Debug)]
struct Pipe {
    l1: Vec<TlbLevel>,
    l2: TlbLevel,
}

impl Pipe {
    fn new(cores: usize, l1: TlbGeometry, l2: TlbGeometry) -> Self {
        Self { l1: vec![TlbLevel::new(l1); cores], l2: TlbLevel::new(l2) }
    }

    /// Returns the translation and the latency to the level that resolved it.
    fn probe(&mut self, core: usize, tag: u64) -> (Option<PhysicalLocation>, u64) {
        let l1 = &mut self.l1[core];
        let l1_latency = l1.latency();
        if let Some(loc) = l1.lookup(tag) {
            return (Some(loc), l1_latency);
        }
        let latency = l1_latency + self.l2.latency();
        match self.l2.lookup(tag) {
            Some(loc) => {
                self.l1[core].insert(tag, loc);
                (Some(loc), latency)
            }
            None => (None, latency),
        }
    }

    fn fill(&mut self, core: usize, tag: u64, loc: PhysicalLocation) -> FillOutcome {
        FillOutcome { l1_evicted: self.l1[core].insert(tag, loc), l2_evicted: self.l2.insert(tag, loc) }
    }

    /// Removes `tag` everywhere; reports whether a core other than
    /// `initiator` held it in its private L1.
    fn invalidate(&mut self, tag: u64, initiator: usize) -> (bool, bool) {
        let mut any = self.l2.invalidate(tag);
        let mut remote = false;
        for (core, l1) in self.l1.iter_mut().enumerate() {
            if l1.invalidate(tag) {
                any = true;
                remote |= core != initiator;
            }
        }
        (any, remote)
    }

    fn stats(&self) -> (HitMiss, HitMiss) {
        let mut l1 = HitMiss::default();
        for level in &self.l1 {
            l1.merge(level.stats());
        }
        (l1, self.l2.stats())
    }

    fn contains(&self, core: usize, tag: u64) -> bool {
        self.l1[core].peek(tag).is_some() || self.l2.peek(tag).is_some()
    }
}

#[derive(Clone, Debug)]
pub struct SplitTlb {
    small: Pipe,
    superpage: Pipe,
    pipes: Pipes,
    cores: usize,
    shootdown_cycles: u64,
    local_invalidate_cycles: u64,
}

impl SplitTlb {
    pub fn new(config: &SimConfig, pipes: Pipes) -> Self {
        let cores = config.cpu.cores as usize;
        Self {
            small: Pipe::new(cores, config.tlb.l1_4k, config.tlb.l2_4k),
            superpage: Pipe::new(cores, config.tlb.l1_2m, config.tlb.l2_2m),
            pipes,
            cores,
            shootdown_cycles: config.tlb.shootdown_cycles,
            local_invalidate_cycles: config.tlb.local_invalidate_cycles,
        }
    }

    pub fn pipes(&self) -> Pipes {
        self.pipes
    }

    pub fn core_of(&self, tid: u8) -> usize {
        usize::from(tid) % self.cores
    }

    /// Probes the enabled pipes for `vaddr` on the core running `tid`.
    ///
    /// A 4 KB hit is final at the level it hit in. Otherwise the result is
    /// only known once every enabled pipe has resolved, so the latency is
    /// that of the deepest level reached.
    pub fn lookup_parallel(&mut self, vaddr: VirtualAddress, tid: u8) -> Lookup {
        let core = self.core_of(tid);
        let (small, small_latency) =
            if self.pipes.small { self.small.probe(core, vaddr.vpn()) } else { (None, 0) };
        let (sp, sp_latency) =
            if self.pipes.superpage { self.superpage.probe(core, vaddr.vsn()) } else { (None, 0) };
        let superpage_hit = sp.is_some();
        match (small, sp) {
            (Some(loc), _) => Lookup { outcome: TranslationOutcome::Hit4k(loc), latency: small_latency, superpage_hit },
            (None, Some(loc)) => Lookup {
                outcome: TranslationOutcome::Hit2m(loc),
                latency: small_latency.max(sp_latency),
                superpage_hit,
            },
            (None, None) => Lookup {
                outcome: TranslationOutcome::MissBoth,
                latency: small_latency.max(sp_latency),
                superpage_hit,
            },
        }
    }

    /// Installs a translation in the L1 of `tid`'s core and the shared L2.
    /// `vpn` is a 4 KB page number or a superpage number per `page_size`.
    pub fn fill(&mut self, page_size: PageSize, tid: u8, vpn: u64, loc: PhysicalLocation) -> FillOutcome {
        let core = self.core_of(tid);
        match page_size {
            PageSize::Small4K => self.small.fill(core, vpn, loc),
            PageSize::Super2M => self.superpage.fill(core, vpn, loc),
        }
    }

    /// Invalidates a 4 KB translation on every core and returns its cost.
    pub fn shootdown_4k(&mut self, vpn: u64, initiator_tid: u8) -> u64 {
        let core = self.core_of(initiator_tid);
        let (_, remote) = self.small.invalidate(vpn, core);
        self.shootdown_charge(remote)
    }

    /// Invalidates a 2 MB translation on every core and returns its cost.
    pub fn shootdown_2m(&mut self, vsn: u64, initiator_tid: u8) -> u64 {
        let core = self.core_of(initiator_tid);
        let (_, remote) = self.superpage.invalidate(vsn, core);
        self.shootdown_charge(remote)
    }

    fn shootdown_charge(&self, remote: bool) -> u64 {
        if remote {
            self.shootdown_cycles
        } else {
            self.local_invalidate_cycles
        }
    }

    pub fn stats(&self) -> TlbStats {
        let (l1_4k, l2_4k) = self.small.stats();
        let (l1_2m, l2_2m) = self.superpage.stats();
        TlbStats { l1_4k, l2_4k, l1_2m, l2_2m }
    }

    /// Whether any structure visible to `tid`'s core maps `vpn` (4 KB) or
    /// `vsn` (2 MB).
    pub fn contains(&self, page_size: PageSize, tid: u8, tag: u64) -> bool {
        let core = self.core_of(tid);
        match page_size {
            PageSize::Small4K => self.small.contains(core, tag),
            PageSize::Super2M => self.superpage.contains(core, tag),
        }
    }

    /// Every resident 4 KB or 2 MB translation in every structure.
    pub fn all_entries(&self, page_size: PageSize) -> Vec<(u64, PhysicalLocation)> {
        let pipe = match page_size {
            PageSize::Small4K => &self.small,
            PageSize::Super2M => &self.superpage,
        };
        pipe.l1.iter().chain(std::iter::once(&pipe.l2)).flat_map(|l| l.entries()).collect()
    }

    pub fn check_invariants(&self) -> bool {
        [&self.small, &self.superpage]
            .iter()
            .all(|p| p.l2.check_invariants() && p.l1.iter().all(TlbLevel::check_invariants))
    }
}
