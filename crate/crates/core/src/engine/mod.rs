//! Per-reference simulation pipeline.
//!
//! Each reference is translated (split TLB, then bitmap and redirect or a
//! page walk), filtered by the LLC and, on a miss, sent to DRAM or NVM.
//! Simulated time advances serially by each reference's charge. Every
//! `interval_cycles` the monitor rotates and hot pages are migrated.

pub mod energy;
pub mod llc;
pub mod report;
pub mod space;

use crate::config::{SimConfig, Timing};
use crate::dramcache::{swap_benefit, CostModel, DramManager, MigrationHooks, MoveCosts, ThresholdController};
use crate::error::Result;
use crate::migmap::MigrationMap;
use crate::monitor::{classify_hot, classify_hot_superpages, HotPageMonitor};
use crate::policy::{Counting, PolicyKind, PolicySpec};
use crate::tlb::{walk_cost, SplitTlb, TranslationOutcome};
use crate::types::{
    Device, Op, PageSize, PhysicalLocation, TraceRecord, VirtualAddress, LINES_PER_PAGE, LINE_BYTES,
    PAGES_PER_SUPERPAGE, SMALL_PAGE_BYTES,
};

pub use energy::{EnergyLedger, EnergyModel};
pub use llc::LlcFilter;
pub use report::{analytical_dram_addressing_cost, SimReport, TranslationBreakdown};

use energy::RowBuffers;
use llc::line_address;
use report::{DeviceCounters, ManagementBreakdown};
use space::AddressSpace;

/// Bits written to NVM when a redirect is stored or restored.
const REDIRECT_BITS: u64 = 64;

/// What one reference cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCharge {
    pub cycles: u64,
    pub energy_pj: f64,
    /// 1 to 4.
    pub case: u8,
    pub llc_hit: bool,
    pub device: Device,
    pub translation: TranslationBreakdown,
}

/// TLB shootdowns and cache invalidations triggered by moving pages.
struct Hooks<'a> {
    spec: &'a PolicySpec,
    tlb: &'a mut SplitTlb,
    llc: &'a mut LlcFilter,
    space: &'a mut AddressSpace,
    migmap: Option<&'a mut MigrationMap>,
    shootdown: u64,
}

impl Hooks<'_> {
    fn owner(&self, nvm_frame: u64) -> u64 {
        self.space.owner_of_nvm(nvm_frame).expect("every NVM frame in use has an owner")
    }

    fn invalidate_frames(&mut self, device: Device, first4k: u64, pages: u64) {
        for f in first4k..first4k + pages {
            self.llc.invalidate_page(device, f);
        }
    }

    fn charge(&mut self, cycles: u64) -> u64 {
        self.shootdown += cycles;
        cycles
    }
}

impl MigrationHooks for Hooks<'_> {
    fn migrated(&mut self, key: u64, frame: u64) -> u64 {
        if let Some(map) = self.migmap.as_deref_mut() {
            // the superpage mapping stays valid; only the bitmap changes
            map.set_migrated(key / PAGES_PER_SUPERPAGE, (key % PAGES_PER_SUPERPAGE) as u16);
            self.llc.invalidate_page(Device::Nvm, key);
            return 0;
        }
        let vnum = self.owner(key);
        match self.spec.migration {
            Some(PageSize::Super2M) => {
                self.space.remap(vnum, PhysicalLocation::new(Device::Dram, frame, PageSize::Super2M));
                self.invalidate_frames(Device::Nvm, key * PAGES_PER_SUPERPAGE, PAGES_PER_SUPERPAGE);
                let c = self.tlb.shootdown_2m(vnum, 0);
                self.charge(c)
            }
            _ => {
                self.space.remap(vnum, PhysicalLocation::new(Device::Dram, frame, PageSize::Small4K));
                self.llc.invalidate_page(Device::Nvm, key);
                let c = self.tlb.shootdown_4k(vnum, 0);
                self.charge(c)
            }
        }
    }

    fn evicted(&mut self, key: u64, frame: u64, _dirty: bool) -> u64 {
        if let Some(map) = self.migmap.as_deref_mut() {
            let (psn, idx) = (key / PAGES_PER_SUPERPAGE, key % PAGES_PER_SUPERPAGE);
            map.clear_migrated(psn, idx as u16);
            self.llc.invalidate_page(Device::Dram, frame);
            let vpn = self.owner(psn) * PAGES_PER_SUPERPAGE + idx;
            let c = self.tlb.shootdown_4k(vpn, 0);
            return self.charge(c);
        }
        let vnum = self.owner(key);
        match self.spec.migration {
            Some(PageSize::Super2M) => {
                self.space.remap(vnum, PhysicalLocation::new(Device::Nvm, key, PageSize::Super2M));
                self.invalidate_frames(Device::Dram, frame * PAGES_PER_SUPERPAGE, PAGES_PER_SUPERPAGE);
                let c = self.tlb.shootdown_2m(vnum, 0);
                self.charge(c)
            }
            _ => {
                self.space.remap(vnum, PhysicalLocation::new(Device::Nvm, key, PageSize::Small4K));
                self.llc.invalidate_page(Device::Dram, frame);
                let c = self.tlb.shootdown_4k(vnum, 0);
                self.charge(c)
            }
        }
    }
}

pub struct Engine {
    config: SimConfig,
    spec: PolicySpec,
    timing: Timing,
    /// Move costs per migration unit.
    model: CostModel,
    walk_cycles: u64,
    tlb: SplitTlb,
    llc: LlcFilter,
    space: AddressSpace,
    migmap: Option<MigrationMap>,
    monitor: Option<HotPageMonitor>,
    dram_cache: Option<DramManager>,
    threshold: ThresholdController,
    energy_model: EnergyModel,
    dram_rows: RowBuffers,
    nvm_rows: RowBuffers,
    clock: u64,
    next_interval: u64,
    acc: SimReport,
}

impl Engine {
    pub fn new(config: SimConfig, spec: PolicySpec) -> Result<Self> {
        config.validate()?;
        let timing = config.timing();
        let pages_per_move = spec.pages_per_move();
        let base_model = CostModel::from_timing(&timing);
        let model = base_model.scaled(pages_per_move);
        let table_read = if spec.tables_in_nvm { timing.t_nr } else { timing.t_dr };
        let migmap = spec.bitmap_remap.then(|| MigrationMap::new(&config.bitmap_cache, timing.t_nr));
        let (monitor, dram_cache) = match spec.migration {
            Some(_) => {
                let mut costs = MoveCosts::new(&base_model, config.migration.clflush_cycles, pages_per_move);
                if !spec.bitmap_remap {
                    // no redirect to restore; the page-table update is a DRAM write
                    costs.clean_evict = timing.t_dw;
                }
                (
                    Some(HotPageMonitor::new(
                        spec.nvm_pages / PAGES_PER_SUPERPAGE,
                        config.monitor.top_n as usize,
                        config.monitor.write_weight as u16,
                    )),
                    Some(DramManager::new(spec.dram_pages / pages_per_move, costs)),
                )
            }
            None => (None, None),
        };
        let acc = SimReport {
            policy: spec.kind,
            references: 0,
            reads: 0,
            writes: 0,
            total_cycles: 0,
            tlb: Default::default(),
            page_walks: 0,
            superpage_hits: 0,
            superpage_lookups: 0,
            cases: [0; 4],
            llc: Default::default(),
            bitmap_cache: Default::default(),
            translation: Default::default(),
            llc_cycles: 0,
            device_cycles: 0,
            management: ManagementBreakdown::default(),
            dram: DeviceCounters::default(),
            nvm: DeviceCounters::default(),
            migration: Default::default(),
            intervals: 0,
            final_threshold: config.migration.hot_threshold,
            dram_addressing: Default::default(),
            energy: EnergyLedger::default(),
            background_power_mw: 0.0,
            charged_energy_pj: 0.0,
        };
        Ok(Self {
            timing,
            model,
            walk_cycles: walk_cost(spec.page_size, table_read),
            tlb: SplitTlb::new(&config, spec.pipes),
            llc: LlcFilter::new(&config.llc),
            space: AddressSpace::new(spec.page_size, spec.placement, spec.dram_pages, spec.nvm_pages),
            migmap,
            monitor,
            dram_cache,
            threshold: ThresholdController::new(
                config.migration.hot_threshold,
                config.migration.threshold_max,
                config.migration.swap_high_water,
                config.migration.swap_low_water,
            ),
            energy_model: EnergyModel::new(&config, spec.dram_pages),
            dram_rows: RowBuffers::new(config.dram.banks),
            nvm_rows: RowBuffers::new(config.nvm.banks),
            clock: 0,
            next_interval: config.monitor.interval_cycles,
            acc,
            config,
            spec,
        })
    }

    pub fn for_policy(kind: PolicyKind, config: &SimConfig) -> Result<Self> {
        Self::new(config.clone(), PolicySpec::new(kind, config))
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn tlb(&self) -> &SplitTlb {
        &self.tlb
    }

    pub fn migration_map(&self) -> Option<&MigrationMap> {
        self.migmap.as_ref()
    }

    pub fn dram_cache(&self) -> Option<&DramManager> {
        self.dram_cache.as_ref()
    }

    pub fn threshold(&self) -> u64 {
        self.threshold.current()
    }

    /// Where `vaddr` currently lives, without touching any state.
    pub fn resolve(&self, vaddr: VirtualAddress) -> Option<(Device, u64)> {
        let idx = u64::from(vaddr.small_index());
        match self.spec.page_size {
            PageSize::Super2M => {
                let loc = self.space.lookup(vaddr.vsn())?;
                let key = loc.frame * PAGES_PER_SUPERPAGE + idx;
                if let (Some(map), Some(dram)) = (&self.migmap, &self.dram_cache) {
                    if map.bitmap().get(loc.frame, idx as u16) {
                        return dram.frame_of(key).map(|f| (Device::Dram, f));
                    }
                }
                Some((loc.device, loc.frame * PAGES_PER_SUPERPAGE + idx))
            }
            PageSize::Small4K => self.space.lookup(vaddr.vpn()).map(|l| (l.device, l.frame)),
        }
    }

    /// Bitmap-based lookup of a page under a superpage mapping; returns the
    /// 4 KB frame to access.
    fn resolve_superpage(
        &mut self,
        loc: PhysicalLocation,
        vaddr: VirtualAddress,
        tid: u8,
        walked: bool,
        tr: &mut TranslationBreakdown,
    ) -> (Device, u64) {
        let idx = vaddr.small_index();
        let key = loc.frame * PAGES_PER_SUPERPAGE + u64::from(idx);
        let Some(map) = self.migmap.as_mut() else {
            return (loc.device, key);
        };
        let probe = map.is_migrated(loc.frame, idx);
        if probe.hit {
            tr.bitmap_hit += probe.latency;
        } else {
            tr.bitmap_miss += probe.latency;
        }
        if !probe.flag {
            return (Device::Nvm, key);
        }
        let frame = self
            .dram_cache
            .as_ref()
            .and_then(|d| d.frame_of(key))
            .expect("bitmap and remap table agree");
        tr.remap += self.timing.t_nr;
        self.acc.dram_addressing.events += 1;
        self.acc.dram_addressing.cycles += self.timing.t_nr + if walked { self.walk_cycles } else { 0 };
        self.tlb.fill(PageSize::Small4K, tid, vaddr.vpn(), PhysicalLocation::new(Device::Dram, frame, PageSize::Small4K));
        (Device::Dram, frame)
    }

    fn translate(&mut self, vaddr: VirtualAddress, tid: u8) -> Result<(Device, u64, u8, TranslationBreakdown)> {
        let lookup = self.tlb.lookup_parallel(vaddr, tid);
        let mut tr = TranslationBreakdown { split_tlb: lookup.latency, ..Default::default() };
        if self.spec.pipes.superpage {
            self.acc.superpage_lookups += 1;
            self.acc.superpage_hits += u64::from(lookup.superpage_hit);
        }
        let idx = u64::from(vaddr.small_index());
        let small_frame = |loc: PhysicalLocation| match loc.page_size {
            PageSize::Small4K => loc.frame,
            PageSize::Super2M => loc.frame * PAGES_PER_SUPERPAGE + idx,
        };
        let (device, frame, case) = match lookup.outcome {
            TranslationOutcome::Hit4k(loc) => (loc.device, loc.frame, if lookup.superpage_hit { 1 } else { 2 }),
            TranslationOutcome::Hit2m(loc) if self.spec.bitmap_remap => {
                let (d, f) = self.resolve_superpage(loc, vaddr, tid, false, &mut tr);
                (d, f, 3)
            }
            TranslationOutcome::Hit2m(loc) => (loc.device, small_frame(loc), 3),
            TranslationOutcome::MissBoth => {
                tr.page_walk += self.walk_cycles;
                self.acc.page_walks += 1;
                let vnum = match self.spec.page_size {
                    PageSize::Small4K => vaddr.vpn(),
                    PageSize::Super2M => vaddr.vsn(),
                };
                let loc = self.space.map(vnum)?;
                self.tlb.fill(self.spec.page_size, tid, vnum, loc);
                if self.spec.bitmap_remap {
                    if let Some(map) = self.migmap.as_mut() {
                        map.cache_fill_on_sptlb_miss(loc.frame);
                    }
                    let (d, f) = self.resolve_superpage(loc, vaddr, tid, true, &mut tr);
                    (d, f, 4)
                } else {
                    (loc.device, small_frame(loc), 4)
                }
            }
        };
        Ok((device, frame, case, tr))
    }

    fn count(&mut self, device: Device, frame4k: u64, op: Op) {
        match device {
            Device::Nvm => {
                if let Some(m) = self.monitor.as_mut() {
                    m.record_access(frame4k / PAGES_PER_SUPERPAGE, (frame4k % PAGES_PER_SUPERPAGE) as u16, op);
                }
            }
            Device::Dram => {
                let per = self.spec.pages_per_move();
                if let Some(d) = self.dram_cache.as_mut() {
                    d.record_access(frame4k / per, op);
                }
            }
        }
    }

    fn device_access(&mut self, device: Device, frame4k: u64, op: Op) -> (u64, f64) {
        let (rows, counters, penalty) = match device {
            Device::Dram => (&mut self.dram_rows, &mut self.acc.dram, self.config.dram.row_miss_penalty_cycles),
            Device::Nvm => (&mut self.nvm_rows, &mut self.acc.nvm, self.config.nvm.row_miss_penalty_cycles),
        };
        let row_hit = rows.access(frame4k);
        if row_hit {
            counters.row_hits += 1;
        } else {
            counters.row_misses += 1;
        }
        match op {
            Op::Read => counters.reads += 1,
            Op::Write => counters.writes += 1,
        }
        let t = &self.timing;
        let base = match (device, op) {
            (Device::Dram, Op::Read) => t.t_dr,
            (Device::Dram, Op::Write) => t.t_dw,
            (Device::Nvm, Op::Read) => t.t_nr,
            (Device::Nvm, Op::Write) => t.t_nw,
        };
        let pj = match device {
            Device::Dram => {
                let pj = self.energy_model.dram_line(op, row_hit);
                self.acc.energy.dram.add(op, row_hit, pj);
                pj
            }
            Device::Nvm => {
                let pj = self.energy_model.nvm_line(op, row_hit);
                self.acc.energy.nvm.add(op, row_hit, pj);
                pj
            }
        };
        (base + if row_hit { 0 } else { penalty }, pj)
    }

    /// Simulates one reference, then any interval boundaries it crossed.
    pub fn step(&mut self, record: TraceRecord) -> Result<StepCharge> {
        let TraceRecord { op, vaddr, tid } = record;
        let (device, frame4k, case, tr) = self.translate(vaddr, tid)?;
        if op.is_write() && device == Device::Dram {
            // a written line will eventually reach the page, LLC hit or not
            let per = self.spec.pages_per_move();
            if let Some(d) = self.dram_cache.as_mut() {
                d.mark_dirty(frame4k / per);
            }
        }
        if self.spec.counting == Counting::PreLlc {
            self.count(device, frame4k, op);
        }
        let line = line_address(device, frame4k, (vaddr.raw() % SMALL_PAGE_BYTES) / LINE_BYTES);
        let llc_hit = self.llc.access(line);
        let llc_cycles = self.llc.latency();
        let (device_cycles, energy_pj) = if llc_hit {
            (0, 0.0)
        } else {
            if self.spec.counting == Counting::PostLlc {
                self.count(device, frame4k, op);
            }
            self.device_access(device, frame4k, op)
        };
        let cycles = tr.total() + llc_cycles + device_cycles;

        let a = &mut self.acc;
        a.references += 1;
        match op {
            Op::Read => a.reads += 1,
            Op::Write => a.writes += 1,
        }
        a.cases[usize::from(case - 1)] += 1;
        let t = &mut a.translation;
        t.split_tlb += tr.split_tlb;
        t.bitmap_hit += tr.bitmap_hit;
        t.bitmap_miss += tr.bitmap_miss;
        t.page_walk += tr.page_walk;
        t.remap += tr.remap;
        a.llc_cycles += llc_cycles;
        a.device_cycles += device_cycles;
        a.charged_energy_pj += energy_pj;
        self.clock += cycles;

        while self.clock >= self.next_interval {
            self.next_interval += self.config.monitor.interval_cycles;
            self.end_interval()?;
        }
        Ok(StepCharge { cycles, energy_pj, case, llc_hit, device, translation: tr })
    }

    fn end_interval(&mut self) -> Result<()> {
        self.acc.intervals += 1;
        let (Some(monitor), Some(dram)) = (self.monitor.as_mut(), self.dram_cache.as_mut()) else {
            return Ok(());
        };
        let tables = monitor.reset_interval();
        let threshold = self.threshold.current_signed();
        let superpages = self.spec.migration == Some(PageSize::Super2M);
        let hot = if superpages {
            classify_hot_superpages(&tables, threshold, &self.model)
        } else {
            classify_hot(&tables, threshold, &self.model)
        };
        let pages = self.spec.pages_per_move();
        let lines = pages * LINES_PER_PAGE;
        let mut hooks = Hooks {
            spec: &self.spec,
            tlb: &mut self.tlb,
            llc: &mut self.llc,
            space: &mut self.space,
            migmap: self.migmap.as_mut(),
            shootdown: 0,
        };
        let mut moved_now = Vec::new();
        for page in hot.pages {
            let key = if superpages { page.psn } else { page.psn * PAGES_PER_SUPERPAGE + u64::from(page.idx) };
            if dram.frame_of(key).is_some() {
                continue;
            }
            if let Some(victim) = dram.peek_victim() {
                // pages brought in at this boundary are not victims yet
                if moved_now.contains(&victim) {
                    break;
                }
                let (r1, w1) = dram.tallies(victim);
                if swap_benefit(page.reads, page.writes, r1, w1, &self.model) <= threshold {
                    break;
                }
            }
            let result = dram.migrate_page(key, &mut hooks)?;
            moved_now.push(result.frame);
            let victim_cycles = result.victim.map_or(0, |v| v.charged_cycles);
            self.acc.management.migration += result.charged_cycles - victim_cycles;
            self.acc.management.eviction += victim_cycles;
            self.clock += result.charged_cycles;
            self.threshold.record_traffic(result.traffic_bytes);

            let e = &self.energy_model;
            let mut nvm_pj = e.nvm_copy(Op::Read, lines);
            let mut dram_pj = e.dram_copy(Op::Write, lines);
            if self.spec.bitmap_remap {
                nvm_pj += e.nvm_bits(Op::Write, false, REDIRECT_BITS);
            }
            match result.victim {
                Some(v) if v.dirty => {
                    dram_pj += e.dram_copy(Op::Read, lines);
                    nvm_pj += e.nvm_copy(Op::Write, lines);
                }
                Some(_) if self.spec.bitmap_remap => nvm_pj += e.nvm_bits(Op::Write, false, REDIRECT_BITS),
                _ => {}
            }
            self.acc.energy.migration_nvm_pj += nvm_pj;
            self.acc.energy.migration_dram_pj += dram_pj;
            self.acc.charged_energy_pj += nvm_pj + dram_pj;
        }
        self.acc.management.shootdown += hooks.shootdown;
        dram.end_interval();
        self.threshold.end_window(dram.frames() * pages * SMALL_PAGE_BYTES);
        Ok(())
    }

    pub fn run(&mut self, records: impl IntoIterator<Item = TraceRecord>) -> Result<()> {
        for r in records {
            self.step(r)?;
        }
        Ok(())
    }

    /// Like [`Engine::run`] for sources that can fail, such as trace files.
    pub fn run_fallible(&mut self, records: impl IntoIterator<Item = Result<TraceRecord>>) -> Result<()> {
        for r in records {
            self.step(r?)?;
        }
        Ok(())
    }

    pub fn report(&self) -> SimReport {
        let mut r = self.acc.clone();
        r.total_cycles = self.clock;
        r.tlb = self.tlb.stats();
        r.llc = self.llc.stats();
        r.bitmap_cache = self.migmap.as_ref().map(|m| m.cache().stats()).unwrap_or_default();
        r.migration = self.dram_cache.as_ref().map(|d| d.stats()).unwrap_or_default();
        r.final_threshold = self.threshold.current();
        r.background_power_mw = self.energy_model.background_power_mw();
        let background = self.energy_model.background_pj(self.clock);
        r.energy.dram_background_pj = background;
        r.charged_energy_pj += background;
        r
    }

    /// Structural invariants of every component, plus agreement between
    /// the migration bitmap and the DRAM remap table.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.tlb.check_invariants() {
            return Err("TLB invariant violated".into());
        }
        if !self.llc.check_invariants() {
            return Err("LLC invariant violated".into());
        }
        if let Some(d) = &self.dram_cache {
            if !d.check_invariants() {
                return Err("DRAM list invariant violated".into());
            }
            if let Some(map) = &self.migmap {
                let mut from_dram: Vec<(u64, u16)> = d
                    .occupied()
                    .into_iter()
                    .map(|(_, k)| (k / PAGES_PER_SUPERPAGE, (k % PAGES_PER_SUPERPAGE) as u16))
                    .collect();
                from_dram.sort_unstable();
                if from_dram != map.bitmap().set_bits() {
                    return Err("bitmap and remap table disagree".into());
                }
            }
        }
        Ok(())
    }
}

/// Runs `records` through a fresh engine for `kind`.
pub fn simulate(kind: PolicyKind, config: &SimConfig, records: impl IntoIterator<Item = TraceRecord>) -> Result<SimReport> {
    let mut engine = Engine::for_policy(kind, config)?;
    engine.run(records)?;
    Ok(engine.report())
}
