//! C ABI over the simulator.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every function returns a [`RainbowStatus`]; on
//! failure a message is available from [`rainbow_last_error`] on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rainbow_core::config::load_config;
use rainbow_core::dramcache::{benefit, swap_benefit, CostModel};
use rainbow_core::migmap::storage_accounting;
use rainbow_core::workload::read_trace;
use rainbow_core::{Engine, Error, Op, PolicyKind, SimConfig, TraceRecord, VirtualAddress};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RainbowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    TraceFormat = 5,
    Simulation = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RainbowPolicy {
    Rainbow = 0,
    FlatStatic = 1,
    Hscc4kMig = 2,
    Hscc2mMig = 3,
    DramOnly = 4,
}

impl From<RainbowPolicy> for PolicyKind {
    fn from(p: RainbowPolicy) -> Self {
        match p {
            RainbowPolicy::Rainbow => PolicyKind::Rainbow,
            RainbowPolicy::FlatStatic => PolicyKind::FlatStatic,
            RainbowPolicy::Hscc4kMig => PolicyKind::Hscc4kMig,
            RainbowPolicy::Hscc2mMig => PolicyKind::Hscc2mMig,
            RainbowPolicy::DramOnly => PolicyKind::DramOnly,
        }
    }
}

impl From<PolicyKind> for RainbowPolicy {
    fn from(p: PolicyKind) -> Self {
        match p {
            PolicyKind::Rainbow => RainbowPolicy::Rainbow,
            PolicyKind::FlatStatic => RainbowPolicy::FlatStatic,
            PolicyKind::Hscc4kMig => RainbowPolicy::Hscc4kMig,
            PolicyKind::Hscc2mMig => RainbowPolicy::Hscc2mMig,
            PolicyKind::DramOnly => RainbowPolicy::DramOnly,
        }
    }
}

/// Opaque simulator configuration.
pub struct RainbowConfig(SimConfig);

/// Opaque simulator instance.
pub struct RainbowSim(Engine);

/// Headline numbers of a run so far.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RainbowSummary {
    pub references: u64,
    pub total_cycles: u64,
    pub page_walks: u64,
    pub mpkr: f64,
    pub r_hit: f64,
    pub llc_misses: u64,
    pub dram_accesses: u64,
    pub nvm_accesses: u64,
    pub migrations: u64,
    pub evictions: u64,
    pub migration_traffic_bytes: u64,
    pub total_energy_pj: f64,
}

/// Latencies and per-page move costs in cycles.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RainbowCostModel {
    pub t_nr: u64,
    pub t_nw: u64,
    pub t_dr: u64,
    pub t_dw: u64,
    pub t_mig: u64,
    pub t_writeback: u64,
}

impl From<RainbowCostModel> for CostModel {
    fn from(m: RainbowCostModel) -> Self {
        CostModel { t_nr: m.t_nr, t_nw: m.t_nw, t_dr: m.t_dr, t_dw: m.t_dw, t_mig: m.t_mig, t_writeback: m.t_writeback }
    }
}

/// Controller storage in bytes.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RainbowStorage {
    pub bitmap_cache_bytes: u64,
    pub superpage_counter_bytes: u64,
    pub psn_list_bytes: u64,
    pub fine_grain_counter_bytes: u64,
    pub total_bytes: u64,
    pub full_bitmap_bytes: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(RainbowStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ConfigParse { .. } | Error::ConfigValue { .. } => RainbowStatus::Config,
            Error::TraceFormat { .. } | Error::TraceTruncated { .. } => RainbowStatus::TraceFormat,
            Error::Io { .. } => RainbowStatus::Io,
            Error::AddressOutOfRange(_) | Error::UnknownPolicy(_) | Error::InvalidGenerator(_) => {
                RainbowStatus::InvalidArgument
            }
            _ => RainbowStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RainbowStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error and converts panics to [`RainbowStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RainbowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            RainbowStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_error(format!("internal panic: {msg}"));
            RainbowStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RainbowStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rainbow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a configuration holding the defaults.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rainbow_config_new(out_config: *mut *mut RainbowConfig) -> RainbowStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        *slot = Box::into_raw(Box::new(RainbowConfig(SimConfig::default())));
        Ok(())
    })
}

/// Loads a configuration file of `section.key = value` lines.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out_config` as for
/// [`rainbow_config_new`].
#[no_mangle]
pub unsafe extern "C" fn rainbow_config_load(path: *const c_char, out_config: *mut *mut RainbowConfig) -> RainbowStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(out_config, "out_config")?;
        *slot = Box::into_raw(Box::new(RainbowConfig(load_config(path)?)));
        Ok(())
    })
}

/// Sets one key, e.g. `monitor.interval_cycles` to `1e7`. The configuration
/// is unchanged if the result would be invalid.
///
/// # Safety
/// `config` must be null or a live handle; `key` and `value` null or
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn rainbow_config_set(
    config: *mut RainbowConfig,
    key: *const c_char,
    value: *const c_char,
) -> RainbowStatus {
    guard(|| {
        let config = out(config, "config")?;
        config.0.set(text(key, "key")?, text(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rainbow_config_free(config: *mut RainbowConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Parses a policy name such as `rainbow` or `hscc-2m-mig`.
///
/// # Safety
/// `name` must be null or NUL-terminated; `out_policy` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_policy_from_name(name: *const c_char, out_policy: *mut RainbowPolicy) -> RainbowStatus {
    guard(|| {
        let kind: PolicyKind = text(name, "name")?.parse()?;
        *out(out_policy, "out_policy")? = kind.into();
        Ok(())
    })
}

/// Builds a simulator for `policy`. The configuration is copied.
///
/// # Safety
/// `config` must be null or a live handle; `out_sim` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_new(
    config: *const RainbowConfig,
    policy: RainbowPolicy,
    out_sim: *mut *mut RainbowSim,
) -> RainbowStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let slot = out(out_sim, "out_sim")?;
        let engine = Engine::for_policy(policy.into(), &config.0)?;
        *slot = Box::into_raw(Box::new(RainbowSim(engine)));
        Ok(())
    })
}

/// Simulates one reference. `op` is 0 for a read and 1 for a write. The
/// cycles charged are stored in `out_cycles` when it is not null.
///
/// # Safety
/// `sim` must be null or a live handle; `out_cycles` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_step(sim: *mut RainbowSim, op: u8, tid: u8, vaddr: u64, out_cycles: *mut u64) -> RainbowStatus {
    guard(|| {
        let sim = out(sim, "sim")?;
        let op = match op {
            0 => Op::Read,
            1 => Op::Write,
            other => return Err(Failure(RainbowStatus::InvalidArgument, format!("op must be 0 or 1, got {other}"))),
        };
        let vaddr = VirtualAddress::new(vaddr)?;
        let charge = sim.0.step(TraceRecord::new(op, vaddr, tid))?;
        if let Some(c) = out_cycles.as_mut() {
            *c = charge.cycles;
        }
        Ok(())
    })
}

/// Feeds every record of a binary trace file to the simulator. Records
/// before a format error are kept.
///
/// # Safety
/// `sim` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_run_trace(sim: *mut RainbowSim, path: *const c_char) -> RainbowStatus {
    guard(|| {
        let sim = out(sim, "sim")?;
        let reader = read_trace(text(path, "path")?)?;
        sim.0.run_fallible(reader)?;
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a live handle; `out_summary` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_summary(sim: *const RainbowSim, out_summary: *mut RainbowSummary) -> RainbowStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let slot = out(out_summary, "out_summary")?;
        let r = sim.0.report();
        *slot = RainbowSummary {
            references: r.references,
            total_cycles: r.total_cycles,
            page_walks: r.page_walks,
            mpkr: r.mpkr(),
            r_hit: r.r_hit(),
            llc_misses: r.llc.misses,
            dram_accesses: r.dram.accesses(),
            nvm_accesses: r.nvm.accesses(),
            migrations: r.migration.migrations,
            evictions: r.migration.clean_evictions + r.migration.dirty_evictions,
            migration_traffic_bytes: r.migration.traffic_bytes,
            total_energy_pj: r.total_energy_pj(),
        };
        Ok(())
    })
}

/// Full report as a JSON string, released with [`rainbow_string_free`].
///
/// # Safety
/// `sim` must be null or a live handle; `out_json` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_report_json(sim: *const RainbowSim, out_json: *mut *mut c_char) -> RainbowStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let slot = out(out_json, "out_json")?;
        let json = serde_json::to_string(&sim.0.report())
            .map_err(|e| Failure(RainbowStatus::Simulation, format!("serializing report: {e}")))?;
        *slot = CString::new(json).expect("JSON has no NUL bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rainbow_sim_free(sim: *mut RainbowSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rainbow_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cost model implied by a configuration.
///
/// # Safety
/// `config` must be null or a live handle; `out_model` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_cost_model(config: *const RainbowConfig, out_model: *mut RainbowCostModel) -> RainbowStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let m = CostModel::from_timing(&config.0.timing());
        *out(out_model, "out_model")? = RainbowCostModel {
            t_nr: m.t_nr,
            t_nw: m.t_nw,
            t_dr: m.t_dr,
            t_dw: m.t_dw,
            t_mig: m.t_mig,
            t_writeback: m.t_writeback,
        };
        Ok(())
    })
}

/// Cycles gained by migrating a page read `reads` and written `writes` times.
///
/// # Safety
/// `model` must be null or readable; `out_cycles` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_migration_benefit(
    model: *const RainbowCostModel,
    reads: u64,
    writes: u64,
    out_cycles: *mut i64,
) -> RainbowStatus {
    guard(|| {
        let model = CostModel::from(*model.as_ref().ok_or_else(|| null("model"))?);
        *out(out_cycles, "out_cycles")? = benefit(reads, writes, &model);
        Ok(())
    })
}

/// Net gain of replacing a DRAM page (`victim_*` counts) with an NVM page.
///
/// # Safety
/// `model` must be null or readable; `out_cycles` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_swap_benefit(
    model: *const RainbowCostModel,
    reads: u64,
    writes: u64,
    victim_reads: u64,
    victim_writes: u64,
    out_cycles: *mut i64,
) -> RainbowStatus {
    guard(|| {
        let model = CostModel::from(*model.as_ref().ok_or_else(|| null("model"))?);
        *out(out_cycles, "out_cycles")? = swap_benefit(reads, writes, victim_reads, victim_writes, &model);
        Ok(())
    })
}

/// Controller storage for `nvm_bytes` of NVM, `top_n` monitored superpages
/// and a bitmap cache of `bitmap_cache_entries` entries.
///
/// # Safety
/// `out_storage` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn rainbow_storage_accounting(
    nvm_bytes: u64,
    top_n: u64,
    bitmap_cache_entries: u64,
    out_storage: *mut RainbowStorage,
) -> RainbowStatus {
    guard(|| {
        let s = storage_accounting(nvm_bytes, top_n, bitmap_cache_entries);
        *out(out_storage, "out_storage")? = RainbowStorage {
            bitmap_cache_bytes: s.bitmap_cache_bytes,
            superpage_counter_bytes: s.superpage_counter_bytes,
            psn_list_bytes: s.psn_list_bytes,
            fine_grain_counter_bytes: s.fine_grain_counter_bytes,
            total_bytes: s.total_bytes,
            full_bitmap_bytes: s.full_bitmap_bytes,
        };
        Ok(())
    })
}
