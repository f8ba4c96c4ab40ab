//! Multi-cell experiment runner and report aggregation.
//!
//! A cell is one (policy, workload, config variant) simulation. Cells share
//! nothing, so they run on as many threads as requested and produce the same
//! bytes as a serial run.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::SimConfig;
use crate::engine::{Engine, SimReport};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::workload::{read_trace, GeneratorSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const BASELINE: PolicyKind = PolicyKind::FlatStatic;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Generated(GeneratorSpec),
    Trace(PathBuf),
}

impl Workload {
    pub fn label(&self) -> String {
        match self {
            Workload::Generated(spec) => spec.kind.name().to_owned(),
            Workload::Trace(path) => {
                path.file_stem().map_or_else(|| "trace".to_owned(), |s| s.to_string_lossy().into_owned())
            }
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Workload::Generated(spec) => Some(spec.seed),
            Workload::Trace(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub id: String,
    pub policy: PolicyKind,
    pub workload: Workload,
    /// Free-form name of the config variant, e.g. `monitor.top_n=50`.
    pub variant: String,
    pub overrides: Vec<(String, String)>,
}

impl Cell {
    pub fn config(&self, base: &SimConfig) -> Result<SimConfig> {
        let mut config = base.clone();
        for (k, v) in &self.overrides {
            config.set(k, v)?;
        }
        Ok(config)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub base: SimConfig,
    pub cells: Vec<Cell>,
    pub jobs: usize,
}

/// Expands sweep shorthands to config keys.
pub fn sweep_key(name: &str) -> &str {
    match name {
        "interval" => "monitor.interval_cycles",
        "topn" | "top_n" => "monitor.top_n",
        "threshold" => "migration.hot_threshold",
        other => other,
    }
}

impl ExperimentPlan {
    /// Cross product of policies, workloads and sweep values. `sweep` is
    /// `(key, values)`; without one every cell uses `base` unchanged.
    pub fn grid(
        base: SimConfig,
        policies: &[PolicyKind],
        workloads: &[Workload],
        sweep: Option<(&str, &[String])>,
        jobs: usize,
    ) -> Self {
        let variants: Vec<(String, Vec<(String, String)>)> = match sweep {
            None => vec![("default".to_owned(), Vec::new())],
            Some((key, values)) => {
                let key = sweep_key(key);
                values.iter().map(|v| (format!("{key}={v}"), vec![(key.to_owned(), v.clone())])).collect()
            }
        };
        let mut cells = Vec::new();
        for w in workloads {
            for (variant, overrides) in &variants {
                for &policy in policies {
                    let mut id = format!("{policy}-{}", w.label());
                    if let Some(seed) = w.seed() {
                        id.push_str(&format!("-s{seed}"));
                    }
                    if !overrides.is_empty() {
                        id.push('-');
                        id.push_str(&variant.replace(['=', '.'], "_"));
                    }
                    cells.push(Cell {
                        id,
                        policy,
                        workload: w.clone(),
                        variant: variant.clone(),
                        overrides: overrides.clone(),
                    });
                }
            }
        }
        Self { base, cells, jobs }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for cell in &self.cells {
            if !seen.insert(cell.id.as_str()) {
                return Err(Error::Experiment(format!("duplicate cell id `{}`", cell.id)));
            }
            cell.config(&self.base)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub schema_version: u32,
    pub cell: Cell,
    pub config: SimConfig,
    pub report: SimReport,
}

pub fn run_cell(base: &SimConfig, cell: &Cell) -> Result<CellResult> {
    let config = cell.config(base)?;
    let mut engine = Engine::for_policy(cell.policy, &config)?;
    match &cell.workload {
        Workload::Generated(spec) => engine.run(spec.generate()?)?,
        Workload::Trace(path) => engine.run_fallible(read_trace(path)?)?,
    }
    let report = engine.report();
    report
        .check_closure()
        .map_err(|e| Error::Experiment(format!("cell `{}` failed accounting closure: {e}", cell.id)))?;
    Ok(CellResult { schema_version: SCHEMA_VERSION, cell: cell.clone(), config, report })
}

/// Runs every cell on up to `plan.jobs` threads; results keep plan order.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<CellResult>> {
    plan.validate()?;
    let n = plan.cells.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..plan.jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = run_cell(&plan.base, &plan.cells[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every cell ran")).collect()
}

pub const CSV_COLUMNS: &[&str] = &[
    "schema_version",
    "cell_id",
    "policy",
    "workload",
    "variant",
    "seed",
    "references",
    "reads",
    "writes",
    "total_cycles",
    "cycles_per_kilo_ref",
    "page_walks",
    "mpkr",
    "r_hit",
    "case1",
    "case2",
    "case3",
    "case4",
    "llc_hits",
    "llc_misses",
    "bitmap_hits",
    "bitmap_misses",
    "tlb_l1_4k_hits",
    "tlb_l1_4k_misses",
    "tlb_l2_4k_hits",
    "tlb_l2_4k_misses",
    "tlb_l1_2m_hits",
    "tlb_l1_2m_misses",
    "tlb_l2_2m_hits",
    "tlb_l2_2m_misses",
    "tr_split_tlb",
    "tr_bitmap_hit",
    "tr_bitmap_miss",
    "tr_page_walk",
    "tr_remap",
    "llc_cycles",
    "device_cycles",
    "mgmt_migration",
    "mgmt_eviction",
    "mgmt_shootdown",
    "dram_reads",
    "dram_writes",
    "nvm_reads",
    "nvm_writes",
    "migrations",
    "clean_evictions",
    "dirty_evictions",
    "migration_traffic_bytes",
    "energy_dram_dynamic_pj",
    "energy_nvm_dynamic_pj",
    "energy_dram_background_pj",
    "energy_total_pj",
    "intervals",
    "final_threshold",
    "dram_addressing_events",
    "dram_addressing_cycles",
];

pub fn csv_row(result: &CellResult) -> Vec<String> {
    let r = &result.report;
    let c = &result.cell;
    let t = &r.tlb;
    let ints = [
        r.references,
        r.reads,
        r.writes,
        r.total_cycles,
    ];
    let mut row = vec![
        result.schema_version.to_string(),
        c.id.clone(),
        c.policy.to_string(),
        c.workload.label(),
        c.variant.clone(),
        c.workload.seed().map(|s| s.to_string()).unwrap_or_default(),
    ];
    row.extend(ints.iter().map(u64::to_string));
    row.push(r.cycles_per_kilo_ref().to_string());
    row.push(r.page_walks.to_string());
    row.push(r.mpkr().to_string());
    row.push(r.r_hit().to_string());
    let rest = [
        r.cases[0],
        r.cases[1],
        r.cases[2],
        r.cases[3],
        r.llc.hits,
        r.llc.misses,
        r.bitmap_cache.hits,
        r.bitmap_cache.misses,
        t.l1_4k.hits,
        t.l1_4k.misses,
        t.l2_4k.hits,
        t.l2_4k.misses,
        t.l1_2m.hits,
        t.l1_2m.misses,
        t.l2_2m.hits,
        t.l2_2m.misses,
        r.translation.split_tlb,
        r.translation.bitmap_hit,
        r.translation.bitmap_miss,
        r.translation.page_walk,
        r.translation.remap,
        r.llc_cycles,
        r.device_cycles,
        r.management.migration,
        r.management.eviction,
        r.management.shootdown,
        r.dram.reads,
        r.dram.writes,
        r.nvm.reads,
        r.nvm.writes,
        r.migration.migrations,
        r.migration.clean_evictions,
        r.migration.dirty_evictions,
        r.migration.traffic_bytes,
    ];
    row.extend(rest.iter().map(u64::to_string));
    for e in [r.energy.dram_dynamic(), r.energy.nvm_dynamic(), r.energy.dram_background_pj, r.energy.total()] {
        row.push(e.to_string());
    }
    for v in [r.intervals, r.final_threshold, r.dram_addressing.events, r.dram_addressing.cycles] {
        row.push(v.to_string());
    }
    debug_assert_eq!(row.len(), CSV_COLUMNS.len());
    row
}

pub fn write_csv(results: &[CellResult], out: impl std::io::Write) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Experiment(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in results {
        w.write_record(csv_row(r)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing CSV", e))
}

/// Writes `results.csv` plus one JSON sidecar per cell under `dir/cells`.
pub fn write_results(dir: &Path, results: &[CellResult]) -> Result<()> {
    let cells = dir.join("cells");
    fs::create_dir_all(&cells).map_err(|e| Error::io(format!("creating {}", cells.display()), e))?;
    let csv_path = dir.join(RESULTS_FILE);
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(format!("creating {}", csv_path.display()), e))?;
    write_csv(results, file)?;
    for r in results {
        let path = cells.join(format!("{}.json", r.cell.id));
        let json = serde_json::to_string_pretty(r).map_err(|e| Error::Experiment(format!("serializing {}: {e}", r.cell.id)))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// One policy's metrics relative to the baseline of the same workload,
/// variant and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub workload: String,
    pub variant: String,
    pub seed: String,
    pub policy: String,
    pub cycle_ratio: f64,
    pub mpkr_ratio: f64,
    pub traffic_ratio: f64,
    pub energy_ratio: f64,
}

/// `a / b`, with `0 / 0` taken as 1.
fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else {
        a / b
    }
}

/// Reads `dir/results.csv` and normalizes every row to the baseline policy.
pub fn compare(dir: &Path) -> Result<Vec<Comparison>> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Err(Error::Experiment(format!("no {RESULTS_FILE} in {}", dir.display())));
    }
    let csv_err = |e: csv::Error| Error::Experiment(format!("reading {}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(&path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Experiment(format!("column `{name}` missing")))
    };
    let [workload, variant, seed, policy, cycles, mpkr, traffic, energy, version] =
        ["workload", "variant", "seed", "policy", "cycles_per_kilo_ref", "mpkr", "migration_traffic_bytes", "energy_total_pj", "schema_version"]
            .map(col);
    let (workload, variant, seed, policy) = (workload?, variant?, seed?, policy?);
    let (cycles, mpkr, traffic, energy, version) = (cycles?, mpkr?, traffic?, energy?, version?);

    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, Vec<(String, [f64; 4])>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        if rec[version] != SCHEMA_VERSION.to_string() {
            return Err(Error::Experiment(format!("unsupported schema version {}", &rec[version])));
        }
        let num = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| Error::Experiment(format!("bad number `{}` in {}", &rec[i], path.display())))
        };
        let metrics = [num(cycles)?, num(mpkr)?, num(traffic)?, num(energy)?];
        groups
            .entry((rec[workload].to_owned(), rec[variant].to_owned(), rec[seed].to_owned()))
            .or_default()
            .push((rec[policy].to_owned(), metrics));
    }
    if groups.is_empty() {
        return Err(Error::Experiment(format!("{} has no rows", path.display())));
    }
    let mut out = Vec::new();
    for ((w, v, s), rows) in groups {
        let base = rows
            .iter()
            .find(|(p, _)| p == BASELINE.name())
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::Experiment(format!("no {BASELINE} baseline for workload `{w}`, variant `{v}`")))?;
        for (p, m) in rows {
            out.push(Comparison {
                workload: w.clone(),
                variant: v.clone(),
                seed: s.clone(),
                policy: p,
                cycle_ratio: ratio(m[0], base[0]),
                mpkr_ratio: ratio(m[1], base[1]),
                traffic_ratio: ratio(m[2], base[2]),
                energy_ratio: ratio(m[3], base[3]),
            });
        }
    }
    Ok(out)
}

/// Fixed-width text table of comparisons.
pub fn format_comparisons(rows: &[Comparison]) -> String {
    let mut s = format!(
        "{:<20} {:<28} {:<6} {:<12} {:>10} {:>10} {:>10} {:>10}\n",
        "workload", "variant", "seed", "policy", "cycles", "mpkr", "traffic", "energy"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:<28} {:<6} {:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            r.workload, r.variant, r.seed, r.policy, r.cycle_ratio, r.mpkr_ratio, r.traffic_ratio, r.energy_ratio
        ));
    }
    s
}
