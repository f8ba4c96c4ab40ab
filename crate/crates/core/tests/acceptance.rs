//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rainbow_core::config::{BitmapCacheConfig, SimConfig};
use rainbow_core::dramcache::{benefit, swap_benefit, CostModel};
use rainbow_core::engine::analytical_dram_addressing_cost;
use rainbow_core::experiment::{csv_row, run_plan, CellResult, ExperimentPlan, Workload};
use rainbow_core::migmap::{storage_accounting, BitmapCache, MigrationMap};
use rainbow_core::monitor::HotPageMonitor;
use rainbow_core::workload::{histogram_preset, GeneratorKind, GeneratorSpec};
use rainbow_core::{Engine, Op, PolicyKind, SimReport};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Every report produced by the suite, for the closure criterion.
#[derive(Default)]
struct Runs {
    reports: Vec<(String, SimReport)>,
}

impl Runs {
    fn plan(&mut self, base: SimConfig, policies: &[PolicyKind], spec: GeneratorSpec, sweep: Option<(&str, &[String])>) -> Vec<CellResult> {
        let plan = ExperimentPlan::grid(base, policies, &[Workload::Generated(spec)], sweep, jobs());
        let results = run_plan(&plan).expect("acceptance cells run");
        for r in &results {
            self.reports.push((r.cell.id.clone(), r.report.clone()));
        }
        results
    }
}

fn find(results: &[CellResult], policy: PolicyKind) -> &SimReport {
    &results.iter().find(|r| r.policy_is(policy)).expect("cell present").report
}

trait PolicyIs {
    fn policy_is(&self, p: PolicyKind) -> bool;
}

impl PolicyIs for CellResult {
    fn policy_is(&self, p: PolicyKind) -> bool {
        self.cell.policy == p
    }
}

/// Superpage-friendly trace: 128 working-set superpages scattered over a
/// 4 GB span, GUPS-like hot page distribution.
fn superpage_mix(references: u64) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::HotSuperpageMix,
        footprint_bytes: 4 << 30,
        working_set_bytes: 256 << 20,
        histogram: histogram_preset("gups").unwrap(),
        references,
        seed: 1,
        ..GeneratorSpec::default()
    }
}

fn criterion_1(runs: &mut Runs) -> Outcome {
    let (r, w) = analytical_dram_addressing_cost(Ratio::new(2i64, 3), Ratio::from(2), Ratio::from(1));
    if r != w {
        return Err(format!("break-even costs differ: {r} vs {w}"));
    }
    let (r, w) = analytical_dram_addressing_cost(0.95f64, 2.0, 1.0);
    let reduction = 1.0 - r / w;
    if (reduction - 0.425).abs() > 0.001 {
        return Err(format!("reduction at 0.95 is {reduction}"));
    }

    // Many migrated pages, far more than the 4 KB TLB covers, inside a few
    // superpages that always hit the superpage TLB.
    let mut config = SimConfig::default();
    config.monitor.interval_cycles = 10_000_000;
    let spec = GeneratorSpec {
        kind: GeneratorKind::Uniform,
        footprint_bytes: 16 << 20,
        working_set_bytes: 16 << 20,
        write_fraction: 0.5,
        references: 2_000_000,
        seed: 5,
        ..GeneratorSpec::default()
    };
    let mut engine = Engine::for_policy(PolicyKind::Rainbow, &config).unwrap();
    engine.run(spec.generate().unwrap()).unwrap();
    engine.check_invariants().map_err(|e| format!("engine invariants: {e}"))?;
    let report = engine.report();
    let timing = engine.timing();
    let r_hit = report.r_hit();
    let (analytical, _) = analytical_dram_addressing_cost(r_hit, timing.t_nr as f64, timing.t_dr as f64);
    let measured = report.dram_addressing.mean_cycles();
    let events = report.dram_addressing.events;
    runs.reports.push(("remap-cost".into(), report));
    let err = (measured - analytical).abs() / analytical;
    check(
        r_hit >= 0.99 && events >= 1000 && err <= 0.05,
        format!(
            "break-even exact at 2/3, reduction {:.4} at 0.95; simulated R_hit {r_hit:.5}, {events} remaps, \
             measured {measured:.2} vs analytical {analytical:.2} cycles ({:.2}% off)",
            reduction,
            err * 100.0
        ),
    )
}

fn criterion_2() -> Outcome {
    let s = storage_accounting(1 << 40, 100, 4000);
    let got = [s.bitmap_cache_bytes, s.superpage_counter_bytes, s.psn_list_bytes, s.fine_grain_counter_bytes, s.full_bitmap_bytes];
    let want = [272_000, 1 << 20, 400, 100 << 10, 32 << 20];
    check(got == want, format!("items {got:?}, expected {want:?}, total {} B", s.total_bytes))
}

fn criterion_3() -> Outcome {
    const TRACES: u64 = 100;
    const REFS: u64 = 1_000_000;
    const INTERVALS: u64 = 4;
    const SUPERPAGES: u64 = 4096;
    const TOP_N: usize = 100;
    const WRITE_WEIGHT: u16 = 4;
    let mut compared = 0u64;
    for t in 0..TRACES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
        let mut monitor = HotPageMonitor::new(SUPERPAGES, TOP_N, WRITE_WEIGHT);
        // superpages drawn from a skewed pool so the ranking matters
        let pool: Vec<u64> = (0..600).map(|_| rng.random_range(0..SUPERPAGES)).collect();
        let mut previous_counts: HashMap<u64, u64> = HashMap::new();
        for interval in 0..INTERVALS {
            let mut counts: HashMap<u64, u64> = HashMap::new();
            let mut full: HashMap<(u64, u16), (u64, u64)> = HashMap::new();
            for _ in 0..REFS / INTERVALS {
                let a = rng.random_range(0..pool.len());
                let b = rng.random_range(0..pool.len());
                let psn = pool[a.min(b)];
                let idx = rng.random_range(0..512u16);
                let op = if rng.random_bool(0.3) { Op::Write } else { Op::Read };
                monitor.record_access(psn, idx, op);
                *counts.entry(psn).or_default() += if op == Op::Write { u64::from(WRITE_WEIGHT) } else { 1 };
                let e = full.entry((psn, idx)).or_default();
                match op {
                    Op::Read => e.0 += 1,
                    Op::Write => e.1 += 1,
                }
            }
            let tables = monitor.reset_interval();
            // top-N of the previous interval under 16-bit saturating counters,
            // ties to the lower superpage number
            let mut ranked: Vec<(u64, u64)> = previous_counts.iter().map(|(&p, &c)| (p, c.min(u64::from(u16::MAX)))).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut expected: Vec<u64> = ranked.iter().take(TOP_N).map(|&(p, _)| p).collect();
            expected.sort_unstable();
            let mut monitored: Vec<u64> = tables.iter().map(|t| t.psn()).collect();
            monitored.sort_unstable();
            if monitored != expected {
                return Err(format!("trace {t} interval {interval}: monitored superpages differ from the oracle top-N"));
            }
            for table in tables.iter() {
                for idx in 0..512u16 {
                    let want = full.get(&(table.psn(), idx)).copied().unwrap_or((0, 0));
                    if table.tallies(idx) != want {
                        return Err(format!(
                            "trace {t} interval {interval}: psn {} idx {idx} tallies {:?}, oracle {want:?}",
                            table.psn(),
                            table.tallies(idx)
                        ));
                    }
                    compared += 1;
                }
            }
            previous_counts = counts;
        }
    }
    Ok(format!("{TRACES} traces of {REFS} references, {compared} page tallies identical to the full-resolution oracle"))
}

fn criterion_4() -> Outcome {
    let config = BitmapCacheConfig { entries: 4000, ways: 8, latency: 9 };
    let capacity = BitmapCache::new(&config).capacity_bytes();
    let mut map = MigrationMap::new(&config, 62);
    let mut shadow: HashMap<u64, [bool; 512]> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0u64;
    for _ in 0..100_000 {
        let psn = rng.random_range(0..20_000u64);
        let idx = rng.random_range(0..512u16);
        let row = shadow.entry(psn).or_insert([false; 512]);
        match rng.random_range(0..3) {
            0 => {
                map.set_migrated(psn, idx);
                row[usize::from(idx)] = true;
            }
            1 => {
                map.clear_migrated(psn, idx);
                row[usize::from(idx)] = false;
            }
            _ => {
                if map.is_migrated(psn, idx).flag != row[usize::from(idx)] {
                    mismatches += 1;
                }
            }
        }
    }
    check(mismatches == 0 && capacity == 272_000, format!("{mismatches} mismatches in 100000 operations, capacity {capacity} B"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10_000 {
        let t_dr = rng.random_range(1..500u64);
        let t_dw = rng.random_range(1..1000u64);
        let t_nr = rng.random_range(t_dr..2000);
        let t_nw = rng.random_range(t_dw..5000);
        let model = CostModel {
            t_nr,
            t_nw,
            t_dr,
            t_dw,
            t_mig: rng.random_range(0..1_000_000),
            t_writeback: rng.random_range(0..1_000_000),
        };
        let [r1, w1, r2, w2] = [(); 4].map(|_| rng.random_range(0..1_000_000u64));
        let (r1, w1, r2, w2) = (r1 as i64, w1 as i64, r2 as i64, w2 as i64);
        let (nr, nw, dr, dw) = (t_nr as i64, t_nw as i64, t_dr as i64, t_dw as i64);
        let eq1 = (nr - dr) * r2 + (nw - dw) * w2 - model.t_mig as i64;
        let eq2 = (nr - dr) * (r2 - r1) + (nw - dw) * (w2 - w1) - model.t_mig as i64 - model.t_writeback as i64;
        let got1 = benefit(r2 as u64, w2 as u64, &model);
        let got2 = swap_benefit(r2 as u64, w2 as u64, r1 as u64, w1 as u64, &model);
        if got1 != eq1 || got2 != eq2 {
            return Err(format!("input {i}: got ({got1}, {got2}), oracle ({eq1}, {eq2})"));
        }
        let reduced = swap_benefit(r2 as u64, w2 as u64, 0, 0, &model);
        if reduced != got1 - model.t_writeback as i64 {
            return Err(format!("input {i}: p1 = 0 gives {reduced}, expected {}", got1 - model.t_writeback as i64));
        }
    }
    Ok("10000 random inputs match the oracle; p1 = 0 reduces to the migration benefit minus the writeback cost".into())
}

fn criterion_6_and_7(runs: &mut Runs) -> (Outcome, Outcome) {
    let results = runs.plan(SimConfig::default(), &PolicyKind::ALL, superpage_mix(10_000_000), None);
    let flat = find(&results, PolicyKind::FlatStatic).mpkr();
    let rainbow = find(&results, PolicyKind::Rainbow);
    let dram_only = find(&results, PolicyKind::DramOnly).mpkr();
    let c6 = check(
        rainbow.mpkr() <= 0.01 * flat && dram_only <= 0.01 * flat,
        format!(
            "MPKR rainbow {:.4}, dram-only {:.4}, flat-static {:.2} ({:.4}% and {:.4}% of baseline)",
            rainbow.mpkr(),
            dram_only,
            flat,
            100.0 * rainbow.mpkr() / flat,
            100.0 * dram_only / flat
        ),
    );
    let hscc = find(&results, PolicyKind::Hscc2mMig).migration.traffic_bytes;
    let ours = rainbow.migration.traffic_bytes;
    let c7 = check(
        ours > 0 && hscc >= 10 * ours,
        format!("migration traffic hscc-2m-mig {hscc} B, rainbow {ours} B, ratio {:.1}", hscc as f64 / ours.max(1) as f64),
    );
    (c6, c7)
}

fn criterion_8(runs: &mut Runs) -> Outcome {
    let spec = GeneratorSpec {
        kind: GeneratorKind::Zipf,
        footprint_bytes: 4 << 30,
        working_set_bytes: 256 << 20,
        zipf_exponent: 1.0,
        write_fraction: 0.5,
        references: 5_000_000,
        seed: 8,
        ..GeneratorSpec::default()
    };
    let policies = [PolicyKind::Rainbow, PolicyKind::FlatStatic, PolicyKind::DramOnly];
    let results = runs.plan(SimConfig::default(), &policies, spec, None);
    let (rainbow, flat, dram_only) =
        (find(&results, PolicyKind::Rainbow), find(&results, PolicyKind::FlatStatic), find(&results, PolicyKind::DramOnly));
    let config = SimConfig::default();
    let capacity_ratio = config.nvm.capacity_pages as f64 / config.dram.capacity_pages as f64;
    let power_ratio = dram_only.background_power_mw / rainbow.background_power_mw;
    let (bg_ours, bg_dram_only) = (rainbow.energy.dram_background_pj, dram_only.energy.dram_background_pj);
    check(
        rainbow.total_energy_pj() < flat.total_energy_pj()
            && (power_ratio - capacity_ratio).abs() < 1e-9 * capacity_ratio
            && bg_dram_only > bg_ours,
        format!(
            "total energy rainbow {:.3e} pJ < flat-static {:.3e} pJ; background power ratio {power_ratio:.3} \
             (capacity ratio {capacity_ratio}); background energy dram-only {bg_dram_only:.3e} pJ vs rainbow {bg_ours:.3e} pJ \
             (rainbow x capacity ratio {:.3e} pJ)",
            rainbow.total_energy_pj(),
            flat.total_energy_pj(),
            bg_ours * capacity_ratio
        ),
    )
}

fn criterion_9(runs: &mut Runs) -> Outcome {
    let values: Vec<String> = ["10", "50", "100", "200"].map(String::from).to_vec();
    let results = runs.plan(SimConfig::default(), &[PolicyKind::Rainbow], superpage_mix(10_000_000), Some(("topn", &values)));
    let cpk: Vec<f64> = results.iter().map(|r| r.report.cycles_per_kilo_ref()).collect();
    let change = (cpk[3] - cpk[2]).abs() / cpk[2];

    // the working set moves every 2e6 references, a few intervals of 1e8 cycles
    let phased = GeneratorSpec { phase_references: 2_000_000, ..superpage_mix(30_000_000) };
    let intervals: Vec<String> = ["1e6", "1e7", "1e8", "1e9"].map(String::from).to_vec();
    let sweep = runs.plan(SimConfig::default(), &[PolicyKind::Rainbow], phased, Some(("interval", &intervals)));
    let traffic: Vec<u64> = sweep.iter().map(|r| r.report.migration.traffic_bytes).collect();
    check(
        change < 0.02 && traffic[3] <= traffic[2],
        format!(
            "cycles/kref for N=10,50,100,200: {:.0?}, N=100 to 200 changes {:.3}%; \
             migration traffic for intervals 1e6,1e7,1e8,1e9: {traffic:?} B",
            cpk,
            change * 100.0
        ),
    )
}

fn criterion_10(runs: &mut Runs) -> Outcome {
    // rerun a full policy matrix and compare serialized output byte for byte
    let spec = superpage_mix(2_000_000);
    let mut config = SimConfig::default();
    config.monitor.interval_cycles = 10_000_000;
    let first = runs.plan(config.clone(), &PolicyKind::ALL, spec.clone(), None);
    let second = runs.plan(config, &PolicyKind::ALL, spec, None);
    let bytes = |rs: &[CellResult]| -> Vec<(Vec<String>, String)> {
        rs.iter().map(|r| (csv_row(r), serde_json::to_string(r).unwrap())).collect()
    };
    if bytes(&first) != bytes(&second) {
        return Err("repeated runs produced different reports".into());
    }
    let mut failures = Vec::new();
    for (id, report) in &runs.reports {
        if let Err(e) = report.check_closure() {
            failures.push(format!("{id}: {e}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("repeated runs byte-identical; closure holds on all {} acceptance runs", runs.reports.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let mut failed = 0;
    let mut report = |n: &str, outcome: Outcome, elapsed: Duration| {
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({secs:.1} s): {detail}");
            }
        }
    };

    let t = Instant::now();
    let c1 = criterion_1(&mut runs);
    report("1", c1, t.elapsed());
    let t = Instant::now();
    report("2", criterion_2(), t.elapsed());
    let t = Instant::now();
    report("3", criterion_3(), t.elapsed());
    let t = Instant::now();
    report("4", criterion_4(), t.elapsed());
    let t = Instant::now();
    report("5", criterion_5(), t.elapsed());
    let t = Instant::now();
    let (c6, c7) = criterion_6_and_7(&mut runs);
    let shared = t.elapsed();
    report("6", c6, shared);
    report("7", c7, shared);
    let t = Instant::now();
    let c8 = criterion_8(&mut runs);
    report("8", c8, t.elapsed());
    let t = Instant::now();
    let c9 = criterion_9(&mut runs);
    report("9", c9, t.elapsed());
    let t = Instant::now();
    let c10 = criterion_10(&mut runs);
    report("10", c10, t.elapsed());

    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
