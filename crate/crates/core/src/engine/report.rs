use std::ops::{Add, Mul, Sub};

use num_traits::One;
use serde::Serialize;

use super::energy::EnergyLedger;
use crate::dramcache::DramStats;
use crate::policy::PolicyKind;
use crate::tlb::{HitMiss, TlbStats};

/// Translation cycles by category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TranslationBreakdown {
    pub split_tlb: u64,
    pub bitmap_hit: u64,
    pub bitmap_miss: u64,
    pub page_walk: u64,
    pub remap: u64,
}

impl TranslationBreakdown {
    pub fn total(&self) -> u64 {
        self.split_tlb + self.bitmap_hit + self.bitmap_miss + self.page_walk + self.remap
    }

    /// Each category as a fraction of the total; all zero when nothing was
    /// charged.
    pub fn shares(&self) -> [f64; 5] {
        let total = self.total();
        let parts = [self.split_tlb, self.bitmap_hit, self.bitmap_miss, self.page_walk, self.remap];
        if total == 0 {
            return [0.0; 5];
        }
        parts.map(|p| p as f64 / total as f64)
    }
}

/// Cycles spent at interval boundaries moving pages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ManagementBreakdown {
    /// Copy, clflush and bookkeeping of incoming pages.
    pub migration: u64,
    /// Writebacks and redirect restores of victims.
    pub eviction: u64,
    /// TLB invalidations, already included in the two fields above.
    pub shootdown: u64,
}

impl ManagementBreakdown {
    pub fn total(&self) -> u64 {
        self.migration + self.eviction
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DeviceCounters {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub row_misses: u64,
}

impl DeviceCounters {
    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }
}

/// References to DRAM-cached pages that missed the 4 KB TLB, and what it
/// cost to find their DRAM frame (remap plus any superpage walk).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DramAddressing {
    pub events: u64,
    pub cycles: u64,
}

impl DramAddressing {
    pub fn mean_cycles(&self) -> f64 {
        if self.events == 0 {
            0.0
        } else {
            self.cycles as f64 / self.events as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub references: u64,
    pub reads: u64,
    pub writes: u64,
    pub total_cycles: u64,
    pub tlb: TlbStats,
    pub page_walks: u64,
    /// References that hit in the 2 MB pipe, out of those that probed it.
    pub superpage_hits: u64,
    pub superpage_lookups: u64,
    /// Indexed by case number minus one.
    pub cases: [u64; 4],
    pub llc: HitMiss,
    pub bitmap_cache: HitMiss,
    pub translation: TranslationBreakdown,
    pub llc_cycles: u64,
    pub device_cycles: u64,
    pub management: ManagementBreakdown,
    pub dram: DeviceCounters,
    pub nvm: DeviceCounters,
    pub migration: DramStats,
    pub intervals: u64,
    pub final_threshold: u64,
    pub dram_addressing: DramAddressing,
    pub energy: EnergyLedger,
    pub background_power_mw: f64,
    /// Running sum of every energy charge, kept apart from the ledger.
    pub charged_energy_pj: f64,
}

impl SimReport {
    /// Memory cycles per thousand references; the performance proxy.
    pub fn cycles_per_kilo_ref(&self) -> f64 {
        per_kilo(self.total_cycles, self.references)
    }

    /// Page walks per thousand references.
    pub fn mpkr(&self) -> f64 {
        per_kilo(self.page_walks, self.references)
    }

    /// Superpage TLB hit rate.
    pub fn r_hit(&self) -> f64 {
        if self.superpage_lookups == 0 {
            0.0
        } else {
            self.superpage_hits as f64 / self.superpage_lookups as f64
        }
    }

    pub fn total_energy_pj(&self) -> f64 {
        self.energy.total()
    }

    /// Checks that cycles and energy add up; returns every violation found.
    pub fn check_closure(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        let parts = self.translation.total() + self.llc_cycles + self.device_cycles + self.management.total();
        if parts != self.total_cycles {
            problems.push(format!("cycle parts sum to {parts}, clock is {}", self.total_cycles));
        }
        let energy = self.energy.total();
        if (energy - self.charged_energy_pj).abs() > 1e-9 * energy.abs().max(1.0) {
            problems.push(format!("energy ledger {energy} pJ, charges {} pJ", self.charged_energy_pj));
        }
        if self.cases.iter().sum::<u64>() != self.references {
            problems.push(format!("case counts {:?} do not cover {} references", self.cases, self.references));
        }
        if self.llc.lookups() != self.references {
            problems.push("LLC lookups differ from references".to_owned());
        }
        if self.dram.accesses() + self.nvm.accesses() != self.llc.misses {
            problems.push("device accesses differ from LLC misses".to_owned());
        }
        if self.management.shootdown > self.management.total() {
            problems.push("shootdown cycles exceed management cycles".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

fn per_kilo(count: u64, references: u64) -> f64 {
    if references == 0 {
        0.0
    } else {
        count as f64 * 1000.0 / references as f64
    }
}

/// Expected cost of locating a DRAM-cached page: Rainbow pays one NVM read
/// for the redirect when the superpage TLB hits and a three-level walk in
/// NVM plus that read otherwise; a conventional design walks four levels in
/// DRAM. Returns `(rainbow, walk)`.
pub fn analytical_dram_addressing_cost<T>(r_hit: T, t_nr: T, t_dr: T) -> (T, T)
where
    T: Copy + One + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    let one = T::one();
    let four = one + one + one + one;
    let rainbow = r_hit * t_nr + (one - r_hit) * four * t_nr;
    (rainbow, four * t_dr)
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;

    use super::*;

    #[test]
    fn break_even_at_two_thirds() {
        let (r, w) = analytical_dram_addressing_cost(Ratio::new(2i64, 3), Ratio::from(2), Ratio::from(1));
        assert_eq!(r, w);
    }

    #[test]
    fn reduction_at_95_percent() {
        let (r, w) = analytical_dram_addressing_cost(Ratio::new(95i64, 100), Ratio::from(2), Ratio::from(1));
        assert_eq!(r / w, Ratio::new(575, 1000));
        let (r, w) = analytical_dram_addressing_cost(0.95f64, 62.0, 31.0);
        assert!((1.0 - r / w - 0.425).abs() < 1e-12);
    }

    #[test]
    fn full_hit_rate_costs_one_read() {
        assert_eq!(analytical_dram_addressing_cost(1u64, 62, 43), (62, 172));
    }

    #[test]
    fn shares_sum_to_one() {
        let b = TranslationBreakdown { split_tlb: 10, bitmap_hit: 20, bitmap_miss: 5, page_walk: 60, remap: 5 };
        assert_eq!(b.total(), 100);
        assert!((b.shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(TranslationBreakdown::default().shares(), [0.0; 5]);
    }
}
