//! System configuration.
//!
//! Configuration files are plain text: one `section.key = value` per line,
//! `#` starts a comment. Every key must be one of the fields listed in
//! [`SimConfig::KEYS`]; absent keys keep their default. Latencies in ns and
//! clock rates are parsed as exact decimals so the conversion to integer
//! cycles is reproducible bit for bit.

use std::fmt;
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::SMALL_PAGE_BYTES;

/// Exact non-negative decimal, e.g. `13.5` is stored as 27/2.
pub type Rational = Ratio<u64>;

pub const MIN_INTERVAL_CYCLES: u64 = 100_000;

/// Converts a latency to CPU cycles, rounding half up.
pub fn ns_to_cycles(ns: Rational, freq_ghz: Rational) -> u64 {
    let num = u128::from(*ns.numer()) * u128::from(*freq_ghz.numer());
    let den = u128::from(*ns.denom()) * u128::from(*freq_ghz.denom());
    ((2 * num + den) / (2 * den)) as u64
}

/// Parses `123`, `13.5`, `1e8` or `2.5e-3` into an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: u128 = digits.parse().ok()?;
    let mut denom: u128 = 10u128.checked_pow(frac_part.len() as u32)?;
    if exponent >= 0 {
        numer = numer.checked_mul(10u128.checked_pow(exponent as u32)?)?;
    } else {
        denom = denom.checked_mul(10u128.checked_pow(exponent.unsigned_abs())?)?;
    }
    let reduced = Ratio::new(numer, denom);
    Some(Ratio::new(u64::try_from(*reduced.numer()).ok()?, u64::try_from(*reduced.denom()).ok()?))
}

fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn ser_rational<S: Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(rational_to_f64(*r))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpuConfig {
    #[serde(serialize_with = "ser_rational")]
    pub freq_ghz: Rational,
    pub cores: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TlbGeometry {
    pub entries: u64,
    pub ways: u64,
    pub latency: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TlbConfig {
    pub l1_4k: TlbGeometry,
    pub l1_2m: TlbGeometry,
    pub l2_4k: TlbGeometry,
    pub l2_2m: TlbGeometry,
    pub shootdown_cycles: u64,
    pub local_invalidate_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlcConfig {
    pub size_bytes: u64,
    pub ways: u64,
    pub line_bytes: u64,
    pub latency: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviceConfig {
    #[serde(serialize_with = "ser_rational")]
    pub read_ns: Rational,
    #[serde(serialize_with = "ser_rational")]
    pub write_ns: Rational,
    /// Capacity in 4 KB pages.
    pub capacity_pages: u64,
    pub banks: u64,
    pub row_miss_penalty_cycles: u64,
}

/// DRAM currents are those of the reference capacity; background power
/// scales linearly with configured capacity. NVM energy is per bit moved.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyConfig {
    pub dram_voltage: f64,
    pub dram_standby_ma: f64,
    pub dram_refresh_ma: f64,
    pub dram_refresh_duty: f64,
    pub dram_precharge_ma: f64,
    pub dram_read_hit_ma: f64,
    pub dram_write_hit_ma: f64,
    pub dram_read_miss_ma: f64,
    pub dram_write_miss_ma: f64,
    pub dram_reference_pages: u64,
    pub nvm_hit_pj_per_bit: f64,
    pub nvm_read_miss_pj_per_bit: f64,
    pub nvm_write_miss_pj_per_bit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BitmapCacheConfig {
    pub entries: u64,
    pub ways: u64,
    pub latency: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorConfig {
    pub interval_cycles: u64,
    pub top_n: u64,
    pub write_weight: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MigrationConfig {
    #[serde(serialize_with = "ser_rational")]
    pub bandwidth_gbps: Rational,
    pub clflush_cycles: u64,
    pub hot_threshold: u64,
    pub threshold_max: u64,
    pub swap_high_water: f64,
    pub swap_low_water: f64,
    pub t_mig_cycles: Option<u64>,
    pub t_writeback_cycles: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub cpu: CpuConfig,
    pub tlb: TlbConfig,
    pub llc: LlcConfig,
    pub dram: DeviceConfig,
    pub nvm: DeviceConfig,
    pub energy: EnergyConfig,
    pub bitmap_cache: BitmapCacheConfig,
    pub monitor: MonitorConfig,
    pub migration: MigrationConfig,
}

/// Device latencies and page-move costs in CPU cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Timing {
    pub t_dr: u64,
    pub t_dw: u64,
    pub t_nr: u64,
    pub t_nw: u64,
    /// Cycles to stream one 4 KB page over the migration channel.
    pub page_transfer: u64,
    pub t_mig: u64,
    pub t_writeback: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let tlb_l1 = TlbGeometry { entries: 32, ways: 4, latency: 1 };
        let tlb_l2 = TlbGeometry { entries: 512, ways: 8, latency: 8 };
        Self {
            cpu: CpuConfig { freq_ghz: Ratio::new(16, 5), cores: 8 },
            tlb: TlbConfig {
                l1_4k: tlb_l1,
                l1_2m: tlb_l1,
                l2_4k: tlb_l2,
                l2_2m: tlb_l2,
                shootdown_cycles: 4000,
                local_invalidate_cycles: 100,
            },
            llc: LlcConfig { size_bytes: 8 << 20, ways: 16, line_bytes: 64, latency: 34 },
            dram: DeviceConfig {
                read_ns: Ratio::new(27, 2),
                write_ns: Ratio::new(57, 2),
                capacity_pages: (4u64 << 30) / SMALL_PAGE_BYTES,
                banks: 32,
                row_miss_penalty_cycles: 0,
            },
            nvm: DeviceConfig {
                read_ns: Ratio::new(39, 2),
                write_ns: Ratio::from_integer(171),
                capacity_pages: (32u64 << 30) / SMALL_PAGE_BYTES,
                banks: 256,
                row_miss_penalty_cycles: 0,
            },
            energy: EnergyConfig {
                dram_voltage: 1.5,
                dram_standby_ma: 77.0,
                dram_refresh_ma: 160.0,
                dram_refresh_duty: 0.0333,
                dram_precharge_ma: 37.0,
                dram_read_hit_ma: 120.0,
                dram_write_hit_ma: 125.0,
                dram_read_miss_ma: 237.0,
                dram_write_miss_ma: 242.0,
                dram_reference_pages: (4u64 << 30) / SMALL_PAGE_BYTES,
                nvm_hit_pj_per_bit: 1.616,
                nvm_read_miss_pj_per_bit: 81.2,
                nvm_write_miss_pj_per_bit: 1684.8,
            },
            bitmap_cache: BitmapCacheConfig { entries: 4000, ways: 8, latency: 9 },
            monitor: MonitorConfig { interval_cycles: 100_000_000, top_n: 100, write_weight: 4 },
            migration: MigrationConfig {
                bandwidth_gbps: Ratio::new(107, 10),
                clflush_cycles: 512,
                hot_threshold: 512,
                threshold_max: 1 << 24,
                swap_high_water: 0.25,
                swap_low_water: 0.05,
                t_mig_cycles: None,
                t_writeback_cycles: None,
            },
        }
    }
}

impl fmt::Debug for SimConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// A documented configuration key.
#[derive(Clone, Copy)]
pub struct SimConfigKey(pub &'static str);

macro_rules! config_keys {
    ($( $key:literal => $kind:ident, $($field:ident).+ ;)*) => {
        impl SimConfig {
            /// Every accepted configuration key.
            pub const KEYS: &'static [SimConfigKey] = &[$(SimConfigKey($key)),*];

            fn assign(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => { config_keys!(@set self, $kind, $key, value, $($field).+); } )*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }

            /// Renders every key with its current value, in file syntax.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( out.push_str(&format!("{} = {}\n", $key, config_keys!(@show self, $kind, $($field).+))); )*
                out
            }
        }
    };
    (@set $s:ident, Int, $key:literal, $v:ident, $($field:ident).+) => {
        $s.$($field).+ = parse_int($key, $v)?
    };
    (@set $s:ident, OptInt, $key:literal, $v:ident, $($field:ident).+) => {
        $s.$($field).+ = if $v == "auto" { None } else { Some(parse_int($key, $v)?) }
    };
    (@set $s:ident, Rational, $key:literal, $v:ident, $($field:ident).+) => {
        $s.$($field).+ = parse_rational($v).ok_or_else(|| Error::config($key, format!("`{}` is not a non-negative decimal", $v)))?
    };
    (@set $s:ident, Float, $key:literal, $v:ident, $($field:ident).+) => {
        $s.$($field).+ = parse_float($key, $v)?
    };
    (@show $s:ident, Int, $($field:ident).+) => { $s.$($field).+.to_string() };
    (@show $s:ident, OptInt, $($field:ident).+) => {
        $s.$($field).+.map_or_else(|| "auto".to_owned(), |v| v.to_string())
    };
    (@show $s:ident, Rational, $($field:ident).+) => { show_rational($s.$($field).+) };
    (@show $s:ident, Float, $($field:ident).+) => { $s.$($field).+.to_string() };
}

config_keys! {
    "cpu.freq_ghz" => Rational, cpu.freq_ghz;
    "cpu.cores" => Int, cpu.cores;
    "tlb.l1_4k_entries" => Int, tlb.l1_4k.entries;
    "tlb.l1_4k_ways" => Int, tlb.l1_4k.ways;
    "tlb.l1_4k_latency" => Int, tlb.l1_4k.latency;
    "tlb.l1_2m_entries" => Int, tlb.l1_2m.entries;
    "tlb.l1_2m_ways" => Int, tlb.l1_2m.ways;
    "tlb.l1_2m_latency" => Int, tlb.l1_2m.latency;
    "tlb.l2_4k_entries" => Int, tlb.l2_4k.entries;
    "tlb.l2_4k_ways" => Int, tlb.l2_4k.ways;
    "tlb.l2_4k_latency" => Int, tlb.l2_4k.latency;
    "tlb.l2_2m_entries" => Int, tlb.l2_2m.entries;
    "tlb.l2_2m_ways" => Int, tlb.l2_2m.ways;
    "tlb.l2_2m_latency" => Int, tlb.l2_2m.latency;
    "tlb.shootdown_cycles" => Int, tlb.shootdown_cycles;
    "tlb.local_invalidate_cycles" => Int, tlb.local_invalidate_cycles;
    "llc.size_bytes" => Int, llc.size_bytes;
    "llc.ways" => Int, llc.ways;
    "llc.line_bytes" => Int, llc.line_bytes;
    "llc.latency" => Int, llc.latency;
    "dram.read_ns" => Rational, dram.read_ns;
    "dram.write_ns" => Rational, dram.write_ns;
    "dram.capacity_pages" => Int, dram.capacity_pages;
    "dram.banks" => Int, dram.banks;
    "dram.row_miss_penalty_cycles" => Int, dram.row_miss_penalty_cycles;
    "nvm.read_ns" => Rational, nvm.read_ns;
    "nvm.write_ns" => Rational, nvm.write_ns;
    "nvm.capacity_pages" => Int, nvm.capacity_pages;
    "nvm.banks" => Int, nvm.banks;
    "nvm.row_miss_penalty_cycles" => Int, nvm.row_miss_penalty_cycles;
    "energy.dram_voltage" => Float, energy.dram_voltage;
    "energy.dram_standby_ma" => Float, energy.dram_standby_ma;
    "energy.dram_refresh_ma" => Float, energy.dram_refresh_ma;
    "energy.dram_refresh_duty" => Float, energy.dram_refresh_duty;
    "energy.dram_precharge_ma" => Float, energy.dram_precharge_ma;
    "energy.dram_read_hit_ma" => Float, energy.dram_read_hit_ma;
    "energy.dram_write_hit_ma" => Float, energy.dram_write_hit_ma;
    "energy.dram_read_miss_ma" => Float, energy.dram_read_miss_ma;
    "energy.dram_write_miss_ma" => Float, energy.dram_write_miss_ma;
    "energy.dram_reference_pages" => Int, energy.dram_reference_pages;
    "energy.nvm_hit_pj_per_bit" => Float, energy.nvm_hit_pj_per_bit;
    "energy.nvm_read_miss_pj_per_bit" => Float, energy.nvm_read_miss_pj_per_bit;
    "energy.nvm_write_miss_pj_per_bit" => Float, energy.nvm_write_miss_pj_per_bit;
    "bitmap_cache.entries" => Int, bitmap_cache.entries;
    "bitmap_cache.ways" => Int, bitmap_cache.ways;
    "bitmap_cache.latency" => Int, bitmap_cache.latency;
    "monitor.interval_cycles" => Int, monitor.interval_cycles;
    "monitor.top_n" => Int, monitor.top_n;
    "monitor.write_weight" => Int, monitor.write_weight;
    "migration.bandwidth_gbps" => Rational, migration.bandwidth_gbps;
    "migration.clflush_cycles" => Int, migration.clflush_cycles;
    "migration.hot_threshold" => Int, migration.hot_threshold;
    "migration.threshold_max" => Int, migration.threshold_max;
    "migration.swap_high_water" => Float, migration.swap_high_water;
    "migration.swap_low_water" => Float, migration.swap_low_water;
    "migration.t_mig_cycles" => OptInt, migration.t_mig_cycles;
    "migration.t_writeback_cycles" => OptInt, migration.t_writeback_cycles;
}

fn show_rational(r: Rational) -> String {
    let (numer, denom) = (u128::from(*r.numer()), u128::from(*r.denom()));
    // Values produced by `parse_rational` have denominators dividing a power of ten.
    let Some(scale) = (0..=19u32).find(|&k| 10u128.pow(k) % denom == 0) else {
        return rational_to_f64(r).to_string();
    };
    if scale == 0 {
        return numer.to_string();
    }
    let pow = 10u128.pow(scale);
    let scaled = numer * (pow / denom);
    let frac = format!("{:0width$}", scaled % pow, width = scale as usize);
    format!("{}.{}", scaled / pow, frac.trim_end_matches('0'))
}

fn parse_int(key: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    // Accept integral scientific notation such as `1e8`.
    parse_rational(value)
        .filter(|r| r.is_integer())
        .map(|r| r.to_integer())
        .ok_or_else(|| Error::config(key, format!("`{value}` is not a non-negative integer")))
}

fn parse_float(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(Error::config(key, format!("`{value}` is not a non-negative number"))),
    }
}

impl SimConfig {
    /// Parses configuration text on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: n + 1,
                message: format!("expected `section.key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::ConfigParse { line: n + 1, message: format!("malformed entry `{line}`") });
            }
            if !seen.insert(key.to_owned()) {
                return Err(Error::config(key, format!("duplicate entry on line {}", n + 1)));
            }
            config.assign(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key=value` override and revalidates.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut next = self.clone();
        next.assign(key.trim(), value.trim())?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, v: u64) -> Result<()> {
            if v == 0 {
                return Err(Error::config(key, "must be strictly positive"));
            }
            Ok(())
        }
        fn positive_r(key: &str, v: Rational) -> Result<()> {
            if *v.numer() == 0 {
                return Err(Error::config(key, "must be strictly positive"));
            }
            Ok(())
        }
        fn geometry(prefix: &str, entries: u64, ways: u64) -> Result<()> {
            positive(&format!("{prefix}_entries"), entries)?;
            positive(&format!("{prefix}_ways"), ways)?;
            if !entries.is_multiple_of(ways) {
                return Err(Error::config(&format!("{prefix}_entries"), "must be divisible by ways"));
            }
            Ok(())
        }

        positive_r("cpu.freq_ghz", self.cpu.freq_ghz)?;
        if !(1..=256).contains(&self.cpu.cores) {
            return Err(Error::config("cpu.cores", "must be between 1 and 256"));
        }
        for (prefix, g) in [
            ("tlb.l1_4k", self.tlb.l1_4k),
            ("tlb.l1_2m", self.tlb.l1_2m),
            ("tlb.l2_4k", self.tlb.l2_4k),
            ("tlb.l2_2m", self.tlb.l2_2m),
        ] {
            geometry(prefix, g.entries, g.ways)?;
            positive(&format!("{prefix}_latency"), g.latency)?;
        }
        positive("tlb.shootdown_cycles", self.tlb.shootdown_cycles)?;
        positive("tlb.local_invalidate_cycles", self.tlb.local_invalidate_cycles)?;

        positive("llc.latency", self.llc.latency)?;
        positive("llc.ways", self.llc.ways)?;
        if !self.llc.line_bytes.is_power_of_two() || self.llc.line_bytes > SMALL_PAGE_BYTES {
            return Err(Error::config("llc.line_bytes", "must be a power of two no larger than 4096"));
        }
        if self.llc.size_bytes == 0 || !self.llc.size_bytes.is_multiple_of(self.llc.line_bytes * self.llc.ways) {
            return Err(Error::config("llc.size_bytes", "must be a positive multiple of line_bytes * ways"));
        }

        for (name, dev) in [("dram", &self.dram), ("nvm", &self.nvm)] {
            positive_r(&format!("{name}.read_ns"), dev.read_ns)?;
            positive_r(&format!("{name}.write_ns"), dev.write_ns)?;
            positive(&format!("{name}.banks"), dev.banks)?;
        }
        positive("nvm.capacity_pages", self.nvm.capacity_pages)?;
        if self.nvm.write_ns < self.nvm.read_ns {
            return Err(Error::config("nvm.write_ns", "must be at least nvm.read_ns"));
        }
        positive("energy.dram_reference_pages", self.energy.dram_reference_pages)?;

        geometry("bitmap_cache", self.bitmap_cache.entries, self.bitmap_cache.ways)?;
        positive("bitmap_cache.latency", self.bitmap_cache.latency)?;

        if self.monitor.interval_cycles < MIN_INTERVAL_CYCLES {
            return Err(Error::config("monitor.interval_cycles", format!("must be at least {MIN_INTERVAL_CYCLES}")));
        }
        positive("monitor.write_weight", self.monitor.write_weight)?;
        if self.monitor.write_weight > u64::from(u16::MAX) {
            return Err(Error::config("monitor.write_weight", "must fit in 16 bits"));
        }

        positive_r("migration.bandwidth_gbps", self.migration.bandwidth_gbps)?;
        if self.migration.threshold_max < self.migration.hot_threshold {
            return Err(Error::config("migration.threshold_max", "must be at least migration.hot_threshold"));
        }
        if self.migration.swap_high_water > 1.0 {
            return Err(Error::config("migration.swap_high_water", "must be a fraction in [0, 1]"));
        }
        if self.migration.swap_low_water > self.migration.swap_high_water {
            return Err(Error::config("migration.swap_low_water", "must not exceed migration.swap_high_water"));
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        let f = self.cpu.freq_ghz;
        let t_dr = ns_to_cycles(self.dram.read_ns, f);
        let t_dw = ns_to_cycles(self.dram.write_ns, f);
        let t_nr = ns_to_cycles(self.nvm.read_ns, f);
        let t_nw = ns_to_cycles(self.nvm.write_ns, f);
        // bytes / (GB/s) = ns
        let transfer_ns = Ratio::from_integer(SMALL_PAGE_BYTES) / self.migration.bandwidth_gbps;
        let page_transfer = ns_to_cycles(transfer_ns, f);
        Timing {
            t_dr,
            t_dw,
            t_nr,
            t_nw,
            page_transfer,
            t_mig: self.migration.t_mig_cycles.unwrap_or(page_transfer + t_nr + t_dw),
            t_writeback: self.migration.t_writeback_cycles.unwrap_or(page_transfer + t_dr + t_nw),
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    SimConfig::parse(&text)
}
