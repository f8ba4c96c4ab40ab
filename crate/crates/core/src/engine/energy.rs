//! Device energy. DRAM dynamic energy is voltage × current × access time;
//! NVM energy is per bit moved. Everything is in picojoules.

use serde::Serialize;

use crate::config::{Rational, SimConfig};
use crate::types::{Op, LINE_BYTES};

pub const LINE_BITS: u64 = LINE_BYTES * 8;

fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// One open row per bank.
#[derive(Clone, Debug)]
pub struct RowBuffers {
    open: Vec<Option<u64>>,
}

impl RowBuffers {
    pub fn new(banks: u64) -> Self {
        Self { open: vec![None; banks.max(1) as usize] }
    }

    /// Opens the row holding 4 KB frame `frame4k`; returns whether it was
    /// already open.
    pub fn access(&mut self, frame4k: u64) -> bool {
        let banks = self.open.len() as u64;
        let bank = (frame4k % banks) as usize;
        let row = frame4k / banks;
        let hit = self.open[bank] == Some(row);
        self.open[bank] = Some(row);
        hit
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    voltage: f64,
    dram_read_ns: f64,
    dram_write_ns: f64,
    read_hit_ma: f64,
    write_hit_ma: f64,
    read_miss_ma: f64,
    write_miss_ma: f64,
    precharge_ma: f64,
    nvm_hit: f64,
    nvm_read_miss: f64,
    nvm_write_miss: f64,
    background_mw: f64,
    freq_ghz: f64,
}

impl EnergyModel {
    /// `dram_pages` is the DRAM capacity actually configured for the policy.
    pub fn new(config: &SimConfig, dram_pages: u64) -> Self {
        let e = &config.energy;
        let scale = dram_pages as f64 / e.dram_reference_pages as f64;
        Self {
            voltage: e.dram_voltage,
            dram_read_ns: to_f64(config.dram.read_ns),
            dram_write_ns: to_f64(config.dram.write_ns),
            read_hit_ma: e.dram_read_hit_ma,
            write_hit_ma: e.dram_write_hit_ma,
            read_miss_ma: e.dram_read_miss_ma,
            write_miss_ma: e.dram_write_miss_ma,
            precharge_ma: e.dram_precharge_ma,
            nvm_hit: e.nvm_hit_pj_per_bit,
            nvm_read_miss: e.nvm_read_miss_pj_per_bit,
            nvm_write_miss: e.nvm_write_miss_pj_per_bit,
            background_mw: e.dram_voltage * (e.dram_standby_ma + e.dram_refresh_ma * e.dram_refresh_duty) * scale,
            freq_ghz: to_f64(config.cpu.freq_ghz),
        }
    }

    /// One 64-byte DRAM access. A row miss also pays the precharge.
    pub fn dram_line(&self, op: Op, row_hit: bool) -> f64 {
        let (ma, ns) = match (op, row_hit) {
            (Op::Read, true) => (self.read_hit_ma, self.dram_read_ns),
            (Op::Read, false) => (self.read_miss_ma + self.precharge_ma, self.dram_read_ns),
            (Op::Write, true) => (self.write_hit_ma, self.dram_write_ns),
            (Op::Write, false) => (self.write_miss_ma + self.precharge_ma, self.dram_write_ns),
        };
        self.voltage * ma * ns
    }

    /// `bits` moved to or from NVM.
    pub fn nvm_bits(&self, op: Op, row_hit: bool, bits: u64) -> f64 {
        let per_bit = match (op, row_hit) {
            (_, true) => self.nvm_hit,
            (Op::Read, false) => self.nvm_read_miss,
            (Op::Write, false) => self.nvm_write_miss,
        };
        per_bit * bits as f64
    }

    pub fn nvm_line(&self, op: Op, row_hit: bool) -> f64 {
        self.nvm_bits(op, row_hit, LINE_BITS)
    }

    /// Standby plus refresh power in mW (= pJ/ns).
    pub fn background_power_mw(&self) -> f64 {
        self.background_mw
    }

    pub fn background_pj(&self, cycles: u64) -> f64 {
        self.background_mw * cycles as f64 / self.freq_ghz
    }

    /// Copying `lines` lines as one row activation followed by row hits.
    pub fn dram_copy(&self, op: Op, lines: u64) -> f64 {
        if lines == 0 {
            return 0.0;
        }
        self.dram_line(op, false) + (lines - 1) as f64 * self.dram_line(op, true)
    }

    pub fn nvm_copy(&self, op: Op, lines: u64) -> f64 {
        if lines == 0 {
            return 0.0;
        }
        self.nvm_line(op, false) + (lines - 1) as f64 * self.nvm_line(op, true)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DeviceEnergy {
    pub read_hit_pj: f64,
    pub read_miss_pj: f64,
    pub write_hit_pj: f64,
    pub write_miss_pj: f64,
}

impl DeviceEnergy {
    pub fn add(&mut self, op: Op, row_hit: bool, pj: f64) {
        match (op, row_hit) {
            (Op::Read, true) => self.read_hit_pj += pj,
            (Op::Read, false) => self.read_miss_pj += pj,
            (Op::Write, true) => self.write_hit_pj += pj,
            (Op::Write, false) => self.write_miss_pj += pj,
        }
    }

    pub fn total(&self) -> f64 {
        self.read_hit_pj + self.read_miss_pj + self.write_hit_pj + self.write_miss_pj
    }
}

/// Accumulated energy of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub dram: DeviceEnergy,
    pub nvm: DeviceEnergy,
    pub migration_dram_pj: f64,
    pub migration_nvm_pj: f64,
    pub dram_background_pj: f64,
}

impl EnergyLedger {
    pub fn dram_dynamic(&self) -> f64 {
        self.dram.total() + self.migration_dram_pj
    }

    pub fn nvm_dynamic(&self) -> f64 {
        self.nvm.total() + self.migration_nvm_pj
    }

    pub fn total(&self) -> f64 {
        self.dram_dynamic() + self.nvm_dynamic() + self.dram_background_pj
    }
}
