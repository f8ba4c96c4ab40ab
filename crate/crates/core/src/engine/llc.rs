//! Last-level cache directory. Only tags are tracked; the cache decides
//! which references reach a memory device.

use crate::config::LlcConfig;
use crate::tlb::HitMiss;
use crate::types::{Device, LINES_PER_PAGE};

const EMPTY: u64 = u64::MAX;
const NVM_BIT: u64 = 1 << 62;

/// Physical line number of line `line` in 4 KB frame `frame4k` on `device`.
pub fn line_address(device: Device, frame4k: u64, line: u64) -> u64 {
    let base = frame4k * LINES_PER_PAGE + line;
    match device {
        Device::Dram => base,
        Device::Nvm => base | NVM_BIT,
    }
}

#[derive(Clone, Debug)]
pub struct LlcFilter {
    sets: u64,
    ways: usize,
    latency: u64,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    clock: u64,
    stats: HitMiss,
}

impl LlcFilter {
    pub fn new(config: &LlcConfig) -> Self {
        let ways = config.ways as usize;
        let sets = config.size_bytes / config.line_bytes / config.ways;
        let slots = sets as usize * ways;
        Self { sets, ways, latency: config.latency, tags: vec![EMPTY; slots], stamps: vec![0; slots], clock: 0, stats: HitMiss::default() }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn stats(&self) -> HitMiss {
        self.stats
    }

    fn set_base(&self, line: u64) -> usize {
        (line % self.sets) as usize * self.ways
    }

    /// Looks up `line`, allocating it on a miss. Returns whether it hit.
    pub fn access(&mut self, line: u64) -> bool {
        let base = self.set_base(line);
        self.clock += 1;
        let ways = base..base + self.ways;
        if let Some(i) = ways.clone().find(|&i| self.tags[i] == line) {
            self.stamps[i] = self.clock;
            self.stats.record(true);
            return true;
        }
        self.stats.record(false);
        let victim = ways
            .clone()
            .find(|&i| self.tags[i] == EMPTY)
            .unwrap_or_else(|| ways.min_by_key(|&i| self.stamps[i]).expect("at least one way"));
        self.tags[victim] = line;
        self.stamps[victim] = self.clock;
        false
    }

    pub fn contains(&self, line: u64) -> bool {
        let base = self.set_base(line);
        self.tags[base..base + self.ways].contains(&line)
    }

    pub fn invalidate(&mut self, line: u64) -> bool {
        let base = self.set_base(line);
        match (base..base + self.ways).find(|&i| self.tags[i] == line) {
            Some(i) => {
                self.tags[i] = EMPTY;
                true
            }
            None => false,
        }
    }

    /// Drops every line of a 4 KB frame.
    pub fn invalidate_page(&mut self, device: Device, frame4k: u64) {
        for line in 0..LINES_PER_PAGE {
            self.invalidate(line_address(device, frame4k, line));
        }
    }

    pub fn check_invariants(&self) -> bool {
        self.tags.chunks(self.ways).enumerate().all(|(set, ways)| {
            let live: Vec<_> = ways.iter().filter(|&&t| t != EMPTY).collect();
            let mut unique = live.clone();
            unique.sort_unstable();
            unique.dedup();
            unique.len() == live.len() && live.iter().all(|&&t| t % self.sets == set as u64)
        })
    }
}
