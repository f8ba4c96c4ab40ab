//! Synthetic reference streams.
//!
//! The working set is a set of 2 MB superpages scattered over the
//! footprint; with phases enabled it is redrawn periodically. Every generator is a lazy iterator driven by a ChaCha8 stream
//! seeded from the spec, so a spec always yields the same trace.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Op, TraceRecord, VirtualAddress, LINES_PER_PAGE, LINE_BYTES, PAGES_PER_SUPERPAGE, SMALL_PAGE_BYTES,
    SUPERPAGE_BYTES,
};

/// Leaves address bits 40 and up free for [`interleave`].
pub const MAX_FOOTPRINT_BYTES: u64 = 1 << 40;

/// Inclusive bounds of the hot-page-count buckets.
pub const HISTOGRAM_BUCKETS: [(u64, u64); 6] = [(1, 32), (33, 64), (65, 128), (129, 256), (257, 384), (385, 512)];

/// Measured distributions of hot 4 KB pages per superpage, in percent.
pub const HISTOGRAM_PRESETS: [(&str, [f64; 6]); 14] = [
    ("cactusadm", [28.01, 34.1, 29.32, 0.65, 7.45, 0.47]),
    ("mcf", [57.56, 16.48, 10.84, 9.95, 4.78, 0.39]),
    ("soplex", [45.69, 10.88, 22.76, 9.28, 6.77, 4.62]),
    ("canneal", [62.18, 15.86, 8.9, 11.57, 0.91, 0.58]),
    ("bodytrack", [83.19, 6.01, 7.66, 2.18, 0.63, 0.33]),
    ("streamcluster", [23.77, 30.55, 14.38, 13.71, 17.5, 0.09]),
    ("dict", [23.86, 14.53, 28.27, 22.14, 11.06, 0.14]),
    ("bfs", [3.94, 18.19, 57.42, 6.35, 5.6, 8.5]),
    ("setcover", [16.26, 24.28, 27.58, 17.36, 7.5, 7.02]),
    ("mst", [13.44, 21.28, 21.77, 25.8, 16.31, 1.4]),
    ("graph500", [61.48, 38.46, 0.06, 0.0, 0.0, 0.0]),
    ("linpack", [22.21, 14.71, 29.18, 16.3, 9.64, 7.96]),
    ("npb-cg", [0.05, 96.29, 2.66, 1.0, 0.0, 0.0]),
    ("gups", [95.5, 4.5, 0.0, 0.0, 0.0, 0.0]),
];

/// Looks up a preset by name, as fractions.
pub fn histogram_preset(name: &str) -> Option<[f64; 6]> {
    HISTOGRAM_PRESETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, pct)| pct.map(|p| p / 100.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Uniform,
    Zipf,
    HotSuperpageMix,
    /// Read-modify-write of random pages, GUPS style.
    RandomUpdate,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 4] =
        [GeneratorKind::Uniform, GeneratorKind::Zipf, GeneratorKind::HotSuperpageMix, GeneratorKind::RandomUpdate];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Uniform => "uniform",
            GeneratorKind::Zipf => "zipf",
            GeneratorKind::HotSuperpageMix => "hot-superpage-mix",
            GeneratorKind::RandomUpdate => "random-update",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidGenerator(format!("unknown generator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Virtual address span the working set is spread over.
    pub footprint_bytes: u64,
    pub working_set_bytes: u64,
    pub zipf_exponent: f64,
    pub write_fraction: f64,
    /// Share of references aimed at hot pages (hot-superpage mix only).
    pub hot_fraction: f64,
    /// Fraction of superpages per hot-page-count bucket.
    pub histogram: [f64; 6],
    pub references: u64,
    pub seed: u64,
    /// References are spread round-robin over this many thread ids.
    pub threads: u8,
    /// Redraw the working set and hot pages every this many references;
    /// zero keeps one working set for the whole trace.
    #[serde(default)]
    pub phase_references: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::HotSuperpageMix,
            footprint_bytes: 4 << 30,
            working_set_bytes: 512 << 20,
            zipf_exponent: 0.99,
            write_fraction: 0.2,
            hot_fraction: 0.7,
            histogram: histogram_preset("gups").expect("preset exists"),
            references: 1_000_000,
            seed: 1,
            threads: 1,
            phase_references: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGenerator(m));
        if self.working_set_bytes < SMALL_PAGE_BYTES {
            return bad(format!("working set {} B is smaller than a page", self.working_set_bytes));
        }
        if self.footprint_bytes < self.working_set_bytes {
            return bad("footprint is smaller than the working set".into());
        }
        if self.footprint_bytes.div_ceil(SUPERPAGE_BYTES) * SUPERPAGE_BYTES > MAX_FOOTPRINT_BYTES {
            return bad(format!("footprint exceeds {MAX_FOOTPRINT_BYTES} B"));
        }
        for (name, v) in [("write fraction", self.write_fraction), ("hot fraction", self.hot_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} is outside [0, 1]"));
            }
        }
        if self.histogram.iter().any(|&h| h.is_nan() || h < 0.0) || (self.histogram.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("histogram {:?} does not sum to 1", self.histogram));
        }
        if self.kind == GeneratorKind::Zipf && !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf exponent {} must be finite and non-negative", self.zipf_exponent));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TraceGenerator> {
        TraceGenerator::new(self)
    }
}

/// Working-set superpages scattered over the footprint span.
#[derive(Clone, Debug)]
struct Layout {
    superpages: u64,
    /// Virtual superpage number of each working-set superpage, ascending.
    bases: Vec<u64>,
}

impl Layout {
    fn new(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Self {
        let superpages = spec.working_set_bytes.div_ceil(SUPERPAGE_BYTES);
        let span = spec.footprint_bytes.div_ceil(SUPERPAGE_BYTES).max(superpages);
        // random slots rather than a fixed stride, which would alias in
        // set-indexed structures
        let mut bases: Vec<u64> = rand::seq::index::sample(rng, span as usize, superpages as usize)
            .into_iter()
            .map(|i| i as u64)
            .collect();
        bases.sort_unstable();
        Self { superpages, bases }
    }

    /// Virtual page number of page `idx` of working-set superpage `sp`.
    fn vpn(&self, sp: u64, idx: u64) -> u64 {
        self.bases[sp as usize] * PAGES_PER_SUPERPAGE + idx
    }
}

#[derive(Clone, Debug)]
enum Source {
    Uniform { pages: u64 },
    Zipf { dist: Zipf<f64>, order: Vec<u32> },
    Mix { hot: Vec<u64>, hot_mask: Vec<[u64; 8]>, cold_pages: u64 },
    Update { pages: u64, pending: Option<u64> },
}

/// Iterator over the records of one spec.
#[derive(Clone, Debug)]
pub struct TraceGenerator {
    rng: ChaCha8Rng,
    layout: Layout,
    source: Source,
    spec: GeneratorSpec,
    zipf: Option<Zipf<f64>>,
    /// Reference count at which the working set is next redrawn; zero never.
    next_phase: u64,
    write_fraction: f64,
    hot_fraction: f64,
    remaining: u64,
    emitted: u64,
    threads: u8,
    last_line: u64,
}

fn bucket(rng: &mut ChaCha8Rng, histogram: &[f64; 6]) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &h) in histogram.iter().enumerate() {
        acc += h;
        if x < acc {
            return i;
        }
    }
    histogram.iter().rposition(|&h| h > 0.0).unwrap_or(0)
}

impl TraceGenerator {
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let pages = (spec.working_set_bytes / SMALL_PAGE_BYTES).max(1);
        if spec.kind == GeneratorKind::Zipf && pages > u64::from(u32::MAX) {
            return Err(Error::InvalidGenerator("zipf working set is too large".into()));
        }
        let zipf = match spec.kind {
            GeneratorKind::Zipf => Some(
                Zipf::new(pages as f64, spec.zipf_exponent).map_err(|e| Error::InvalidGenerator(format!("zipf: {e}")))?,
            ),
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (layout, source) = Self::draw(spec, zipf, &mut rng);
        Ok(Self {
            rng,
            layout,
            source,
            spec: spec.clone(),
            zipf,
            next_phase: spec.phase_references,
            write_fraction: spec.write_fraction,
            hot_fraction: spec.hot_fraction,
            remaining: spec.references,
            emitted: 0,
            threads: spec.threads,
            last_line: 0,
        })
    }

    /// Picks the working set and, per kind, the page popularity.
    fn draw(spec: &GeneratorSpec, zipf: Option<Zipf<f64>>, rng: &mut ChaCha8Rng) -> (Layout, Source) {
        let layout = Layout::new(spec, rng);
        let pages = (spec.working_set_bytes / SMALL_PAGE_BYTES).max(1);
        let source = match spec.kind {
            GeneratorKind::Uniform => Source::Uniform { pages },
            GeneratorKind::Zipf => {
                let mut order: Vec<u32> = (0..pages as u32).collect();
                order.shuffle(rng);
                Source::Zipf { dist: zipf.expect("built for zipf specs"), order }
            }
            GeneratorKind::HotSuperpageMix => {
                let mut hot = Vec::new();
                let mut hot_mask = vec![[0u64; 8]; layout.superpages as usize];
                for sp in 0..layout.superpages {
                    let (lo, hi) = HISTOGRAM_BUCKETS[bucket(rng, &spec.histogram)];
                    let count = rng.random_range(lo..=hi);
                    for idx in rand::seq::index::sample(rng, PAGES_PER_SUPERPAGE as usize, count as usize) {
                        hot_mask[sp as usize][idx / 64] |= 1 << (idx % 64);
                        hot.push(layout.vpn(sp, idx as u64));
                    }
                }
                hot.sort_unstable();
                let cold_pages = layout.superpages * PAGES_PER_SUPERPAGE - hot.len() as u64;
                Source::Mix { hot, hot_mask, cold_pages }
            }
            GeneratorKind::RandomUpdate => Source::Update { pages, pending: None },
        };
        (layout, source)
    }

    /// Hot pages of a hot-superpage mix, sorted; empty for other kinds.
    pub fn hot_pages(&self) -> &[u64] {
        match &self.source {
            Source::Mix { hot, .. } => hot,
            _ => &[],
        }
    }

    fn page_of(&self, n: u64) -> u64 {
        self.layout.vpn(n / PAGES_PER_SUPERPAGE, n % PAGES_PER_SUPERPAGE)
    }

    fn next_vpn_and_op(&mut self) -> (u64, Option<Op>) {
        match &mut self.source {
            Source::Uniform { pages } => {
                let n = self.rng.random_range(0..*pages);
                (self.page_of(n), None)
            }
            Source::Zipf { dist, order } => {
                let rank = dist.sample(&mut self.rng) as usize;
                let n = u64::from(order[rank.clamp(1, order.len()) - 1]);
                (self.page_of(n), None)
            }
            Source::Mix { hot, hot_mask, cold_pages } => {
                let use_hot = *cold_pages == 0 || (!hot.is_empty() && self.rng.random_bool(self.hot_fraction));
                if use_hot {
                    return (hot[self.rng.random_range(0..hot.len())], None);
                }
                loop {
                    let sp = self.rng.random_range(0..self.layout.superpages);
                    let idx = self.rng.random_range(0..PAGES_PER_SUPERPAGE);
                    if hot_mask[sp as usize][(idx / 64) as usize] >> (idx % 64) & 1 == 0 {
                        return (self.layout.vpn(sp, idx), None);
                    }
                }
            }
            Source::Update { pages, pending } => {
                if let Some(raw) = pending.take() {
                    return (raw, Some(Op::Write));
                }
                let n = self.rng.random_range(0..*pages);
                let vpn = self.layout.vpn(n / PAGES_PER_SUPERPAGE, n % PAGES_PER_SUPERPAGE);
                *pending = Some(vpn);
                (vpn, Some(Op::Read))
            }
        }
    }
}

impl Iterator for TraceGenerator {
    type Item = TraceRecord;

    fn next(&mut self) -> Option<TraceRecord> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mid_update = matches!(self.source, Source::Update { pending: Some(_), .. });
        if self.next_phase > 0 && self.emitted >= self.next_phase && !mid_update {
            let (layout, source) = Self::draw(&self.spec, self.zipf, &mut self.rng);
            self.layout = layout;
            self.source = source;
            self.next_phase += self.spec.phase_references;
        }
        let (vpn, fixed_op) = self.next_vpn_and_op();
        let op = fixed_op.unwrap_or_else(|| {
            if self.rng.random_bool(self.write_fraction) {
                Op::Write
            } else {
                Op::Read
            }
        });
        let line = match fixed_op {
            // the write of an update hits the line just read
            Some(Op::Write) => self.last_line,
            _ => self.rng.random_range(0..LINES_PER_PAGE),
        };
        let raw = vpn * SMALL_PAGE_BYTES + line * LINE_BYTES;
        let tid = (self.emitted % u64::from(self.threads)) as u8;
        self.emitted += 1;
        let vaddr = VirtualAddress::new(raw).expect("validated footprint fits");
        self.last_line = line;
        Some(TraceRecord::new(op, vaddr, tid))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

/// Round-robin merge of several programs. Program `k` gets tid `k` and has
/// `k` added to address bits 40 and up so the programs never share pages.
pub fn interleave(programs: Vec<TraceGenerator>) -> impl Iterator<Item = TraceRecord> {
    let mut programs: Vec<_> = programs.into_iter().enumerate().collect();
    let mut turn = 0usize;
    std::iter::from_fn(move || {
        while !programs.is_empty() {
            let i = turn % programs.len();
            let (k, gen) = &mut programs[i];
            match gen.next() {
                Some(r) => {
                    turn = i + 1;
                    let raw = r.vaddr.raw() + ((*k as u64) << 40);
                    let vaddr = VirtualAddress::new(raw).expect("programs stay below 2^48");
                    return Some(TraceRecord::new(r.op, vaddr, *k as u8));
                }
                None => {
                    programs.remove(i);
                    turn = i;
                }
            }
        }
        None
    })
}
