//! The compared memory-management policies, expressed as engine parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::tlb::Pipes;
use crate::types::{PageSize, PAGES_PER_SUPERPAGE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// NVM mapped with superpages, hot 4 KB pages cached in DRAM.
    Rainbow,
    /// 4 KB pages statically interleaved across DRAM and NVM.
    FlatStatic,
    /// 4 KB pages, utility-based migration with pre-LLC counting.
    Hscc4kMig,
    /// Like `Hscc4kMig` but pages and migrations are 2 MB.
    Hscc2mMig,
    /// Everything in a DRAM as large as the NVM, 2 MB pages.
    DramOnly,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Rainbow, PolicyKind::FlatStatic, PolicyKind::Hscc4kMig, PolicyKind::Hscc2mMig, PolicyKind::DramOnly];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rainbow => "rainbow",
            PolicyKind::FlatStatic => "flat-static",
            PolicyKind::Hscc4kMig => "hscc-4k-mig",
            PolicyKind::Hscc2mMig => "hscc-2m-mig",
            PolicyKind::DramOnly => "dram-only",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownPolicy(s.to_owned()))
    }
}

/// Where a newly touched page is placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Placement {
    Nvm,
    /// DRAM when the page number is divisible by `period`, else NVM.
    Interleave { period: u64 },
    Dram,
}

/// Which references feed the hot-page monitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Counting {
    None,
    /// NVM references that missed in the LLC.
    PostLlc,
    /// Every reference to an NVM-resident page.
    PreLlc,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Size of the page-table mappings.
    pub page_size: PageSize,
    pub pipes: Pipes,
    pub placement: Placement,
    /// Migration unit, if the policy migrates.
    pub migration: Option<PageSize>,
    pub counting: Counting,
    /// Hot small pages are reached through the migration bitmap and the
    /// redirect stored in NVM, not through the page table.
    pub bitmap_remap: bool,
    /// Page tables are stored in NVM.
    pub tables_in_nvm: bool,
    pub dram_pages: u64,
    pub nvm_pages: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, config: &SimConfig) -> Self {
        let dram_pages = config.dram.capacity_pages;
        let nvm_pages = config.nvm.capacity_pages;
        let base = Self {
            kind,
            page_size: PageSize::Small4K,
            pipes: Pipes::SMALL_ONLY,
            placement: Placement::Nvm,
            migration: None,
            counting: Counting::None,
            bitmap_remap: false,
            tables_in_nvm: false,
            dram_pages,
            nvm_pages,
        };
        match kind {
            PolicyKind::Rainbow => Self {
                page_size: PageSize::Super2M,
                pipes: Pipes::SPLIT,
                migration: Some(PageSize::Small4K),
                counting: Counting::PostLlc,
                bitmap_remap: true,
                tables_in_nvm: true,
                ..base
            },
            PolicyKind::FlatStatic => Self { placement: Placement::Interleave { period: 9 }, ..base },
            PolicyKind::Hscc4kMig => {
                Self { migration: Some(PageSize::Small4K), counting: Counting::PreLlc, ..base }
            }
            PolicyKind::Hscc2mMig => Self {
                page_size: PageSize::Super2M,
                pipes: Pipes::SUPERPAGE_ONLY,
                migration: Some(PageSize::Super2M),
                counting: Counting::PreLlc,
                ..base
            },
            PolicyKind::DramOnly => Self {
                page_size: PageSize::Super2M,
                pipes: Pipes::SUPERPAGE_ONLY,
                placement: Placement::Dram,
                dram_pages: nvm_pages,
                nvm_pages: 0,
                ..base
            },
        }
    }

    /// 4 KB pages per migration unit.
    pub fn pages_per_move(&self) -> u64 {
        match self.migration {
            Some(PageSize::Super2M) => PAGES_PER_SUPERPAGE,
            _ => 1,
        }
    }
}

/// Builds an engine running policy `kind` on `config`.
pub fn build_policy(kind: PolicyKind, config: &SimConfig) -> Result<Engine> {
    Engine::new(config.clone(), PolicySpec::new(kind, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!(matches!("lru".parse::<PolicyKind>(), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn parameterisation() {
        let c = SimConfig::default();
        let flat = PolicySpec::new(PolicyKind::FlatStatic, &c);
        assert_eq!(flat.migration, None);
        assert_eq!(flat.placement, Placement::Interleave { period: 9 });
        let dram = PolicySpec::new(PolicyKind::DramOnly, &c);
        assert_eq!((dram.dram_pages, dram.nvm_pages), (c.nvm.capacity_pages, 0));
        let h2 = PolicySpec::new(PolicyKind::Hscc2mMig, &c);
        assert_eq!(h2.pages_per_move(), 512);
        let rb = PolicySpec::new(PolicyKind::Rainbow, &c);
        assert!(rb.bitmap_remap && rb.tables_in_nvm && rb.pipes == Pipes::SPLIT);
    }
}
