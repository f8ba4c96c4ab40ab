//! Page table and frame allocation for one simulated address space.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::policy::Placement;
use crate::types::{Device, PageSize, PhysicalLocation, PAGES_PER_SUPERPAGE};

#[derive(Clone, Debug)]
struct Bump {
    next: u64,
    capacity: u64,
}

impl Bump {
    fn alloc(&mut self, device: Device) -> Result<u64> {
        if self.next >= self.capacity {
            return Err(Error::OutOfMemory { device });
        }
        self.next += 1;
        Ok(self.next - 1)
    }
}

/// Maps virtual page numbers (4 KB or 2 MB, per `page_size`) to frames,
/// allocating on first touch. Frames count in units of `page_size`.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    page_size: PageSize,
    placement: Placement,
    table: HashMap<u64, PhysicalLocation>,
    nvm_owner: HashMap<u64, u64>,
    dram: Bump,
    nvm: Bump,
}

impl AddressSpace {
    /// Capacities are in 4 KB pages.
    pub fn new(page_size: PageSize, placement: Placement, dram_pages: u64, nvm_pages: u64) -> Self {
        let per = match page_size {
            PageSize::Small4K => 1,
            PageSize::Super2M => PAGES_PER_SUPERPAGE,
        };
        Self {
            page_size,
            placement,
            table: HashMap::new(),
            nvm_owner: HashMap::new(),
            dram: Bump { next: 0, capacity: dram_pages / per },
            nvm: Bump { next: 0, capacity: nvm_pages / per },
        }
    }

    pub fn page_size(&self) -> PageSize {
        self.page_size
    }

    pub fn lookup(&self, vnum: u64) -> Option<PhysicalLocation> {
        self.table.get(&vnum).copied()
    }

    /// The current mapping of `vnum`, created if this is its first touch.
    pub fn map(&mut self, vnum: u64) -> Result<PhysicalLocation> {
        if let Some(loc) = self.lookup(vnum) {
            return Ok(loc);
        }
        let device = match self.placement {
            Placement::Nvm => Device::Nvm,
            Placement::Dram => Device::Dram,
            Placement::Interleave { period } if vnum.is_multiple_of(period) => Device::Dram,
            Placement::Interleave { .. } => Device::Nvm,
        };
        let frame = match device {
            Device::Dram => self.dram.alloc(device)?,
            Device::Nvm => {
                let f = self.nvm.alloc(device)?;
                self.nvm_owner.insert(f, vnum);
                f
            }
        };
        let loc = PhysicalLocation::new(device, frame, self.page_size);
        self.table.insert(vnum, loc);
        Ok(loc)
    }

    /// Points an existing mapping somewhere else (after a migration).
    pub fn remap(&mut self, vnum: u64, loc: PhysicalLocation) {
        self.table.insert(vnum, loc);
    }

    /// The virtual page whose home is NVM frame `frame`.
    pub fn owner_of_nvm(&self, frame: u64) -> Option<u64> {
        self.nvm_owner.get(&frame).copied()
    }

    pub fn mapped_pages(&self) -> usize {
        self.table.len()
    }
}
