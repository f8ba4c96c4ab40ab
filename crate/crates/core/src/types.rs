//! Address arithmetic shared by every component.
//!
//! Virtual and physical addresses use the same bit-field convention: bits
//! 0..12 are the byte offset inside a 4 KB page, bits 12..21 select one of the
//! 512 small pages inside a 2 MB superpage, and the remaining bits are the
//! superpage number.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SMALL_PAGE_SHIFT: u32 = 12;
pub const SUPERPAGE_SHIFT: u32 = 21;
pub const SMALL_PAGE_BYTES: u64 = 1 << SMALL_PAGE_SHIFT;
pub const SUPERPAGE_BYTES: u64 = 1 << SUPERPAGE_SHIFT;
pub const PAGES_PER_SUPERPAGE: u64 = 1 << (SUPERPAGE_SHIFT - SMALL_PAGE_SHIFT);
pub const LINE_BYTES: u64 = 64;
pub const LINES_PER_PAGE: u64 = SMALL_PAGE_BYTES / LINE_BYTES;
pub const VADDR_BITS: u32 = 48;

const IDX_MASK: u64 = PAGES_PER_SUPERPAGE - 1;
const OFFSET_MASK: u64 = SMALL_PAGE_BYTES - 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VirtualAddress(u64);

impl VirtualAddress {
    pub fn new(raw: u64) -> Result<Self> {
        if raw >> VADDR_BITS != 0 {
            return Err(Error::AddressOutOfRange(raw));
        }
        Ok(Self(raw))
    }

    /// Builds an address from its parts. Out-of-range parts are masked.
    pub fn from_parts(parts: AddressParts) -> Self {
        Self(
            (parts.vsn << SUPERPAGE_SHIFT)
                | ((u64::from(parts.idx) & IDX_MASK) << SMALL_PAGE_SHIFT)
                | (u64::from(parts.offset) & OFFSET_MASK),
        )
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// 4 KB virtual page number.
    pub fn vpn(self) -> u64 {
        self.0 >> SMALL_PAGE_SHIFT
    }

    /// 2 MB virtual superpage number.
    pub fn vsn(self) -> u64 {
        self.0 >> SUPERPAGE_SHIFT
    }

    /// Index of the 4 KB page inside its superpage.
    pub fn small_index(self) -> u16 {
        ((self.0 >> SMALL_PAGE_SHIFT) & IDX_MASK) as u16
    }

    pub fn split(self) -> AddressParts {
        split_address(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AddressParts {
    pub vsn: u64,
    pub idx: u16,
    pub offset: u16,
}

pub fn split_address(vaddr: VirtualAddress) -> AddressParts {
    let raw = vaddr.raw();
    AddressParts {
        vsn: raw >> SUPERPAGE_SHIFT,
        idx: ((raw >> SMALL_PAGE_SHIFT) & IDX_MASK) as u16,
        offset: (raw & OFFSET_MASK) as u16,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    Dram,
    Nvm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageSize {
    Small4K,
    Super2M,
}

impl PageSize {
    pub fn bytes(self) -> u64 {
        match self {
            PageSize::Small4K => SMALL_PAGE_BYTES,
            PageSize::Super2M => SUPERPAGE_BYTES,
        }
    }

    pub fn shift(self) -> u32 {
        match self {
            PageSize::Small4K => SMALL_PAGE_SHIFT,
            PageSize::Super2M => SUPERPAGE_SHIFT,
        }
    }
}

/// Where a virtual page currently lives. `frame` counts in units of `page_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysicalLocation {
    pub device: Device,
    pub frame: u64,
    pub page_size: PageSize,
}

impl PhysicalLocation {
    pub fn new(device: Device, frame: u64, page_size: PageSize) -> Self {
        Self { device, frame, page_size }
    }

    /// Byte address on `device` of the given offset inside this frame.
    pub fn device_address(self, offset_in_page: u64) -> u64 {
        (self.frame << self.page_size.shift()) | (offset_in_page & (self.page_size.bytes() - 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn is_write(self) -> bool {
        matches!(self, Op::Write)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub op: Op,
    pub vaddr: VirtualAddress,
    pub tid: u8,
}

impl TraceRecord {
    pub fn new(op: Op, vaddr: VirtualAddress, tid: u8) -> Self {
        Self { op, vaddr, tid }
    }

    pub fn read(raw: u64) -> Self {
        Self::new(Op::Read, VirtualAddress(raw & ((1 << VADDR_BITS) - 1)), 0)
    }

    pub fn write(raw: u64) -> Self {
        Self::new(Op::Write, VirtualAddress(raw & ((1 << VADDR_BITS) - 1)), 0)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn parts(raw: u64) -> (u64, u16, u16) {
        let p = split_address(VirtualAddress::new(raw).unwrap());
        (p.vsn, p.idx, p.offset)
    }

    #[test]
    fn split_examples() {
        assert_eq!(parts(0), (0, 0, 0));
        assert_eq!(parts(0x0040_3000), (2, 3, 0));
        assert_eq!(parts(0x001F_FFFF), (0, 511, 4095));
    }

    #[test]
    fn rejects_wide_addresses() {
        assert!(VirtualAddress::new(1 << 48).is_err());
        assert!(VirtualAddress::new((1 << 48) - 1).is_ok());
    }

    #[test]
    fn device_address_of_superpage_frame() {
        let loc = PhysicalLocation::new(Device::Nvm, 3, PageSize::Super2M);
        assert_eq!(loc.device_address(0x1234), 3 * SUPERPAGE_BYTES + 0x1234);
    }

    proptest! {
        #[test]
        fn split_then_reassemble_is_identity(raw in 0u64..(1 << 48)) {
            let v = VirtualAddress::new(raw).unwrap();
            let p = split_address(v);
            prop_assert!(p.idx < 512 && p.offset < 4096);
            prop_assert_eq!(VirtualAddress::from_parts(p), v);
            prop_assert_eq!(v.vpn(), (p.vsn << 9) | u64::from(p.idx));
        }
    }
}
