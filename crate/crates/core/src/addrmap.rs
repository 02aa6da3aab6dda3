//! Physical address layout (local / extended / shadow), the flag bit that
//! separates twin addresses, and the mapping of physical addresses onto
//! DRAM `<dimm | row | bank | column | offset>` coordinates.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::timing::{BankId, ColAddr, RowAddr};

pub type PhysAddr = u64;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddrError {
    #[error("address {0:#x} is outside the local, extended and shadow ranges")]
    OutOfRange(PhysAddr),
    #[error("address {0:#x} is local memory and has no shadow")]
    NotExtendable(PhysAddr),
    #[error("address {addr:#x} is not aligned to the {line}-byte line size")]
    MisalignedAddress { addr: PhysAddr, line: u64 },
    #[error("{field} value {value:#x} does not fit in {bits} bits")]
    FieldOverflow { field: &'static str, value: u64, bits: u32 },
    #[error("extended memory exhausted: requested {requested} bytes, {available} bytes free")]
    OutOfExtendedMemory { requested: u64, available: u64 },
    #[error("allocation size {size} is not a multiple of the {block}-byte block")]
    NotBlockMultiple { size: u64, block: u64 },
    #[error("no allocated block starts at {0:#x}")]
    UnknownBlock(PhysAddr),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Local,
    Extended,
    Shadow,
}

/// Physical address space: local DRAM, extended DRAM behind the extension
/// chips, and the shadow alias of the extended range. The shadow range is
/// the extended range with `flag_bit` set and has no storage of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSpaceLayout {
    pub local: Range<PhysAddr>,
    pub extended: Range<PhysAddr>,
    pub shadow: Range<PhysAddr>,
    /// Distance between an extended address and its shadow (`1 << flag_bit`).
    pub ext_mem_size: u64,
    pub flag_bit: u32,
}

impl AddressSpaceLayout {
    /// Builds a layout whose shadow range is the extended range offset by `1 << flag_bit`.
    pub fn new(local: Range<PhysAddr>, extended: Range<PhysAddr>, flag_bit: u32) -> Result<Self, AddrError> {
        let ext_mem_size = 1u64 << flag_bit;
        let shadow = extended.start + ext_mem_size..extended.end + ext_mem_size;
        let layout = Self { local, extended, shadow, ext_mem_size, flag_bit };
        layout.validate()?;
        Ok(layout)
    }

    /// 0-8 GB local, 8-32 GB extended, 40-64 GB shadow; flag bit 35.
    pub fn table5_full() -> Self {
        Self::new(0..8 * GIB, 8 * GIB..32 * GIB, 35).expect("preset layout is valid")
    }

    /// The full-scale layout divided by 1024: 0-8 MB, 8-32 MB, 40-64 MB; flag bit 25.
    pub fn desk_scale() -> Self {
        Self::new(0..8 * MIB, 8 * MIB..32 * MIB, 25).expect("preset layout is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "table5-full" => Some(Self::table5_full()),
            "desk-scale" => Some(Self::desk_scale()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AddrError> {
        let bad = |m: &str| Err(AddrError::InvalidLayout(m.to_string()));
        if self.ext_mem_size != 1u64 << self.flag_bit {
            return bad("ext_mem_size must equal 1 << flag_bit");
        }
        for r in [&self.local, &self.extended, &self.shadow] {
            if r.start > r.end {
                return bad("range start exceeds its limit");
            }
        }
        if self.extended.end > self.ext_mem_size || self.local.end > self.ext_mem_size {
            return bad("local and extended ranges must lie below the flag bit");
        }
        if self.shadow.start != self.extended.start + self.ext_mem_size
            || self.shadow.end != self.extended.end + self.ext_mem_size
        {
            return bad("shadow range must be the extended range with the flag bit set");
        }
        let overlaps = |a: &Range<u64>, b: &Range<u64>| a.start < b.end && b.start < a.end;
        if overlaps(&self.local, &self.extended) || overlaps(&self.local, &self.shadow) {
            return bad("ranges overlap");
        }
        Ok(())
    }

    /// One past the highest mapped address.
    pub fn limit(&self) -> PhysAddr {
        self.shadow.end.max(self.extended.end).max(self.local.end)
    }

    pub fn extended_size(&self) -> u64 {
        self.extended.end - self.extended.start
    }

    pub fn classify(&self, addr: PhysAddr) -> Result<Region, AddrError> {
        if self.local.contains(&addr) {
            Ok(Region::Local)
        } else if self.extended.contains(&addr) {
            Ok(Region::Extended)
        } else if self.shadow.contains(&addr) {
            Ok(Region::Shadow)
        } else {
            Err(AddrError::OutOfRange(addr))
        }
    }

    /// The twin of an extended or shadow address (flag bit flipped).
    pub fn shadow_of(&self, addr: PhysAddr) -> Result<PhysAddr, AddrError> {
        match self.classify(addr)? {
            Region::Local => Err(AddrError::NotExtendable(addr)),
            Region::Extended | Region::Shadow => Ok(addr ^ self.ext_mem_size),
        }
    }

    /// The address with the flag bit cleared: where the data actually lives.
    pub fn canonical(&self, addr: PhysAddr) -> PhysAddr {
        if self.shadow.contains(&addr) {
            addr ^ self.ext_mem_size
        } else {
            addr
        }
    }

    pub fn is_extended_or_shadow(&self, addr: PhysAddr) -> bool {
        self.extended.contains(&addr) || self.shadow.contains(&addr)
    }
}

/// DRAM organisation as seen by the memory controller.
///
/// The bank field selects one of `ranks_per_dimm * banks_per_rank` logical
/// banks. `logical_dimms` physical DIMMs behind the extension tree are
/// selected by the row bits just below the row MSB; the row MSB itself is
/// the twin flag bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramGeometry {
    pub channels: u32,
    pub logical_dimms: u32,
    pub ranks_per_dimm: u32,
    pub banks_per_rank: u32,
    pub row_bits: u32,
    pub column_bits: u32,
    pub line_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DramCoord {
    pub row: RowAddr,
    pub bank: BankId,
    pub column: ColAddr,
    pub dimm: u32,
}

fn log2_exact(v: u64, what: &str) -> Result<u32, AddrError> {
    if v == 0 || !v.is_power_of_two() {
        return Err(AddrError::InvalidGeometry(format!("{what} must be a power of two, got {v}")));
    }
    Ok(v.trailing_zeros())
}

impl DramGeometry {
    /// Matches the desk-scale layout: 26 address bits, flag bit 25.
    pub fn desk_scale() -> Self {
        Self {
            channels: 2,
            logical_dimms: 4,
            ranks_per_dimm: 2,
            banks_per_rank: 8,
            row_bits: 9,
            column_bits: 7,
            line_size: 64,
        }
    }

    /// Matches the full-scale layout: 36 address bits, flag bit 35.
    pub fn table5_full() -> Self {
        Self { row_bits: 19, ..Self::desk_scale() }
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_size.trailing_zeros()
    }

    pub fn bank_bits(&self) -> u32 {
        (self.ranks_per_dimm * self.banks_per_rank).trailing_zeros()
    }

    pub fn dimm_bits(&self) -> u32 {
        self.logical_dimms.trailing_zeros()
    }

    pub fn banks(&self) -> usize {
        (self.ranks_per_dimm * self.banks_per_rank) as usize
    }

    pub fn address_bits(&self) -> u32 {
        self.offset_bits() + self.column_bits + self.bank_bits() + self.row_bits
    }

    /// Bytes addressable through the row/bank/column fields.
    pub fn capacity(&self) -> u64 {
        1u64 << self.address_bits()
    }

    /// Bit index of the row MSB in a physical address.
    pub fn row_msb(&self) -> u32 {
        self.address_bits() - 1
    }

    pub fn validate(&self) -> Result<(), AddrError> {
        log2_exact(self.line_size, "line size")?;
        log2_exact(u64::from(self.ranks_per_dimm * self.banks_per_rank), "bank count")?;
        log2_exact(u64::from(self.logical_dimms), "dimm count")?;
        if self.channels == 0 {
            return Err(AddrError::InvalidGeometry("at least one channel required".into()));
        }
        if self.line_size != crate::line::LINE_BYTES as u64 {
            return Err(AddrError::InvalidGeometry(format!("line size must be {} bytes", crate::line::LINE_BYTES)));
        }
        if self.row_bits <= self.dimm_bits() {
            return Err(AddrError::InvalidGeometry("row field must hold the flag bit and dimm id".into()));
        }
        if self.address_bits() > 63 {
            return Err(AddrError::InvalidGeometry("address wider than 63 bits".into()));
        }
        Ok(())
    }

    /// Checks that the layout's flag bit is this geometry's row MSB and that
    /// every mapped address fits the address fields.
    pub fn validate_with(&self, layout: &AddressSpaceLayout) -> Result<(), AddrError> {
        self.validate()?;
        if layout.flag_bit != self.row_msb() {
            return Err(AddrError::InvalidGeometry(format!(
                "flag bit {} must be the row MSB (bit {})",
                layout.flag_bit,
                self.row_msb()
            )));
        }
        if layout.limit() > self.capacity() {
            return Err(AddrError::InvalidGeometry("layout exceeds addressable capacity".into()));
        }
        Ok(())
    }

    /// Physical DIMM id carried in the high row bits (below the flag bit).
    pub fn dimm_of_row(&self, row: RowAddr) -> u32 {
        let low = self.row_bits - 1 - self.dimm_bits();
        ((row >> low) & ((1u64 << self.dimm_bits()) - 1)) as u32
    }

    pub fn decompose(&self, addr: PhysAddr) -> Result<DramCoord, AddrError> {
        if !addr.is_multiple_of(self.line_size) {
            return Err(AddrError::MisalignedAddress { addr, line: self.line_size });
        }
        if addr >= self.capacity() {
            return Err(AddrError::FieldOverflow { field: "address", value: addr, bits: self.address_bits() });
        }
        let mut a = addr >> self.offset_bits();
        let column = a & ((1u64 << self.column_bits) - 1);
        a >>= self.column_bits;
        let bank = (a & ((1u64 << self.bank_bits()) - 1)) as BankId;
        a >>= self.bank_bits();
        let row = a;
        Ok(DramCoord { row, bank, column, dimm: self.dimm_of_row(row) })
    }

    pub fn compose(&self, row: RowAddr, bank: BankId, column: ColAddr) -> Result<PhysAddr, AddrError> {
        let fit = |field, value: u64, bits: u32| {
            if bits < 64 && value >> bits != 0 {
                Err(AddrError::FieldOverflow { field, value, bits })
            } else {
                Ok(())
            }
        };
        fit("row", row, self.row_bits)?;
        fit("bank", bank as u64, self.bank_bits())?;
        fit("column", column, self.column_bits)?;
        let a = (((row << self.bank_bits()) | bank as u64) << self.column_bits) | column;
        Ok(a << self.offset_bits())
    }
}

/// A paired extended/shadow allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPair {
    pub extended: PhysAddr,
    pub shadow: PhysAddr,
    pub size: u64,
}

/// Allocates extended memory and its shadow together in fixed-size blocks.
/// Bump allocation with a first-fit free list and no coalescing.
#[derive(Debug, Clone)]
pub struct BlockAllocator {
    layout: AddressSpaceLayout,
    block: u64,
    cursor: PhysAddr,
    free: Vec<(PhysAddr, u64)>,
    live: BTreeMap<PhysAddr, u64>,
}

impl BlockAllocator {
    pub fn new(layout: AddressSpaceLayout, block: u64) -> Self {
        let cursor = layout.extended.start;
        Self { layout, block, cursor, free: Vec::new(), live: BTreeMap::new() }
    }

    /// Default granularity: 64 MB, scaled by 1/1024 for the desk-scale layout.
    pub fn with_default_block(layout: AddressSpaceLayout) -> Self {
        let block = if layout.flag_bit >= 35 { 64 * MIB } else { 64 * KIB };
        Self::new(layout, block)
    }

    pub fn block_size(&self) -> u64 {
        self.block
    }

    pub fn available(&self) -> u64 {
        (self.layout.extended.end - self.cursor) + self.free.iter().map(|&(_, s)| s).sum::<u64>()
    }

    /// Returns `Ok(None)` for a zero-byte request.
    pub fn alloc_block(&mut self, size: u64) -> Result<Option<BlockPair>, AddrError> {
        if size == 0 {
            return Ok(None);
        }
        if !size.is_multiple_of(self.block) {
            return Err(AddrError::NotBlockMultiple { size, block: self.block });
        }
        let base = if let Some(i) = self.free.iter().position(|&(_, s)| s >= size) {
            let (base, s) = self.free[i];
            if s == size {
                self.free.remove(i);
            } else {
                self.free[i] = (base + size, s - size);
            }
            base
        } else if self.layout.extended.end - self.cursor >= size {
            let base = self.cursor;
            self.cursor += size;
            base
        } else {
            return Err(AddrError::OutOfExtendedMemory { requested: size, available: self.available() });
        };
        self.live.insert(base, size);
        Ok(Some(BlockPair { extended: base, shadow: base + self.layout.ext_mem_size, size }))
    }

    /// Releases an allocation (extended and shadow together).
    pub fn free_block(&mut self, extended_base: PhysAddr) -> Result<(), AddrError> {
        let size = self.live.remove(&extended_base).ok_or(AddrError::UnknownBlock(extended_base))?;
        self.free.push((extended_base, size));
        Ok(())
    }

    pub fn live_blocks(&self) -> impl Iterator<Item = BlockPair> + '_ {
        let off = self.layout.ext_mem_size;
        self.live.iter().map(move |(&b, &s)| BlockPair { extended: b, shadow: b + off, size: s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_full_layout() {
        let l = AddressSpaceLayout::table5_full();
        assert_eq!(l.classify(4 * GIB), Ok(Region::Local));
        assert_eq!(l.classify(16 * GIB), Ok(Region::Extended));
        assert_eq!(l.classify(48 * GIB), Ok(Region::Shadow));
        assert_eq!(l.classify(36 * GIB), Err(AddrError::OutOfRange(36 * GIB)));
        assert_eq!(l.ext_mem_size, 32 * GIB);
    }

    #[test]
    fn shadow_flip() {
        let l = AddressSpaceLayout::table5_full();
        assert_eq!(l.shadow_of(8 * GIB), Ok(40 * GIB));
        assert_eq!(l.shadow_of(40 * GIB), Ok(8 * GIB));
        assert_eq!(l.shadow_of(4 * GIB), Err(AddrError::NotExtendable(4 * GIB)));
        assert_eq!(l.canonical(40 * GIB), 8 * GIB);
    }

    #[test]
    fn layouts_validate_against_geometry() {
        DramGeometry::desk_scale().validate_with(&AddressSpaceLayout::desk_scale()).unwrap();
        DramGeometry::table5_full().validate_with(&AddressSpaceLayout::table5_full()).unwrap();
        let err = DramGeometry::desk_scale().validate_with(&AddressSpaceLayout::table5_full());
        assert!(err.is_err());
    }

    #[test]
    fn overlapping_layout_rejected() {
        assert!(AddressSpaceLayout::new(0..10 * MIB, 8 * MIB..32 * MIB, 25).is_err());
    }

    #[test]
    fn decompose_zero_and_round_trip() {
        let g = DramGeometry::desk_scale();
        assert_eq!(g.decompose(0).unwrap(), DramCoord { row: 0, bank: 0, column: 0, dimm: 0 });
        assert_eq!(g.compose(0, 0, 0), Ok(0));
        let c = g.decompose(16 * MIB).unwrap();
        assert_eq!(g.compose(c.row, c.bank, c.column), Ok(16 * MIB));
        let full = DramGeometry::table5_full();
        let c = full.decompose(16 * GIB).unwrap();
        assert_eq!(full.compose(c.row, c.bank, c.column), Ok(16 * GIB));
    }

    #[test]
    fn compose_rejects_wide_fields() {
        let g = DramGeometry::desk_scale();
        assert!(matches!(g.compose(1 << g.row_bits, 0, 0), Err(AddrError::FieldOverflow { field: "row", .. })));
        assert!(matches!(g.compose(0, 16, 0), Err(AddrError::FieldOverflow { field: "bank", .. })));
        assert!(matches!(g.decompose(65), Err(AddrError::MisalignedAddress { .. })));
    }

    #[test]
    fn twins_share_bank_and_column() {
        let l = AddressSpaceLayout::desk_scale();
        let g = DramGeometry::desk_scale();
        let a = 8 * MIB + 0x1_2340;
        let a = a - a % 64;
        let (x, y) = (g.decompose(a).unwrap(), g.decompose(l.shadow_of(a).unwrap()).unwrap());
        assert_eq!(x.bank, y.bank);
        assert_eq!(x.column, y.column);
        assert_eq!(x.row ^ y.row, 1 << (g.row_bits - 1));
        assert_eq!(x.dimm, y.dimm);
    }

    #[test]
    fn allocator_pairs_blocks() {
        let l = AddressSpaceLayout::table5_full();
        let mut a = BlockAllocator::with_default_block(l.clone());
        let p = a.alloc_block(64 * MIB).unwrap().unwrap();
        assert_eq!(p.extended, 8 * GIB);
        assert_eq!(p.shadow, 8 * GIB + l.ext_mem_size);
        assert_eq!(a.alloc_block(0), Ok(None));
        assert!(matches!(a.alloc_block(24 * GIB), Err(AddrError::OutOfExtendedMemory { .. })));
        assert!(matches!(a.alloc_block(MIB), Err(AddrError::NotBlockMultiple { .. })));
        a.free_block(p.extended).unwrap();
        assert_eq!(a.free_block(p.extended), Err(AddrError::UnknownBlock(p.extended)));
        let q = a.alloc_block(64 * MIB).unwrap().unwrap();
        assert_eq!(q.extended, p.extended);
    }

    #[test]
    fn allocator_capacity_is_extended_range() {
        let l = AddressSpaceLayout::table5_full();
        let mut a = BlockAllocator::with_default_block(l);
        assert!(a.alloc_block(24 * GIB).unwrap().is_some());
        assert!(matches!(a.alloc_block(64 * MIB), Err(AddrError::OutOfExtendedMemory { available: 0, .. })));
    }
}
