//! Region classification, shadow aliasing, DRAM coordinates and paired
//! block allocation on the desk-scale layout.

use twinload::addrmap::{AddressSpaceLayout, BlockAllocator, DramGeometry, MIB};

fn main() {
    let layout = AddressSpaceLayout::desk_scale();
    let geometry = DramGeometry::desk_scale();
    println!(
        "local {:#x}..{:#x}, extended {:#x}..{:#x}, flag bit {}",
        layout.local.start, layout.local.end, layout.extended.start, layout.extended.end, layout.flag_bit
    );

    for addr in [0x1040, 9 * MIB + 0x2000, layout.shadow_of(9 * MIB + 0x2000).unwrap()] {
        let region = layout.classify(addr).unwrap();
        let c = geometry.decompose(layout.canonical(addr)).unwrap();
        println!(
            "{addr:#010x}: {region:?}, canonical {:#x}, row {} bank {} col {} dimm {}",
            layout.canonical(addr),
            c.row,
            c.bank,
            c.column,
            c.dimm
        );
    }

    let mut alloc = BlockAllocator::with_default_block(layout);
    println!("block size {} KiB, {} MiB available", alloc.block_size() / 1024, alloc.available() / MIB);
    let a = alloc.alloc_block(2 * alloc.block_size()).unwrap().expect("space left");
    let b = alloc.alloc_block(alloc.block_size()).unwrap().expect("space left");
    println!("block a: extended {:#x} shadow {:#x} size {}", a.extended, a.shadow, a.size);
    println!("block b: extended {:#x} shadow {:#x} size {}", b.extended, b.shadow, b.size);
    alloc.free_block(a.extended).unwrap();
    let c = alloc.alloc_block(alloc.block_size()).unwrap().expect("space left");
    println!("after freeing a, next block reuses {:#x}", c.extended);
}
