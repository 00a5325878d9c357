#![allow(dead_code)]

use buddy_core::codec::{size_class, Block128, SizeClass};
use buddy_core::memory::{Allocation, AllocationRecord, Snapshot, PAGE_BYTES};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BASE: u64 = 0x2000_0000;

/// One allocation per block list, ids 1.., each starting on a fresh page.
pub fn snapshot_of(index: usize, allocs: &[Vec<Block128>]) -> Snapshot {
    let mut va = BASE;
    let allocations = allocs
        .iter()
        .enumerate()
        .map(|(i, blocks)| {
            let data: Vec<u8> = blocks.iter().flat_map(|b| b.to_bytes()).collect();
            let len = data.len() as u64;
            let a = Allocation::new(
                AllocationRecord {
                    alloc_id: i as u64 + 1,
                    base_va: va,
                    length_bytes: len,
                },
                data,
            );
            va += len.next_multiple_of(PAGE_BYTES) + PAGE_BYTES;
            a
        })
        .collect();
    Snapshot::new(index, allocations).unwrap()
}

pub fn random_block(rng: &mut impl RngCore) -> Block128 {
    Block128::from_fn(|_| rng.next_u32())
}

pub fn ramp(base: u32, stride: u32) -> Block128 {
    Block128::from_fn(|i| base + stride * i as u32)
}

/// Deterministic search for a block of the wanted class among noisy ramps.
pub fn block_of_class(class: SizeClass, seed: u64) -> Block128 {
    match class {
        SizeClass::Fits8B => return Block128::zeroed(),
        SizeClass::Raw => return random_block(&mut ChaCha8Rng::seed_from_u64(seed)),
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let bits = rng.gen_range(1..=24u32);
        let mask = (1u32 << bits) - 1;
        let base = rng.gen_range(0..1u32 << 28);
        let b = Block128::from_fn(|i| base + 3 * i as u32 + (rng.next_u32() & mask));
        if size_class(&b) == class {
            return b;
        }
    }
}
