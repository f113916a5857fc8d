//! Sparse little-endian byte memory shared by all executors.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;

const PAGE_BITS: u32 = 12;
const PAGE_SIZE: usize = 1 << PAGE_BITS;

#[derive(Clone, Default, PartialEq, Eq)]
pub struct Memory {
    pages: BTreeMap<u32, Box<[u8; PAGE_SIZE]>>,
}

impl core::fmt::Debug for Memory {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Memory").field("pages", &self.pages.len()).finish()
    }
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Memory preloaded with `bytes` at `base`.
    pub fn with_bytes(base: u32, bytes: &[u8]) -> Self {
        let mut m = Memory::new();
        for (i, b) in bytes.iter().enumerate() {
            m.write_u8(base.wrapping_add(i as u32), *b);
        }
        m
    }

    pub fn read_u8(&self, addr: u32) -> u8 {
        self.pages.get(&(addr >> PAGE_BITS)).map_or(0, |p| p[(addr as usize) & (PAGE_SIZE - 1)])
    }

    pub fn write_u8(&mut self, addr: u32, value: u8) {
        let page = self.pages.entry(addr >> PAGE_BITS).or_insert_with(|| Box::new([0; PAGE_SIZE]));
        page[(addr as usize) & (PAGE_SIZE - 1)] = value;
    }

    /// Little-endian word read; the caller checks alignment.
    pub fn read_u32(&self, addr: u32) -> u32 {
        u32::from_le_bytes([
            self.read_u8(addr),
            self.read_u8(addr.wrapping_add(1)),
            self.read_u8(addr.wrapping_add(2)),
            self.read_u8(addr.wrapping_add(3)),
        ])
    }

    pub fn write_u32(&mut self, addr: u32, value: u32) {
        for (i, b) in value.to_le_bytes().into_iter().enumerate() {
            self.write_u8(addr.wrapping_add(i as u32), b);
        }
    }

    /// Iterates over every byte in every touched page, in address order.
    pub fn bytes(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.pages
            .iter()
            .flat_map(|(page, data)| data.iter().enumerate().map(move |(i, b)| ((page << PAGE_BITS) | i as u32, *b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_round_trip_little_endian() {
        let mut m = Memory::new();
        m.write_u32(0x1000_0ffe, 0x1122_3344);
        assert_eq!(m.read_u8(0x1000_0ffe), 0x44);
        assert_eq!(m.read_u8(0x1000_1001), 0x11);
        assert_eq!(m.read_u32(0x1000_0ffe), 0x1122_3344);
        assert_eq!(m.read_u32(0x2000_0000), 0);
    }
}
