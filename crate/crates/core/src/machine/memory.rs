use crate::cap::EncodedCapability;

/// Size in bytes of a capability granule.
pub const GRANULE: u64 = 16;

/// Byte-addressed memory with one validity tag per 16-byte granule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedMemory {
    bytes: Vec<u8>,
    tags: Vec<bool>,
}

impl TaggedMemory {
    pub fn new(size: u64) -> TaggedMemory {
        let size = usize::try_from(size).expect("memory size fits the host");
        TaggedMemory {
            bytes: vec![0; size],
            tags: vec![false; size.div_ceil(GRANULE as usize)],
        }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn contains(&self, addr: u64, size: u64) -> bool {
        addr.checked_add(size).is_some_and(|end| end <= self.size())
    }

    /// Little-endian read of `size <= 8` bytes. Panics out of range.
    pub fn read(&self, addr: u64, size: u64) -> u64 {
        let a = addr as usize;
        let mut buf = [0u8; 8];
        buf[..size as usize].copy_from_slice(&self.bytes[a..a + size as usize]);
        u64::from_le_bytes(buf)
    }

    /// Little-endian write of `size <= 8` bytes. Clears the tag of every
    /// granule the write overlaps.
    pub fn write(&mut self, addr: u64, size: u64, value: u64) {
        let a = addr as usize;
        self.bytes[a..a + size as usize].copy_from_slice(&value.to_le_bytes()[..size as usize]);
        let first = addr / GRANULE;
        let last = (addr + size - 1) / GRANULE;
        for g in first..=last {
            self.tags[g as usize] = false;
        }
    }

    pub fn fill(&mut self, addr: u64, size: u64, byte: u8) {
        if size == 0 {
            return;
        }
        let a = addr as usize;
        self.bytes[a..a + size as usize].fill(byte);
        for g in addr / GRANULE..=(addr + size - 1) / GRANULE {
            self.tags[g as usize] = false;
        }
    }

    pub fn tag(&self, addr: u64) -> bool {
        self.tags[(addr / GRANULE) as usize]
    }

    /// Reads a granule: cursor at `+0`, metadata at `+8`. `addr` must be
    /// granule aligned.
    pub fn read_cap(&self, addr: u64) -> EncodedCapability {
        debug_assert_eq!(addr % GRANULE, 0);
        EncodedCapability {
            cursor: self.read(addr, 8),
            meta: self.read(addr + 8, 8),
            tag: self.tag(addr),
        }
    }

    pub fn write_cap(&mut self, addr: u64, enc: EncodedCapability) {
        debug_assert_eq!(addr % GRANULE, 0);
        self.write(addr, 8, enc.cursor);
        self.write(addr + 8, 8, enc.meta);
        self.tags[(addr / GRANULE) as usize] = enc.tag;
    }
}
