//! Cache-line payloads, the fake-data placeholder, and the flat backing store.

use std::collections::HashMap;
use std::fmt;

use crate::addrmap::PhysAddr;

pub const LINE_BYTES: usize = 64;
pub const DEFAULT_FAKE_BYTE: u8 = 0x5a;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Line(pub [u8; LINE_BYTES]);

impl Line {
    pub const fn filled(byte: u8) -> Self {
        Line([byte; LINE_BYTES])
    }

    pub fn word(&self, index: usize) -> u64 {
        let i = index * 8;
        u64::from_le_bytes(self.0[i..i + 8].try_into().expect("8-byte word"))
    }

    pub fn set_word(&mut self, index: usize, value: u64) {
        let i = index * 8;
        self.0[i..i + 8].copy_from_slice(&value.to_le_bytes());
    }

    pub fn with_word(mut self, index: usize, value: u64) -> Self {
        self.set_word(index, value);
        self
    }
}

impl fmt::Debug for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Line({:016x}..{:016x})", self.word(0), self.word(7))
    }
}

/// The placeholder line returned for a first (prefetching) load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FakeLine {
    pub pattern: Line,
}

impl FakeLine {
    pub fn new(byte: u8) -> Self {
        Self { pattern: Line::filled(byte) }
    }

    pub fn is_fake(&self, line: &Line) -> bool {
        *line == self.pattern
    }
}

impl Default for FakeLine {
    fn default() -> Self {
        Self::new(DEFAULT_FAKE_BYTE)
    }
}

/// SplitMix64 finalizer; used to derive deterministic initial contents.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic initial memory image.
///
/// Untouched lines hold an address-derived pattern. A fraction of lines,
/// chosen by hash, instead start out equal to the fake pattern so the
/// value-collision path can be exercised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialImage {
    pub seed: u64,
    /// Lines per million whose initial content equals the fake pattern.
    pub pattern_ppm: u32,
    pub fake: FakeLine,
}

impl InitialImage {
    pub fn new(seed: u64, pattern_fraction: f64, fake: FakeLine) -> Self {
        let ppm = (pattern_fraction.clamp(0.0, 1.0) * 1_000_000.0).round() as u32;
        Self { seed, pattern_ppm: ppm, fake }
    }

    pub fn line(&self, addr: PhysAddr) -> Line {
        let h = mix64(addr ^ self.seed.rotate_left(17));
        if (h % 1_000_000) < u64::from(self.pattern_ppm) {
            return self.fake.pattern;
        }
        let mut line = Line([0; LINE_BYTES]);
        for i in 0..LINE_BYTES / 8 {
            let mut w = mix64(h.wrapping_add(i as u64));
            // Keep generated data distinguishable from any fill byte.
            if w == u64::from_le_bytes([self.fake.pattern.0[0]; 8]) {
                w ^= 1;
            }
            line.set_word(i, w);
        }
        line
    }
}

/// Sparse line-granular memory with lazily generated initial contents.
#[derive(Debug, Clone)]
pub struct BackingStore {
    image: InitialImage,
    lines: HashMap<PhysAddr, Line>,
}

impl BackingStore {
    pub fn new(image: InitialImage) -> Self {
        Self { image, lines: HashMap::new() }
    }

    pub fn read(&self, addr: PhysAddr) -> Line {
        self.lines.get(&addr).copied().unwrap_or_else(|| self.image.line(addr))
    }

    pub fn write(&mut self, addr: PhysAddr, line: Line) {
        self.lines.insert(addr, line);
    }

    /// Addresses written at least once, sorted.
    pub fn touched(&self) -> Vec<PhysAddr> {
        let mut v: Vec<_> = self.lines.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn image(&self) -> &InitialImage {
        &self.image
    }
}
