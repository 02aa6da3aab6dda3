//! Synthetic workload generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addrmap::{AddressSpaceLayout, PhysAddr};
use crate::engine::trace::{Op, TraceRecord};
use crate::line::LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Independent loads to random words (GUPS-like).
    UniformRandom,
    /// Sequential walk with the given byte stride, wrapping at the footprint.
    Stride(u64),
    /// Each record depends on the one before it.
    PointerChase,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthKind::UniformRandom => f.write_str("uniform"),
            SynthKind::Stride(s) => write!(f, "stride:{s}"),
            SynthKind::PointerChase => f.write_str("pointer-chase"),
        }
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "uniform-random" => Ok(SynthKind::UniformRandom),
            "pointer-chase" => Ok(SynthKind::PointerChase),
            other => {
                let n = other
                    .strip_prefix("stride:")
                    .ok_or_else(|| format!("unknown generator `{other}` (uniform | stride:<bytes> | pointer-chase)"))?;
                let s: u64 = n.parse().map_err(|_| format!("bad stride `{n}`"))?;
                if s == 0 {
                    return Err("stride must be positive".into());
                }
                Ok(SynthKind::Stride(s))
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("footprint of {footprint} bytes at {base:#x} does not fit the target range ({available} bytes)")]
    FootprintTooLarge { footprint: u64, base: PhysAddr, available: u64 },
    #[error("footprint must be at least one line")]
    FootprintTooSmall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub footprint: u64,
    pub count: usize,
    pub seed: u64,
    /// Probability that a record is a store.
    pub store_fraction: f64,
    pub gap: u32,
    /// Start of the footprint; defaults to the start of extended memory.
    pub base: Option<PhysAddr>,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, footprint: u64, count: usize, seed: u64) -> Self {
        Self { kind, footprint, count, seed, store_fraction: 0.0, gap: 4, base: None }
    }
}

/// Load-only trace over the start of extended memory.
pub fn gen_synthetic(
    kind: SynthKind,
    footprint: u64,
    count: usize,
    seed: u64,
    layout: &AddressSpaceLayout,
) -> Result<Vec<TraceRecord>, SynthError> {
    generate(&SynthSpec::new(kind, footprint, count, seed), layout)
}

pub fn generate(spec: &SynthSpec, layout: &AddressSpaceLayout) -> Result<Vec<TraceRecord>, SynthError> {
    let line = LINE_BYTES as u64;
    if spec.footprint < line {
        return Err(SynthError::FootprintTooSmall);
    }
    let base = spec.base.unwrap_or(layout.extended.start);
    let range = if layout.local.contains(&base) { &layout.local } else { &layout.extended };
    let available = if range.contains(&base) { range.end - base } else { 0 };
    if spec.footprint > available {
        return Err(SynthError::FootprintTooLarge { footprint: spec.footprint, base, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lines = spec.footprint / line;
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let offset = match spec.kind {
            SynthKind::UniformRandom | SynthKind::PointerChase => {
                rng.gen_range(0..lines) * line + rng.gen_range(0..line / 8) * 8
            }
            SynthKind::Stride(s) => ((i as u64).wrapping_mul(s) % spec.footprint) & !7,
        };
        let op =
            if spec.store_fraction > 0.0 && rng.gen_bool(spec.store_fraction.min(1.0)) { Op::Store } else { Op::Load };
        let deps = match spec.kind {
            SynthKind::PointerChase if i > 0 => vec![i as u64 - 1],
            _ => Vec::new(),
        };
        out.push(TraceRecord { id: i as u64, op, vaddr: base + offset, gap: spec.gap, deps });
    }
    Ok(out)
}
