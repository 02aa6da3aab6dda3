#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinload::addrmap::{AddressSpaceLayout, PhysAddr};
use twinload::engine::{store_value, Op, Simulator, TraceRecord};
use twinload::line::{FakeLine, InitialImage, Line, LINE_BYTES};

pub const LINE: u64 = LINE_BYTES as u64;

/// Shape of a random load/store trace.
#[derive(Debug, Clone, Copy)]
pub struct Mix {
    pub ops: usize,
    pub local_lines: u64,
    pub ext_lines: u64,
    pub store_fraction: f64,
    pub dep_fraction: f64,
    pub max_gap: u32,
}

impl Mix {
    pub fn new(ops: usize) -> Self {
        Self { ops, local_lines: 2048, ext_lines: 8192, store_fraction: 0.3, dep_fraction: 0.1, max_gap: 8 }
    }
}

/// Random trace over the first lines of local and extended memory, with
/// word-granular addresses and occasional dependences on recent records.
pub fn mixed_trace(seed: u64, mix: Mix, layout: &AddressSpaceLayout) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..mix.ops as u64)
        .map(|id| {
            let local = mix.local_lines > 0 && (mix.ext_lines == 0 || rng.gen_bool(0.25));
            let addr = if local {
                layout.local.start + rng.gen_range(0..mix.local_lines) * LINE
            } else {
                layout.extended.start + rng.gen_range(0..mix.ext_lines) * LINE
            } + rng.gen_range(0..8) * 8;
            let mut r = if rng.gen_bool(mix.store_fraction) {
                TraceRecord::store(id, addr)
            } else {
                TraceRecord::load(id, addr)
            };
            r.gap = rng.gen_range(0..=mix.max_gap);
            if id > 0 && rng.gen_bool(mix.dep_fraction) {
                r.deps = vec![id - 1 - rng.gen_range(0..id.min(16))];
            }
            r
        })
        .collect()
}

/// Sequential flat memory: every record applied in trace order.
pub struct Golden {
    image: InitialImage,
    lines: HashMap<PhysAddr, Line>,
    /// Line value each record saw (before the store, for stores).
    pub observed: Vec<Line>,
}

impl Golden {
    pub fn run(seed: u64, pattern_fraction: f64, fake_byte: u8, trace: &[TraceRecord]) -> Self {
        let mut g = Golden {
            image: InitialImage::new(seed, pattern_fraction, FakeLine::new(fake_byte)),
            lines: HashMap::new(),
            observed: Vec::with_capacity(trace.len()),
        };
        for r in trace {
            let line = r.vaddr & !(LINE - 1);
            let mut v = g.read(line);
            g.observed.push(v);
            if r.op == Op::Store {
                v.set_word(((r.vaddr % LINE) / 8) as usize, store_value(seed, r.id));
                g.lines.insert(line, v);
            }
        }
        g
    }

    pub fn read(&self, line: PhysAddr) -> Line {
        self.lines.get(&line).copied().unwrap_or_else(|| self.image.line(line))
    }

    pub fn written(&self) -> BTreeSet<PhysAddr> {
        self.lines.keys().copied().collect()
    }
}

/// Compares a finished simulator against the golden model: final memory
/// over every line either side wrote, and the value seen by every record.
pub fn compare_with_golden(sim: &Simulator, trace: &[TraceRecord]) -> Result<(), String> {
    let cfg = sim.config();
    let golden = Golden::run(cfg.seed, cfg.pattern_fraction, cfg.fake_byte, trace);
    let mem = sim.flushed_memory();
    let mut lines = golden.written();
    lines.extend(mem.touched());
    lines.extend(trace.iter().map(|r| r.vaddr & !(LINE - 1)));
    for &a in &lines {
        if mem.read(a) != golden.read(a) {
            return Err(format!("memory differs at {a:#x}"));
        }
    }
    for (i, (seen, want)) in sim.observed_values().iter().zip(&golden.observed).enumerate() {
        match seen {
            Some(v) if v == want => {}
            Some(_) => return Err(format!("record {} observed a wrong value", trace[i].id)),
            None => return Err(format!("record {} did not complete", trace[i].id)),
        }
    }
    Ok(())
}
