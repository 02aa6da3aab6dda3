//! Drives a twin pair into each of the four cache states and shows what a
//! twin-load costs from there.

use twinload::engine::{SimConfig, Simulator};
use twinload::frontend::{classify_state, load_tl_lf, load_tl_ooo, CacheState, MechanismKind};
use twinload::line::FakeLine;

fn main() {
    for (real, fake) in [(false, false), (true, true), (true, false), (false, true)] {
        let row = classify_state(real, fake);
        println!("real cached {real:<5} fake cached {fake:<5} -> {row:?}");
    }
    println!();
    for mech in [MechanismKind::TlOoO, MechanismKind::TlLf] {
        for state in [CacheState::S1, CacheState::S2, CacheState::S3, CacheState::S4] {
            let cfg = SimConfig { mechanism: mech, ..SimConfig::default() };
            let fake = FakeLine::new(cfg.fake_byte);
            let p = cfg.layout.extended.start + 77 * 64;
            let twin = cfg.layout.shadow_of(p).unwrap();
            let mut sim = Simulator::new(cfg).unwrap();
            let load = |sim: &mut Simulator| {
                if mech == MechanismKind::TlLf {
                    load_tl_lf(sim, p)
                } else {
                    load_tl_ooo(sim, p)
                }
            };
            if state != CacheState::S1 {
                load(&mut sim).unwrap();
                let fake_at = if sim.cache().peek(p).is_some_and(|l| fake.is_fake(&l)) { p } else { twin };
                let real_at = if fake_at == p { twin } else { p };
                match state {
                    CacheState::S3 => sim.invalidate_line(fake_at),
                    CacheState::S4 => sim.invalidate_line(real_at),
                    _ => {}
                }
            }
            let out = load(&mut sim).unwrap();
            println!(
                "{mech:<7} {:?}: {} DRAM reads, {} retries, value from {:?}",
                out.state, out.dram_reads, out.retries, out.source
            );
        }
    }
}
