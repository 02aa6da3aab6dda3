mod common;

use common::{compare_with_golden, mixed_trace, Golden, Mix, LINE};
use twinload::engine::{store_value, SimConfig, Simulator, TraceRecord};
use twinload::frontend::MechanismKind;
use twinload::line::{FakeLine, InitialImage};
use twinload::timing::ns;

fn simulate(cfg: SimConfig, trace: &[TraceRecord]) -> Simulator {
    let mut sim = Simulator::new(cfg).unwrap();
    sim.add_trace(trace).unwrap();
    sim.run().unwrap();
    sim
}

#[test]
fn golden_model_applies_word_stores_in_order() {
    let cfg = SimConfig::default();
    let base = cfg.layout.extended.start;
    let trace = vec![
        TraceRecord::load(0, base + 8),
        TraceRecord::store(1, base + 8),
        TraceRecord::load(2, base + 40),
        TraceRecord::store(3, base + 40),
        TraceRecord::load(4, base),
    ];
    let g = Golden::run(cfg.seed, 0.0, cfg.fake_byte, &trace);
    let init = InitialImage::new(cfg.seed, 0.0, FakeLine::new(cfg.fake_byte)).line(base);
    assert_eq!(g.observed[0], init);
    assert_eq!(g.observed[1], init);
    assert_eq!(g.observed[2], init.with_word(1, store_value(cfg.seed, 1)));
    let last = init.with_word(1, store_value(cfg.seed, 1)).with_word(5, store_value(cfg.seed, 3));
    assert_eq!(g.observed[4], last);
    assert_eq!(g.read(base), last);
    assert_eq!(g.read(base + LINE), InitialImage::new(cfg.seed, 0.0, FakeLine::new(cfg.fake_byte)).line(base + LINE));
}

#[test]
fn comparator_detects_a_misplaced_store() {
    let cfg = SimConfig { mechanism: MechanismKind::TlOoO, ..SimConfig::default() };
    let trace = mixed_trace(3, Mix { local_lines: 64, ext_lines: 256, ..Mix::new(2000) }, &cfg.layout);
    let sim = simulate(cfg, &trace);
    compare_with_golden(&sim, &trace).unwrap();

    let k = trace.iter().rposition(|r| r.op == twinload::engine::Op::Store).unwrap();
    let mut moved = trace.clone();
    moved[k].vaddr ^= 8;
    assert!(compare_with_golden(&sim, &moved).is_err());
}

#[test]
fn comparator_detects_a_wrong_observation() {
    let cfg = SimConfig { mechanism: MechanismKind::TlLf, ..SimConfig::default() };
    let base = cfg.layout.extended.start;
    let trace = vec![TraceRecord::load(0, base), TraceRecord::store(1, base), TraceRecord::load(2, base)];
    let sim = simulate(cfg, &trace);
    compare_with_golden(&sim, &trace).unwrap();
    // Same final memory, but the first load would have seen the store.
    let swapped = vec![TraceRecord::store(1, base), TraceRecord::load(0, base), TraceRecord::load(2, base)];
    assert!(compare_with_golden(&sim, &swapped).is_err());
}

#[test]
fn every_mechanism_matches_golden() {
    let mechanisms =
        [MechanismKind::Ideal, MechanismKind::IncreasedTrl(ns(60.0)), MechanismKind::TlLf, MechanismKind::TlOoO];
    for (i, mechanism) in mechanisms.into_iter().enumerate() {
        let cfg = SimConfig { mechanism, pattern_fraction: 0.02, seed: 90 + i as u64, ..SimConfig::default() };
        let trace = mixed_trace(i as u64, Mix { local_lines: 128, ext_lines: 512, ..Mix::new(8000) }, &cfg.layout);
        let sim = simulate(cfg, &trace);
        compare_with_golden(&sim, &trace).unwrap_or_else(|e| panic!("{mechanism}: {e}"));
    }
}

#[test]
fn dense_fake_patterns_take_the_safe_path() {
    for mechanism in [MechanismKind::TlLf, MechanismKind::TlOoO] {
        let cfg = SimConfig {
            mechanism,
            pattern_fraction: 0.5,
            eviction_injection_rate: 0.05,
            seed: 11,
            ..SimConfig::default()
        };
        let trace = mixed_trace(12, Mix { local_lines: 32, ext_lines: 128, ..Mix::new(4000) }, &cfg.layout);
        let sim = simulate(cfg, &trace);
        compare_with_golden(&sim, &trace).unwrap_or_else(|e| panic!("{mechanism}: {e}"));
        assert!(sim.stats().exceptions > 100, "{mechanism}: {}", sim.stats().exceptions);
    }
}

#[test]
fn any_fake_byte_preserves_memory() {
    for fake_byte in [0x00, 0xff, 0x5a] {
        let cfg = SimConfig {
            mechanism: MechanismKind::TlOoO,
            fake_byte,
            pattern_fraction: 0.05,
            eviction_injection_rate: 0.1,
            ..SimConfig::default()
        };
        let trace =
            mixed_trace(fake_byte as u64, Mix { local_lines: 64, ext_lines: 256, ..Mix::new(3000) }, &cfg.layout);
        let sim = simulate(cfg, &trace);
        compare_with_golden(&sim, &trace).unwrap_or_else(|e| panic!("fake byte {fake_byte:#x}: {e}"));
    }
}

#[test]
fn tiny_lvc_and_cache_still_match() {
    for mechanism in [MechanismKind::TlLf, MechanismKind::TlOoO] {
        let mut cfg =
            SimConfig { mechanism, eviction_injection_rate: 0.02, pattern_fraction: 0.01, ..SimConfig::default() };
        cfg.lvc_size = 2;
        cfg.cache_sets = 4;
        cfg.cache_ways = 2;
        cfg.mshr_capacity = 4;
        let trace = mixed_trace(77, Mix { local_lines: 64, ext_lines: 256, ..Mix::new(3000) }, &cfg.layout);
        let sim = simulate(cfg, &trace);
        compare_with_golden(&sim, &trace).unwrap_or_else(|e| panic!("{mechanism}: {e}"));
    }
}
