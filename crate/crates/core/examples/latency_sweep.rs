//! Normalized performance of twin-load and a raised read latency as the
//! extra memory latency grows.

use twinload::cli::sweep_rows;
use twinload::engine::{gen_synthetic, SimConfig, SynthKind};
use twinload::frontend::MechanismKind;

fn main() {
    let mut cfg = SimConfig { issue_window: 8, ..SimConfig::default() };
    cfg.sweep.values = (0..=6).map(|i| f64::from(i) * 20.0).collect();
    cfg.sweep.mechanisms = vec![MechanismKind::TlLf, MechanismKind::TlOoO, MechanismKind::IncreasedTrl(0)];
    let trace = gen_synthetic(SynthKind::UniformRandom, 16 << 20, 10_000, 1, &cfg.layout).unwrap();
    let rows = sweep_rows(&cfg, &trace).unwrap();

    print!("{:>8}", "extra ns");
    for m in &cfg.sweep.mechanisms {
        print!("{:>10}", m.label());
    }
    println!();
    for &v in &cfg.sweep.values {
        print!("{v:>8}");
        for m in &cfg.sweep.mechanisms {
            let row = rows.iter().find(|r| r.value == v && r.stats.mechanism.starts_with(m.label())).unwrap();
            print!("{:>10.3}", row.normalized);
        }
        println!();
    }
}
