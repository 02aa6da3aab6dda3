//! Runs one synthetic workload under every access mechanism.

use twinload::engine::{gen_synthetic, run, SimConfig, SynthKind};
use twinload::frontend::MechanismKind;
use twinload::metrics::{render, Format};
use twinload::timing::ns;

fn main() {
    let base = SimConfig::default();
    let trace = gen_synthetic(SynthKind::UniformRandom, 16 << 20, 20_000, 1, &base.layout).unwrap();
    let mut rows = Vec::new();
    for mechanism in
        [MechanismKind::Ideal, MechanismKind::IncreasedTrl(ns(35.0)), MechanismKind::TlLf, MechanismKind::TlOoO]
    {
        let stats = run(&SimConfig { mechanism, ..base.clone() }, &trace).unwrap();
        rows.push(
            stats
                .fields()
                .into_iter()
                .filter(|(k, _)| {
                    [
                        "mechanism",
                        "ops_per_us",
                        "avg_op_latency_ns",
                        "avg_outstanding_ext_reads",
                        "dram_reads",
                        "retries",
                    ]
                    .contains(k)
                })
                .collect(),
        );
    }
    print!("{}", render(&rows, Format::Table));
}
