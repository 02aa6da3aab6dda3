//! Load value cache sizing and the MEC tree's added read latency.

use twinload::engine::{SimConfig, Simulator};
use twinload::frontend::load_tl_ooo;
use twinload::mec::{min_lvc_size, Hierarchy};
use twinload::timing::{ns, to_ns, TimingParams};

fn main() {
    for t_pd in [0.0, 5.0, 10.0, 17.5, 30.0] {
        let params = TimingParams::ddr3_1600().with_t_pd(ns(t_pd));
        println!("tPD {t_pd:>4} ns: minimum LVC entries {}", min_lvc_size(&params));
    }

    let params = TimingParams::ddr3_1600().with_t_pd(ns(17.5));
    for name in ["single", "two-layer", "four-layer"] {
        let tree = Hierarchy::preset(name, 16).unwrap();
        println!(
            "{name:<9}: {} chips, {} hops to dimm 0, read round trip {} ns",
            tree.nodes().len(),
            tree.hops(0).unwrap(),
            to_ns(tree.read_round_trip(0, &params).unwrap())
        );
    }

    let mut sim = Simulator::new(SimConfig::default()).unwrap();
    let base = sim.config().layout.extended.start;
    for i in 0..4 {
        load_tl_ooo(&mut sim, base + i * 8192).unwrap();
    }
    let mec = sim.mec().expect("twin-load mechanisms have a MEC");
    println!(
        "after 4 twin-loads: LVC holds {}/{} entries, {} fake responses, {} first loads",
        mec.lvc().occupancy(),
        mec.lvc().capacity(),
        mec.stats.fake_responses,
        mec.stats.first_loads
    );
    let open: Vec<_> = mec.bst().iter().enumerate().filter(|(_, e)| e.open).map(|(b, e)| (b, e.row)).collect();
    println!("open rows tracked by the bank state table: {open:?}");
}
