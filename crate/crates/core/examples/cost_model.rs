//! Three-year cost per server and performance per dollar of each system.

use twinload::cost::{breakdown, cents, cluster_break_even, efficiency_curve, relative_to_tl, CostInputs, System};

fn main() {
    let inputs = CostInputs::default();
    println!("{:<9}{:>10}{:>10}{:>10}{:>10}{:>14}", "system", "processor", "memory", "mec", "total", "perf/$ vs TL");
    for system in System::ALL {
        let b = breakdown(system, &inputs).unwrap();
        println!(
            "{:<9}{:>10}{:>10}{:>10}{:>10}{:>14.4}",
            system.to_string(),
            cents(&b.processor),
            cents(&b.memory),
            cents(&b.mec),
            cents(&b.total()),
            relative_to_tl(system, &inputs).unwrap()
        );
    }
    println!("cluster matches TL at parallel efficiency {:.4}", cluster_break_even(&inputs).unwrap());
    for p in efficiency_curve(&inputs, 4).unwrap() {
        println!("c = {:.2}: NUMA {:.3}, cluster {:.3} of TL", p.c, p.numa, p.cluster);
    }
}
