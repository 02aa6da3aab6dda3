//! Plans reads against one DDR3-1600 bank and checks the resulting stream.

use twinload::timing::{
    access_plan, apply_command, to_ns, validate_stream, AccessTarget, BankTimingState, DramCommand, TimingParams,
};

fn main() {
    let params = TimingParams::ddr3_1600();
    println!("row-miss delay (tRTP + tRP + tRCD): {} ns", to_ns(params.row_miss_delay()));

    let mut bank = BankTimingState::default();
    let mut stream: Vec<DramCommand> = Vec::new();
    let mut now = 0;
    for (row, column) in [(3, 0), (3, 8), (9, 0), (9, 16)] {
        let plan = access_plan(&bank, AccessTarget { bank: 0, row, column }, now, &params);
        let kinds: Vec<_> =
            plan.commands.iter().map(|c| format!("{}@{}", c.kind.name(), to_ns(c.issue_time))).collect();
        println!("row {row:>2} col {column:>2}: {:<40} data at {} ns", kinds.join(" "), to_ns(plan.data_time));
        for cmd in &plan.commands {
            bank = apply_command(&bank, cmd, &params).expect("planned commands are legal");
        }
        now = plan.commands.last().map_or(now, |c| c.issue_time);
        stream.extend(plan.commands);
    }
    println!("violations in planned stream: {}", validate_stream(&stream, &params).len());

    let mut bad = stream.clone();
    bad[1].issue_time -= 1_000;
    let report = validate_stream(&bad, &params);
    println!("after pulling one command 1 ns earlier: {} violation(s)", report.len());
}
