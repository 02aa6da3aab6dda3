mod common;

use common::{compare_with_golden, mixed_trace, Mix, LINE};
use proptest::prelude::*;
use twinload::addrmap::{AddressSpaceLayout, BlockAllocator, DramGeometry, Region};
use twinload::cost::{perf_per_dollar, CostInputs, System};
use twinload::engine::{self, SimConfig, Simulator, TraceRecord, EXTENDED_CHANNEL, LOCAL_CHANNEL};
use twinload::frontend::{
    classify_state, load_tl_lf, load_tl_ooo, twin_attempt, CacheState, MechanismKind, MicroOp, TwinResult,
};
use twinload::line::{BackingStore, FakeLine, InitialImage};
use twinload::mec::{min_lvc_size, Hierarchy, Mec1, ReadAction};
use twinload::timing::{
    access_plan, apply_command, earliest_issue, ns, validate_stream, AccessTarget, BankTimingState, CommandKind,
    DramCommand, Ps, TimingParams,
};

fn mechanisms() -> impl Strategy<Value = MechanismKind> {
    prop_oneof![
        Just(MechanismKind::Ideal),
        Just(MechanismKind::TlLf),
        Just(MechanismKind::TlOoO),
        (0u64..60).prop_map(|e| MechanismKind::IncreasedTrl(ns(e as f64))),
    ]
}

fn run_sim(cfg: SimConfig, trace: &[TraceRecord]) -> Simulator {
    let mut sim = Simulator::new(cfg).expect("valid config");
    sim.add_trace(trace).expect("valid trace");
    sim.run().expect("run completes");
    sim
}

fn rds_after(sim: &Simulator, t0: Ps) -> Vec<Ps> {
    sim.command_log(EXTENDED_CHANNEL)
        .unwrap_or_default()
        .iter()
        .filter(|c| matches!(c.kind, CommandKind::Rd { .. }) && c.issue_time >= t0)
        .map(|c| c.issue_time)
        .collect()
}

// ---- timing ----

fn targets() -> impl Strategy<Value = Vec<(usize, u64, u64, u64)>> {
    prop::collection::vec((0usize..4, 0u64..4, 0u64..128, 0u64..40_000), 1..60)
}

proptest! {
    #[test]
    fn plans_are_legal_and_well_formed(reqs in targets()) {
        let p = TimingParams::ddr3_1600();
        let mut banks = [BankTimingState::default(); 4];
        let mut streams = vec![Vec::new(); 4];
        let mut now = 0;
        for (bank, row, column, wait) in reqs {
            now += wait;
            let before = banks[bank];
            let plan = access_plan(&before, AccessTarget { bank, row, column }, now, &p);
            let kinds: Vec<&str> = plan.commands.iter().map(|c| c.kind.name()).collect();
            match before.open_row {
                Some(r) if r == row => prop_assert_eq!(kinds, vec!["RD"]),
                Some(_) => prop_assert_eq!(kinds, vec!["PRE", "ACT", "RD"]),
                None => prop_assert_eq!(kinds, vec!["ACT", "RD"]),
            }
            let rd = plan.commands.last().unwrap();
            prop_assert_eq!(plan.data_time - rd.issue_time, p.t_rl);
            prop_assert!(plan.commands[0].issue_time >= now);
            for c in &plan.commands {
                banks[bank] = apply_command(&banks[bank], c, &p).unwrap();
            }
            now = rd.issue_time;
            streams[bank].extend(plan.commands);
        }
        // Plans see one bank; channel-wide CAS spacing is the controller's job.
        for s in &streams {
            prop_assert!(validate_stream(s, &p).is_empty());
        }
    }

    #[test]
    fn relaxing_timing_never_delays(
        reqs in targets(),
        which in 0usize..5,
        cut in 1u64..5_000,
        probe in (0u64..4, 0u64..128, 0u64..3),
    ) {
        let strict = TimingParams::ddr3_1600();
        let mut loose = strict;
        let field = match which {
            0 => &mut loose.t_rcd,
            1 => &mut loose.t_rp,
            2 => &mut loose.t_rtp,
            3 => &mut loose.t_ccd,
            _ => &mut loose.t_rl,
        };
        *field = field.saturating_sub(cut).max(1);
        let mut state = BankTimingState::default();
        let mut now = 0;
        for (_, row, column, wait) in reqs {
            now += wait;
            let plan = access_plan(&state, AccessTarget { bank: 0, row, column }, now, &strict);
            for c in &plan.commands {
                state = apply_command(&state, c, &strict).unwrap();
            }
            now = plan.commands.last().unwrap().issue_time;
        }
        let (row, column, k) = probe;
        let kind = match (k, state.open_row) {
            (0, None) => CommandKind::Act { row },
            (0, Some(_)) | (1, Some(_)) => CommandKind::Pre,
            (_, Some(_)) => CommandKind::Rd { column },
            (_, None) => CommandKind::Act { row },
        };
        let cmd = DramCommand { kind, bank: 0, issue_time: now };
        let a = earliest_issue(&cmd, &state, &strict).unwrap();
        let b = earliest_issue(&cmd, &state, &loose).unwrap();
        prop_assert!(b <= a, "{}: relaxed {} > strict {}", kind.name(), b, a);
    }
}

// ---- address map ----

#[test]
fn shadow_swaps_regions_over_whole_space() {
    let l = AddressSpaceLayout::desk_scale();
    let mut twins = 0;
    for a in (0..l.limit()).step_by(LINE as usize) {
        match l.classify(a) {
            Ok(Region::Extended) => {
                let s = l.shadow_of(a).unwrap();
                assert_eq!(l.classify(s), Ok(Region::Shadow));
                assert_eq!(l.shadow_of(s).unwrap(), a);
                assert_eq!((a ^ s).count_ones(), 1);
                assert_eq!(a ^ s, 1 << l.flag_bit);
                twins += 1;
            }
            Ok(Region::Shadow) => assert_eq!(l.classify(l.shadow_of(a).unwrap()), Ok(Region::Extended)),
            Ok(Region::Local) | Err(_) => assert!(l.shadow_of(a).is_err()),
        }
    }
    assert_eq!(twins, l.extended_size() / LINE);
}

#[test]
fn compose_inverts_decompose_over_whole_space() {
    let g = DramGeometry::desk_scale();
    for a in (0..g.capacity()).step_by(LINE as usize) {
        let c = g.decompose(a).unwrap();
        assert_eq!(g.compose(c.row, c.bank, c.column).unwrap(), a);
    }
}

proptest! {
    #[test]
    fn block_pairs_never_overlap(ops in prop::collection::vec((any::<bool>(), 1u64..4, any::<prop::sample::Index>()), 1..80)) {
        let layout = AddressSpaceLayout::desk_scale();
        let mut alloc = BlockAllocator::with_default_block(layout.clone());
        let block = alloc.block_size();
        for (grow, blocks, pick) in ops {
            let live: Vec<_> = alloc.live_blocks().collect();
            if grow || live.is_empty() {
                let _ = alloc.alloc_block(blocks * block);
            } else {
                let victim = live[pick.index(live.len())];
                alloc.free_block(victim.extended).unwrap();
                prop_assert!(alloc.live_blocks().all(|b| b.extended != victim.extended && b.shadow != victim.shadow));
            }
            let mut live: Vec<_> = alloc.live_blocks().collect();
            live.sort_by_key(|b| b.extended);
            for b in &live {
                prop_assert_eq!(b.shadow, layout.shadow_of(b.extended).unwrap());
                prop_assert!(layout.extended.contains(&b.extended) && b.extended + b.size <= layout.extended.end);
            }
            for w in live.windows(2) {
                prop_assert!(w[0].extended + w[0].size <= w[1].extended);
            }
        }
    }
}

// ---- MEC1 ----

fn mec(t_pd: Ps, lvc: usize) -> (Mec1, BackingStore) {
    let g = DramGeometry::desk_scale();
    let fake = FakeLine::default();
    let p = TimingParams::ddr3_1600().with_t_pd(t_pd);
    let m = Mec1::new(
        Hierarchy::preset("two-layer", g.logical_dimms).unwrap(),
        p,
        g,
        AddressSpaceLayout::desk_scale(),
        lvc,
        fake,
    );
    (m, BackingStore::new(InitialImage::new(3, 0.0, fake)))
}

proptest! {
    #[test]
    fn twin_pair_yields_one_fake_and_one_real(line in 0u64..(24 << 14), shadow_first: bool, t_pd in 0u64..40_000, slack in 0u64..50_000) {
        let l = AddressSpaceLayout::desk_scale();
        let g = DramGeometry::desk_scale();
        let (mut m, mem) = mec(t_pd, 10);
        let p = l.extended.start + line * LINE;
        let s = l.shadow_of(p).unwrap();
        let (a, b) = if shadow_first { (s, p) } else { (p, s) };
        let round_trip = m.hierarchy().read_round_trip(0, &TimingParams::ddr3_1600().with_t_pd(t_pd)).unwrap();
        let ca = g.decompose(a).unwrap();
        let cb = g.decompose(b).unwrap();
        m.on_act(ca.bank, ca.row, 0).unwrap();
        let ReadAction::First { fake, fill, .. } = m.on_read(ca.bank, ca.column, 0, &mem).unwrap() else {
            panic!("first RD must allocate")
        };
        m.on_pre(ca.bank).unwrap();
        let t = round_trip + slack;
        m.on_act(cb.bank, cb.row, t).unwrap();
        m.on_fill(fill.entry, fill.tag, fill.data);
        let ReadAction::Second { entry, tag, .. } = m.on_read(cb.bank, cb.column, t, &mem).unwrap() else {
            panic!("second RD must hit")
        };
        let real = m.drive(entry, tag);
        prop_assert!(m.fake().is_fake(&fake));
        prop_assert_eq!(real, mem.read(p));
        prop_assert!(!m.fake().is_fake(&real));
    }

    #[test]
    fn mec_returns_fake_or_memory_and_tracks_rows(cmds in prop::collection::vec((0usize..16, 0u64..512, 0u64..128, 0u8..3), 1..200)) {
        let (mut m, mem) = mec(ns(10.0), 4);
        let g = DramGeometry::desk_scale();
        let l = AddressSpaceLayout::desk_scale();
        let p = TimingParams::ddr3_1600();
        let mut banks = vec![BankTimingState::default(); g.banks()];
        let mut now = 0;
        for (bank, row, column, op) in cmds {
            now += 100_000;
            let kind = match (op, banks[bank].open_row) {
                (_, None) => CommandKind::Act { row },
                (0, Some(_)) => CommandKind::Pre,
                (_, Some(_)) => CommandKind::Rd { column },
            };
            let cmd = DramCommand { kind, bank, issue_time: now };
            banks[bank] = apply_command(&banks[bank], &cmd, &p).unwrap();
            match kind {
                CommandKind::Act { row } => { m.on_act(bank, row, now).unwrap(); }
                CommandKind::Pre => m.on_pre(bank).unwrap(),
                _ => {
                    let tag = l.canonical(g.compose(banks[bank].open_row.unwrap(), bank, column).unwrap());
                    let line = match m.on_read(bank, column, now, &mem).unwrap() {
                        ReadAction::First { fake, fill, .. } => {
                            prop_assert_eq!(fill.data, mem.read(tag));
                            m.on_fill(fill.entry, fill.tag, fill.data);
                            fake
                        }
                        ReadAction::Second { entry, tag, .. } => m.drive(entry, tag),
                    };
                    prop_assert!(m.fake().is_fake(&line) || line == mem.read(tag));
                }
            }
            for (b, e) in m.bst().iter().enumerate() {
                prop_assert_eq!(e.open.then_some(e.row), banks[b].open_row);
            }
        }
    }

    #[test]
    fn read_latency_grows_by_round_trip_per_hop(layers in 1u32..6, t_pd in 0u64..50_000, proc_delay in 0u64..5_000) {
        let mut h = Hierarchy::tree(layers, 2, 4).unwrap();
        h.proc_delay = proc_delay;
        let p = TimingParams::ddr3_1600().with_t_pd(t_pd);
        for d in 0..4 {
            let k = Ps::from(h.hops(d).unwrap());
            prop_assert_eq!(k, Ps::from(layers - 1));
            prop_assert_eq!(h.read_round_trip(d, &p).unwrap(), p.t_rl + 2 * k * (t_pd + proc_delay));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn formula_sized_lvc_never_evicts_early(t_pd in 0u64..=17_500, mshr in 4usize..40, seed: u64, stride_banks in 1u64..17) {
        let mut cfg = SimConfig { mechanism: MechanismKind::TlOoO, mshr_capacity: mshr, seed, ..SimConfig::default() };
        cfg.timing.t_pd = t_pd;
        cfg.lvc_size = min_lvc_size(&cfg.timing);
        let trace: Vec<TraceRecord> = (0..2_000u64)
            .map(|i| TraceRecord::load(i, cfg.layout.extended.start + (i * stride_banks * 8192 + (i / 16) * LINE) % (16 << 20)))
            .collect();
        let sim = run_sim(cfg, &trace);
        prop_assert_eq!(sim.stats().lvc_premature_evictions, 0);
    }
}

// ---- cache ----

#[test]
fn twin_lines_share_a_set_with_distinct_tags() {
    let cfg = SimConfig::default();
    let sim = Simulator::new(cfg.clone()).unwrap();
    for a in (cfg.layout.extended.start..cfg.layout.extended.end).step_by(4099 * LINE as usize) {
        let s = cfg.layout.shadow_of(a).unwrap();
        assert_ne!(a, s);
        assert_eq!(sim.cache().set_index(a), sim.cache().set_index(s));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn golden_with_invalidations_and_bounded_mshrs(
        mech in mechanisms(),
        seed: u64,
        rate in prop_oneof![Just(0.0), 0.0..0.2],
        mshr in 1usize..16,
        chunks in prop::collection::vec(prop::collection::vec(0u64..512, 0..20), 1..5),
    ) {
        let cfg = SimConfig { mechanism: mech, seed, eviction_injection_rate: rate, mshr_capacity: mshr, ..SimConfig::default() };
        let mix = Mix { local_lines: 64, ext_lines: 256, ..Mix::new(300) };
        let trace = mixed_trace(seed, mix, &cfg.layout);
        let mut sim = Simulator::new(cfg.clone()).unwrap();
        let per = trace.len() / chunks.len();
        for (k, victims) in chunks.iter().enumerate() {
            let end = if k + 1 == chunks.len() { trace.len() } else { (k + 1) * per };
            sim.add_trace(&trace[k * per..end]).unwrap();
            sim.run().unwrap();
            prop_assert!(sim.cache().mshr.peak() <= mshr);
            prop_assert!(sim.cache().mshr.is_empty());
            for &v in victims {
                let base = if v % 4 == 0 { cfg.layout.local.start } else { cfg.layout.extended.start };
                let mut a = base + (v % 256) * LINE;
                if v % 3 == 0 && base == cfg.layout.extended.start {
                    a = cfg.layout.shadow_of(a).unwrap();
                }
                sim.invalidate_line(a);
            }
        }
        prop_assert_eq!(sim.stats().completed_ops, trace.len() as u64);
        if let Err(e) = compare_with_golden(&sim, &trace) {
            return Err(TestCaseError::fail(e));
        }
    }
}

// ---- frontend ----

#[test]
fn classify_state_truth_table() {
    let table = [
        ((false, false), CacheState::S1, 2, TwinResult::RealAndFake),
        ((true, true), CacheState::S2, 0, TwinResult::RealAndFake),
        ((true, false), CacheState::S3, 1, TwinResult::RealAndFake),
        ((false, true), CacheState::S4, 1, TwinResult::BothFake),
    ];
    for ((real, fake), state, reads, result) in table {
        let row = classify_state(real, fake);
        assert_eq!((row.state, row.dram_reads, row.result), (state, reads, result));
    }
}

#[test]
fn only_tl_lf_fences_between_twins() {
    let (p, s) = (8 << 20, (8 << 20) + (32 << 20));
    let lf = twin_attempt(MechanismKind::TlLf, p, s, None);
    let ooo = twin_attempt(MechanismKind::TlOoO, p, s, None);
    let (a, b) = issues(&lf);
    assert!(lf[a..b].contains(&MicroOp::Fence));
    let (a, b) = issues(&ooo);
    assert!(!ooo[a..b].contains(&MicroOp::Fence));
}

fn issues(ops: &[MicroOp]) -> (usize, usize) {
    let idx: Vec<usize> =
        ops.iter().enumerate().filter(|(_, o)| matches!(o, MicroOp::Issue { .. })).map(|(i, _)| i).collect();
    (idx[0], idx[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cold_twin_pair_spacing(warm in 0usize..200, line in 0u64..4096, seed: u64, lf: bool) {
        let mech = if lf { MechanismKind::TlLf } else { MechanismKind::TlOoO };
        let cfg = SimConfig { mechanism: mech, record_commands: true, seed, ..SimConfig::default() };
        let p = cfg.layout.extended.start + (16 << 20) + line * LINE;
        let mix = Mix { ext_lines: 4096, ..Mix::new(warm) };
        let trace = mixed_trace(seed, mix, &cfg.layout);
        let mut sim = run_sim(cfg.clone(), &trace);
        let t0 = sim.now();
        let out = if lf { load_tl_lf(&mut sim, p) } else { load_tl_ooo(&mut sim, p) }.unwrap();
        prop_assert_eq!(out.state, CacheState::S1);
        let rds = rds_after(&sim, t0);
        prop_assert_eq!(rds.len(), 2);
        let gap = rds[1] - rds[0];
        prop_assert!(gap >= cfg.timing.row_miss_delay());
        if lf {
            // The demand load issues only after the prefetch's data reached the core.
            prop_assert!(gap >= cfg.timing.t_rl + cfg.timing.t_burst + cfg.onchip_latency);
        }
        prop_assert_eq!(out.value, sim.memory().read(p));
    }

    /// Load-only traces over consecutive lines never leave a twin set
    /// short of ways and never write, so every retry is caused by a strike.
    #[test]
    fn more_injection_never_fewer_retries(seed: u64, lo in 0.0f64..0.3, step in 0.0f64..0.3, lf: bool) {
        let mech = if lf { MechanismKind::TlLf } else { MechanismKind::TlOoO };
        let mix = Mix { local_lines: 64, ext_lines: 256, store_fraction: 0.0, ..Mix::new(400) };
        let base = SimConfig { mechanism: mech, seed, ..SimConfig::default() };
        let trace = mixed_trace(seed, mix, &base.layout);
        let retries = |rate: f64| engine::run(&SimConfig { eviction_injection_rate: rate, ..base.clone() }, &trace).unwrap().retries;
        prop_assert!(retries(lo + step) >= retries(lo));
    }
}

#[test]
fn retries_grow_with_injection_rate_on_mixed_traces() {
    for mech in [MechanismKind::TlLf, MechanismKind::TlOoO] {
        let totals: Vec<u64> = [0.0, 0.02, 0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&rate| {
                (0..8u64)
                    .map(|seed| {
                        let cfg =
                            SimConfig { mechanism: mech, seed, eviction_injection_rate: rate, ..SimConfig::default() };
                        let mix = Mix { local_lines: 128, ext_lines: 512, ..Mix::new(500) };
                        engine::run(&cfg, &mixed_trace(seed, mix, &cfg.layout)).unwrap().retries
                    })
                    .sum()
            })
            .collect();
        assert!(totals.windows(2).all(|w| w[1] >= w[0]), "{mech}: {totals:?}");
    }
}

// ---- engine ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_deterministic_complete_and_causal(mech in mechanisms(), seed: u64, rate in 0.0f64..0.1, ops in 1usize..400) {
        let cfg = SimConfig { mechanism: mech, seed, eviction_injection_rate: rate, record_commands: true, ..SimConfig::default() };
        let mix = Mix { dep_fraction: 0.4, local_lines: 128, ext_lines: 512, ..Mix::new(ops) };
        let trace = mixed_trace(seed, mix, &cfg.layout);
        let a = run_sim(cfg.clone(), &trace);
        let b = run_sim(cfg.clone(), &trace);
        prop_assert_eq!(a.stats(), b.stats());
        prop_assert_eq!(a.stats().completed_ops, ops as u64);
        for ch in [LOCAL_CHANNEL, EXTENDED_CHANNEL] {
            prop_assert_eq!(a.command_log(ch), b.command_log(ch));
        }
        let times = a.record_times();
        let index: std::collections::HashMap<u64, usize> = trace.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        for (r, t) in trace.iter().zip(&times) {
            let (start, _) = t.unwrap();
            for d in &r.deps {
                let (_, dep_done) = times[index[d]].unwrap();
                prop_assert!(start >= dep_done, "record {} started at {} before dep {} finished at {}", r.id, start, d, dep_done);
            }
        }
        let s = a.stats();
        let t_burst = cfg.timing.t_burst;
        prop_assert_eq!(s.bus_busy_ps, (s.dram_reads + s.dram_writes) * t_burst);
        if s.elapsed_ps > 0 {
            let bw = s.dram_reads as f64 * 64.0 * 1e12 / s.elapsed_ps as f64;
            prop_assert!((s.read_bandwidth() - bw).abs() <= 1e-9 * bw.max(1.0));
        }
    }

    #[test]
    fn ideal_latency_matches_access_plan(lines in prop::collection::hash_set(0u64..200_000, 1..40)) {
        let cfg = SimConfig { mechanism: MechanismKind::Ideal, ..SimConfig::default() };
        let mut sim = Simulator::new(cfg.clone()).unwrap();
        for line in lines {
            let addr = line * LINE;
            let ch = if cfg.layout.is_extended_or_shadow(addr) { EXTENDED_CHANNEL } else { LOCAL_CHANNEL };
            let c = cfg.geometry.decompose(addr).unwrap();
            let state = *sim.controller(ch).bank_state(c.bank);
            let start = sim.now();
            let r = sim.execute(twinload::engine::ExecRequest::load(addr)).unwrap();
            let plan = access_plan(&state, AccessTarget { bank: c.bank, row: c.row, column: c.column }, r.started.max(start), &cfg.timing);
            prop_assert_eq!(r.finished, plan.data_time + cfg.timing.t_burst + cfg.onchip_latency);
        }
    }
}

// ---- cost ----

proptest! {
    #[test]
    fn perf_per_dollar_ratio_ignores_speedup_scale(x in 0.01f64..1e6, a in 0usize..3, b in 0usize..3) {
        let systems = [System::Tl, System::Numa, System::Cluster];
        let ratio = |x: f64| {
            let inputs = CostInputs { x, ..CostInputs::default() };
            perf_per_dollar(systems[a], &inputs).unwrap() / perf_per_dollar(systems[b], &inputs).unwrap()
        };
        prop_assert_eq!(ratio(x), ratio(2.0 * x));
    }
}
