//! DDRx bank timing: per-bank state machines, command legality and the
//! same-bank constraints (tRL, tCCD, tRTP, tRP, tRCD) plus channel-wide
//! CAS-to-CAS spacing.
//!
//! All times are integer picoseconds.

use std::fmt;

use thiserror::Error;

/// Simulation time in picoseconds.
pub type Ps = u64;

/// Converts nanoseconds to picosecond ticks, rounding to the nearest tick.
pub fn ns(value: f64) -> Ps {
    (value * 1000.0).round() as Ps
}

/// Formats a tick count as nanoseconds.
pub fn to_ns(ticks: Ps) -> f64 {
    ticks as f64 / 1000.0
}

pub type RowAddr = u64;
pub type ColAddr = u64;
pub type BankId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("illegal {cmd} to bank {bank} in state {state}")]
    IllegalTransition { cmd: &'static str, bank: BankId, state: String },
    #[error("{cmd} to bank {bank} at {actual} ps violates {rule}: earliest legal time is {earliest} ps")]
    TimingViolation { cmd: &'static str, bank: BankId, rule: Rule, earliest: Ps, actual: Ps },
    #[error("invalid timing parameter {0}: must be positive")]
    NonPositive(&'static str),
}

/// DDRx timing constants. Cycle-denominated values are stored already
/// converted to picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingParams {
    pub t_rl: Ps,
    pub t_burst: Ps,
    pub t_ccd: Ps,
    pub t_rtp: Ps,
    pub t_rp: Ps,
    pub t_rcd: Ps,
    /// One-way propagation delay per extension hop.
    pub t_pd: Ps,
    pub clock_period: Ps,
    /// Extra time a bank stays occupied after a RD. Non-zero only when the
    /// read latency has been stretched beyond the standard value.
    pub bank_hold: Ps,
}

impl TimingParams {
    /// DDR3-1600 (1.25 ns clock) with the typical values of the DDRx timing table.
    pub fn ddr3_1600() -> Self {
        Self::from_ns(13.75, 4, 4, 7.5, 13.75, 13.75, 0.0, 1.25)
    }

    /// DDR3-1866 (CL13, 1.071 ns clock).
    pub fn ddr3_1866() -> Self {
        Self::from_ns(13.91, 4, 4, 7.5, 13.91, 13.91, 0.0, 1.071)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ddr3-1600" => Some(Self::ddr3_1600()),
            "ddr3-1866" => Some(Self::ddr3_1866()),
            _ => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_ns(
        t_rl: f64,
        t_burst_cycles: u32,
        t_ccd_cycles: u32,
        t_rtp: f64,
        t_rp: f64,
        t_rcd: f64,
        t_pd: f64,
        clock_period: f64,
    ) -> Self {
        let clk = ns(clock_period);
        Self {
            t_rl: ns(t_rl),
            t_burst: clk * t_burst_cycles as Ps,
            t_ccd: clk * t_ccd_cycles as Ps,
            t_rtp: ns(t_rtp),
            t_rp: ns(t_rp),
            t_rcd: ns(t_rcd),
            t_pd: ns(t_pd),
            clock_period: clk,
            bank_hold: 0,
        }
    }

    pub fn with_t_pd(mut self, t_pd: Ps) -> Self {
        self.t_pd = t_pd;
        self
    }

    /// Raises tRL by `extra` and holds the bank for the stretched interval,
    /// so later RD/PRE commands to the same bank wait for it.
    pub fn with_increased_read_latency(mut self, extra: Ps) -> Self {
        self.t_rl += extra;
        self.bank_hold += extra;
        self
    }

    /// tPD may be zero (no extension hardware); everything else must be positive.
    pub fn validate(&self) -> Result<(), TimingError> {
        let checks = [
            ("tRL", self.t_rl),
            ("tBURST", self.t_burst),
            ("tCCD", self.t_ccd),
            ("tRTP", self.t_rtp),
            ("tRP", self.t_rp),
            ("tRCD", self.t_rcd),
            ("clockPeriod", self.clock_period),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(TimingError::NonPositive(name));
            }
        }
        Ok(())
    }

    /// Delay from a RD on an open row to the RD that can follow on another
    /// row of the same bank: tRTP + tRP + tRCD.
    pub fn row_miss_delay(&self) -> Ps {
        self.t_rtp + self.bank_hold + self.t_rp + self.t_rcd
    }
}

impl Default for TimingParams {
    fn default() -> Self {
        Self::ddr3_1600()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    Act { row: RowAddr },
    Rd { column: ColAddr },
    Wr { column: ColAddr },
    Pre,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Act { .. } => "ACT",
            CommandKind::Rd { .. } => "RD",
            CommandKind::Wr { .. } => "WR",
            CommandKind::Pre => "PRE",
        }
    }

    pub fn is_cas(&self) -> bool {
        matches!(self, CommandKind::Rd { .. } | CommandKind::Wr { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DramCommand {
    pub kind: CommandKind,
    pub bank: BankId,
    pub issue_time: Ps,
}

impl DramCommand {
    pub fn act(bank: BankId, row: RowAddr, at: Ps) -> Self {
        Self { kind: CommandKind::Act { row }, bank, issue_time: at }
    }
    pub fn rd(bank: BankId, column: ColAddr, at: Ps) -> Self {
        Self { kind: CommandKind::Rd { column }, bank, issue_time: at }
    }
    pub fn wr(bank: BankId, column: ColAddr, at: Ps) -> Self {
        Self { kind: CommandKind::Wr { column }, bank, issue_time: at }
    }
    pub fn pre(bank: BankId, at: Ps) -> Self {
        Self { kind: CommandKind::Pre, bank, issue_time: at }
    }
}

impl fmt::Display for DramCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            CommandKind::Act { row } => write!(f, "ACT b{} r{:#x} @{}", self.bank, row, self.issue_time),
            CommandKind::Rd { column } => write!(f, "RD b{} c{:#x} @{}", self.bank, column, self.issue_time),
            CommandKind::Wr { column } => write!(f, "WR b{} c{:#x} @{}", self.bank, column, self.issue_time),
            CommandKind::Pre => write!(f, "PRE b{} @{}", self.bank, self.issue_time),
        }
    }
}

/// Per-bank protocol state. `open_row` is `None` iff the bank is precharged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BankTimingState {
    pub open_row: Option<RowAddr>,
    pub last_act: Option<Ps>,
    pub last_read: Option<Ps>,
    pub last_write: Option<Ps>,
    pub last_pre: Option<Ps>,
}

impl BankTimingState {
    fn describe(&self) -> String {
        match self.open_row {
            Some(r) => format!("open(row {r:#x})"),
            None => "precharged".to_string(),
        }
    }
}

/// Timing rules checked by [`earliest_issue`] and [`validate_stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// CAS to CAS on the same bank.
    Tccd,
    /// CAS to CAS anywhere on the channel (shared data bus).
    TccdChannel,
    Trtp,
    Trp,
    Trcd,
    /// Command not legal in the bank's state.
    State,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Tccd => "tCCD",
            Rule::TccdChannel => "tCCD(channel)",
            Rule::Trtp => "tRTP",
            Rule::Trp => "tRP",
            Rule::Trcd => "tRCD",
            Rule::State => "bank-state",
        };
        f.write_str(s)
    }
}

fn after(base: Option<Ps>, gap: Ps) -> Ps {
    base.map_or(0, |t| t + gap)
}

/// Earliest time at or after `cmd.issue_time` at which `cmd` may legally
/// issue to a bank in `state`, together with the rule that binds (if any).
pub fn earliest_issue_with_rule(
    cmd: &DramCommand,
    state: &BankTimingState,
    params: &TimingParams,
) -> Result<(Ps, Option<Rule>), TimingError> {
    let illegal = || TimingError::IllegalTransition { cmd: cmd.kind.name(), bank: cmd.bank, state: state.describe() };
    let mut limits: Vec<(Ps, Rule)> = Vec::with_capacity(3);
    match cmd.kind {
        CommandKind::Act { .. } => {
            if state.open_row.is_some() {
                return Err(illegal());
            }
            limits.push((after(state.last_pre, params.t_rp), Rule::Trp));
        }
        CommandKind::Rd { .. } | CommandKind::Wr { .. } => {
            if state.open_row.is_none() {
                return Err(illegal());
            }
            limits.push((after(state.last_act, params.t_rcd), Rule::Trcd));
            limits.push((after(state.last_read, params.t_ccd + params.bank_hold), Rule::Tccd));
            limits.push((after(state.last_write, params.t_ccd), Rule::Tccd));
        }
        CommandKind::Pre => {
            if state.open_row.is_none() {
                return Err(illegal());
            }
            limits.push((after(state.last_read, params.t_rtp + params.bank_hold), Rule::Trtp));
            limits.push((after(state.last_write, params.t_rtp), Rule::Trtp));
        }
    }
    let mut best = (cmd.issue_time, None);
    for (t, rule) in limits {
        if t > best.0 {
            best = (t, Some(rule));
        }
    }
    Ok(best)
}

/// Earliest legal issue time for `cmd` (never earlier than `cmd.issue_time`).
pub fn earliest_issue(cmd: &DramCommand, state: &BankTimingState, params: &TimingParams) -> Result<Ps, TimingError> {
    earliest_issue_with_rule(cmd, state, params).map(|(t, _)| t)
}

/// Applies `cmd` to `state`, checking legality and timing.
pub fn apply_command(
    state: &BankTimingState,
    cmd: &DramCommand,
    params: &TimingParams,
) -> Result<BankTimingState, TimingError> {
    let probe = DramCommand { issue_time: 0, ..*cmd };
    let (earliest, rule) = earliest_issue_with_rule(&probe, state, params)?;
    if cmd.issue_time < earliest {
        return Err(TimingError::TimingViolation {
            cmd: cmd.kind.name(),
            bank: cmd.bank,
            rule: rule.unwrap_or(Rule::State),
            earliest,
            actual: cmd.issue_time,
        });
    }
    let mut next = *state;
    let t = cmd.issue_time;
    match cmd.kind {
        CommandKind::Act { row } => {
            next.open_row = Some(row);
            next.last_act = Some(t);
        }
        CommandKind::Rd { .. } => next.last_read = Some(t),
        CommandKind::Wr { .. } => next.last_write = Some(t),
        CommandKind::Pre => {
            next.open_row = None;
            next.last_pre = Some(t);
        }
    }
    Ok(next)
}

/// Target of a single column access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessTarget {
    pub bank: BankId,
    pub row: RowAddr,
    pub column: ColAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessPlan {
    pub commands: Vec<DramCommand>,
    /// Time the first data beat appears on the bus.
    pub data_time: Ps,
}

impl AccessPlan {
    pub fn is_row_hit(&self) -> bool {
        self.commands.len() == 1
    }
}

/// Plans the command sequence for one read to `target`, issuing each
/// command as early as the bank state allows but not before `now`.
pub fn access_plan(state: &BankTimingState, target: AccessTarget, now: Ps, params: &TimingParams) -> AccessPlan {
    let mut bank = *state;
    let mut commands = Vec::with_capacity(3);
    let mut t = now;
    let mut push = |bank: &mut BankTimingState, kind: CommandKind, t: &mut Ps| {
        let mut cmd = DramCommand { kind, bank: target.bank, issue_time: *t };
        // The sequence below is always legal, so the bank state cannot reject it.
        cmd.issue_time = earliest_issue(&cmd, bank, params).expect("planned command is legal");
        *bank = apply_command(bank, &cmd, params).expect("planned command meets timing");
        *t = cmd.issue_time;
        commands.push(cmd);
    };
    match bank.open_row {
        Some(r) if r == target.row => {}
        Some(_) => {
            push(&mut bank, CommandKind::Pre, &mut t);
            push(&mut bank, CommandKind::Act { row: target.row }, &mut t);
        }
        None => push(&mut bank, CommandKind::Act { row: target.row }, &mut t),
    }
    push(&mut bank, CommandKind::Rd { column: target.column }, &mut t);
    AccessPlan { data_time: t + params.t_rl, commands }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub rule: Rule,
    /// Minimum gap the rule requires (ps) from the constraining command.
    pub required: Ps,
    /// Gap actually observed (ps); zero for state violations.
    pub actual: Ps,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "command #{}: {} requires {} ps, got {} ps", self.index, self.rule, self.required, self.actual)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

/// Checks a time-ordered command stream for one channel against every
/// modeled rule. The stream is replayed from all-banks-precharged.
pub fn validate_stream(commands: &[DramCommand], params: &TimingParams) -> ViolationReport {
    use std::collections::HashMap;

    let mut banks: HashMap<BankId, BankTimingState> = HashMap::new();
    let mut last_cas: Option<Ps> = None;
    let mut report = ViolationReport::default();

    for (index, cmd) in commands.iter().enumerate() {
        let state = banks.entry(cmd.bank).or_default();
        let t = cmd.issue_time;
        let state_ok = match cmd.kind {
            CommandKind::Act { .. } => state.open_row.is_none(),
            _ => state.open_row.is_some(),
        };
        if !state_ok {
            report.violations.push(Violation { index, rule: Rule::State, required: 0, actual: 0 });
        }
        let mut check = |since: Option<Ps>, gap: Ps, rule: Rule| {
            if let Some(s) = since {
                if t < s + gap {
                    report.violations.push(Violation { index, rule, required: gap, actual: t.saturating_sub(s) });
                }
            }
        };
        match cmd.kind {
            CommandKind::Act { row } => {
                check(state.last_pre, params.t_rp, Rule::Trp);
                state.open_row = Some(row);
                state.last_act = Some(t);
            }
            CommandKind::Rd { .. } | CommandKind::Wr { .. } => {
                check(state.last_act, params.t_rcd, Rule::Trcd);
                check(state.last_read, params.t_ccd + params.bank_hold, Rule::Tccd);
                check(state.last_write, params.t_ccd, Rule::Tccd);
                check(last_cas, params.t_ccd, Rule::TccdChannel);
                if matches!(cmd.kind, CommandKind::Rd { .. }) {
                    state.last_read = Some(t);
                } else {
                    state.last_write = Some(t);
                }
                last_cas = Some(t);
            }
            CommandKind::Pre => {
                check(state.last_read, params.t_rtp + params.bank_hold, Rule::Trtp);
                check(state.last_write, params.t_rtp, Rule::Trtp);
                state.open_row = None;
                state.last_pre = Some(t);
            }
        }
    }
    report
}

/// Earliest time a CAS may issue on a channel whose previous CAS was at `last_cas`.
pub fn channel_cas_ready(last_cas: Option<Ps>, params: &TimingParams) -> Ps {
    after(last_cas, params.t_ccd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> TimingParams {
        TimingParams::ddr3_1600()
    }

    fn open(row: RowAddr) -> BankTimingState {
        BankTimingState { open_row: Some(row), ..Default::default() }
    }

    #[test]
    fn preset_values() {
        let t = p();
        assert_eq!(t.t_rl, 13_750);
        assert_eq!(t.t_ccd, 5_000);
        assert_eq!(t.t_burst, 5_000);
        assert_eq!(t.t_rtp, 7_500);
        assert_eq!(t.t_rp, 13_750);
        assert_eq!(t.t_rcd, 13_750);
        assert_eq!(t.row_miss_delay(), 35_000);
        assert!(t.validate().is_ok());
        assert_eq!(TimingParams::preset("ddr3-1600"), Some(t));
    }

    #[test]
    fn zero_parameter_rejected() {
        let mut t = p();
        t.t_rcd = 0;
        assert_eq!(t.validate(), Err(TimingError::NonPositive("tRCD")));
    }

    #[test]
    fn rd_after_rd_waits_tccd() {
        let s = apply_command(&open(1), &DramCommand::rd(0, 0, 0), &p()).unwrap();
        assert_eq!(earliest_issue(&DramCommand::rd(0, 8, 0), &s, &p()).unwrap(), 5_000);
    }

    #[test]
    fn pre_after_rd_waits_trtp() {
        let s = apply_command(&open(1), &DramCommand::rd(0, 0, 0), &p()).unwrap();
        assert_eq!(earliest_issue(&DramCommand::pre(0, 0), &s, &p()).unwrap(), 7_500);
    }

    #[test]
    fn unconstrained_rd_issues_when_requested() {
        assert_eq!(earliest_issue(&DramCommand::rd(0, 3, 4_200), &open(1), &p()).unwrap(), 4_200);
    }

    #[test]
    fn act_and_pre_update_open_row() {
        let s = apply_command(&BankTimingState::default(), &DramCommand::act(0, 7, 0), &p()).unwrap();
        assert_eq!(s.open_row, Some(7));
        let s = apply_command(&s, &DramCommand::pre(0, 100_000), &p()).unwrap();
        assert_eq!(s.open_row, None);
    }

    #[test]
    fn act_on_open_bank_is_illegal() {
        let err = apply_command(&open(7), &DramCommand::act(0, 9, 0), &p()).unwrap_err();
        assert!(matches!(err, TimingError::IllegalTransition { cmd: "ACT", .. }));
        let err = earliest_issue(&DramCommand::rd(0, 0, 0), &BankTimingState::default(), &p()).unwrap_err();
        assert!(matches!(err, TimingError::IllegalTransition { cmd: "RD", .. }));
    }

    #[test]
    fn early_command_is_timing_violation() {
        let s = apply_command(&BankTimingState::default(), &DramCommand::act(0, 3, 0), &p()).unwrap();
        let err = apply_command(&s, &DramCommand::rd(0, 5, 10_000), &p()).unwrap_err();
        assert_eq!(
            err,
            TimingError::TimingViolation { cmd: "RD", bank: 0, rule: Rule::Trcd, earliest: 13_750, actual: 10_000 }
        );
    }

    #[test]
    fn plan_row_hit() {
        let plan = access_plan(&open(4), AccessTarget { bank: 0, row: 4, column: 1 }, 0, &p());
        assert_eq!(plan.commands, vec![DramCommand::rd(0, 1, 0)]);
        assert_eq!(plan.data_time, 13_750);
        assert!(plan.is_row_hit());
    }

    #[test]
    fn plan_row_miss_after_read_is_35ns() {
        let s = apply_command(&open(4), &DramCommand::rd(0, 0, 0), &p()).unwrap();
        let plan = access_plan(&s, AccessTarget { bank: 0, row: 9, column: 1 }, 0, &p());
        let kinds: Vec<_> = plan.commands.iter().map(|c| c.kind.name()).collect();
        assert_eq!(kinds, ["PRE", "ACT", "RD"]);
        assert_eq!(plan.commands[2].issue_time, 35_000);
        assert_eq!(plan.data_time, 35_000 + 13_750);
    }

    #[test]
    fn plan_closed_bank() {
        let plan = access_plan(&BankTimingState::default(), AccessTarget { bank: 2, row: 1, column: 0 }, 0, &p());
        assert_eq!(plan.commands.len(), 2);
        assert_eq!(plan.data_time, 27_500);
    }

    #[test]
    fn validate_examples() {
        let ok = [DramCommand::act(0, 3, 0), DramCommand::rd(0, 5, 13_750)];
        assert!(validate_stream(&ok, &p()).is_empty());
        let bad = [DramCommand::act(0, 3, 0), DramCommand::rd(0, 5, 10_000)];
        let r = validate_stream(&bad, &p());
        assert_eq!(r.len(), 1);
        assert_eq!(r.violations[0], Violation { index: 1, rule: Rule::Trcd, required: 13_750, actual: 10_000 });
        assert!(validate_stream(&[], &p()).is_empty());
    }

    #[test]
    fn validate_flags_channel_cas_spacing() {
        let s = [
            DramCommand::act(0, 1, 0),
            DramCommand::act(1, 1, 0),
            DramCommand::rd(0, 0, 13_750),
            DramCommand::rd(1, 0, 15_000),
        ];
        let r = validate_stream(&s, &p());
        assert_eq!(r.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::TccdChannel);
    }

    #[test]
    fn increased_read_latency_holds_bank() {
        let t = p().with_increased_read_latency(ns(35.0));
        assert_eq!(t.t_rl, 48_750);
        let s = apply_command(&open(1), &DramCommand::rd(0, 0, 0), &t).unwrap();
        assert_eq!(earliest_issue(&DramCommand::rd(0, 1, 0), &s, &t).unwrap(), 40_000);
        assert_eq!(earliest_issue(&DramCommand::pre(0, 0), &s, &t).unwrap(), 42_500);
    }
}
