//! One DDRx channel: per-bank request queues and a command scheduler that
//! issues every command at its earliest legal time.

use std::collections::VecDeque;

use crate::addrmap::{DramCoord, PhysAddr};
use crate::engine::config::SchedPolicy;
use crate::timing::{
    apply_command, channel_cas_ready, earliest_issue, BankTimingState, CommandKind, DramCommand, Ps, TimingParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub id: u64,
    /// Address as driven on the bus (may be a shadow address).
    pub addr: PhysAddr,
    pub coord: DramCoord,
    pub write: bool,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    req: MemRequest,
    seq: u64,
    /// An ACT was issued on this request's behalf.
    opened: bool,
}

/// A command issued by [`Controller::step`]; CAS commands carry the
/// request they serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Issued {
    pub cmd: DramCommand,
    pub req: Option<MemRequest>,
    pub row_hit: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub acts: u64,
    pub pres: u64,
    /// Data bus occupancy (tBURST per CAS).
    pub busy: Ps,
}

#[derive(Debug, Clone)]
pub struct Controller {
    params: TimingParams,
    policy: SchedPolicy,
    banks: Vec<BankTimingState>,
    queues: Vec<VecDeque<Queued>>,
    last_cas: Option<Ps>,
    seq: u64,
    log: Option<Vec<DramCommand>>,
    pub stats: ChannelStats,
}

impl Controller {
    pub fn new(params: TimingParams, banks: usize, policy: SchedPolicy, record: bool) -> Self {
        Self {
            params,
            policy,
            banks: vec![BankTimingState::default(); banks],
            queues: vec![VecDeque::new(); banks],
            last_cas: None,
            seq: 0,
            log: record.then(Vec::new),
            stats: ChannelStats::default(),
        }
    }

    pub fn params(&self) -> &TimingParams {
        &self.params
    }

    pub fn bank_state(&self, bank: usize) -> &BankTimingState {
        &self.banks[bank]
    }

    pub fn command_log(&self) -> Option<&[DramCommand]> {
        self.log.as_deref()
    }

    pub fn pending(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn enqueue(&mut self, req: MemRequest) {
        let seq = self.seq;
        self.seq += 1;
        self.queues[req.coord.bank].push_back(Queued { req, seq, opened: false });
    }

    fn target(&self, bank: usize) -> Option<usize> {
        let q = &self.queues[bank];
        if q.is_empty() {
            return None;
        }
        match (self.policy, self.banks[bank].open_row) {
            (SchedPolicy::HitFirst, Some(open)) => Some(q.iter().position(|e| e.req.coord.row == open).unwrap_or(0)),
            _ => Some(0),
        }
    }

    /// Next command the bank needs and its earliest legal time.
    fn next_command(&self, bank: usize, now: Ps) -> Option<(usize, DramCommand, Ps)> {
        let i = self.target(bank)?;
        let req = self.queues[bank][i].req;
        let kind = match self.banks[bank].open_row {
            Some(r) if r == req.coord.row => {
                if req.write {
                    CommandKind::Wr { column: req.coord.column }
                } else {
                    CommandKind::Rd { column: req.coord.column }
                }
            }
            Some(_) => CommandKind::Pre,
            None => CommandKind::Act { row: req.coord.row },
        };
        let cmd = DramCommand { kind, bank, issue_time: now };
        let mut at =
            earliest_issue(&cmd, &self.banks[bank], &self.params).expect("scheduler only emits legal commands");
        if kind.is_cas() {
            at = at.max(channel_cas_ready(self.last_cas, &self.params));
        }
        Some((i, cmd, at))
    }

    fn issue(&mut self, mut cmd: DramCommand, now: Ps) {
        cmd.issue_time = now;
        self.banks[cmd.bank] = apply_command(&self.banks[cmd.bank], &cmd, &self.params).expect("command meets timing");
        if let Some(log) = &mut self.log {
            log.push(cmd);
        }
    }

    /// Issues everything that is legal at `now`: all due PRE/ACT commands
    /// and at most one CAS (the oldest ready request). Returns the issued
    /// commands and the next time the channel has work, if any.
    pub fn step(&mut self, now: Ps) -> (Vec<Issued>, Option<Ps>) {
        let mut out = Vec::new();
        for bank in 0..self.banks.len() {
            while let Some((i, cmd, at)) = self.next_command(bank, now) {
                if at > now || cmd.kind.is_cas() {
                    break;
                }
                self.issue(cmd, now);
                match cmd.kind {
                    CommandKind::Act { .. } => {
                        self.stats.acts += 1;
                        self.queues[bank][i].opened = true;
                    }
                    _ => self.stats.pres += 1,
                }
                out.push(Issued { cmd: DramCommand { issue_time: now, ..cmd }, req: None, row_hit: false });
            }
        }
        let ready = (0..self.banks.len())
            .filter_map(|b| {
                let (i, cmd, at) = self.next_command(b, now)?;
                (cmd.kind.is_cas() && at <= now).then(|| (self.queues[b][i].seq, b, i, cmd))
            })
            .min_by_key(|&(seq, ..)| seq);
        if let Some((_, bank, i, cmd)) = ready {
            self.issue(cmd, now);
            let q = self.queues[bank].remove(i).expect("queued request");
            self.last_cas = Some(now);
            self.stats.busy += self.params.t_burst;
            let row_hit = !q.opened;
            if q.req.write {
                self.stats.writes += 1;
            } else {
                self.stats.reads += 1;
                if row_hit {
                    self.stats.row_hits += 1;
                } else {
                    self.stats.row_misses += 1;
                }
            }
            out.push(Issued { cmd: DramCommand { issue_time: now, ..cmd }, req: Some(q.req), row_hit });
        }
        let next =
            (0..self.banks.len()).filter_map(|b| self.next_command(b, now).map(|(_, _, at)| at.max(now + 1))).min();
        (out, next)
    }
}
