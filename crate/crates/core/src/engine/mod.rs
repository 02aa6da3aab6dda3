//! Discrete-event simulator: a trace-driven core with a bounded issue
//! window, one processor cache, a local and an extended DDRx channel, and
//! (for twin-load mechanisms) MEC1 on the extended channel.

pub mod config;
pub mod controller;
pub mod event;
pub mod synth;
pub mod trace;

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::addrmap::PhysAddr;
use crate::cache::{AccessKind, AccessOutcome, CacheModel, Evicted};
use crate::frontend::{
    classify_state, exception_tail, plain_load, plain_store, retry_prefix, select_value, twin_attempt, CacheState,
    InjectSite, MechanismKind, MicroOp, Selection, Slot, Source, TwinLoadOutcome, TWIN_ATTEMPTS,
};
use crate::line::{mix64, BackingStore, FakeLine, InitialImage, Line, LINE_BYTES};
use crate::mec::{Mec1, PendingFill, ReadAction};
use crate::metrics::SimStats;
use crate::timing::{CommandKind, DramCommand, Ps};

pub use config::{ConfigError, SchedPolicy, SecondLoadDelay, SimConfig, SweepSpec};
pub use controller::{Controller, MemRequest};
pub use event::EventQueue;
pub use synth::{gen_synthetic, generate, SynthKind, SynthSpec};
pub use trace::{load_trace, Op, TraceError, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("internal invariant failure: {0}")]
    Internal(String),
}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e.to_string())
    }
}

pub const LOCAL_CHANNEL: usize = 0;
pub const EXTENDED_CHANNEL: usize = 1;

/// Value written by a store record: a function of the seed and record id.
pub fn store_value(seed: u64, id: u64) -> u64 {
    mix64(seed ^ mix64(id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Hit,
    Plain,
    MecFirst,
    MecSecond,
    Exception,
}

impl Origin {
    fn source(self) -> Source {
        match self {
            Origin::Hit => Source::CacheHit,
            Origin::Plain | Origin::MecFirst => Source::FirstLoad,
            Origin::MecSecond => Source::SecondLoad,
            Origin::Exception => Source::ExceptionPath,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RecKind {
    Load,
    Store { value: u64 },
    Retry,
}

#[derive(Debug, Clone)]
struct Rec {
    id: u64,
    kind: RecKind,
    line: PhysAddr,
    twin: Option<PhysAddr>,
    canonical: PhysAddr,
    word: usize,
    gap: u32,
    deps: Vec<usize>,
    fetch: Ps,
    start: Ps,
    started: bool,
    done: bool,
    done_at: Ps,
    ops: VecDeque<MicroOp>,
    results: [Option<Line>; 3],
    origins: [Origin; 3],
    pending: u32,
    first_return: Option<Ps>,
    resume_at: Option<Ps>,
    wake_at: Option<Ps>,
    /// Twin-load attempts started so far.
    attempt: u32,
    /// Times each injection site was reached; part of the strike key.
    visits: [u32; 2],
    /// Attempt number within the current twin-load.
    twin_try: u32,
    cas_attempts: u32,
    retries: u32,
    exception: bool,
    state: Option<CacheState>,
    first_reads: u32,
    on_bus: [bool; 2],
    value: Option<Line>,
    source: Source,
    chosen: Slot,
    pending_write: Option<Line>,
}

impl Rec {
    fn is_twin(&self) -> bool {
        self.twin.is_some()
    }

    fn slot_addr(&self, slot: Slot) -> PhysAddr {
        match slot {
            Slot::Shadow => self.twin.expect("twin record"),
            _ => self.line,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Fetch,
    Wake(usize),
    HitData { rec: usize, slot: Slot, line: Line },
    ChannelWake(usize),
    Fill(PendingFill),
    Drive { entry: usize, tag: PhysAddr, addr: PhysAddr },
    Data { addr: PhysAddr, line: Option<Line>, origin: Origin },
}

type Waiter = (usize, Slot);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counters {
    loads: u64,
    stores: u64,
    retries: u64,
    exceptions: u64,
    cas_failures: u64,
    injected_evictions: u64,
    writebacks: u64,
    twin_loads_on_bus: u64,
    paired_loads: u64,
    latency_sum: u128,
}

/// A single operation submitted through the direct API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecRequest {
    pub addr: PhysAddr,
    kind: RecKind,
}

impl ExecRequest {
    pub fn load(addr: PhysAddr) -> Self {
        Self { addr, kind: RecKind::Load }
    }

    /// Store of one 8-byte word; `word` indexes the word within the line.
    pub fn store(addr: PhysAddr, word: usize, value: u64) -> Self {
        let line = addr & !(LINE_BYTES as u64 - 1);
        Self { addr: line + (word as u64 % 8) * 8, kind: RecKind::Store { value } }
    }

    pub fn retry(addr: PhysAddr) -> Self {
        Self { addr, kind: RecKind::Retry }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecResult {
    /// Line value observed by the operation (before the store, for stores).
    pub value: Option<Line>,
    pub twin: Option<TwinLoadOutcome>,
    pub started: Ps,
    pub finished: Ps,
}

pub struct Simulator {
    cfg: SimConfig,
    fake: FakeLine,
    spacing: Option<Ps>,
    now: Ps,
    queue: EventQueue<Event>,
    channels: [Controller; 2],
    channel_wakes: [BTreeSet<Ps>; 2],
    mec: Option<Mec1>,
    cache: CacheModel<Waiter>,
    memory: BackingStore,
    records: Vec<Rec>,
    ids: HashMap<u64, usize>,
    window_start: usize,
    admitted: usize,
    last_fetch: Ps,
    next_fetch: Option<Ps>,
    fetch_event: Option<Ps>,
    fences: BTreeSet<usize>,
    line_queues: HashMap<PhysAddr, VecDeque<usize>>,
    next_req: u64,
    counters: Counters,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let fake = FakeLine::new(cfg.fake_byte);
        let banks = cfg.geometry.banks();
        let cache = CacheModel::new(cfg.cache_sets, cfg.cache_ways, cfg.mshr_capacity)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let channels = [
            Controller::new(cfg.timing, banks, cfg.scheduler, cfg.record_commands),
            Controller::new(cfg.extended_params(), banks, cfg.scheduler, cfg.record_commands),
        ];
        let mec = cfg.mechanism.uses_twins().then(|| {
            let mut m = Mec1::new(
                cfg.topology.clone(),
                cfg.timing,
                cfg.geometry.clone(),
                cfg.layout.clone(),
                cfg.lvc_size,
                fake,
            );
            m.exception_latency = cfg.exception_latency;
            m
        });
        let memory = BackingStore::new(InitialImage::new(cfg.seed, cfg.pattern_fraction, fake));
        let spacing = cfg.mechanism.uses_twins().then(|| cfg.second_load_spacing()).flatten();
        Ok(Self {
            fake,
            spacing,
            now: 0,
            queue: EventQueue::new(),
            channels,
            channel_wakes: [BTreeSet::new(), BTreeSet::new()],
            mec,
            cache,
            memory,
            records: Vec::new(),
            ids: HashMap::new(),
            window_start: 0,
            admitted: 0,
            last_fetch: 0,
            next_fetch: None,
            fetch_event: None,
            fences: BTreeSet::new(),
            line_queues: HashMap::new(),
            next_req: 0,
            counters: Counters::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn mechanism(&self) -> MechanismKind {
        self.cfg.mechanism
    }

    pub fn now(&self) -> Ps {
        self.now
    }

    pub fn cache(&self) -> &CacheModel<(usize, Slot)> {
        &self.cache
    }

    pub fn mec(&self) -> Option<&Mec1> {
        self.mec.as_ref()
    }

    pub fn memory(&self) -> &BackingStore {
        &self.memory
    }

    pub fn controller(&self, channel: usize) -> &Controller {
        &self.channels[channel]
    }

    /// Commands issued on a channel, if recording is enabled.
    pub fn command_log(&self, channel: usize) -> Option<&[DramCommand]> {
        self.channels[channel].command_log()
    }

    /// Removes a line from the processor cache, writing it back if dirty.
    pub fn invalidate_line(&mut self, addr: PhysAddr) {
        let line = addr & !(LINE_BYTES as u64 - 1);
        if let Some(ev) = self.cache.invalidate(line) {
            self.writeback(ev);
        }
    }

    /// Appends trace records; they run on the next [`Simulator::run`].
    pub fn add_trace(&mut self, trace: &[TraceRecord]) -> Result<(), SimError> {
        trace::validate_continuation(trace, &self.cfg.layout, |d| self.ids.contains_key(&d))?;
        for r in trace {
            if self.ids.contains_key(&r.id) {
                return Err(TraceError::Invalid { index: 0, id: r.id, reason: "id already used".into() }.into());
            }
        }
        for r in trace {
            let deps = r.deps.iter().map(|d| self.ids[d]).collect();
            let kind = match r.op {
                Op::Load => RecKind::Load,
                Op::Store => RecKind::Store { value: store_value(self.cfg.seed, r.id) },
            };
            self.push_record(r.id, kind, r.vaddr, r.gap, deps);
        }
        Ok(())
    }

    fn push_record(&mut self, id: u64, kind: RecKind, vaddr: PhysAddr, gap: u32, deps: Vec<usize>) -> usize {
        let line = vaddr & !(LINE_BYTES as u64 - 1);
        let ext = self.cfg.layout.is_extended_or_shadow(line);
        let twin = (ext && self.cfg.mechanism.uses_twins())
            .then(|| self.cfg.layout.shadow_of(line).expect("extended address has a twin"));
        let idx = self.records.len();
        self.ids.insert(id, idx);
        self.records.push(Rec {
            id,
            kind,
            line,
            twin,
            canonical: self.cfg.layout.canonical(line),
            word: ((vaddr % LINE_BYTES as u64) / 8) as usize,
            gap,
            deps,
            fetch: 0,
            start: 0,
            started: false,
            done: false,
            done_at: 0,
            ops: VecDeque::new(),
            results: [None; 3],
            origins: [Origin::Plain; 3],
            pending: 0,
            first_return: None,
            resume_at: None,
            wake_at: None,
            attempt: 0,
            visits: [0; 2],
            twin_try: 0,
            cas_attempts: 0,
            retries: 0,
            exception: false,
            state: None,
            first_reads: 0,
            on_bus: [false; 2],
            value: None,
            source: Source::CacheHit,
            chosen: Slot::Primary,
            pending_write: None,
        });
        idx
    }

    fn initial_program(&mut self, i: usize) {
        let mech = self.cfg.mechanism;
        let spacing = self.spacing;
        let r = &mut self.records[i];
        let ops: Vec<MicroOp> = match (r.twin, r.kind) {
            (Some(s), RecKind::Retry) => {
                r.attempt = 1;
                r.twin_try = 1;
                r.retries = 1;
                let mut v = retry_prefix(r.line, s);
                v.extend(twin_attempt(mech, r.line, s, spacing));
                v
            }
            (Some(s), _) => twin_attempt(mech, r.line, s, spacing),
            (None, RecKind::Store { .. }) => plain_store(r.line),
            (None, _) => plain_load(r.line),
        };
        r.ops = ops.into();
        if r.kind == RecKind::Retry && r.is_twin() {
            self.counters.retries += 1;
        }
    }

    /// Runs until every submitted record has completed and no events remain.
    pub fn run(&mut self) -> Result<(), SimError> {
        self.pump()?;
        while let Some((t, ev)) = self.queue.pop() {
            if t < self.now {
                return Err(SimError::Internal(format!("event at {t} ps scheduled in the past ({} ps)", self.now)));
            }
            self.now = t;
            self.handle(ev)?;
            if self.queue.peek_time() != Some(self.now) {
                self.pump()?;
            }
        }
        if let Some(r) = self.records.iter().find(|r| !r.done) {
            return Err(SimError::Internal(format!("record {} never completed", r.id)));
        }
        Ok(())
    }

    /// Submits one operation and runs to idle.
    pub fn execute(&mut self, req: ExecRequest) -> Result<ExecResult, SimError> {
        let id = self.records.last().map_or(0, |r| r.id + 1);
        let layout = &self.cfg.layout;
        if !matches!(layout.classify(req.addr), Ok(crate::addrmap::Region::Local | crate::addrmap::Region::Extended)) {
            return Err(SimError::Config(format!("address {:#x} is not local or extended memory", req.addr)));
        }
        if req.kind == RecKind::Retry && !self.cfg.mechanism.uses_twins() {
            return Err(SimError::Config("retry needs a twin-load mechanism".into()));
        }
        let i = self.push_record(id, req.kind, req.addr, 0, Vec::new());
        self.run()?;
        let r = &self.records[i];
        let twin = r.is_twin().then(|| TwinLoadOutcome {
            value: r.value.expect("completed twin-load has a value"),
            source: r.source,
            retries: r.retries,
            state: r.state.unwrap_or(CacheState::S1),
            dram_reads: r.first_reads,
            exception: r.exception,
        });
        Ok(ExecResult { value: r.value, twin, started: r.start, finished: r.done_at })
    }

    fn schedule_channel(&mut self, ch: usize, at: Ps) {
        if self.channel_wakes[ch].insert(at) {
            self.queue.push(at, Event::ChannelWake(ch));
        }
    }

    fn wake_record(&mut self, i: usize, at: Ps) {
        let r = &mut self.records[i];
        if r.wake_at != Some(at) {
            r.wake_at = Some(at);
            self.queue.push(at, Event::Wake(i));
        }
    }

    fn send(&mut self, addr: PhysAddr, write: bool) -> Result<(), SimError> {
        let ch = if self.cfg.layout.is_extended_or_shadow(addr) { EXTENDED_CHANNEL } else { LOCAL_CHANNEL };
        let coord = self.cfg.geometry.decompose(addr).map_err(|e| SimError::Internal(e.to_string()))?;
        let id = self.next_req;
        self.next_req += 1;
        self.channels[ch].enqueue(MemRequest { id, addr, coord, write });
        self.schedule_channel(ch, self.now);
        Ok(())
    }

    fn writeback(&mut self, ev: Evicted) {
        if !ev.dirty {
            return;
        }
        let canonical = self.cfg.layout.canonical(ev.addr);
        self.memory.write(canonical, ev.data);
        if let Some(m) = &mut self.mec {
            if self.cfg.layout.is_extended_or_shadow(canonical) {
                m.on_write(canonical, ev.data);
            }
        }
        self.counters.writebacks += 1;
        // Decomposition cannot fail for an address the cache obtained from a record.
        let _ = self.send(ev.addr, true);
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Fetch => self.fetch_event = None,
            Event::Wake(i) => {
                if self.records[i].wake_at == Some(self.now) {
                    self.records[i].wake_at = None;
                }
            }
            Event::HitData { rec, slot, line } => self.deliver(rec, slot, line, Origin::Hit),
            Event::ChannelWake(ch) => {
                self.channel_wakes[ch].remove(&self.now);
                self.channel_step(ch)?;
            }
            Event::Fill(f) => {
                if let Some(m) = &mut self.mec {
                    m.on_fill(f.entry, f.tag, f.data);
                }
            }
            Event::Drive { entry, tag, addr } => {
                let m = self.mec.as_mut().ok_or_else(|| SimError::Internal("drive without MEC".into()))?;
                let line = m.drive(entry, tag);
                let at = self.now + self.channels[EXTENDED_CHANNEL].params().t_burst + self.cfg.onchip_latency;
                self.queue.push(at, Event::Data { addr, line: Some(line), origin: Origin::MecSecond });
            }
            Event::Data { addr, line, origin } => {
                let line = line.unwrap_or_else(|| self.memory.read(self.cfg.layout.canonical(addr)));
                let res = self.cache.fill(addr, line, self.now).map_err(|e| SimError::Internal(e.to_string()))?;
                if let Some(ev) = res.evicted {
                    self.writeback(ev);
                }
                for (rec, slot) in res.waiters {
                    self.deliver(rec, slot, line, origin);
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, rec: usize, slot: Slot, line: Line, origin: Origin) {
        let r = &mut self.records[rec];
        if slot == Slot::Primary {
            r.first_return = Some(self.now);
        }
        r.results[slot.index()] = Some(line);
        r.origins[slot.index()] = origin;
        r.pending -= 1;
    }

    fn channel_step(&mut self, ch: usize) -> Result<(), SimError> {
        let (issued, next) = self.channels[ch].step(self.now);
        let params = *self.channels[ch].params();
        for is in issued {
            let cmd = is.cmd;
            let t = cmd.issue_time;
            let mec = if ch == EXTENDED_CHANNEL { self.mec.as_mut() } else { None };
            match (cmd.kind, mec) {
                (CommandKind::Act { row }, Some(m)) => {
                    m.on_act(cmd.bank, row, t).map_err(|e| SimError::Internal(e.to_string()))?;
                }
                (CommandKind::Pre, Some(m)) => m.on_pre(cmd.bank).map_err(|e| SimError::Internal(e.to_string()))?,
                (CommandKind::Rd { column }, Some(m)) => {
                    let req = is.req.expect("RD serves a request");
                    match m.on_read(cmd.bank, column, t, &self.memory).map_err(|e| SimError::Internal(e.to_string()))? {
                        ReadAction::First { data_time, fake, fill } => {
                            self.queue.push(fill.arrives, Event::Fill(fill));
                            let at = data_time + params.t_burst + self.cfg.onchip_latency;
                            self.queue
                                .push(at, Event::Data { addr: req.addr, line: Some(fake), origin: Origin::MecFirst });
                        }
                        ReadAction::Second { data_time, entry, tag } => {
                            self.queue.push(data_time, Event::Drive { entry, tag, addr: req.addr });
                        }
                    }
                }
                (CommandKind::Rd { .. }, None) => {
                    let req = is.req.expect("RD serves a request");
                    let at = t + params.t_rl + params.t_burst + self.cfg.onchip_latency;
                    self.queue.push(at, Event::Data { addr: req.addr, line: None, origin: Origin::Plain });
                }
                _ => {}
            }
        }
        if let Some(t) = next {
            self.schedule_channel(ch, t);
        }
        Ok(())
    }

    fn pump(&mut self) -> Result<(), SimError> {
        loop {
            let mut progress = self.admit();
            let mut i = self.window_start;
            while i < self.admitted {
                if !self.records[i].done {
                    progress |= self.advance(i)?;
                }
                i += 1;
            }
            while self.window_start < self.admitted && self.records[self.window_start].done {
                self.window_start += 1;
                progress = true;
            }
            if !progress {
                return Ok(());
            }
        }
    }

    fn admit(&mut self) -> bool {
        let mut progress = false;
        while self.admitted < self.records.len() && self.admitted - self.window_start < self.cfg.issue_window {
            let i = self.admitted;
            let f = *self.next_fetch.get_or_insert_with(|| {
                self.last_fetch.max(self.now) + Ps::from(self.records[i].gap) * self.cfg.cpi_gap
            });
            if f > self.now {
                if self.fetch_event != Some(f) {
                    self.fetch_event = Some(f);
                    self.queue.push(f, Event::Fetch);
                }
                break;
            }
            self.next_fetch = None;
            self.last_fetch = f;
            self.records[i].fetch = f;
            self.admitted += 1;
            let canonical = self.records[i].canonical;
            self.line_queues.entry(canonical).or_default().push_back(i);
            if self.cfg.mechanism == MechanismKind::TlLf && self.records[i].is_twin() {
                self.fences.insert(i);
            }
            self.initial_program(i);
            progress = true;
        }
        progress
    }

    fn can_start(&self, i: usize) -> bool {
        let r = &self.records[i];
        r.deps.iter().all(|&d| self.records[d].done)
            && self.line_queues.get(&r.canonical).and_then(|q| q.front()) == Some(&i)
            && self.fences.range(..i).next().is_none()
    }

    fn advance(&mut self, i: usize) -> Result<bool, SimError> {
        let mut progress = false;
        if !self.records[i].started {
            if !self.can_start(i) {
                return Ok(false);
            }
            let r = &mut self.records[i];
            r.started = true;
            r.start = self.now;
            progress = true;
        }
        while let Some(op) = self.records[i].ops.front().copied() {
            if !self.exec(i, op)? {
                break;
            }
            progress = true;
            if self.records[i].done {
                break;
            }
        }
        Ok(progress)
    }

    fn pop(&mut self, i: usize) {
        self.records[i].ops.pop_front();
    }

    fn push_ops(&mut self, i: usize, ops: impl IntoIterator<Item = MicroOp>) {
        self.records[i].ops.extend(ops);
    }

    /// Whether the injector strikes record `i` at `site`. The draw depends
    /// only on the record and how often it reached the site, so raising the
    /// rate turns misses into strikes without reshuffling the others.
    fn strike(&mut self, i: usize, site: InjectSite) -> bool {
        let k = site as usize;
        let r = &mut self.records[i];
        let visit = r.visits[k];
        r.visits[k] += 1;
        let rate = self.cfg.eviction_injection_rate;
        if rate <= 0.0 {
            return false;
        }
        let key = mix64(self.cfg.seed ^ mix64(r.id ^ (u64::from(visit) << 40) ^ ((k as u64) << 56)));
        ChaCha8Rng::seed_from_u64(key).gen::<f64>() < rate
    }

    /// Executes the op at the front of record `i`'s program. Returns whether
    /// it finished (and was popped).
    fn exec(&mut self, i: usize, op: MicroOp) -> Result<bool, SimError> {
        let now = self.now;
        match op {
            MicroOp::Inject(site) => {
                self.pop(i);
                let hit = self.strike(i, site);
                let r = &self.records[i];
                let victim = match site {
                    InjectSite::BeforeTwin if hit => {
                        // Adversarial choice: evict the copy holding the real value.
                        let candidates = [Some(r.line), r.twin];
                        candidates
                            .into_iter()
                            .flatten()
                            .find(|&a| self.cache.peek(a).is_some_and(|l| !self.fake.is_fake(&l)))
                    }
                    InjectSite::BeforeCas if hit => Some(r.slot_addr(r.chosen)),
                    _ => None,
                };
                if let Some(a) = victim {
                    if self.cache.contains(a) {
                        self.counters.injected_evictions += 1;
                        self.invalidate_line(a);
                    }
                }
                Ok(true)
            }
            MicroOp::Issue { slot, addr, kind } => {
                let twin = self.records[i].is_twin();
                if slot == Slot::Primary {
                    if twin && self.records[i].state.is_none() {
                        let st = self.observe_state(i);
                        self.records[i].state = Some(st);
                    }
                    let r = &mut self.records[i];
                    r.first_return = None;
                    r.results = [None; 3];
                    r.on_bus = [false; 2];
                }
                let tracked = self.cfg.layout.is_extended_or_shadow(addr);
                match self.cache.access(addr, kind, (i, slot), tracked, now) {
                    AccessOutcome::Hit(line) => {
                        self.records[i].pending += 1;
                        self.queue.push(now + self.cfg.cache_hit_latency, Event::HitData { rec: i, slot, line });
                    }
                    AccessOutcome::MissIssued => {
                        let r = &mut self.records[i];
                        r.pending += 1;
                        if twin && slot != Slot::Cas {
                            r.on_bus[slot.index()] = true;
                            if r.attempt == 0 {
                                r.first_reads += 1;
                            }
                        }
                        self.send(addr, false)?;
                    }
                    AccessOutcome::MissMerged => self.records[i].pending += 1,
                    AccessOutcome::MissBlocked(_) => return Ok(false),
                }
                self.pop(i);
                Ok(true)
            }
            MicroOp::AfterFirst(d) => {
                let Some(ret) = self.records[i].first_return else { return Ok(false) };
                let t = ret + d;
                if now < t {
                    self.wake_record(i, t);
                    return Ok(false);
                }
                self.pop(i);
                Ok(true)
            }
            MicroOp::WaitAccesses => {
                if self.records[i].pending > 0 {
                    return Ok(false);
                }
                self.pop(i);
                Ok(true)
            }
            MicroOp::Fence => {
                self.fences.insert(i);
                if self.records[i].pending > 0 || self.window_start < i {
                    return Ok(false);
                }
                self.fences.remove(&i);
                self.pop(i);
                Ok(true)
            }
            MicroOp::Evaluate => {
                self.pop(i);
                self.evaluate(i);
                Ok(true)
            }
            MicroOp::Invalidate(addr) => {
                self.pop(i);
                self.invalidate_line(addr);
                Ok(true)
            }
            MicroOp::ExceptionRead => match self.records[i].resume_at {
                None => {
                    let canonical = self.records[i].canonical;
                    let m = self.mec.as_mut().ok_or_else(|| SimError::Internal("safe path without MEC".into()))?;
                    let (line, lat) = m.exception_read(canonical, &self.memory);
                    let r = &mut self.records[i];
                    r.results[0] = Some(line);
                    r.resume_at = Some(now + lat);
                    self.wake_record(i, now + lat);
                    Ok(false)
                }
                Some(t) if now < t => Ok(false),
                Some(_) => {
                    self.pop(i);
                    let r = &mut self.records[i];
                    r.resume_at = None;
                    let line = r.results[0].expect("safe path read a line");
                    r.value = Some(line);
                    r.source = Source::ExceptionPath;
                    r.origins[0] = Origin::Exception;
                    match r.kind {
                        RecKind::Store { value } => {
                            r.pending_write = Some(line.with_word(r.word, value));
                            self.push_ops(i, [MicroOp::ExceptionWrite]);
                        }
                        _ => self.push_ops(i, [MicroOp::Complete]),
                    }
                    Ok(true)
                }
            },
            MicroOp::ExceptionWrite => match self.records[i].resume_at {
                None => {
                    let (canonical, data) = {
                        let r = &self.records[i];
                        (r.canonical, r.pending_write.expect("safe-path store has data"))
                    };
                    let m = self.mec.as_mut().ok_or_else(|| SimError::Internal("safe path without MEC".into()))?;
                    let lat = m.exception_write(canonical, data, &mut self.memory);
                    self.records[i].resume_at = Some(now + lat);
                    self.wake_record(i, now + lat);
                    Ok(false)
                }
                Some(t) if now < t => Ok(false),
                Some(_) => {
                    self.pop(i);
                    self.records[i].resume_at = None;
                    self.push_ops(i, [MicroOp::Complete]);
                    Ok(true)
                }
            },
            MicroOp::Cas => {
                self.pop(i);
                self.cas(i);
                Ok(true)
            }
            MicroOp::StoreWord => {
                let (line, word, value) = match self.records[i] {
                    Rec { line, word, kind: RecKind::Store { value }, .. } => (line, word, value),
                    _ => return Err(SimError::Internal("store op on a load record".into())),
                };
                self.pop(i);
                if let Some(old) = self.records[i].results[0] {
                    self.records[i].value.get_or_insert(old);
                }
                if !self.cache.store_word(line, word, value) {
                    // Evicted between fill and store: fetch it again.
                    let r = &mut self.records[i];
                    r.ops.push_front(MicroOp::StoreWord);
                    r.ops.push_front(MicroOp::WaitAccesses);
                    r.ops.push_front(MicroOp::Issue { slot: Slot::Primary, addr: line, kind: AccessKind::Rfo });
                }
                Ok(true)
            }
            MicroOp::Complete => {
                self.pop(i);
                self.complete(i);
                Ok(true)
            }
        }
    }

    /// Cache state from the cached copies of both twins.
    fn observe_state(&self, i: usize) -> CacheState {
        let r = &self.records[i];
        let copies = [Some(r.line), r.twin].into_iter().flatten().filter_map(|a| self.cache.peek(a));
        let (mut real, mut fake) = (false, false);
        for l in copies {
            if self.fake.is_fake(&l) {
                fake = true;
            } else {
                real = true;
            }
        }
        classify_state(real, fake).state
    }

    fn evaluate(&mut self, i: usize) {
        let mech = self.cfg.mechanism;
        let spacing = self.spacing;
        let r = &mut self.records[i];
        let on_bus = r.on_bus.iter().filter(|b| **b).count() as u64;
        self.counters.twin_loads_on_bus += on_bus;
        if on_bus == 2 {
            self.counters.paired_loads += 2;
        }
        let (Some(a), Some(b)) = (r.results[0], r.results[1]) else {
            unreachable!("evaluate after both twin loads returned")
        };
        let shadow = r.twin.expect("twin record");
        match select_value(&a, &b, &self.fake) {
            Selection::Value(line, slot) => {
                r.value = Some(line);
                r.chosen = slot;
                r.source = r.origins[slot.index()].source();
                match r.kind {
                    RecKind::Store { .. } => {
                        let addr = r.slot_addr(slot);
                        r.ops.extend([
                            MicroOp::Inject(InjectSite::BeforeCas),
                            MicroOp::Issue { slot: Slot::Cas, addr, kind: AccessKind::Rfo },
                            MicroOp::WaitAccesses,
                            MicroOp::Cas,
                        ]);
                    }
                    _ => r.ops.push_back(MicroOp::Complete),
                }
            }
            Selection::BothFake | Selection::Disagree => {
                r.attempt += 1;
                if r.twin_try + 1 < TWIN_ATTEMPTS {
                    r.twin_try += 1;
                    r.retries += 1;
                    self.counters.retries += 1;
                    r.ops.extend(retry_prefix(r.line, shadow));
                    r.ops.extend(twin_attempt(mech, r.line, shadow, spacing));
                } else {
                    r.exception = true;
                    self.counters.exceptions += 1;
                    r.ops.extend(exception_tail(r.line, shadow));
                }
            }
        }
    }

    fn cas(&mut self, i: usize) {
        let mech = self.cfg.mechanism;
        let spacing = self.spacing;
        let (src, other, expected, new) = {
            let r = &self.records[i];
            let RecKind::Store { value } = r.kind else { unreachable!("CAS only follows a store twin-load") };
            let expected = r.value.expect("twin-load value");
            let other = if r.chosen == Slot::Shadow { r.line } else { r.twin.expect("twin") };
            (r.slot_addr(r.chosen), other, expected, expected.with_word(r.word, value))
        };
        let shadow = self.records[i].twin.expect("twin record");
        if self.fake.is_fake(&new) {
            // A line that would read back as fake is written through the safe path.
            let r = &mut self.records[i];
            r.exception = true;
            r.pending_write = Some(new);
            self.counters.exceptions += 1;
            r.ops.extend([MicroOp::Invalidate(r.line), MicroOp::Invalidate(shadow), MicroOp::ExceptionWrite]);
            return;
        }
        if self.cache.compare_and_swap(src, &expected, new) == Some(true) {
            self.invalidate_line(other);
            self.records[i].ops.push_back(MicroOp::Complete);
            return;
        }
        self.counters.cas_failures += 1;
        let r = &mut self.records[i];
        r.cas_attempts += 1;
        r.attempt += 1;
        if r.cas_attempts < self.cfg.max_cas_attempts {
            r.twin_try = 0;
            r.ops.extend(twin_attempt(mech, r.line, shadow, spacing));
        } else {
            r.exception = true;
            self.counters.exceptions += 1;
            r.ops.extend(exception_tail(r.line, shadow));
        }
    }

    fn complete(&mut self, i: usize) {
        let now = self.now;
        let r = &mut self.records[i];
        r.done = true;
        r.done_at = now;
        if r.value.is_none() {
            r.value = r.results[0];
            r.source = r.origins[0].source();
        }
        self.counters.latency_sum += u128::from(now - r.fetch);
        match r.kind {
            RecKind::Store { .. } => self.counters.stores += 1,
            _ => self.counters.loads += 1,
        }
        let canonical = r.canonical;
        if let Some(q) = self.line_queues.get_mut(&canonical) {
            q.retain(|&x| x != i);
            if q.is_empty() {
                self.line_queues.remove(&canonical);
            }
        }
        self.fences.remove(&i);
    }

    /// Value observed by each record so far, in submission order (`None`
    /// while a record is incomplete). For stores this is the line before
    /// the store.
    pub fn observed_values(&self) -> Vec<Option<Line>> {
        self.records.iter().map(|r| if r.done { r.value } else { None }).collect()
    }

    /// Start and completion time of each record, in submission order.
    pub fn record_times(&self) -> Vec<Option<(Ps, Ps)>> {
        self.records.iter().map(|r| r.done.then_some((r.start, r.done_at))).collect()
    }

    /// Writes every dirty cached line back to memory and returns the
    /// resulting memory image.
    pub fn flushed_memory(&self) -> BackingStore {
        let mut mem = self.memory.clone();
        for (addr, data) in self.cache.dirty_lines() {
            mem.write(self.cfg.layout.canonical(addr), data);
        }
        mem
    }

    pub fn stats(&self) -> SimStats {
        let elapsed = self.records.iter().filter(|r| r.done).map(|r| r.done_at).max().unwrap_or(0);
        let ch = |i: usize| self.channels[i].stats;
        let (a, b) = (ch(0), ch(1));
        let mec = self.mec.as_ref().map(|m| m.stats).unwrap_or_default();
        let reads = a.reads + b.reads;
        let done = self.records.iter().filter(|r| r.done).count() as u64;
        let c = &self.counters;
        SimStats {
            mechanism: self.cfg.mechanism.to_string(),
            completed_ops: done,
            loads: c.loads,
            stores: c.stores,
            elapsed_ps: elapsed,
            dram_reads: reads,
            dram_writes: a.writes + b.writes,
            bytes_read: reads * LINE_BYTES as u64,
            bus_busy_ps: a.busy + b.busy,
            avg_outstanding_reads: self.cache.mshr.average_outstanding(elapsed),
            avg_outstanding_ext_reads: self.cache.mshr.average_tracked(elapsed),
            row_hits: a.row_hits + b.row_hits,
            row_misses: a.row_misses + b.row_misses,
            llc_hits: self.cache.hits,
            llc_misses: self.cache.misses,
            twin_loads_on_bus: c.twin_loads_on_bus,
            paired_loads: c.paired_loads,
            retries: c.retries,
            exceptions: c.exceptions,
            cas_failures: c.cas_failures,
            injected_evictions: c.injected_evictions,
            writebacks: c.writebacks,
            lvc_evictions: mec.lvc_evictions,
            lvc_premature_evictions: mec.premature_evictions,
            fake_responses: mec.fake_responses,
            hit_without_data: mec.hit_without_data,
            latency_sum_ps: c.latency_sum,
        }
    }
}

/// Runs a whole trace under `cfg`.
pub fn run(cfg: &SimConfig, trace: &[TraceRecord]) -> Result<SimStats, SimError> {
    let mut sim = Simulator::new(cfg.clone())?;
    sim.add_trace(trace)?;
    sim.run()?;
    Ok(sim.stats())
}
