//! Twin-load software: how loads and stores to extended memory are turned
//! into pairs of loads, how the correct value is picked out, and what happens
//! when both come back fake.
//!
//! The per-record programs built here are executed by the event engine;
//! the `load_*`/`store_tl`/`retry` functions drive a [`Simulator`] directly.

use std::fmt;
use std::str::FromStr;

use crate::addrmap::PhysAddr;
use crate::cache::AccessKind;
use crate::engine::{ExecRequest, ExecResult, SimError, Simulator};
use crate::line::{FakeLine, Line};
use crate::timing::{ns, to_ns, Ps};

/// Memory access mechanism used for extended memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    /// All memory directly attached; single plain loads.
    Ideal,
    /// Prefetch load, load fence, demand load.
    TlLf,
    /// Both twin loads issued together; software picks the real value.
    TlOoO,
    /// Single load with the read latency raised by the given amount.
    IncreasedTrl(Ps),
}

impl MechanismKind {
    pub fn uses_twins(&self) -> bool {
        matches!(self, MechanismKind::TlLf | MechanismKind::TlOoO)
    }

    pub fn label(&self) -> &'static str {
        match self {
            MechanismKind::Ideal => "ideal",
            MechanismKind::TlLf => "tl-lf",
            MechanismKind::TlOoO => "tl-ooo",
            MechanismKind::IncreasedTrl(_) => "inc-trl",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismKind::IncreasedTrl(extra) => write!(f, "inc-trl:{}", to_ns(*extra)),
            other => f.write_str(other.label()),
        }
    }
}

impl FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ideal" => Ok(MechanismKind::Ideal),
            "tl-lf" => Ok(MechanismKind::TlLf),
            "tl-ooo" => Ok(MechanismKind::TlOoO),
            "inc-trl" => Ok(MechanismKind::IncreasedTrl(0)),
            other => {
                let extra = other
                    .strip_prefix("inc-trl:")
                    .ok_or_else(|| format!("unknown mechanism `{other}` (ideal | tl-lf | tl-ooo | inc-trl:<ns>)"))?;
                let v: f64 = extra.parse().map_err(|_| format!("bad inc-trl latency `{extra}`"))?;
                if v.is_nan() || v < 0.0 {
                    return Err(format!("inc-trl latency must be non-negative, got {v}"));
                }
                Ok(MechanismKind::IncreasedTrl(ns(v)))
            }
        }
    }
}

/// Cache state of a twin pair `(p, p')` when the twin-load starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CacheState {
    /// Neither cached.
    S1,
    /// Both cached.
    S2,
    /// Only `p` cached.
    S3,
    /// Only `p'` cached.
    S4,
}

/// What the two loads of a twin pair return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinResult {
    /// One real value, one fake.
    RealAndFake,
    /// Both fake; software must retry.
    BothFake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateRow {
    pub state: CacheState,
    pub dram_reads: u32,
    pub result: TwinResult,
}

/// Expected behaviour of a twin-load given which values sit in the cache:
/// `real_cached` when one twin line holds the real value, `fake_cached`
/// when one holds the fake line.
pub fn classify_state(real_cached: bool, fake_cached: bool) -> StateRow {
    let (state, dram_reads, result) = match (real_cached, fake_cached) {
        (false, false) => (CacheState::S1, 2, TwinResult::RealAndFake),
        (true, true) => (CacheState::S2, 0, TwinResult::RealAndFake),
        (true, false) => (CacheState::S3, 1, TwinResult::RealAndFake),
        (false, true) => (CacheState::S4, 1, TwinResult::BothFake),
    };
    StateRow { state, dram_reads, result }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    /// Returned by the load to the extended address `p` from memory.
    FirstLoad,
    /// Returned by the load to the shadow address `p'` from memory.
    SecondLoad,
    CacheHit,
    ExceptionPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwinLoadOutcome {
    pub value: Line,
    pub source: Source,
    pub retries: u32,
    pub state: CacheState,
    /// DRAM reads issued by the first attempt.
    pub dram_reads: u32,
    pub exception: bool,
}

/// Result slot of a record's memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    /// Plain access, or the twin at the extended address.
    Primary,
    /// Twin at the shadow address.
    Shadow,
    /// Read-for-ownership feeding a compare-and-swap.
    Cas,
}

impl Slot {
    pub fn index(self) -> usize {
        match self {
            Slot::Primary => 0,
            Slot::Shadow => 1,
            Slot::Cas => 2,
        }
    }
}

/// Where an injected invalidation may strike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectSite {
    BeforeTwin,
    BeforeCas,
}

/// One step of a record's program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroOp {
    Inject(InjectSite),
    /// Start a load (non-blocking).
    Issue {
        slot: Slot,
        addr: PhysAddr,
        kind: AccessKind,
    },
    /// Wait for the primary twin's data, then the given time.
    AfterFirst(Ps),
    /// Wait for the record's own outstanding loads.
    WaitAccesses,
    /// Wait for own loads and every older record; younger records may not
    /// start loads meanwhile.
    Fence,
    /// Pick the real value out of the two twin results.
    Evaluate,
    Invalidate(PhysAddr),
    ExceptionRead,
    /// Compare-and-swap on the line that supplied the real value.
    Cas,
    ExceptionWrite,
    /// Plain store of the record's word into the primary line.
    StoreWord,
    Complete,
}

/// Ops for one twin-load attempt.
/// `spacing` is the wait after the primary twin's data returned before the
/// shadow twin issues; `None` issues both back to back.
pub fn twin_attempt(mech: MechanismKind, p: PhysAddr, shadow: PhysAddr, spacing: Option<Ps>) -> Vec<MicroOp> {
    let mut ops = vec![
        MicroOp::Inject(InjectSite::BeforeTwin),
        MicroOp::Issue { slot: Slot::Primary, addr: p, kind: AccessKind::Load },
    ];
    if mech == MechanismKind::TlLf {
        ops.push(MicroOp::Fence);
    }
    if let Some(d) = spacing {
        ops.push(MicroOp::AfterFirst(d));
    }
    ops.push(MicroOp::Issue { slot: Slot::Shadow, addr: shadow, kind: AccessKind::Load });
    ops.push(MicroOp::WaitAccesses);
    ops.push(MicroOp::Evaluate);
    ops
}

/// Invalidate both twins and fence before trying again.
pub fn retry_prefix(p: PhysAddr, shadow: PhysAddr) -> Vec<MicroOp> {
    vec![MicroOp::Invalidate(p), MicroOp::Invalidate(shadow), MicroOp::Fence]
}

/// Flush both twins and read through the safe path.
pub fn exception_tail(p: PhysAddr, shadow: PhysAddr) -> Vec<MicroOp> {
    vec![MicroOp::Invalidate(p), MicroOp::Invalidate(shadow), MicroOp::ExceptionRead]
}

pub fn plain_load(p: PhysAddr) -> Vec<MicroOp> {
    vec![
        MicroOp::Inject(InjectSite::BeforeTwin),
        MicroOp::Issue { slot: Slot::Primary, addr: p, kind: AccessKind::Load },
        MicroOp::WaitAccesses,
        MicroOp::Complete,
    ]
}

pub fn plain_store(p: PhysAddr) -> Vec<MicroOp> {
    vec![
        MicroOp::Inject(InjectSite::BeforeTwin),
        MicroOp::Issue { slot: Slot::Primary, addr: p, kind: AccessKind::Rfo },
        MicroOp::WaitAccesses,
        MicroOp::StoreWord,
        MicroOp::Complete,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// The real value and the slot it came from.
    Value(Line, Slot),
    BothFake,
    /// Two different non-fake values; a stale copy is involved.
    Disagree,
}

/// Software check of the two twin results against the fake pattern.
pub fn select_value(primary: &Line, shadow: &Line, fake: &FakeLine) -> Selection {
    match (fake.is_fake(primary), fake.is_fake(shadow)) {
        (true, true) => Selection::BothFake,
        (false, true) => Selection::Value(*primary, Slot::Primary),
        (true, false) => Selection::Value(*shadow, Slot::Shadow),
        (false, false) if primary == shadow => Selection::Value(*shadow, Slot::Shadow),
        (false, false) => Selection::Disagree,
    }
}

/// Attempts per twin-load before the safe path: the first try and one retry.
pub const TWIN_ATTEMPTS: u32 = 2;

fn expect_twin(res: ExecResult) -> Result<TwinLoadOutcome, SimError> {
    res.twin.ok_or(SimError::Internal("twin-load finished without an outcome".into()))
}

fn require(sim: &Simulator, mech: MechanismKind) -> Result<(), SimError> {
    if sim.mechanism() != mech {
        return Err(SimError::Config(format!("simulator runs {}, not {}", sim.mechanism(), mech)));
    }
    Ok(())
}

/// Twin-load with both loads in flight at once.
pub fn load_tl_ooo(sim: &mut Simulator, p: PhysAddr) -> Result<TwinLoadOutcome, SimError> {
    require(sim, MechanismKind::TlOoO)?;
    expect_twin(sim.execute(ExecRequest::load(p))?)
}

/// Twin-load with a load fence between prefetch and demand.
pub fn load_tl_lf(sim: &mut Simulator, p: PhysAddr) -> Result<TwinLoadOutcome, SimError> {
    require(sim, MechanismKind::TlLf)?;
    expect_twin(sim.execute(ExecRequest::load(p))?)
}

/// Store one word through twin-load plus compare-and-swap.
pub fn store_tl(sim: &mut Simulator, p: PhysAddr, word: usize, value: u64) -> Result<ExecResult, SimError> {
    if !sim.mechanism().uses_twins() {
        return Err(SimError::Config(format!("{} does not use twin-loads", sim.mechanism())));
    }
    sim.execute(ExecRequest::store(p, word, value))
}

/// Recovery after a double-fake result: invalidate both twins, fence and
/// twin-load again, falling back to the safe path.
pub fn retry(sim: &mut Simulator, p: PhysAddr) -> Result<TwinLoadOutcome, SimError> {
    if !sim.mechanism().uses_twins() {
        return Err(SimError::Config(format!("{} does not use twin-loads", sim.mechanism())));
    }
    expect_twin(sim.execute(ExecRequest::retry(p))?)
}

/// Single load under the stretched-read-latency mechanism.
pub fn load_increased_trl(sim: &mut Simulator, p: PhysAddr) -> Result<Line, SimError> {
    if !matches!(sim.mechanism(), MechanismKind::IncreasedTrl(_)) {
        return Err(SimError::Config(format!("simulator runs {}, not inc-trl", sim.mechanism())));
    }
    sim.execute(ExecRequest::load(p))?.value.ok_or(SimError::Internal("load returned no value".into()))
}
