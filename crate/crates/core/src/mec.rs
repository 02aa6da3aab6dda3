//! Memory Extending Chip hierarchy.
//!
//! The top chip (MEC1) sits on the processor's DDRx channel. It tracks the
//! row opened in every logical bank (the Bank State Table), identifies the
//! first and second load of a twin pair through the Load Value Cache, and
//! answers the first with a fake line while it prefetches the real data from
//! deeper in the tree. Middle and leaf chips only forward commands.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::addrmap::{AddressSpaceLayout, DramGeometry, PhysAddr};
use crate::line::{BackingStore, FakeLine, Line};
use crate::timing::{BankId, ColAddr, Ps, RowAddr, TimingParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MecError {
    #[error("RD to bank {0} but the bank state table shows it closed")]
    ClosedBankRead(BankId),
    #[error("no route to DIMM {0}")]
    UnroutableDimm(u32),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("bank {0} out of range")]
    BadBank(BankId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BstEntry {
    pub open: bool,
    pub row: RowAddr,
    pub dimm: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LvcEntry {
    pub valid: bool,
    pub tag: PhysAddr,
    pub data: Option<Line>,
    pub lru_stamp: u64,
    pub id: usize,
}

/// An entry pushed out of the LVC while still valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub tag: PhysAddr,
    /// The fill had not arrived yet.
    pub premature: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOutcome {
    Installed,
    /// Entry freed or reallocated to a different tag.
    Stale,
    /// Entry already holds data.
    Duplicate,
}

/// Fully associative, LRU-replaced buffer of prefetched lines.
#[derive(Debug, Clone)]
pub struct Lvc {
    entries: Vec<LvcEntry>,
    clock: u64,
}

impl Lvc {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "LVC needs at least one entry");
        let entries = (0..size).map(|id| LvcEntry { valid: false, tag: 0, data: None, lru_stamp: 0, id }).collect();
        Self { entries, clock: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[LvcEntry] {
        &self.entries
    }

    pub fn occupancy(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn lookup(&self, tag: PhysAddr) -> Option<usize> {
        self.entries.iter().find(|e| e.valid && e.tag == tag).map(|e| e.id)
    }

    pub fn touch(&mut self, id: usize) {
        let stamp = self.tick();
        self.entries[id].lru_stamp = stamp;
    }

    /// Claims a free entry or the least recently used valid one.
    pub fn allocate(&mut self, tag: PhysAddr) -> (usize, Option<Eviction>) {
        let slot = match self.entries.iter().find(|e| !e.valid) {
            Some(e) => e.id,
            None => self.entries.iter().min_by_key(|e| e.lru_stamp).map(|e| e.id).expect("non-empty LVC"),
        };
        let old = self.entries[slot];
        let evicted = old.valid.then_some(Eviction { tag: old.tag, premature: old.data.is_none() });
        let stamp = self.tick();
        self.entries[slot] = LvcEntry { valid: true, tag, data: None, lru_stamp: stamp, id: slot };
        (slot, evicted)
    }

    pub fn fill(&mut self, id: usize, tag: PhysAddr, data: Line) -> FillOutcome {
        let e = &mut self.entries[id];
        if !e.valid || e.tag != tag {
            FillOutcome::Stale
        } else if e.data.is_some() {
            FillOutcome::Duplicate
        } else {
            e.data = Some(data);
            FillOutcome::Installed
        }
    }

    /// Takes the data of a valid, filled entry for `tag` and frees it.
    pub fn consume(&mut self, id: usize, tag: PhysAddr) -> Option<Line> {
        let e = &mut self.entries[id];
        if e.valid && e.tag == tag {
            if let Some(d) = e.data {
                e.valid = false;
                e.data = None;
                return Some(d);
            }
        }
        None
    }

    /// A write to `tag` replaces any buffered copy so a later second load
    /// cannot return stale data.
    pub fn write_through(&mut self, tag: PhysAddr, data: Line) -> bool {
        match self.lookup(tag) {
            Some(id) => {
                self.entries[id].data = Some(data);
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Top,
    Middle,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    Child(usize),
    /// DIMM attached directly to this chip.
    Dram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MecNode {
    pub id: usize,
    pub layer: u32,
    pub role: Role,
    pub routing: BTreeMap<u32, Port>,
}

/// Node description as written in configuration: children by id and the
/// DIMM ids attached to leaves. Node 0 is the top chip.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
pub struct NodeSpec {
    pub id: usize,
    #[serde(default)]
    pub children: Vec<usize>,
    #[serde(default)]
    pub dimms: Vec<u32>,
}

/// The extension tree: node 0 is MEC1, leaves drive DIMMs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    nodes: Vec<MecNode>,
    /// Per-hop one-way delay in addition to tPD (logic processing).
    pub proc_delay: Ps,
}

impl Hierarchy {
    pub fn from_specs(specs: &[NodeSpec]) -> Result<Self, MecError> {
        let bad = |m: String| Err(MecError::InvalidTopology(m));
        if specs.is_empty() {
            return bad("no nodes".into());
        }
        let n = specs.len();
        let mut by_id = vec![None; n];
        for (i, s) in specs.iter().enumerate() {
            if s.id >= n || by_id[s.id].is_some() {
                return bad(format!("node ids must be unique and dense, got {}", s.id));
            }
            by_id[s.id] = Some(i);
        }
        let spec = |id: usize| &specs[by_id[id].expect("dense ids")];
        let mut parent = vec![None; n];
        for s in specs {
            for &c in &s.children {
                if c >= n || c == 0 || parent[c].is_some() {
                    return bad(format!("node {c} has an invalid or second parent"));
                }
                parent[c] = Some(s.id);
            }
        }
        let mut layer = vec![u32::MAX; n];
        layer[0] = 1;
        let mut order = vec![0usize];
        let mut i = 0;
        while i < order.len() {
            let id = order[i];
            for &c in &spec(id).children {
                layer[c] = layer[id] + 1;
                order.push(c);
            }
            i += 1;
        }
        if order.len() != n {
            return bad("every node must be reachable from node 0".into());
        }
        // DIMM sets per subtree, leaves first.
        let mut subtree: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        let mut seen = BTreeSet::new();
        for &id in order.iter().rev() {
            let s = spec(id);
            if !s.children.is_empty() && !s.dimms.is_empty() {
                return bad(format!("node {id} has both children and DIMMs"));
            }
            for &d in &s.dimms {
                if !seen.insert(d) {
                    return bad(format!("DIMM {d} attached twice"));
                }
                subtree[id].insert(d);
            }
            for &c in &s.children {
                let sub = subtree[c].clone();
                subtree[id].extend(sub);
            }
        }
        let nodes = (0..n)
            .map(|id| {
                let s = spec(id);
                let mut routing = BTreeMap::new();
                for &d in &s.dimms {
                    routing.insert(d, Port::Dram);
                }
                for &c in &s.children {
                    for &d in &subtree[c] {
                        routing.insert(d, Port::Child(c));
                    }
                }
                let role = if id == 0 {
                    Role::Top
                } else if s.children.is_empty() {
                    Role::Leaf
                } else {
                    Role::Middle
                };
                MecNode { id, layer: layer[id], role, routing }
            })
            .collect();
        Ok(Self { nodes, proc_delay: 0 })
    }

    /// A complete tree with `layers` levels and the given fan-out; DIMMs
    /// `0..dimms` are dealt round-robin across the leaves.
    pub fn tree(layers: u32, fanout: usize, dimms: u32) -> Result<Self, MecError> {
        if layers == 0 || fanout == 0 {
            return Err(MecError::InvalidTopology("need at least one layer and fan-out 1".into()));
        }
        let mut specs = vec![NodeSpec { id: 0, children: vec![], dimms: vec![] }];
        let mut frontier = vec![0usize];
        for _ in 1..layers {
            let mut next = Vec::new();
            for &p in &frontier {
                for _ in 0..fanout {
                    let id = specs.len();
                    specs.push(NodeSpec { id, children: vec![], dimms: vec![] });
                    specs[p].children.push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        for d in 0..dimms {
            let leaf = frontier[d as usize % frontier.len()];
            specs[leaf].dimms.push(d);
        }
        Self::from_specs(&specs)
    }

    /// Preset names: `single`, `two-layer`, `four-layer` (fan-out 2).
    pub fn preset(name: &str, dimms: u32) -> Option<Self> {
        match name {
            "single" => Self::tree(1, 1, dimms).ok(),
            "two-layer" => Self::tree(2, 2, dimms).ok(),
            "four-layer" => Self::tree(4, 2, dimms).ok(),
            _ => None,
        }
    }

    pub fn nodes(&self) -> &[MecNode] {
        &self.nodes
    }

    pub fn top(&self) -> &MecNode {
        &self.nodes[0]
    }

    /// Routing decision of one chip for a DIMM id.
    pub fn forward(&self, node: usize, dimm: u32) -> Result<Port, MecError> {
        self.nodes[node].routing.get(&dimm).copied().ok_or(MecError::UnroutableDimm(dimm))
    }

    /// Chips visited from MEC1 down to the one driving `dimm`.
    pub fn path(&self, dimm: u32) -> Result<Vec<usize>, MecError> {
        let mut path = vec![0];
        let mut at = 0;
        loop {
            match self.forward(at, dimm)? {
                Port::Dram => return Ok(path),
                Port::Child(c) => {
                    path.push(c);
                    at = c;
                }
            }
        }
    }

    /// Forwarding hops between MEC1 and the chip driving `dimm`.
    pub fn hops(&self, dimm: u32) -> Result<u32, MecError> {
        Ok(self.path(dimm)?.len() as u32 - 1)
    }

    pub fn one_way_delay(&self, dimm: u32, params: &TimingParams) -> Result<Ps, MecError> {
        Ok(Ps::from(self.hops(dimm)?) * (params.t_pd + self.proc_delay))
    }

    /// Time for a read forwarded from MEC1 to come back with data.
    pub fn read_round_trip(&self, dimm: u32, params: &TimingParams) -> Result<Ps, MecError> {
        Ok(2 * self.one_way_delay(dimm, params)? + params.t_rl)
    }
}

/// Smallest LVC size M with M > (2·tPD + tRL) / tCCD, where tPD is the
/// one-way delay between MEC1 and the target DRAM.
pub fn min_lvc_size(params: &TimingParams) -> usize {
    ((2 * params.t_pd + params.t_rl) / params.t_ccd) as usize + 1
}

/// Memory-mapped registers of the slow safe path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExceptionRegs {
    pub address: PhysAddr,
    pub flag: bool,
    pub data: Option<Line>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MecStats {
    pub first_loads: u64,
    pub second_loads: u64,
    pub fake_responses: u64,
    /// Second loads that reached MEC1 before the prefetch data did.
    pub hit_without_data: u64,
    pub lvc_evictions: u64,
    pub premature_evictions: u64,
    pub stale_fills: u64,
    pub exception_reads: u64,
    pub exception_writes: u64,
}

/// Data of a prefetch on its way back to MEC1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingFill {
    pub entry: usize,
    pub tag: PhysAddr,
    pub data: Line,
    pub arrives: Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadAction {
    /// First load: fake line goes on the bus at `data_time`; prefetch in flight.
    First { data_time: Ps, fake: Line, fill: PendingFill },
    /// Second load: the entry is resolved by [`Mec1::drive`] at `data_time`.
    Second { data_time: Ps, entry: usize, tag: PhysAddr },
}

impl ReadAction {
    pub fn data_time(&self) -> Ps {
        match self {
            ReadAction::First { data_time, .. } | ReadAction::Second { data_time, .. } => *data_time,
        }
    }
}

/// The top-layer chip.
#[derive(Debug, Clone)]
pub struct Mec1 {
    bst: Vec<BstEntry>,
    lvc: Lvc,
    pub regs: ExceptionRegs,
    hierarchy: Hierarchy,
    params: TimingParams,
    geometry: DramGeometry,
    layout: AddressSpaceLayout,
    fake: FakeLine,
    pub exception_latency: Ps,
    pub stats: MecStats,
}

impl Mec1 {
    pub fn new(
        hierarchy: Hierarchy,
        params: TimingParams,
        geometry: DramGeometry,
        layout: AddressSpaceLayout,
        lvc_size: usize,
        fake: FakeLine,
    ) -> Self {
        Self {
            bst: vec![BstEntry::default(); geometry.banks()],
            lvc: Lvc::new(lvc_size),
            regs: ExceptionRegs::default(),
            hierarchy,
            params,
            geometry,
            layout,
            fake,
            exception_latency: 1_000_000,
            stats: MecStats::default(),
        }
    }

    pub fn bst(&self) -> &[BstEntry] {
        &self.bst
    }

    pub fn lvc(&self) -> &Lvc {
        &self.lvc
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn fake(&self) -> FakeLine {
        self.fake
    }

    /// Records the opened row and forwards the ACT. Returns the port taken
    /// at MEC1 and the time the ACT reaches the DIMM's chip.
    pub fn on_act(&mut self, bank: BankId, row: RowAddr, now: Ps) -> Result<(Port, Ps), MecError> {
        let dimm = self.geometry.dimm_of_row(row);
        *self.bst.get_mut(bank).ok_or(MecError::BadBank(bank))? = BstEntry { open: true, row, dimm };
        let port = self.hierarchy.forward(0, dimm)?;
        Ok((port, now + self.hierarchy.one_way_delay(dimm, &self.params)?))
    }

    pub fn on_pre(&mut self, bank: BankId) -> Result<(), MecError> {
        self.bst.get_mut(bank).ok_or(MecError::BadBank(bank))?.open = false;
        Ok(())
    }

    /// Canonical line address of a RD from the BST row and the column.
    pub fn reconstruct(&self, bank: BankId, column: ColAddr) -> Result<PhysAddr, MecError> {
        let e = self.bst.get(bank).ok_or(MecError::BadBank(bank))?;
        if !e.open {
            return Err(MecError::ClosedBankRead(bank));
        }
        let addr = self.geometry.compose(e.row, bank, column).map_err(|_| MecError::BadBank(bank))?;
        Ok(self.layout.canonical(addr))
    }

    /// Handles a RD arriving at `now`. `memory` supplies the line the
    /// target DIMM will read for a prefetch.
    pub fn on_read(
        &mut self,
        bank: BankId,
        column: ColAddr,
        now: Ps,
        memory: &BackingStore,
    ) -> Result<ReadAction, MecError> {
        let tag = self.reconstruct(bank, column)?;
        let data_time = now + self.params.t_rl;
        if let Some(entry) = self.lvc.lookup(tag) {
            self.lvc.touch(entry);
            self.stats.second_loads += 1;
            return Ok(ReadAction::Second { data_time, entry, tag });
        }
        self.stats.first_loads += 1;
        self.stats.fake_responses += 1;
        let (entry, evicted) = self.lvc.allocate(tag);
        if let Some(ev) = evicted {
            self.stats.lvc_evictions += 1;
            if ev.premature {
                self.stats.premature_evictions += 1;
            }
        }
        let dimm = self.bst[bank].dimm;
        let arrives = now + self.hierarchy.read_round_trip(dimm, &self.params)?;
        Ok(ReadAction::First {
            data_time,
            fake: self.fake.pattern,
            fill: PendingFill { entry, tag, data: memory.read(tag), arrives },
        })
    }

    /// Resolves a second load when its data must go on the bus: the
    /// prefetched line if it is present, otherwise the fake line (the entry
    /// stays pending).
    pub fn drive(&mut self, entry: usize, tag: PhysAddr) -> Line {
        match self.lvc.consume(entry, tag) {
            Some(line) => line,
            None => {
                self.stats.hit_without_data += 1;
                self.stats.fake_responses += 1;
                self.fake.pattern
            }
        }
    }

    pub fn on_fill(&mut self, entry: usize, tag: PhysAddr, data: Line) -> FillOutcome {
        let out = self.lvc.fill(entry, tag, data);
        if out == FillOutcome::Stale {
            self.stats.stale_fills += 1;
        }
        out
    }

    /// A line written to extended memory (writeback or safe-path store).
    pub fn on_write(&mut self, addr: PhysAddr, data: Line) {
        let tag = self.layout.canonical(addr);
        self.lvc.write_through(tag, data);
    }

    /// Safe path: write the address register, wait for the flag, read the
    /// data register. Returns the true line and the path's latency.
    pub fn exception_read(&mut self, addr: PhysAddr, memory: &BackingStore) -> (Line, Ps) {
        let tag = self.layout.canonical(addr);
        self.regs = ExceptionRegs { address: tag, flag: false, data: None };
        let line = memory.read(tag);
        self.regs.data = Some(line);
        self.regs.flag = true;
        self.stats.exception_reads += 1;
        (line, self.exception_latency)
    }

    /// Safe-path store of a full line straight to DRAM.
    pub fn exception_write(&mut self, addr: PhysAddr, data: Line, memory: &mut BackingStore) -> Ps {
        let tag = self.layout.canonical(addr);
        self.regs = ExceptionRegs { address: tag, flag: true, data: Some(data) };
        memory.write(tag, data);
        self.lvc.write_through(tag, data);
        self.stats.exception_writes += 1;
        self.exception_latency
    }
}
