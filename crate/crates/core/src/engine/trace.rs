//! Text trace format.
//!
//! ```text
//! # twinload-trace v1
//! # id  op     vaddr       gap  deps
//! 0     LOAD   0x800000    4
//! 1     STORE  0x800040    0    0
//! 2     LOAD   0x10000     2    0,1
//! ```
//!
//! `#` starts a comment. The dependence list is optional and may be wrapped
//! in brackets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::addrmap::{AddressSpaceLayout, PhysAddr, Region};

pub const TRACE_HEADER: &str = "# twinload-trace v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Load,
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub id: u64,
    pub op: Op,
    pub vaddr: PhysAddr,
    /// Non-memory instructions executed before this record.
    pub gap: u32,
    pub deps: Vec<u64>,
}

impl TraceRecord {
    pub fn load(id: u64, vaddr: PhysAddr) -> Self {
        Self { id, op: Op::Load, vaddr, gap: 0, deps: Vec::new() }
    }

    pub fn store(id: u64, vaddr: PhysAddr) -> Self {
        Self { id, op: Op::Store, vaddr, gap: 0, deps: Vec::new() }
    }

    pub fn with_gap(mut self, gap: u32) -> Self {
        self.gap = gap;
        self
    }

    pub fn with_deps(mut self, deps: Vec<u64>) -> Self {
        self.deps = deps;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("cannot read trace {path}: {message}")]
    Io { path: String, message: String },
    #[error("record {index} (id {id}): {reason}")]
    Invalid { index: usize, id: u64, reason: String },
}

impl TraceError {
    /// Record index (or line number for parse errors) the error refers to.
    pub fn location(&self) -> Option<usize> {
        match self {
            TraceError::Parse(p) => Some(p.line),
            TraceError::Invalid { index, .. } => Some(*index),
            TraceError::Io { .. } => None,
        }
    }
}

fn parse_u64(tok: &str) -> Option<u64> {
    tok.parse().ok()
}

fn parse_hex(tok: &str) -> Option<u64> {
    let t = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")).unwrap_or(tok);
    u64::from_str_radix(t, 16).ok()
}

/// Parses trace text without semantic validation.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ParseError { line, message };
        if let Some(version) = raw.trim().strip_prefix("# twinload-trace v") {
            if version.trim() != "1" {
                return Err(err(format!("unsupported trace version {}", version.trim())));
            }
            continue;
        }
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(err(format!("expected `<id> <LOAD|STORE> <hex vaddr> <gap> [deps]`, got `{body}`")));
        }
        let id = parse_u64(toks[0]).ok_or_else(|| err(format!("bad id `{}`", toks[0])))?;
        let op = match toks[1] {
            "LOAD" => Op::Load,
            "STORE" => Op::Store,
            other => return Err(err(format!("unknown op `{other}`"))),
        };
        let vaddr = parse_hex(toks[2]).ok_or_else(|| err(format!("bad address `{}`", toks[2])))?;
        let gap = toks[3].parse().map_err(|_| err(format!("bad gap `{}`", toks[3])))?;
        let dep_text: String = toks[4..].concat();
        let dep_text = dep_text.trim_start_matches('[').trim_end_matches(']');
        let mut deps = Vec::new();
        for d in dep_text.split(',').filter(|d| !d.is_empty()) {
            deps.push(parse_u64(d).ok_or_else(|| err(format!("bad dependence `{d}`")))?);
        }
        out.push(TraceRecord { id, op, vaddr, gap, deps });
    }
    Ok(out)
}

/// Checks ids, dependences and addresses. Records may target local or
/// extended memory; the shadow range is reserved for twin-loads.
pub fn validate_trace(records: &[TraceRecord], layout: &AddressSpaceLayout) -> Result<(), TraceError> {
    validate_continuation(records, layout, |_| false)
}

/// Like [`validate_trace`], but dependences may also name records for
/// which `known` holds (records submitted earlier).
pub fn validate_continuation(
    records: &[TraceRecord],
    layout: &AddressSpaceLayout,
    known: impl Fn(u64) -> bool,
) -> Result<(), TraceError> {
    let mut seen: HashMap<u64, usize> = HashMap::with_capacity(records.len());
    let mut last: Option<u64> = None;
    for (index, r) in records.iter().enumerate() {
        let bad = |reason: String| TraceError::Invalid { index, id: r.id, reason };
        if last.is_some_and(|l| r.id <= l) {
            return Err(bad("ids must be strictly increasing".into()));
        }
        for &d in &r.deps {
            if !seen.contains_key(&d) && !known(d) {
                return Err(bad(format!("dependence on {d}, which is not an earlier record")));
            }
        }
        match layout.classify(r.vaddr) {
            Ok(Region::Local | Region::Extended) => {}
            Ok(Region::Shadow) => return Err(bad(format!("address {:#x} is in the shadow range", r.vaddr))),
            Err(_) => return Err(bad(format!("address {:#x} is outside the layout", r.vaddr))),
        }
        seen.insert(r.id, index);
        last = Some(r.id);
    }
    Ok(())
}

/// Reads, parses and validates a trace file.
pub fn load_trace(path: &Path, layout: &AddressSpaceLayout) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TraceError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let records = parse_trace(&text)?;
    validate_trace(&records, layout)?;
    Ok(records)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(records.len() * 32 + 64);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in records {
        let op = match r.op {
            Op::Load => "LOAD",
            Op::Store => "STORE",
        };
        let _ = write!(s, "{} {} {:#x} {}", r.id, op, r.vaddr, r.gap);
        if !r.deps.is_empty() {
            let deps: Vec<String> = r.deps.iter().map(u64::to_string).collect();
            let _ = write!(s, " {}", deps.join(","));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::MIB;

    #[test]
    fn three_line_file() {
        let text = "# twinload-trace v1\n0 LOAD 0x800000 4\n1 STORE 800040 0 0 # comment\n2 LOAD 0x40 2 [0,1]\n";
        let t = parse_trace(text).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[1], TraceRecord::store(1, 8 * MIB + 0x40).with_deps(vec![0]));
        assert_eq!(t[2].deps, vec![0, 1]);
        validate_trace(&t, &AddressSpaceLayout::desk_scale()).unwrap();
    }

    #[test]
    fn unknown_op_reports_line() {
        let e = parse_trace("# twinload-trace v1\n\n0 FETCH 0x0 0\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn forward_dependence_rejected() {
        let t = parse_trace("0 LOAD 0x0 0 1\n1 LOAD 0x40 0\n").unwrap();
        let e = validate_trace(&t, &AddressSpaceLayout::desk_scale()).unwrap_err();
        assert_eq!(e.location(), Some(0));
    }

    #[test]
    fn shadow_and_unmapped_addresses_rejected() {
        let l = AddressSpaceLayout::desk_scale();
        assert!(validate_trace(&[TraceRecord::load(0, 40 * MIB)], &l).is_err());
        assert!(validate_trace(&[TraceRecord::load(0, 36 * MIB)], &l).is_err());
    }

    #[test]
    fn format_round_trip() {
        let t = vec![TraceRecord::load(0, 0x800000).with_gap(3), TraceRecord::store(2, 0x1040).with_deps(vec![0])];
        assert_eq!(parse_trace(&format_trace(&t)).unwrap(), t);
    }

    #[test]
    fn wrong_version_rejected() {
        assert!(parse_trace("# twinload-trace v2\n").is_err());
    }
}
