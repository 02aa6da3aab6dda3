//! Simulator configuration: TOML file, presets and `section.key=value`
//! overrides.
//!
//! ```toml
//! # twinload-config v1
//! format_version = 1
//! seed = 1
//! mechanism = "tl-ooo"
//!
//! [timing]
//! preset = "ddr3-1600"
//! t_pd_ns = 10.0
//!
//! [lvc]
//! size = 10
//! ```
//!
//! Every key is optional; omitted keys take the desk-scale defaults.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::addrmap::{AddressSpaceLayout, DramGeometry};
use crate::cost::CostInputs;
use crate::frontend::MechanismKind;
use crate::mec::{min_lvc_size, Hierarchy, NodeSpec};
use crate::timing::{ns, Ps, TimingParams};

pub const CONFIG_HEADER: &str = "# twinload-config v1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedPolicy {
    /// Oldest request per bank first.
    Fcfs,
    /// Oldest row hit per bank first, then oldest request.
    HitFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondLoadDelay {
    /// `Immediate` while the extension round trip fits in the row-miss
    /// delay, `Dependent` beyond it.
    Auto,
    /// Issue the second twin right after the first.
    Immediate,
    /// Wait for the first twin's data, then as long as the round trip still
    /// requires (see [`SimConfig::second_load_spacing`]).
    Dependent,
    /// Wait for the first twin's data, then a fixed time.
    Fixed(Ps),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: String,
    pub values: Vec<f64>,
    pub mechanisms: Vec<MechanismKind>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: "extra_latency_ns".into(),
            values: (0..=9).map(|i| f64::from(i) * 15.0).collect(),
            mechanisms: vec![MechanismKind::TlLf, MechanismKind::TlOoO, MechanismKind::IncreasedTrl(0)],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mechanism: MechanismKind,
    pub timing_preset: String,
    /// Base DDRx timing; `t_pd` is the per-hop delay inside the extension tree.
    pub timing: TimingParams,
    pub layout: AddressSpaceLayout,
    pub geometry: DramGeometry,
    pub topology: Hierarchy,
    pub cache_sets: usize,
    pub cache_ways: usize,
    pub mshr_capacity: usize,
    pub cache_hit_latency: Ps,
    pub lvc_size: usize,
    pub fake_byte: u8,
    pub seed: u64,
    pub eviction_injection_rate: f64,
    /// Issue delay per non-memory instruction.
    pub cpi_gap: Ps,
    /// Controller-to-core data delivery.
    pub onchip_latency: Ps,
    pub issue_window: usize,
    pub scheduler: SchedPolicy,
    pub second_load_delay: SecondLoadDelay,
    pub exception_latency: Ps,
    pub max_cas_attempts: u32,
    /// Fraction of lines whose initial content equals the fake pattern.
    pub pattern_fraction: f64,
    /// Keep every DRAM command for protocol checking.
    pub record_commands: bool,
    pub sweep: SweepSpec,
    pub cost: CostInputs,
}

impl Default for SimConfig {
    fn default() -> Self {
        let geometry = DramGeometry::desk_scale();
        Self {
            mechanism: MechanismKind::TlOoO,
            timing_preset: "ddr3-1600".into(),
            timing: TimingParams::ddr3_1600(),
            layout: AddressSpaceLayout::desk_scale(),
            topology: Hierarchy::preset("two-layer", geometry.logical_dimms).expect("preset topology"),
            geometry,
            cache_sets: 512,
            cache_ways: 8,
            mshr_capacity: 10,
            cache_hit_latency: ns(2.0),
            lvc_size: 10,
            fake_byte: crate::line::DEFAULT_FAKE_BYTE,
            seed: 1,
            eviction_injection_rate: 0.0,
            cpi_gap: ns(0.31),
            onchip_latency: ns(15.0),
            issue_window: 64,
            scheduler: SchedPolicy::Fcfs,
            second_load_delay: SecondLoadDelay::Auto,
            exception_latency: ns(1000.0),
            max_cas_attempts: 4,
            pattern_fraction: 0.0,
            record_commands: false,
            sweep: SweepSpec::default(),
            cost: CostInputs::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    format_version: Option<u32>,
    seed: Option<u64>,
    mechanism: Option<String>,
    timing: TimingSection,
    layout: LayoutSection,
    geometry: GeometrySection,
    topology: TopologySection,
    cache: CacheSection,
    lvc: LvcSection,
    core: CoreSection,
    tl: TlSection,
    memory: MemorySection,
    sweep: SweepSection,
    cost: Option<CostInputs>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TimingSection {
    preset: Option<String>,
    t_rl_ns: Option<f64>,
    t_rtp_ns: Option<f64>,
    t_rp_ns: Option<f64>,
    t_rcd_ns: Option<f64>,
    t_pd_ns: Option<f64>,
    clock_ns: Option<f64>,
    t_burst_cycles: Option<u32>,
    t_ccd_cycles: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LayoutSection {
    preset: Option<String>,
    local: Option<[u64; 2]>,
    extended: Option<[u64; 2]>,
    flag_bit: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GeometrySection {
    preset: Option<String>,
    logical_dimms: Option<u32>,
    ranks_per_dimm: Option<u32>,
    banks_per_rank: Option<u32>,
    row_bits: Option<u32>,
    column_bits: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TopologySection {
    preset: Option<String>,
    proc_delay_ns: Option<f64>,
    nodes: Option<Vec<NodeSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CacheSection {
    sets: Option<usize>,
    ways: Option<usize>,
    mshr: Option<usize>,
    hit_ns: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LvcSection {
    size: Option<usize>,
    fake_byte: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CoreSection {
    issue_window: Option<usize>,
    cpi_gap_ns: Option<f64>,
    onchip_ns: Option<f64>,
    scheduler: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DelayValue {
    Ns(f64),
    Word(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TlSection {
    second_load_delay_ns: Option<DelayValue>,
    eviction_injection_rate: Option<f64>,
    exception_latency_ns: Option<f64>,
    max_cas_attempts: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MemorySection {
    pattern_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepSection {
    axis: Option<String>,
    values: Option<Vec<f64>>,
    mechanisms: Option<Vec<String>>,
}

fn nonneg_ns(name: &str, v: f64) -> Result<Ps, ConfigError> {
    if !(v.is_finite() && v >= 0.0) {
        return invalid(format!("{name} must be a non-negative number of ns, got {v}"));
    }
    Ok(ns(v))
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` overrides to a parsed TOML document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), ConfigError> {
    for o in overrides {
        let (key, raw) =
            o.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("override `{o}` is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return invalid(format!("bad override key `{key}`"));
        }
        let mut table = &mut *doc;
        for part in &path[..path.len() - 1] {
            let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("override `{key}`: `{part}` is not a section")))?;
        }
        table.insert(path[path.len() - 1].to_string(), override_value(raw.trim()));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let file: FileConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text, overrides)
    }

    fn from_file(f: FileConfig) -> Result<Self, ConfigError> {
        let mut c = SimConfig::default();
        if let Some(v) = f.format_version {
            if v != FORMAT_VERSION {
                return invalid(format!("unsupported format_version {v}"));
            }
        }
        if let Some(s) = f.seed {
            c.seed = s;
        }
        if let Some(m) = f.mechanism {
            c.mechanism = m.parse().map_err(ConfigError::Invalid)?;
        }

        let t = f.timing;
        if let Some(p) = t.preset {
            c.timing =
                TimingParams::preset(&p).ok_or_else(|| ConfigError::Invalid(format!("unknown timing preset `{p}`")))?;
            c.timing_preset = p;
        }
        let base = c.timing;
        let clock = match t.clock_ns {
            Some(v) => nonneg_ns("timing.clock_ns", v)?,
            None => base.clock_period,
        };
        c.timing.clock_period = clock;
        let cycles = |ticks: Ps| ticks / base.clock_period.max(1);
        c.timing.t_burst = clock * t.t_burst_cycles.map_or(cycles(base.t_burst), Ps::from);
        c.timing.t_ccd = clock * t.t_ccd_cycles.map_or(cycles(base.t_ccd), Ps::from);
        for (name, field, v) in [
            ("timing.t_rl_ns", &mut c.timing.t_rl, t.t_rl_ns),
            ("timing.t_rtp_ns", &mut c.timing.t_rtp, t.t_rtp_ns),
            ("timing.t_rp_ns", &mut c.timing.t_rp, t.t_rp_ns),
            ("timing.t_rcd_ns", &mut c.timing.t_rcd, t.t_rcd_ns),
            ("timing.t_pd_ns", &mut c.timing.t_pd, t.t_pd_ns),
        ] {
            if let Some(v) = v {
                *field = nonneg_ns(name, v)?;
            }
        }

        let l = f.layout;
        if let Some(p) = l.preset {
            c.layout = AddressSpaceLayout::preset(&p)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown layout preset `{p}`")))?;
            if p == "table5-full" {
                c.geometry = DramGeometry::table5_full();
            }
        }
        if l.local.is_some() || l.extended.is_some() || l.flag_bit.is_some() {
            let local = l.local.map_or(c.layout.local.clone(), |[a, b]| a..b);
            let ext = l.extended.map_or(c.layout.extended.clone(), |[a, b]| a..b);
            let flag = l.flag_bit.unwrap_or(c.layout.flag_bit);
            if flag >= 63 {
                return invalid("layout.flag_bit must be below 63");
            }
            c.layout = AddressSpaceLayout::new(local, ext, flag).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }

        let g = f.geometry;
        if let Some(p) = g.preset {
            c.geometry = match p.as_str() {
                "desk-scale" => DramGeometry::desk_scale(),
                "table5-full" => DramGeometry::table5_full(),
                _ => return invalid(format!("unknown geometry preset `{p}`")),
            };
        }
        if let Some(v) = g.logical_dimms {
            c.geometry.logical_dimms = v;
        }
        if let Some(v) = g.ranks_per_dimm {
            c.geometry.ranks_per_dimm = v;
        }
        if let Some(v) = g.banks_per_rank {
            c.geometry.banks_per_rank = v;
        }
        if let Some(v) = g.row_bits {
            c.geometry.row_bits = v;
        }
        if let Some(v) = g.column_bits {
            c.geometry.column_bits = v;
        }

        let tp = f.topology;
        let dimms = c.geometry.logical_dimms;
        c.topology = match (tp.nodes, tp.preset) {
            (Some(nodes), _) => Hierarchy::from_specs(&nodes).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            (None, Some(p)) => Hierarchy::preset(&p, dimms)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown topology preset `{p}`")))?,
            (None, None) => Hierarchy::preset("two-layer", dimms).expect("preset topology"),
        };
        if let Some(v) = tp.proc_delay_ns {
            c.topology.proc_delay = nonneg_ns("topology.proc_delay_ns", v)?;
        }

        let cs = f.cache;
        c.cache_sets = cs.sets.unwrap_or(c.cache_sets);
        c.cache_ways = cs.ways.unwrap_or(c.cache_ways);
        c.mshr_capacity = cs.mshr.unwrap_or(c.mshr_capacity);
        if let Some(v) = cs.hit_ns {
            c.cache_hit_latency = nonneg_ns("cache.hit_ns", v)?;
        }
        c.lvc_size = f.lvc.size.unwrap_or(c.lvc_size);
        c.fake_byte = f.lvc.fake_byte.unwrap_or(c.fake_byte);

        let core = f.core;
        c.issue_window = core.issue_window.unwrap_or(c.issue_window);
        if let Some(v) = core.cpi_gap_ns {
            c.cpi_gap = nonneg_ns("core.cpi_gap_ns", v)?;
        }
        if let Some(v) = core.onchip_ns {
            c.onchip_latency = nonneg_ns("core.onchip_ns", v)?;
        }
        if let Some(s) = core.scheduler {
            c.scheduler = match s.as_str() {
                "fcfs" => SchedPolicy::Fcfs,
                "hit-first" => SchedPolicy::HitFirst,
                _ => return invalid(format!("unknown scheduler `{s}` (fcfs | hit-first)")),
            };
        }

        let tl = f.tl;
        if let Some(d) = tl.second_load_delay_ns {
            c.second_load_delay = match d {
                DelayValue::Word(w) => match w.as_str() {
                    "auto" => SecondLoadDelay::Auto,
                    "immediate" => SecondLoadDelay::Immediate,
                    "dependent" => SecondLoadDelay::Dependent,
                    _ => {
                        return invalid(format!(
                            "tl.second_load_delay_ns must be auto | immediate | dependent or ns, got `{w}`"
                        ))
                    }
                },
                DelayValue::Ns(v) => SecondLoadDelay::Fixed(nonneg_ns("tl.second_load_delay_ns", v)?),
            };
        }
        c.eviction_injection_rate = tl.eviction_injection_rate.unwrap_or(c.eviction_injection_rate);
        if let Some(v) = tl.exception_latency_ns {
            c.exception_latency = nonneg_ns("tl.exception_latency_ns", v)?;
        }
        c.max_cas_attempts = tl.max_cas_attempts.unwrap_or(c.max_cas_attempts);
        c.pattern_fraction = f.memory.pattern_fraction.unwrap_or(c.pattern_fraction);

        let sw = f.sweep;
        if let Some(a) = sw.axis {
            c.sweep.axis = a;
        }
        if let Some(v) = sw.values {
            c.sweep.values = v;
        }
        if let Some(ms) = sw.mechanisms {
            c.sweep.mechanisms =
                ms.iter().map(|m| m.parse()).collect::<Result<_, _>>().map_err(ConfigError::Invalid)?;
        }
        if let Some(cost) = f.cost {
            c.cost = cost;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timing.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.geometry.validate_with(&self.layout).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for d in 0..self.geometry.logical_dimms {
            self.topology.path(d).map_err(|e| ConfigError::Invalid(format!("topology: {e}")))?;
        }
        if self.cache_sets == 0 || !self.cache_sets.is_power_of_two() {
            return invalid("cache.sets must be a power of two");
        }
        if self.cache_ways == 0 || self.mshr_capacity == 0 {
            return invalid("cache.ways and cache.mshr must be positive");
        }
        if self.lvc_size == 0 {
            return invalid("lvc.size must be positive");
        }
        if self.issue_window == 0 {
            return invalid("core.issue_window must be positive");
        }
        if !(0.0..=1.0).contains(&self.eviction_injection_rate) {
            return invalid("tl.eviction_injection_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.pattern_fraction) {
            return invalid("memory.pattern_fraction must lie in [0, 1]");
        }
        if self.max_cas_attempts == 0 {
            return invalid("tl.max_cas_attempts must be positive");
        }
        self.cost.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Timing of the channel serving extended memory.
    pub fn extended_params(&self) -> TimingParams {
        match self.mechanism {
            MechanismKind::IncreasedTrl(extra) => self.timing.with_increased_read_latency(extra),
            _ => self.timing,
        }
    }

    /// Hops from MEC1 to the farthest DIMM.
    pub fn max_hops(&self) -> u32 {
        (0..self.geometry.logical_dimms).filter_map(|d| self.topology.hops(d).ok()).max().unwrap_or(0)
    }

    /// Extra round-trip latency a prefetch sees compared to a direct read.
    pub fn extension_round_trip(&self) -> Ps {
        (0..self.geometry.logical_dimms)
            .filter_map(|d| self.topology.one_way_delay(d, &self.timing).ok())
            .max()
            .unwrap_or(0)
            * 2
    }

    /// Time the second twin-load waits after the first one's data returned;
    /// `None` issues it right after the first. The dependent policy makes the gap between the two RD
    /// commands at least the extension round trip: the first load returns
    /// `tRL + tBURST + onchip` after its RD, and the second RD cannot
    /// precede its issue.
    pub fn second_load_spacing(&self) -> Option<Ps> {
        let extra = self.extension_round_trip();
        let dependent = || extra.saturating_sub(self.timing.t_rl + self.timing.t_burst + self.onchip_latency);
        match self.second_load_delay {
            SecondLoadDelay::Immediate => None,
            SecondLoadDelay::Fixed(d) => Some(d),
            SecondLoadDelay::Dependent => Some(dependent()),
            SecondLoadDelay::Auto if extra > self.timing.row_miss_delay() => Some(dependent()),
            SecondLoadDelay::Auto => None,
        }
    }

    /// Configuration that makes `mech` tolerate `extra` additional read
    /// latency: twin-load mechanisms spread it over the extension hops and
    /// grow the LVC to the minimum that latency requires, the stretched-read
    /// mechanism adds it to tRL.
    pub fn with_extra_latency(&self, mech: MechanismKind, extra: Ps) -> Result<SimConfig, ConfigError> {
        let mut c = self.clone();
        match mech {
            MechanismKind::Ideal => c.mechanism = MechanismKind::Ideal,
            MechanismKind::TlLf | MechanismKind::TlOoO => {
                let hops = Ps::from(self.max_hops());
                if hops == 0 && extra > 0 {
                    return invalid("extra latency needs a topology with at least one forwarding hop");
                }
                c.mechanism = mech;
                if hops > 0 {
                    c.timing.t_pd = (extra / (2 * hops)).saturating_sub(self.topology.proc_delay);
                }
                c.lvc_size = c.lvc_size.max(min_lvc_size(&c.timing));
            }
            MechanismKind::IncreasedTrl(_) => c.mechanism = MechanismKind::IncreasedTrl(extra),
        }
        Ok(c)
    }

    /// Applies one sweep point.
    pub fn at_sweep_point(&self, axis: &str, value: f64, mech: MechanismKind) -> Result<SimConfig, ConfigError> {
        let count = |v: f64| -> Result<usize, ConfigError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                invalid(format!("sweep axis {axis} needs positive integers, got {v}"))
            }
        };
        let mut c = match axis {
            "extra_latency_ns" => return self.with_extra_latency(mech, nonneg_ns("sweep value", value)?),
            _ => SimConfig { mechanism: mech, ..self.clone() },
        };
        match axis {
            "t_pd_ns" => c.timing.t_pd = nonneg_ns("sweep value", value)?,
            "lvc_size" => c.lvc_size = count(value)?,
            "mshr" => c.mshr_capacity = count(value)?,
            "eviction_injection_rate" => c.eviction_injection_rate = value,
            _ => {
                let known = "extra_latency_ns | t_pd_ns | lvc_size | mshr | eviction_injection_rate";
                return invalid(format!("unknown sweep axis `{axis}` ({known})"));
            }
        }
        c.validate()?;
        Ok(c)
    }
}
