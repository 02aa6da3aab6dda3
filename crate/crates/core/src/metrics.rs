//! Run statistics and their CSV / table rendering.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::timing::{to_ns, Ps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Csv,
    #[default]
    Table,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format `{other}` (csv | table)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub mechanism: String,
    pub completed_ops: u64,
    pub loads: u64,
    pub stores: u64,
    /// Completion time of the last operation.
    pub elapsed_ps: Ps,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub bytes_read: u64,
    pub bus_busy_ps: Ps,
    pub avg_outstanding_reads: f64,
    /// Outstanding reads to extended or shadow addresses.
    pub avg_outstanding_ext_reads: f64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    /// Twin loads that reached memory.
    pub twin_loads_on_bus: u64,
    /// Twin loads whose partner also reached memory in the same attempt.
    pub paired_loads: u64,
    pub retries: u64,
    pub exceptions: u64,
    pub cas_failures: u64,
    pub injected_evictions: u64,
    pub writebacks: u64,
    pub lvc_evictions: u64,
    pub lvc_premature_evictions: u64,
    pub fake_responses: u64,
    /// Second loads that reached MEC1 before their prefetch returned.
    pub hit_without_data: u64,
    pub latency_sum_ps: u128,
}

impl SimStats {
    /// Operations per microsecond.
    pub fn performance(&self) -> f64 {
        if self.elapsed_ps == 0 {
            return 0.0;
        }
        self.completed_ops as f64 * 1e6 / self.elapsed_ps as f64
    }

    /// Bytes per second delivered by DRAM reads.
    pub fn read_bandwidth(&self) -> f64 {
        if self.elapsed_ps == 0 {
            return 0.0;
        }
        self.bytes_read as f64 * 1e12 / self.elapsed_ps as f64
    }

    pub fn bus_utilization(&self) -> f64 {
        if self.elapsed_ps == 0 {
            return 0.0;
        }
        self.bus_busy_ps as f64 / self.elapsed_ps as f64
    }

    pub fn twin_pairing_rate(&self) -> f64 {
        if self.twin_loads_on_bus == 0 {
            return 0.0;
        }
        self.paired_loads as f64 / self.twin_loads_on_bus as f64
    }

    pub fn avg_op_latency_ns(&self) -> f64 {
        if self.completed_ops == 0 {
            return 0.0;
        }
        self.latency_sum_ps as f64 / self.completed_ops as f64 / 1000.0
    }

    pub fn row_hit_rate(&self) -> f64 {
        let total = self.row_hits + self.row_misses;
        if total == 0 {
            0.0
        } else {
            self.row_hits as f64 / total as f64
        }
    }

    /// Column names and values in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:.6}");
        vec![
            ("mechanism", self.mechanism.clone()),
            ("completed_ops", self.completed_ops.to_string()),
            ("loads", self.loads.to_string()),
            ("stores", self.stores.to_string()),
            ("elapsed_ns", f(to_ns(self.elapsed_ps))),
            ("ops_per_us", f(self.performance())),
            ("avg_op_latency_ns", f(self.avg_op_latency_ns())),
            ("dram_reads", self.dram_reads.to_string()),
            ("dram_writes", self.dram_writes.to_string()),
            ("read_bandwidth_gbps", f(self.read_bandwidth() / 1e9)),
            ("bus_utilization", f(self.bus_utilization())),
            ("avg_outstanding_reads", f(self.avg_outstanding_reads)),
            ("avg_outstanding_ext_reads", f(self.avg_outstanding_ext_reads)),
            ("row_hits", self.row_hits.to_string()),
            ("row_misses", self.row_misses.to_string()),
            ("llc_hits", self.llc_hits.to_string()),
            ("llc_misses", self.llc_misses.to_string()),
            ("twin_pairing_rate", f(self.twin_pairing_rate())),
            ("retries", self.retries.to_string()),
            ("exceptions", self.exceptions.to_string()),
            ("cas_failures", self.cas_failures.to_string()),
            ("injected_evictions", self.injected_evictions.to_string()),
            ("writebacks", self.writebacks.to_string()),
            ("lvc_evictions", self.lvc_evictions.to_string()),
            ("lvc_premature_evictions", self.lvc_premature_evictions.to_string()),
            ("fake_responses", self.fake_responses.to_string()),
            ("hit_without_data", self.hit_without_data.to_string()),
        ]
    }
}

/// Renders any list of rows that share the same columns.
pub fn render(rows: &[Vec<(&'static str, String)>], format: Format) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else { return out };
    match format {
        Format::Csv => {
            let header: Vec<&str> = first.iter().map(|(k, _)| *k).collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for row in rows {
                let vals: Vec<&str> = row.iter().map(|(_, v)| v.as_str()).collect();
                out.push_str(&vals.join(","));
                out.push('\n');
            }
        }
        Format::Table if rows.len() == 1 => {
            let w = first.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in first {
                let _ = writeln!(out, "{k:<w$}  {v}");
            }
        }
        Format::Table => {
            let widths: Vec<usize> = (0..first.len())
                .map(|c| rows.iter().map(|r| r[c].1.len()).max().unwrap_or(0).max(first[c].0.len()))
                .collect();
            let line = |cells: Vec<&str>| {
                cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
            };
            let _ = writeln!(out, "{}", line(first.iter().map(|(k, _)| *k).collect()));
            for r in rows {
                let _ = writeln!(out, "{}", line(r.iter().map(|(_, v)| v.as_str()).collect()));
            }
        }
    }
    out
}

pub fn emit_stats(stats: &SimStats, format: Format) -> String {
    render(&[stats.fields()], format)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub stats: SimStats,
    /// Performance relative to the reference run.
    pub normalized: f64,
}

impl SweepRow {
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("axis", self.axis.clone()),
            ("value", format!("{}", self.value)),
            ("normalized_perf", format!("{:.6}", self.normalized)),
        ];
        v.extend(self.stats.fields());
        v
    }
}

pub fn emit_sweep(rows: &[SweepRow], format: Format) -> String {
    render(&rows.iter().map(SweepRow::fields).collect::<Vec<_>>(), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_stable_header() {
        let s =
            SimStats { mechanism: "tl-ooo".into(), completed_ops: 10, elapsed_ps: 10_000_000, ..Default::default() };
        let csv = emit_stats(&s, Format::Csv);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("mechanism,completed_ops,loads,stores,elapsed_ns,ops_per_us"));
        assert!(lines.next().unwrap().starts_with("tl-ooo,10,0,0,10000.000000,1.000000"));
    }

    #[test]
    fn derived_rates_handle_zero() {
        let s = SimStats::default();
        assert_eq!(s.performance(), 0.0);
        assert_eq!(s.twin_pairing_rate(), 0.0);
        assert_eq!(s.row_hit_rate(), 0.0);
    }

    #[test]
    fn table_aligns() {
        let s = SimStats::default();
        let t = emit_stats(&s, Format::Table);
        assert!(t.lines().all(|l| l.len() >= "lvc_premature_evictions".len()));
    }
}
