//! Cost and performance-per-dollar model for doubling memory capacity.
//!
//! Hardware (processors, DIMMs, board and disk, extension chips) is amortized
//! over `years`; server power and other costs are annual figures. Arithmetic
//! is exact; values are rounded only when displayed.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Dollars = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum System {
    Baseline,
    Tl,
    Numa,
    Cluster,
}

impl System {
    pub const ALL: [System; 4] = [System::Baseline, System::Tl, System::Numa, System::Cluster];
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Baseline => "baseline",
            System::Tl => "tl",
            System::Numa => "numa",
            System::Cluster => "cluster",
        })
    }
}

impl FromStr for System {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(System::Baseline),
            "tl" | "tl-ooo" => Ok(System::Tl),
            "numa" => Ok(System::Numa),
            "cluster" => Ok(System::Cluster),
            other => Err(format!("unknown system `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost input `{0}` must be non-negative and finite")]
    Negative(&'static str),
    #[error("amortization period must be positive")]
    ZeroYears,
}

/// Component counts and scale factors of one system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipliers {
    pub processors: f64,
    pub dimms: f64,
    pub board: f64,
    pub mecs: f64,
    pub power: f64,
    pub other: f64,
    /// Ideal speedup as a multiple of `x`; zero means a fixed speedup of 1.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostInputs {
    pub processor: f64,
    /// Price of the four-socket-capable processor used by NUMA.
    pub numa_processor: f64,
    pub dimm: f64,
    pub motherboard_disk: f64,
    pub mec: f64,
    pub server_power: f64,
    pub other: f64,
    pub years: f64,
    /// Potential speedup from doubling capacity.
    pub x: f64,
    pub tl_c: f64,
    /// Latency penalty of NUMA.
    pub numa_c1: f64,
    /// Parallel efficiency of NUMA.
    pub numa_c2: f64,
    /// Parallel efficiency of Cluster.
    pub cluster_c: f64,
    pub baseline: Multipliers,
    pub tl: Multipliers,
    pub numa: Multipliers,
    pub cluster: Multipliers,
}

impl Default for CostInputs {
    fn default() -> Self {
        let m = |processors, dimms, board, mecs, power, other, speedup| Multipliers {
            processors,
            dimms,
            board,
            mecs,
            power,
            other,
            speedup,
        };
        Self {
            processor: 1166.0,
            numa_processor: 3616.0,
            dimm: 175.0,
            motherboard_disk: 1000.0,
            mec: 100.0,
            server_power: 252.0,
            other: 1325.0,
            years: 3.0,
            x: 1.0,
            tl_c: 0.74,
            numa_c1: 0.76,
            numa_c2: 1.0,
            cluster_c: 1.0,
            baseline: m(2.0, 8.0, 1.0, 0.0, 1.0, 1.0, 0.0),
            tl: m(2.0, 16.0, 1.0, 8.0, 1.3, 1.0, 1.0),
            numa: m(4.0, 16.0, 1.5, 0.0, 1.8, 1.5, 2.0),
            cluster: m(4.0, 16.0, 2.0, 0.0, 2.0, 2.0, 2.0),
        }
    }
}

fn exact(v: f64) -> Dollars {
    Ratio::approximate_float(v).expect("validated finite input")
}

pub fn to_f64(d: &Dollars) -> f64 {
    *d.numer() as f64 / *d.denom() as f64
}

/// Rounds to whole cents for display.
pub fn cents(d: &Dollars) -> String {
    let c = (d * Ratio::from_integer(100)).round().to_integer();
    format!("{}.{:02}", c / 100, (c % 100).abs())
}

impl CostInputs {
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("processor", self.processor),
            ("numa_processor", self.numa_processor),
            ("dimm", self.dimm),
            ("motherboard_disk", self.motherboard_disk),
            ("mec", self.mec),
            ("server_power", self.server_power),
            ("other", self.other),
            ("years", self.years),
            ("x", self.x),
            ("tl_c", self.tl_c),
            ("numa_c1", self.numa_c1),
            ("numa_c2", self.numa_c2),
            ("cluster_c", self.cluster_c),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError::Negative(name));
            }
        }
        for m in [&self.baseline, &self.tl, &self.numa, &self.cluster] {
            let vals = [m.processors, m.dimms, m.board, m.mecs, m.power, m.other, m.speedup];
            if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(CostError::Negative("multiplier"));
            }
        }
        if self.years == 0.0 {
            return Err(CostError::ZeroYears);
        }
        Ok(())
    }

    pub fn multipliers(&self, system: System) -> &Multipliers {
        match system {
            System::Baseline => &self.baseline,
            System::Tl => &self.tl,
            System::Numa => &self.numa,
            System::Cluster => &self.cluster,
        }
    }

    /// Correction factor applied to the ideal speedup.
    pub fn correction(&self, system: System) -> f64 {
        match system {
            System::Baseline => 1.0,
            System::Tl => self.tl_c,
            System::Numa => self.numa_c1 * self.numa_c2,
            System::Cluster => self.cluster_c,
        }
    }
}

/// Cost lines of one system, in table order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostBreakdown {
    pub processor: Dollars,
    pub memory: Dollars,
    pub motherboard_disk: Dollars,
    pub mec: Dollars,
    pub server_power: Dollars,
    pub other: Dollars,
}

impl CostBreakdown {
    pub fn total(&self) -> Dollars {
        self.processor + self.memory + self.motherboard_disk + self.mec + self.server_power + self.other
    }
}

pub fn breakdown(system: System, inputs: &CostInputs) -> Result<CostBreakdown, CostError> {
    inputs.validate()?;
    let m = inputs.multipliers(system);
    let years = exact(inputs.years);
    let cpu = if system == System::Numa { inputs.numa_processor } else { inputs.processor };
    Ok(CostBreakdown {
        processor: exact(m.processors) * exact(cpu) / years,
        memory: exact(m.dimms) * exact(inputs.dimm) / years,
        motherboard_disk: exact(m.board) * exact(inputs.motherboard_disk) / years,
        mec: exact(m.mecs) * exact(inputs.mec) / years,
        server_power: exact(m.power) * exact(inputs.server_power),
        other: exact(m.other) * exact(inputs.other),
    })
}

pub fn total_cost(system: System, inputs: &CostInputs) -> Result<Dollars, CostError> {
    breakdown(system, inputs).map(|b| b.total())
}

/// Speedup times correction factor, per dollar.
pub fn perf_per_dollar(system: System, inputs: &CostInputs) -> Result<f64, CostError> {
    let cost = to_f64(&total_cost(system, inputs)?);
    let m = inputs.multipliers(system);
    let speedup = if m.speedup == 0.0 { 1.0 } else { m.speedup * inputs.x };
    Ok(speedup * inputs.correction(system) / cost)
}

/// Performance per dollar normalized to TL.
pub fn relative_to_tl(system: System, inputs: &CostInputs) -> Result<f64, CostError> {
    Ok(perf_per_dollar(system, inputs)? / perf_per_dollar(System::Tl, inputs)?)
}

/// Parallel efficiency at which Cluster matches TL in performance per dollar.
pub fn cluster_break_even(inputs: &CostInputs) -> Result<f64, CostError> {
    let tl = perf_per_dollar(System::Tl, inputs)?;
    let unit = CostInputs { cluster_c: 1.0, ..inputs.clone() };
    Ok(tl / perf_per_dollar(System::Cluster, &unit)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub c: f64,
    pub numa: f64,
    pub cluster: f64,
}

/// NUMA and Cluster performance per dollar relative to TL as their parallel
/// efficiency goes from 0 to 1 in `steps` intervals.
pub fn efficiency_curve(inputs: &CostInputs, steps: usize) -> Result<Vec<CurvePoint>, CostError> {
    let steps = steps.max(1);
    (0..=steps)
        .map(|i| {
            let c = i as f64 / steps as f64;
            let at = CostInputs { numa_c2: c, cluster_c: c, ..inputs.clone() };
            Ok(CurvePoint {
                c,
                numa: relative_to_tl(System::Numa, &at)?,
                cluster: relative_to_tl(System::Cluster, &at)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fractions() {
        assert_eq!(exact(1.3), Ratio::new(13, 10));
        assert_eq!(exact(1166.0), Ratio::from_integer(1166));
    }

    #[test]
    fn cents_display() {
        assert_eq!(cents(&Ratio::new(946_300, 300)), "3154.33");
        assert_eq!(cents(&Ratio::from_integer(0)), "0.00");
    }

    #[test]
    fn zero_inputs_cost_nothing() {
        let zero = CostInputs {
            processor: 0.0,
            numa_processor: 0.0,
            dimm: 0.0,
            motherboard_disk: 0.0,
            mec: 0.0,
            server_power: 0.0,
            other: 0.0,
            ..CostInputs::default()
        };
        for s in System::ALL {
            assert_eq!(total_cost(s, &zero).unwrap(), Ratio::from_integer(0));
        }
    }

    #[test]
    fn rejects_negative() {
        let bad = CostInputs { dimm: -1.0, ..CostInputs::default() };
        assert_eq!(total_cost(System::Tl, &bad), Err(CostError::Negative("dimm")));
    }
}
