//! Hardware description and work-to-cost conversion.
//!
//! A [`HardwareSpec`] captures one hybrid-bonding bank array: a mesh of logic
//! banks, each with a vertically stacked memory slice reachable over a wide
//! private interface. All conversions run in the memory-die clock domain; the
//! logic-die GEMM throughput is expressed as ops per memory cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of one bank on the 2-d mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BankCoord {
    pub row: usize,
    pub col: usize,
}

impl BankCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Mesh hop count between two banks (dimension-ordered routing).
    pub fn manhattan(&self, other: &BankCoord) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

fn default_mesh_rows() -> usize {
    4
}
fn default_mesh_cols() -> usize {
    4
}
fn default_noc_link_bits() -> u64 {
    256
}
// 900 GOPS x 16 macros per bank at int8, expressed at the 400 MHz memory clock:
// 14_400 GOPS / 400 MHz = 36_000 ops per cycle.
fn default_ops_per_cycle() -> u64 {
    36_000
}
fn default_mem_bits_per_cycle() -> u64 {
    256
}
fn default_mem_access_energy() -> f64 {
    0.88
}
// 24 TOPS/W at int8 -> 1/24 pJ per op.
fn default_compute_energy() -> f64 {
    1.0 / 24.0
}
fn default_noc_energy() -> f64 {
    0.1
}
fn default_frequency() -> u64 {
    400_000_000
}
// 32 MiB per macro x 16 macros x 4 stacked layers = 2 GiB per bank.
fn default_bank_capacity_bits() -> u64 {
    2 * 1024 * 1024 * 1024 * 8
}
// 8 x 128 KiB SRAM per logic bank.
fn default_logic_sram_bits() -> u64 {
    8 * 128 * 1024 * 8
}
fn default_refresh_metadata() -> Vec<(String, u32)> {
    vec![
        ("<85C".to_string(), 32),
        ("<95C".to_string(), 16),
        ("<105C".to_string(), 8),
        ("<115C".to_string(), 4),
    ]
}
fn default_precision_bits() -> PrecisionBits {
    PrecisionBits::default()
}

/// Bit widths used by the cost model. The kernel itself always runs in f64;
/// these only scale traffic and op counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionBits {
    pub weight: u64,
    pub activation: u64,
    pub kv: u64,
}

impl Default for PrecisionBits {
    fn default() -> Self {
        Self {
            weight: 8,
            activation: 8,
            kv: 8,
        }
    }
}

/// One bank-array configuration. Every field carries its default so a JSON
/// file only needs to name the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    #[serde(default = "default_mesh_rows")]
    pub mesh_rows: usize,
    #[serde(default = "default_mesh_cols")]
    pub mesh_cols: usize,
    /// Bits one mesh link moves per cycle.
    #[serde(default = "default_noc_link_bits")]
    pub noc_link_bits: u64,
    /// Integer ops per cycle per bank at the configured precision.
    #[serde(default = "default_ops_per_cycle")]
    pub bank_compute_ops_per_cycle: u64,
    /// Bits readable from one stacked memory slice per cycle.
    #[serde(default = "default_mem_bits_per_cycle")]
    pub mem_bits_per_cycle_per_bank: u64,
    #[serde(default = "default_mem_access_energy")]
    pub mem_access_energy_pj_per_bit: f64,
    #[serde(default = "default_compute_energy")]
    pub compute_energy_pj_per_op: f64,
    /// Energy per bit per hop on the mesh. Not part of the published power
    /// numbers; kept configurable.
    #[serde(default = "default_noc_energy")]
    pub noc_energy_pj_per_bit_hop: f64,
    #[serde(default = "default_frequency")]
    pub logic_frequency_hz: u64,
    #[serde(default = "default_frequency")]
    pub mem_frequency_hz: u64,
    #[serde(default = "default_bank_capacity_bits")]
    pub bank_mem_capacity_bits: u64,
    #[serde(default = "default_logic_sram_bits")]
    pub logic_sram_bits_per_bank: u64,
    /// Temperature range -> refresh period in ms. Informational only; refresh
    /// has no effect on simulated cycles.
    #[serde(default = "default_refresh_metadata")]
    pub refresh_period_metadata: Vec<(String, u32)>,
    #[serde(default = "default_precision_bits")]
    pub precision_bits: PrecisionBits,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

impl HardwareSpec {
    pub fn n_banks(&self) -> usize {
        self.mesh_rows * self.mesh_cols
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mesh_rows", self.mesh_rows as u64),
            ("mesh_cols", self.mesh_cols as u64),
            ("noc_link_bits", self.noc_link_bits),
            ("bank_compute_ops_per_cycle", self.bank_compute_ops_per_cycle),
            ("mem_bits_per_cycle_per_bank", self.mem_bits_per_cycle_per_bank),
            ("logic_frequency_hz", self.logic_frequency_hz),
            ("mem_frequency_hz", self.mem_frequency_hz),
            ("bank_mem_capacity_bits", self.bank_mem_capacity_bits),
            ("logic_sram_bits_per_bank", self.logic_sram_bits_per_bank),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("mem_access_energy_pj_per_bit", self.mem_access_energy_pj_per_bit),
            ("compute_energy_pj_per_op", self.compute_energy_pj_per_op),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.noc_energy_pj_per_bit_hop < 0.0 {
            return Err(Error::InvalidConfig(
                "noc_energy_pj_per_bit_hop must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, coord: &BankCoord) -> bool {
        coord.row < self.mesh_rows && coord.col < self.mesh_cols
    }

    /// Bank at a flattened row-major index.
    pub fn coord_of(&self, flat: usize) -> BankCoord {
        BankCoord::new(flat / self.mesh_cols, flat % self.mesh_cols)
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let spec: HardwareSpec = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("hardware spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Cycles to run `mac_count` multiply-accumulates on one bank.
    /// One MAC counts as two ops.
    pub fn compute_cycles(&self, mac_count: u64) -> u64 {
        self.compute_cycles_ops(mac_count.saturating_mul(2))
    }

    /// Cycles for a raw scalar-op count (comparisons, exp, accumulation).
    pub fn compute_cycles_ops(&self, ops: u64) -> u64 {
        div_ceil(ops, self.bank_compute_ops_per_cycle)
    }

    /// Cycles to stream `bits` from one stacked memory slice.
    pub fn memory_cycles(&self, bits: u64) -> u64 {
        div_ceil(bits, self.mem_bits_per_cycle_per_bank)
    }

    /// Store-and-forward transfer cost: Manhattan hops times flit count.
    /// Zero for a bank talking to itself. No contention is modeled.
    pub fn noc_cycles(&self, bits: u64, src: BankCoord, dst: BankCoord) -> Result<u64> {
        for c in [src, dst] {
            if !self.contains(&c) {
                return Err(Error::CoordOutOfBounds {
                    row: c.row,
                    col: c.col,
                    rows: self.mesh_rows,
                    cols: self.mesh_cols,
                });
            }
        }
        let hops = src.manhattan(&dst) as u64;
        Ok(hops.saturating_mul(div_ceil(bits, self.noc_link_bits)))
    }

    /// Energy in picojoules for a bundle of work. Linear and additive in
    /// every argument.
    pub fn energy_pj(&self, mem_bits: u64, mac_count: u64, noc_bit_hops: u64) -> f64 {
        mem_bits as f64 * self.mem_access_energy_pj_per_bit
            + 2.0 * mac_count as f64 * self.compute_energy_pj_per_op
            + noc_bit_hops as f64 * self.noc_energy_pj_per_bit_hop
    }
}

#[inline]
pub(crate) fn div_ceil(num: u64, den: u64) -> u64 {
    if num == 0 {
        0
    } else {
        1 + (num - 1) / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_cycles_matches_per_bank_throughput() {
        let spec = HardwareSpec::default();
        assert_eq!(spec.bank_compute_ops_per_cycle, 36_000);
        assert_eq!(spec.compute_cycles(0), 0);
        // 18_000 MACs = 36_000 ops = exactly one cycle at 900 GOPS x 16 / 400 MHz.
        assert_eq!(spec.compute_cycles(18_000), 1);
        assert_eq!(spec.compute_cycles(18_001), 2);
    }

    #[test]
    fn memory_cycles_ceiling() {
        let spec = HardwareSpec::default();
        assert_eq!(spec.memory_cycles(0), 0);
        assert_eq!(spec.memory_cycles(256), 1);
        assert_eq!(spec.memory_cycles(257), 2);
    }

    #[test]
    fn noc_cycles_hops_times_flits() {
        let spec = HardwareSpec::default();
        let c = BankCoord::new;
        assert_eq!(spec.noc_cycles(1024, c(0, 0), c(0, 0)).unwrap(), 0);
        // 2 hops x 1 flit.
        assert_eq!(spec.noc_cycles(256, c(0, 0), c(1, 1)).unwrap(), 2);
        // 6 hops x 2 flits.
        assert_eq!(spec.noc_cycles(512, c(0, 0), c(3, 3)).unwrap(), 12);
        assert!(spec.noc_cycles(1, c(0, 0), c(4, 0)).is_err());
    }

    #[test]
    fn energy_is_linear_in_each_term() {
        let spec = HardwareSpec::default();
        assert_eq!(spec.energy_pj(0, 0, 0), 0.0);
        assert!((spec.energy_pj(1000, 0, 0) - 880.0).abs() < 1e-9);
        // 12 MACs = 24 ops at 1/24 pJ per op.
        assert!((spec.energy_pj(0, 12, 0) - 1.0).abs() < 1e-12);
        let a = spec.energy_pj(123, 45, 67);
        let b = spec.energy_pj(1000, 2000, 3000);
        let sum = spec.energy_pj(1123, 2045, 3067);
        assert!((a + b - sum).abs() < 1e-9);
    }

    #[test]
    fn cost_functions_monotone() {
        let spec = HardwareSpec::default();
        for w in 0..2000u64 {
            assert!(spec.compute_cycles(w) <= spec.compute_cycles(w + 1));
            assert!(spec.memory_cycles(w) <= spec.memory_cycles(w + 1));
        }
    }

    #[test]
    fn ceiling_semantics() {
        let spec = HardwareSpec::default();
        for bits in 1..5000u64 {
            let c = spec.memory_cycles(bits);
            let rate = spec.mem_bits_per_cycle_per_bank;
            assert!((c - 1) * rate < bits && bits <= c * rate);
        }
    }

    #[test]
    fn json_overrides_single_field() {
        let spec = HardwareSpec::load_json(r#"{"mesh_rows": 1, "mesh_cols": 3}"#).unwrap();
        assert_eq!(spec.n_banks(), 3);
        assert_eq!(spec.noc_link_bits, 256);
        assert!(HardwareSpec::load_json(r#"{"noc_link_bits": 0}"#).is_err());
    }
}
