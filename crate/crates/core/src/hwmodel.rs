//! Hardware description: a `rows × cols` mesh of tensor cores, Memtiles
//! between the cores and DDR, and the channel bandwidths joining them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HwError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("hardware config at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("hardware config: `{field}` must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("hardware config: {0}")]
    Invalid(String),
}

/// Data movement and compute instruction kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InstrKind {
    /// DDR → Memtile activations.
    Load,
    /// DDR → Memtile weights.
    LoadW,
    /// Memtile → core activations.
    LoadFm,
    /// Memtile → core weights; synchronous and halting.
    LoadWm,
    Comp,
    /// Core → Memtile results.
    WriteFm,
    /// Memtile → DDR.
    Write,
}

impl InstrKind {
    pub const ALL: [InstrKind; 7] =
        [InstrKind::Load, InstrKind::LoadW, InstrKind::LoadFm, InstrKind::LoadWm, InstrKind::Comp, InstrKind::WriteFm, InstrKind::Write];

    pub fn name(self) -> &'static str {
        match self {
            InstrKind::Load => "LOAD",
            InstrKind::LoadW => "LOADW",
            InstrKind::LoadFm => "LOADFM",
            InstrKind::LoadWm => "LOADWM",
            InstrKind::Comp => "COMP",
            InstrKind::WriteFm => "WRITEFM",
            InstrKind::Write => "WRITE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_ddr(self) -> bool {
        matches!(self, InstrKind::Load | InstrKind::LoadW | InstrKind::Write)
    }
}

impl std::fmt::Display for InstrKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a Memtile's two DDR channels are shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MemtileSharing {
    /// Activations and weights live in the same Memtile: LOAD and LOADW
    /// each get one channel and run in parallel.
    #[default]
    Shared,
    /// Separate Memtiles for weights and activations: each load gets both
    /// channels.
    SplitWeightsActivations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mesh {
    pub rows: usize,
    pub cols: usize,
}

impl Mesh {
    pub fn cores(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for Mesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConfig {
    pub mesh: Mesh,
    pub core_mem_banks: usize,
    pub core_bank_bytes: usize,
    /// Banks available to activation and weight buffers.
    pub usable_banks: usize,
    /// Memtile count; one per mesh column when absent.
    pub memtiles: Option<usize>,
    pub memtile_bytes: usize,
    pub ddr_channel_gbps: f64,
    pub ddr_channels_per_memtile: usize,
    pub memtile_core_gbps: f64,
    /// Memtile → core activation channels per mesh column.
    pub activation_channels_per_col: usize,
    /// Memtile → core weight channels per mesh row.
    pub weight_channels_per_row: usize,
    pub macs_per_cycle: u64,
    pub clock_ghz: f64,
    pub memtile_sharing: MemtileSharing,
    /// DDR bandwidths are divided by this factor.
    pub ddr_slowdown: f64,
    /// Fixed cost added per layer for fabric reprogramming; zero by default.
    pub layer_overhead_us: f64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            mesh: Mesh { rows: 4, cols: 4 },
            core_mem_banks: 8,
            core_bank_bytes: 8192,
            usable_banks: 6,
            memtiles: None,
            memtile_bytes: 524_288,
            ddr_channel_gbps: 4.0,
            ddr_channels_per_memtile: 2,
            memtile_core_gbps: 4.0,
            activation_channels_per_col: 1,
            weight_channels_per_row: 1,
            macs_per_cycle: 256,
            clock_ghz: 1.0,
            memtile_sharing: MemtileSharing::Shared,
            ddr_slowdown: 1.0,
            layer_overhead_us: 0.0,
        }
    }
}

impl HwConfig {
    /// Defaults on a `rows × cols` mesh with one Memtile per column.
    pub fn with_mesh(rows: usize, cols: usize) -> Self {
        Self { mesh: Mesh { rows, cols }, memtiles: Some(cols), ..Self::default() }
    }

    pub fn memtile_count(&self) -> usize {
        self.memtiles.unwrap_or(self.mesh.cols)
    }

    pub fn memtile_total_bytes(&self) -> usize {
        self.memtile_count() * self.memtile_bytes
    }

    pub fn core_mem_bytes(&self) -> usize {
        self.core_mem_banks * self.core_bank_bytes
    }

    /// Bytes of core memory usable for ping/pong buffers and weights.
    pub fn core_buffer_bytes(&self) -> usize {
        self.usable_banks * self.core_bank_bytes
    }

    /// Fills derived fields and checks every quantity is positive.
    pub fn validated(mut self) -> Result<Self, HwError> {
        self.memtiles = Some(self.memtile_count());
        let ints: [(&'static str, usize); 10] = [
            ("mesh.rows", self.mesh.rows),
            ("mesh.cols", self.mesh.cols),
            ("core_mem_banks", self.core_mem_banks),
            ("core_bank_bytes", self.core_bank_bytes),
            ("usable_banks", self.usable_banks),
            ("memtiles", self.memtile_count()),
            ("memtile_bytes", self.memtile_bytes),
            ("ddr_channels_per_memtile", self.ddr_channels_per_memtile),
            ("activation_channels_per_col", self.activation_channels_per_col),
            ("weight_channels_per_row", self.weight_channels_per_row),
        ];
        for (field, v) in ints {
            if v == 0 {
                return Err(HwError::NonPositive { field, value: 0.0 });
            }
        }
        if self.macs_per_cycle == 0 {
            return Err(HwError::NonPositive { field: "macs_per_cycle", value: 0.0 });
        }
        let reals: [(&'static str, f64); 4] = [
            ("ddr_channel_gbps", self.ddr_channel_gbps),
            ("memtile_core_gbps", self.memtile_core_gbps),
            ("clock_ghz", self.clock_ghz),
            ("ddr_slowdown", self.ddr_slowdown),
        ];
        for (field, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HwError::NonPositive { field, value: v });
            }
        }
        if !(self.layer_overhead_us >= 0.0 && self.layer_overhead_us.is_finite()) {
            return Err(HwError::Invalid(format!("layer_overhead_us must be non-negative, got {}", self.layer_overhead_us)));
        }
        if self.usable_banks > self.core_mem_banks {
            return Err(HwError::Invalid(format!("usable_banks {} exceeds core_mem_banks {}", self.usable_banks, self.core_mem_banks)));
        }
        Ok(self)
    }

    /// Peak compute rate in MACs per nanosecond.
    pub fn macs_per_ns(&self) -> f64 {
        self.macs_per_cycle as f64 * self.clock_ghz
    }
}

/// Parses a config from JSON text; blank text yields the defaults.
pub fn config_from_str(text: &str) -> Result<HwConfig, HwError> {
    if text.trim().is_empty() {
        return HwConfig::default().validated();
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: HwConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| HwError::Schema { pointer: format!("/{}", e.path().to_string().replace('.', "/")), message: e.inner().to_string() })?;
    cfg.validated()
}

pub fn load_config(path: impl AsRef<Path>) -> Result<HwConfig, HwError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HwError::Io { path: path.display().to_string(), source })?;
    config_from_str(&text)
}

/// Bandwidth in GBps (bytes per nanosecond) of one instruction of `kind`.
///
/// DDR transfers are per Memtile. Shared: LOAD and LOADW use one channel
/// each and run in parallel; Split: a load uses both. WRITE always uses both.
/// Memtile ↔ core transfers use one channel each.
pub fn bandwidth_for(kind: InstrKind, cfg: &HwConfig) -> f64 {
    let ddr = |channels: usize| cfg.ddr_channel_gbps * channels as f64 / cfg.ddr_slowdown;
    let all = cfg.ddr_channels_per_memtile;
    match kind {
        InstrKind::Load | InstrKind::LoadW => match cfg.memtile_sharing {
            MemtileSharing::Shared => ddr((all / 2).max(1)),
            MemtileSharing::SplitWeightsActivations => ddr(all),
        },
        InstrKind::Write => ddr(all),
        InstrKind::LoadFm | InstrKind::LoadWm | InstrKind::WriteFm => cfg.memtile_core_gbps,
        InstrKind::Comp => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let c = config_from_str("").unwrap();
        assert_eq!(c, HwConfig::default().validated().unwrap());
        assert_eq!(c.memtiles, Some(4));
        assert_eq!(c.memtile_total_bytes(), 2 * 1024 * 1024);
        assert_eq!(c.core_mem_bytes(), 65536);
        assert_eq!(c.core_buffer_bytes(), 49152);
    }

    #[test]
    fn small_mesh_memtiles() {
        let c = config_from_str(r#"{"mesh": {"rows": 2, "cols": 2}}"#).unwrap();
        assert_eq!(c.memtile_count(), 2);
        assert_eq!(c.memtile_total_bytes(), 1024 * 1024);
        let c = config_from_str(r#"{"mesh": {"rows": 2, "cols": 2}, "memtiles": 3}"#).unwrap();
        assert_eq!(c.memtile_count(), 3);
    }

    #[test]
    fn rectangular_meshes() {
        for (r, c) in [(4, 1), (4, 2), (8, 2), (7, 7)] {
            let cfg = HwConfig::with_mesh(r, c).validated().unwrap();
            assert_eq!(cfg.memtile_count(), c);
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(matches!(config_from_str(r#"{"ddr_slowdown": 0}"#), Err(HwError::NonPositive { field: "ddr_slowdown", .. })));
        assert!(config_from_str(r#"{"mesh": {"rows": 0, "cols": 2}}"#).is_err());
        assert!(config_from_str(r#"{"clock_ghz": -1.0}"#).is_err());
        assert!(matches!(config_from_str(r#"{"bogus": 1}"#), Err(HwError::Schema { .. })));
    }

    #[test]
    fn channel_rules() {
        let shared = HwConfig::default();
        let split = HwConfig { memtile_sharing: MemtileSharing::SplitWeightsActivations, ..HwConfig::default() };
        assert_eq!(bandwidth_for(InstrKind::Write, &shared), 8.0);
        assert_eq!(bandwidth_for(InstrKind::Load, &shared), 4.0);
        assert_eq!(bandwidth_for(InstrKind::LoadW, &shared), 4.0);
        assert_eq!(bandwidth_for(InstrKind::Load, &split), 8.0);
        assert_eq!(bandwidth_for(InstrKind::LoadFm, &shared), 4.0);
        let slow = HwConfig { ddr_slowdown: 16.0, ..HwConfig::default() };
        assert_eq!(bandwidth_for(InstrKind::Load, &slow), 0.25);
        assert_eq!(bandwidth_for(InstrKind::LoadFm, &slow), 4.0);
    }
}
