//! Synthetic GSRC-style benchmarks with controllable size.
//!
//! Nets favour modules with nearby indices so the netlist has locality, and
//! every terminal appears on at least one net.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{synthesize_power, BenchmarkBundle, BlockSpec, PowerSource, Shape, TerminalSpec};
use crate::error::{Error, Result};
use crate::config::EngineConfig;
use crate::model::{BlockKind, BlockModule, Die, Floorplan, Net, PinRef, VoltageLevel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub modules: usize,
    pub nets: usize,
    pub terminals: usize,
    /// Sum of module areas before scaling, µm².
    pub total_area: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    /// Module power at 1.0 V summed over all modules, W.
    pub total_power: f64,
    /// Neighbourhood (in module index) that most sinks are drawn from.
    pub locality: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// 100 soft modules, 885 nets, 334 terminals, 7.83 W.
    pub fn n100() -> Self {
        Self {
            modules: 100,
            nets: 885,
            terminals: 334,
            total_area: 1.8e6,
            min_aspect: 0.33,
            max_aspect: 3.0,
            total_power: 7.83,
            locality: 8,
            seed: 100,
        }
    }

    /// Twelve modules on a 1 mm outline, for quick runs.
    pub fn toy() -> Self {
        Self {
            modules: 12,
            nets: 24,
            terminals: 6,
            total_area: 6.0e4,
            min_aspect: 0.5,
            max_aspect: 2.0,
            total_power: 1.2,
            locality: 3,
            seed: 12,
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<BenchmarkBundle> {
    if spec.modules < 2 || !(spec.total_area > 0.0) || !(spec.min_aspect > 0.0 && spec.min_aspect <= spec.max_aspect) {
        return Err(Error::domain("synthetic benchmark needs >= 2 modules, positive area and a valid aspect range"));
    }
    if spec.terminals > spec.nets {
        return Err(Error::domain("every terminal needs its own net"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.modules;

    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.25f64.ln()..4.0f64.ln()).exp()).collect();
    let sum: f64 = raw.iter().sum();
    let blocks: Vec<BlockSpec> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| BlockSpec {
            id: format!("sb{i}"),
            shape: Shape::Soft {
                area: (r * spec.total_area / sum).round().max(1.0),
                min_aspect: spec.min_aspect,
                max_aspect: spec.max_aspect,
            },
            power: 0.0,
        })
        .collect();
    let terminals: Vec<TerminalSpec> = (0..spec.terminals).map(|k| TerminalSpec { id: format!("p{k}"), pos: None }).collect();

    let mut nets = Vec::with_capacity(spec.nets);
    for k in 0..spec.nets {
        let degree = match rng.random_range(0..100) {
            0..85 => 2,
            85..95 => 3,
            95..98 => 4,
            _ => 5,
        };
        let anchor = rng.random_range(0..n);
        let mut pins = vec![PinRef::Block(anchor)];
        while pins.len() < degree {
            let m = if rng.random_bool(0.75) {
                let off = rng.random_range(1..=spec.locality.max(1)) as isize * if rng.random_bool(0.5) { 1 } else { -1 };
                (anchor as isize + off).rem_euclid(n as isize) as usize
            } else {
                rng.random_range(0..n)
            };
            if !pins.contains(&PinRef::Block(m)) {
                pins.push(PinRef::Block(m));
            }
        }
        if k < spec.terminals {
            // half the pads drive their net, the other half are driven
            if k % 2 == 0 {
                pins.insert(0, PinRef::Terminal(k));
                pins.pop();
            } else {
                let last = pins.len() - 1;
                pins[last] = PinRef::Terminal(k);
            }
        }
        nets.push(Net { id: format!("n{k}"), pins });
    }

    let mut bundle = BenchmarkBundle { blocks, terminals, nets, scale_factor: 1.0, power_source: PowerSource::Missing };
    if spec.total_power > 0.0 {
        synthesize_power(&mut bundle, spec.total_power, spec.seed ^ 0x5eed)?;
    }
    Ok(bundle)
}

/// Hand-built hardening case on a 2 mm outline. Die 1 fills its left half
/// with a 2×4 block array whose power rises towards the empty right half;
/// die 2 is fully covered and carries a hot column right above that
/// whitespace. Returned with a matching config (32×32 grid, 6×6 islands).
pub fn hotspot_case() -> (Floorplan, EngineConfig) {
    let pitch = 500.0;
    let mut fp = Floorplan::new((2000.0, 2000.0));
    let block = |id: String, i: usize, j: usize, die: Die, p: f64| BlockModule {
        id,
        kind: BlockKind::Hard,
        area: 480.0 * 480.0,
        aspect_limits: (1.0, 1.0),
        pos: (i as f64 * pitch + 10.0, j as f64 * pitch + 10.0),
        dims: (480.0, 480.0),
        die,
        nominal_power: p,
        voltage: VoltageLevel::Nominal,
    };
    for j in 0..4 {
        for i in 0..4 {
            if i < 2 {
                let p = 0.05 + ((i + 1) as f64 / 2.0).powi(2);
                fp.blocks.push(block(format!("a{i}{j}"), i, j, Die::Bottom, p));
            }
            let p = 0.05 + if i == 2 { 4.0 } else { 0.0 };
            fp.blocks.push(block(format!("b{i}{j}"), i, j, Die::Top, p));
        }
    }
    let mut cfg = EngineConfig::default();
    cfg.outline_w = 2000.0;
    cfg.outline_h = 2000.0;
    cfg.grid_nx = 32;
    cfg.grid_ny = 32;
    cfg.harden.island_tsv_count = 36;
    cfg.harden.search_radius = 6;
    (fp, cfg)
}
