//! Attacker impersonation by activity sampling, correlation-stability maps,
//! and dummy thermal TSV insertion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::layout::TsvRaster;
use crate::leakage::{mean_defined, pearson, stability, StabilityMap};
use crate::model::{rasterize_power, rasterize_power_with, rasterize_tsv_density, Die, Floorplan, TsvIsland, TsvKind};
use crate::thermal::{solve_steady, ThermalResult};

/// One activity draw and its steady-state response.
#[derive(Clone, Debug)]
pub struct ActivitySample {
    pub index: usize,
    /// Per-block power, W.
    pub powers: Vec<f64>,
    pub power: [Grid2D<f64>; 2],
    pub thermal: ThermalResult<f64>,
}

/// Per-block powers of sample `index`: each block draws from
/// `Normal(p, std_fraction · p)` around its effective power `p`, clamped at 0.
pub fn draw_powers(fp: &Floorplan, std_fraction: f64, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    fp.blocks
        .iter()
        .map(|b| {
            let mean = b.effective_power();
            let sd = std_fraction * mean;
            if sd > 0.0 {
                Normal::new(mean, sd).expect("finite std").sample(&mut rng).max(0.0)
            } else {
                mean
            }
        })
        .collect()
}

fn solve_powers(fp: &Floorplan, powers: &[f64], density: &Grid2D<f64>, cfg: &EngineConfig) -> Result<([Grid2D<f64>; 2], ThermalResult<f64>)> {
    let p1 = rasterize_power_with(fp, Die::Bottom, cfg.grid(), |i, _| powers[i])?;
    let p2 = rasterize_power_with(fp, Die::Top, cfg.grid(), |i, _| powers[i])?;
    let thermal = solve_steady(&p1, &p2, density, &cfg.stack, &cfg.solver)?;
    Ok(([p1, p2], thermal))
}

/// `m` seeded activity samples solved on the configured grid. Samples are
/// independent and solved in parallel; results do not depend on scheduling.
pub fn sample_activities(fp: &Floorplan, m: usize, std_fraction: f64, seed: u64, cfg: &EngineConfig) -> Result<Vec<ActivitySample>> {
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 samples, got {m}")));
    }
    let density = rasterize_tsv_density(fp, cfg.grid())?;
    (0..m)
        .into_par_iter()
        .map(|index| {
            let powers = draw_powers(fp, std_fraction, seed, index);
            let (power, thermal) =
                solve_powers(fp, &powers, &density, cfg).map_err(|e| Error::Sample { index, source: Box::new(e) })?;
            Ok(ActivitySample { index, powers, power, thermal })
        })
        .collect()
}

/// Per-bin correlation stability of both dies, `[die 1, die 2]`.
pub fn stability_map(samples: &[ActivitySample]) -> Result<[StabilityMap<f64>; 2]> {
    let per_die = |slot: usize| {
        let p: Vec<Grid2D<f64>> = samples.iter().map(|s| s.power[slot].clone()).collect();
        let t: Vec<Grid2D<f64>> = samples.iter().map(|s| s.thermal.temps[slot].clone()).collect();
        stability(&p, &t)
    };
    Ok([per_die(0)?, per_die(1)?])
}

/// Steady-state correlation at nominal (voltage-scaled) powers.
#[derive(Clone, Debug)]
pub struct SteadyCorrelation {
    pub r: [Option<f64>; 2],
    /// Mean of the defined per-die values.
    pub mean: Option<f64>,
    pub power: [Grid2D<f64>; 2],
    pub thermal: ThermalResult<f64>,
    pub tsv_density: Grid2D<f64>,
}

pub fn steady_correlation(fp: &Floorplan, cfg: &EngineConfig) -> Result<SteadyCorrelation> {
    let p1 = rasterize_power(fp, Die::Bottom, cfg.grid())?;
    let p2 = rasterize_power(fp, Die::Top, cfg.grid())?;
    let density = rasterize_tsv_density(fp, cfg.grid())?;
    let thermal = solve_steady(&p1, &p2, &density, &cfg.stack, &cfg.solver)?;
    let r = [pearson(&p1, &thermal.temps[0])?.value, pearson(&p2, &thermal.temps[1])?.value];
    Ok(SteadyCorrelation { r, mean: mean_defined(&r), power: [p1, p2], thermal, tsv_density: density })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardenStep {
    pub island: TsvIsland,
    /// Bin whose stability triggered the insertion.
    pub bin: (usize, usize),
    pub stability: f64,
    pub r: [Option<f64>; 2],
    pub r_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// No defined correlation to improve on.
    Undefined,
    NoWhitespace,
    /// The last insertion did not lower the mean correlation.
    NoImprovement,
    StepLimit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HardeningTrace {
    pub start_r: Option<f64>,
    pub start: [Option<f64>; 2],
    /// Accepted insertions; `r_mean` strictly decreases along the list.
    pub steps: Vec<HardenStep>,
    /// Insertion tried and reverted at the end, if any.
    pub rejected: Option<HardenStep>,
    pub stop: StopReason,
    pub floorplan: Floorplan,
}

impl HardeningTrace {
    pub fn final_r(&self) -> Option<f64> {
        self.steps.last().map(|s| s.r_mean).or(self.start_r)
    }
}

/// Stability score per bin, or `None` where the bin is undefined or outside
/// the focus footprints.
fn bin_scores(maps: &[StabilityMap<f64>; 2], fp: &Floorplan, grid: &Grid2D<f64>, cfg: &EngineConfig) -> Result<Vec<Option<f64>>> {
    let focus: Vec<usize> = cfg
        .harden
        .focus
        .iter()
        .map(|id| fp.block_index(id).ok_or_else(|| Error::domain(format!("unknown focus module `{id}`"))))
        .collect::<Result<_>>()?;
    Ok((0..grid.len())
        .map(|i| {
            if !focus.is_empty() {
                let (x, y) = grid.coords(i);
                let (cx, cy) = grid.bin_center(x, y);
                if !focus.iter().any(|&b| fp.blocks[b].rect().contains_point(cx, cy)) {
                    return None;
                }
            }
            let r1 = maps[0].values[i].map(f64::abs);
            if cfg.harden.whole_stack {
                let r2 = maps[1].values[i].map(f64::abs);
                match (r1, r2) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                }
            } else {
                r1
            }
        })
        .collect())
}

/// Island centre in die-1 whitespace near bin `(x, y)`, searched on the TSV
/// raster within `search_radius` bins; the site closest to the bin centre wins.
pub fn island_site(fp: &Floorplan, grid: &Grid2D<f64>, raster: &TsvRaster, bin: (usize, usize), count: usize, radius: usize) -> Option<(f64, f64)> {
    let side = fp.tsv_geometry.side() * (count as f64).sqrt();
    let cells = (side / raster.cell - 1e-9).ceil() as usize;
    if cells == 0 || cells > raster.nx || cells > raster.ny {
        return None;
    }
    let (px, py) = grid.pitch();
    let (bcx, bcy) = grid.bin_center(bin.0, bin.1);
    let r = radius as f64;
    let lo_x = ((bin.0 as f64 - r) * px / raster.cell).floor().max(0.0) as usize;
    let hi_x = (((bin.0 as f64 + 1.0 + r) * px / raster.cell).ceil() as usize).min(raster.nx);
    let lo_y = ((bin.1 as f64 - r) * py / raster.cell).floor().max(0.0) as usize;
    let hi_y = (((bin.1 as f64 + 1.0 + r) * py / raster.cell).ceil() as usize).min(raster.ny);
    let mut best: Option<(f64, (f64, f64))> = None;
    for y0 in lo_y..hi_y.saturating_sub(cells - 1) {
        for x0 in lo_x..hi_x.saturating_sub(cells - 1) {
            let free = (y0..y0 + cells).all(|y| (x0..x0 + cells).all(|x| !raster.taken[y * raster.nx + x]));
            if !free {
                continue;
            }
            let c = (x0 as f64 * raster.cell + side / 2.0, y0 as f64 * raster.cell + side / 2.0);
            let d = (c.0 - bcx).powi(2) + (c.1 - bcy).powi(2);
            if best.is_none_or(|(bd, _)| d < bd) {
                let island = TsvIsland { center: c, count, kind: TsvKind::Dummy };
                if fp.is_tsv_site_free(&island.rect(&fp.tsv_geometry)) {
                    best = Some((d, c));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Insert dummy thermal TSV islands where correlations are most stable, for
/// as long as each insertion lowers the mean steady-state correlation.
pub fn harden(fp: &Floorplan, cfg: &EngineConfig) -> Result<HardeningTrace> {
    let mut fp = fp.clone();
    let start = steady_correlation(&fp, cfg)?;
    let mut trace = HardeningTrace {
        start_r: start.mean,
        start: start.r,
        steps: Vec::new(),
        rejected: None,
        stop: StopReason::StepLimit,
        floorplan: fp.clone(),
    };
    let Some(mut current) = start.mean else {
        trace.stop = StopReason::Undefined;
        return Ok(trace);
    };
    let grid = Grid2D::<f64>::over_outline(fp.outline, cfg.grid())?;
    let count = cfg.harden.island_tsv_count;
    for step in 0..cfg.harden.max_steps {
        let seed = cfg.seed ^ (step as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let samples = sample_activities(&fp, cfg.sampling.m, cfg.sampling.std_fraction, seed, cfg)?;
        let maps = stability_map(&samples)?;
        drop(samples);
        let scores = bin_scores(&maps, &fp, &grid, cfg)?;
        let mut order: Vec<(usize, f64)> = scores.iter().enumerate().filter_map(|(i, s)| s.map(|v| (i, v))).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let raster = TsvRaster::new(&fp);
        let pick = order.iter().find_map(|&(i, s)| {
            let bin = grid.coords(i);
            island_site(&fp, &grid, &raster, bin, count, cfg.harden.search_radius).map(|c| (bin, s, c))
        });
        let Some((bin, stab, center)) = pick else {
            trace.stop = StopReason::NoWhitespace;
            break;
        };
        let island = TsvIsland { center, count, kind: TsvKind::Dummy };
        fp.tsvs.push(island.clone());
        let after = steady_correlation(&fp, cfg)?;
        let step_rec = |r_mean: f64| HardenStep { island: island.clone(), bin, stability: stab, r: after.r, r_mean };
        match after.mean {
            Some(r) if r < current => {
                current = r;
                trace.steps.push(step_rec(r));
            }
            other => {
                fp.tsvs.pop();
                trace.rejected = Some(step_rec(other.unwrap_or(f64::NAN)));
                trace.stop = StopReason::NoImprovement;
                break;
            }
        }
    }
    trace.floorplan = fp;
    Ok(trace)
}

/// Outcome of the localization attack simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackReport {
    pub targets: Vec<String>,
    /// Mean temperature rise over baseline, K, `[die 1, die 2]`, row-major.
    pub delta: [Vec<f64>; 2],
    pub dims: (usize, usize),
    /// `(die, x, y)` of the largest rise.
    pub argmax: (u8, usize, usize),
    pub max_delta: f64,
    /// The hottest bin lies inside a target footprint on the target's die.
    pub success: bool,
    /// Largest rise inside target footprints minus largest rise elsewhere, K.
    pub margin: f64,
}

/// Targets run `attack_sigma` standard deviations above their mean in every
/// sample; the attacker compares mean temperatures against the baseline.
pub fn localize_attack(fp: &Floorplan, targets: &[String], cfg: &EngineConfig) -> Result<AttackReport> {
    if targets.is_empty() {
        return Err(Error::domain("no attack targets"));
    }
    let idx: Vec<usize> = targets
        .iter()
        .map(|id| fp.block_index(id).ok_or_else(|| Error::domain(format!("unknown target module `{id}`"))))
        .collect::<Result<_>>()?;
    let m = cfg.sampling.m;
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 samples, got {m}")));
    }
    let density = rasterize_tsv_density(fp, cfg.grid())?;
    let boost = cfg.harden.attack_sigma * cfg.sampling.std_fraction;
    let sums = (0..m)
        .into_par_iter()
        .map(|index| {
            let base = draw_powers(fp, cfg.sampling.std_fraction, cfg.seed, index);
            let mut hot = base.clone();
            for &i in &idx {
                hot[i] += boost * fp.blocks[i].effective_power();
            }
            let wrap = |e| Error::Sample { index, source: Box::new(e) };
            let (_, tb) = solve_powers(fp, &base, &density, cfg).map_err(wrap)?;
            let (_, th) = solve_powers(fp, &hot, &density, cfg).map_err(wrap)?;
            let d = |s: usize| th.temps[s].values().iter().zip(tb.temps[s].values()).map(|(a, b)| a - b).collect::<Vec<f64>>();
            Ok([d(0), d(1)])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.grid_nx * cfg.grid_ny;
    let mut delta = [vec![0.0; n], vec![0.0; n]];
    for s in &sums {
        for die in 0..2 {
            for (acc, v) in delta[die].iter_mut().zip(&s[die]) {
                *acc += v / m as f64;
            }
        }
    }
    let grid = Grid2D::<f64>::over_outline(fp.outline, cfg.grid())?;
    let mut argmax = (1u8, 0usize, 0usize);
    let mut max_delta = f64::NEG_INFINITY;
    let (mut inside, mut outside) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for die in [Die::Bottom, Die::Top] {
        for (i, &v) in delta[die.slot()].iter().enumerate() {
            let (x, y) = grid.coords(i);
            let (cx, cy) = grid.bin_center(x, y);
            if v > max_delta {
                max_delta = v;
                argmax = (die.number(), x, y);
            }
            let hit = idx.iter().any(|&b| fp.blocks[b].die == die && fp.blocks[b].rect().contains_point(cx, cy));
            if hit {
                inside = inside.max(v);
            } else {
                outside = outside.max(v);
            }
        }
    }
    let (die, x, y) = argmax;
    let (cx, cy) = grid.bin_center(x, y);
    let hit = idx.iter().any(|&b| fp.blocks[b].die.number() == die && fp.blocks[b].rect().contains_point(cx, cy));
    let margin = if inside.is_finite() && outside.is_finite() { inside - outside } else { 0.0 };
    Ok(AttackReport {
        targets: targets.to_vec(),
        delta,
        dims: cfg.grid(),
        argmax,
        max_delta,
        success: hit && max_delta > 0.0,
        margin,
    })
}
