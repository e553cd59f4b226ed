//! Exploratory sweep over power and TSV distributions: every combination
//! of five power patterns and six TSV patterns is solved in detail and its
//! power/temperature correlation recorded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid2D;
use crate::leakage::{pearson, spatial_entropy_with, EntropyOptions};
use crate::model::{rasterize_power, BlockKind, BlockModule, Die, Floorplan, Rect, TsvGeometry, VoltageLevel};
use crate::thermal::{solve_steady, SolverOptions, StackModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerPattern {
    GloballyUniform,
    LocallyUniform,
    MediumGradients,
    SmallGradients,
    LargeGradients,
}

impl PowerPattern {
    pub const ALL: [PowerPattern; 5] = [
        PowerPattern::GloballyUniform,
        PowerPattern::LocallyUniform,
        PowerPattern::MediumGradients,
        PowerPattern::SmallGradients,
        PowerPattern::LargeGradients,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PowerPattern::GloballyUniform => "globally_uniform",
            PowerPattern::LocallyUniform => "locally_uniform",
            PowerPattern::MediumGradients => "medium_gradients",
            PowerPattern::SmallGradients => "small_gradients",
            PowerPattern::LargeGradients => "large_gradients",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TsvPattern {
    None,
    Maximal,
    Irregular,
    IrregularRegular,
    Islands,
    IslandsRegular,
}

impl TsvPattern {
    pub const ALL: [TsvPattern; 6] = [
        TsvPattern::None,
        TsvPattern::Maximal,
        TsvPattern::Irregular,
        TsvPattern::IrregularRegular,
        TsvPattern::Islands,
        TsvPattern::IslandsRegular,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TsvPattern::None => "none",
            TsvPattern::Maximal => "maximal",
            TsvPattern::Irregular => "irregular",
            TsvPattern::IrregularRegular => "irregular_regular",
            TsvPattern::Islands => "islands",
            TsvPattern::IslandsRegular => "islands_regular",
        }
    }

    /// Whether the pattern contains a regular TSV arrangement.
    pub fn is_regular(self) -> bool {
        matches!(self, TsvPattern::Maximal | TsvPattern::IrregularRegular | TsvPattern::IslandsRegular)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: (usize, usize),
    pub outline: (f64, f64),
    /// Average power per die, W.
    pub die_power: f64,
    /// Pitch of the regular TSV grid, µm.
    pub regular_pitch: f64,
    /// TSVs per site of the regular grid.
    pub regular_count: usize,
    pub seed: u64,
    pub stack: StackModel,
    pub solver: SolverOptions,
    pub entropy: EntropyOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: (32, 32),
            outline: (4000.0, 4000.0),
            die_power: 4.0,
            regular_pitch: 250.0,
            regular_count: 16,
            seed: 1,
            stack: StackModel::default(),
            solver: SolverOptions::default(),
            entropy: EntropyOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub power: PowerPattern,
    pub tsv: TsvPattern,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub s1: f64,
    pub s2: f64,
    pub peak: f64,
}

/// Maps of one sweep case.
#[derive(Clone, Debug)]
pub struct SweepCase {
    pub row: SweepRow,
    pub power: [Grid2D<f64>; 2],
    pub temp: [Grid2D<f64>; 2],
    pub tsv_density: Grid2D<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub cases: Vec<SweepCase>,
}

impl SweepReport {
    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.cases.iter().map(|c| &c.row)
    }

    pub fn row(&self, power: PowerPattern, tsv: TsvPattern) -> Option<&SweepRow> {
        self.rows().find(|r| r.power == power && r.tsv == tsv)
    }

    /// CSV with one header line and one line per case.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("power,tsv,r1,r2,s1,s2,peak_k\n");
        for r in self.rows() {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.4}\n",
                r.power.label(),
                r.tsv.label(),
                fmt(r.r1),
                fmt(r.r2),
                r.s1,
                r.s2,
                r.peak
            ));
        }
        out
    }
}

/// Block layout of one die: a jittered grid of modules separated by
/// whitespace channels of varying width.
fn layout(outline: (f64, f64), die: Die, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    let cols = 6;
    let rows = 6;
    let (cw, ch) = (outline.0 / cols as f64, outline.1 / rows as f64);
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let shrink_x = rng.random_range(0.05..0.2);
            let shrink_y = rng.random_range(0.05..0.2);
            let (w, h) = (cw * (1.0 - shrink_x), ch * (1.0 - shrink_y));
            let x = c as f64 * cw + rng.random_range(0.0..(cw - w));
            let y = r as f64 * ch + rng.random_range(0.0..(ch - h));
            out.push(Rect::new(x, y, w, h));
        }
    }
    // die 2 uses a coarser arrangement so the two power maps differ
    if die == Die::Top {
        out.retain(|_| rng.random::<f64>() > 0.1);
    }
    out
}

/// Per-block power-density multipliers for one pattern.
fn multipliers(pattern: PowerPattern, rects: &[Rect], outline: (f64, f64), die: Die, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let region_level: Vec<f64> = (0..9).map(|_| [0.8, 1.0, 1.2][rng.random_range(0..3)]).collect();
    rects
        .iter()
        .map(|r| {
            let (cx, cy) = r.center();
            // smooth trend across the die, -1 at one corner to +1 at the other
            let trend = (cx / outline.0 + cy / outline.1) - 1.0;
            match pattern {
                PowerPattern::GloballyUniform => 1.0,
                PowerPattern::LocallyUniform => {
                    let rx = ((cx / outline.0) * 3.0).floor().min(2.0) as usize;
                    let ry = ((cy / outline.1) * 3.0).floor().min(2.0) as usize;
                    region_level[ry * 3 + rx]
                }
                PowerPattern::SmallGradients => 1.0 + 0.3 * trend,
                PowerPattern::MediumGradients => 1.0 + 0.6 * trend,
                PowerPattern::LargeGradients => {
                    let across = if die == Die::Bottom { 1.4 } else { 0.6 };
                    across * (1.0 + 0.9 * trend)
                }
            }
        })
        .collect()
}

fn power_floorplan(cfg: &SweepConfig, pattern: PowerPattern) -> Floorplan {
    let mut fp = Floorplan::new(cfg.outline);
    for die in Die::BOTH {
        let mut lrng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(die.number() as u64));
        let rects = layout(cfg.outline, die, &mut lrng);
        let mut prng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(97).wrapping_add(die.number() as u64));
        let mult = multipliers(pattern, &rects, cfg.outline, die, &mut prng);
        let area: f64 = rects.iter().map(Rect::area).sum();
        let density = cfg.die_power / area;
        for (k, (r, m)) in rects.iter().zip(&mult).enumerate() {
            fp.blocks.push(BlockModule {
                id: format!("d{}b{k}", die.number()),
                kind: BlockKind::Hard,
                area: r.area(),
                aspect_limits: (r.w / r.h, r.w / r.h),
                pos: (r.x, r.y),
                dims: (r.w, r.h),
                die,
                nominal_power: density * m * r.area(),
                voltage: VoltageLevel::Nominal,
            });
        }
    }
    fp
}

/// Fraction of each bin covered by die-1 blocks. The block layout does not
/// depend on the power pattern.
fn die1_cover(cfg: &SweepConfig) -> Result<Grid2D<f64>> {
    let mut fp = power_floorplan(cfg, PowerPattern::GloballyUniform);
    fp.blocks.iter_mut().for_each(|b| b.nominal_power = b.area);
    rasterize_power(&fp, Die::Bottom, cfg.grid)
}

/// TSV density map for one pattern. Apart from the maximal pattern, TSVs
/// only go into die-1 whitespace bins (at most half covered by blocks).
pub fn tsv_pattern_density(cfg: &SweepConfig, pattern: TsvPattern) -> Result<Grid2D<f64>> {
    let mut g = Grid2D::over_outline(cfg.outline, cfg.grid)?;
    if pattern == TsvPattern::Maximal {
        g.values_mut().iter_mut().for_each(|v| *v = 1.0);
        return Ok(g);
    }
    let cover = die1_cover(cfg)?;
    let free = |x: usize, y: usize| cover.get(x, y) <= 0.5;
    let (nx, ny) = cfg.grid;
    let sites: Vec<(usize, usize)> = (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).filter(|&(x, y)| free(x, y)).collect();
    if sites.is_empty() {
        return Ok(g);
    }
    let per_bin = TsvGeometry::default().footprint() / g.bin_area();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(7919));
    let add = |g: &mut Grid2D<f64>, x: usize, y: usize, v: f64| {
        let v = (g.get(x, y) + v).min(1.0);
        g.set(x, y, v);
    };
    let irregular = |g: &mut Grid2D<f64>, rng: &mut ChaCha8Rng| {
        for _ in 0..(nx * ny / 12) {
            let (x, y) = sites[rng.random_range(0..sites.len())];
            add(g, x, y, rng.random_range(1..6) as f64 * per_bin);
        }
    };
    let islands = |g: &mut Grid2D<f64>, rng: &mut ChaCha8Rng| {
        let side = (nx / 12).max(1);
        for _ in 0..6 {
            let (x0, y0) = sites[rng.random_range(0..sites.len())];
            for y in y0..(y0 + side).min(ny) {
                for x in x0..(x0 + side).min(nx) {
                    if free(x, y) {
                        add(g, x, y, 0.8);
                    }
                }
            }
        }
    };
    let regular = |g: &mut Grid2D<f64>| {
        let (px, py) = g.pitch();
        let sx = (cfg.regular_pitch / px).round().max(1.0) as usize;
        let sy = (cfg.regular_pitch / py).round().max(1.0) as usize;
        for y in (sy / 2..ny).step_by(sy) {
            for x in (sx / 2..nx).step_by(sx) {
                if free(x, y) {
                    add(g, x, y, cfg.regular_count as f64 * per_bin);
                }
            }
        }
    };
    match pattern {
        TsvPattern::None | TsvPattern::Maximal => {}
        TsvPattern::Irregular => irregular(&mut g, &mut rng),
        TsvPattern::IrregularRegular => {
            irregular(&mut g, &mut rng);
            regular(&mut g);
        }
        TsvPattern::Islands => islands(&mut g, &mut rng),
        TsvPattern::IslandsRegular => {
            islands(&mut g, &mut rng);
            regular(&mut g);
        }
    }
    Ok(g)
}

/// Power maps of both dies for one pattern.
pub fn power_pattern_maps(cfg: &SweepConfig, pattern: PowerPattern) -> Result<[Grid2D<f64>; 2]> {
    let fp = power_floorplan(cfg, pattern);
    Ok([rasterize_power(&fp, Die::Bottom, cfg.grid)?, rasterize_power(&fp, Die::Top, cfg.grid)?])
}

/// Run all 30 combinations. Cases are independent and solved in parallel;
/// the output order is fixed (power-major).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    use rayon::prelude::*;
    let combos: Vec<(PowerPattern, TsvPattern)> =
        PowerPattern::ALL.iter().flat_map(|p| TsvPattern::ALL.iter().map(move |t| (*p, *t))).collect();
    let cases = combos
        .par_iter()
        .map(|&(pp, tp)| -> Result<SweepCase> {
            let power = power_pattern_maps(cfg, pp)?;
            let density = tsv_pattern_density(cfg, tp)?;
            let res = solve_steady(&power[0], &power[1], &density, &cfg.stack, &cfg.solver)?;
            let r1 = pearson(&power[0], &res.temps[0])?.value;
            let r2 = pearson(&power[1], &res.temps[1])?.value;
            let s1 = spatial_entropy_with(&power[0], &cfg.entropy).value;
            let s2 = spatial_entropy_with(&power[1], &cfg.entropy).value;
            let row = SweepRow { power: pp, tsv: tp, r1, r2, s1, s2, peak: res.peak };
            let [t1, t2] = res.temps;
            Ok(SweepCase { row, power, temp: [t1, t2], tsv_density: density })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { cases })
}
