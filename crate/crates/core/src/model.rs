//! Geometric and electrical model of a two-die, face-to-back 3D IC.
//!
//! Die 1 sits on the package, die 2 carries the heatsink. TSVs pierce the
//! die-1 substrate, so TSV islands occupy die-1 whitespace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Die {
    Bottom,
    Top,
}

impl Die {
    pub const BOTH: [Die; 2] = [Die::Bottom, Die::Top];

    pub fn number(self) -> u8 {
        match self {
            Die::Bottom => 1,
            Die::Top => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Die::Bottom),
            2 => Ok(Die::Top),
            _ => Err(Error::domain(format!("die must be 1 or 2, got {n}"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Die::Bottom => Die::Top,
            Die::Top => Die::Bottom,
        }
    }

    pub fn slot(self) -> usize {
        self.number() as usize - 1
    }
}

/// Floorplanning setup: power-aware baseline or thermal-side-channel aware.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pa,
    Tsc,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Pa => "pa",
            Mode::Tsc => "tsc",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pa" => Ok(Mode::Pa),
            "tsc" => Ok(Mode::Tsc),
            _ => Err(Error::domain(format!("unknown mode `{s}` (expected pa or tsc)"))),
        }
    }
}

/// Supply levels with their power and delay scalings relative to 1.0 V.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VoltageLevel {
    Low,
    Nominal,
    High,
}

impl VoltageLevel {
    pub const ALL: [VoltageLevel; 3] = [VoltageLevel::Low, VoltageLevel::Nominal, VoltageLevel::High];

    pub fn volts(self) -> f64 {
        match self {
            VoltageLevel::Low => 0.8,
            VoltageLevel::Nominal => 1.0,
            VoltageLevel::High => 1.2,
        }
    }

    pub fn power_scale(self) -> f64 {
        match self {
            VoltageLevel::Low => 0.817,
            VoltageLevel::Nominal => 1.0,
            VoltageLevel::High => 1.496,
        }
    }

    pub fn delay_scale(self) -> f64 {
        match self {
            VoltageLevel::Low => 1.56,
            VoltageLevel::Nominal => 1.0,
            VoltageLevel::High => 0.83,
        }
    }

    pub fn from_volts(v: f64) -> Result<Self> {
        VoltageLevel::ALL
            .into_iter()
            .find(|l| (l.volts() - v).abs() < 1e-9)
            .ok_or_else(|| Error::domain(format!("unsupported voltage {v} V")))
    }
}

/// Axis-aligned rectangle, lower-left corner plus extent, µm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn centered(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Area of the intersection; zero for disjoint or merely touching rects.
    pub fn overlap_area(&self, other: &Rect) -> f64 {
        let dx = self.x1().min(other.x1()) - self.x.max(other.x);
        let dy = self.y1().min(other.y1()) - self.y.max(other.y);
        if dx > 0.0 && dy > 0.0 {
            dx * dy
        } else {
            0.0
        }
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.overlap_area(other) > 0.0
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x1() && py >= self.y && py < self.y1()
    }

    pub fn inside(&self, outline: (f64, f64)) -> bool {
        const EPS: f64 = 1e-9;
        self.x >= -EPS && self.y >= -EPS && self.x1() <= outline.0 + EPS && self.y1() <= outline.1 + EPS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockModule {
    pub id: String,
    pub kind: BlockKind,
    /// µm²
    pub area: f64,
    /// Allowed `w / h` range; hard blocks carry the ratio of their two orientations.
    pub aspect_limits: (f64, f64),
    /// Lower-left corner, µm.
    pub pos: (f64, f64),
    /// `(w, h)`, µm.
    pub dims: (f64, f64),
    pub die: Die,
    /// Power at 1.0 V, W.
    pub nominal_power: f64,
    pub voltage: VoltageLevel,
}

impl BlockModule {
    pub fn rect(&self) -> Rect {
        Rect::new(self.pos.0, self.pos.1, self.dims.0, self.dims.1)
    }

    pub fn center(&self) -> (f64, f64) {
        self.rect().center()
    }

    /// Power after voltage scaling, W.
    pub fn effective_power(&self) -> f64 {
        self.nominal_power * self.voltage.power_scale()
    }

    pub fn aspect(&self) -> f64 {
        self.dims.0 / self.dims.1
    }

    /// Dimensions for a soft block at aspect ratio `w / h`, rounded to 0.1 µm.
    pub fn soft_dims(area: f64, aspect: f64) -> (f64, f64) {
        let round = |v: f64| ((v * 10.0).round() / 10.0).max(0.1);
        (round((area * aspect).sqrt()), round((area / aspect).sqrt()))
    }
}

/// Off-chip I/O pin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub id: String,
    pub pos: (f64, f64),
}

/// Reference to a net pin, resolved against a floorplan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PinRef {
    Block(usize),
    Terminal(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub id: String,
    /// First pin drives the net.
    pub pins: Vec<PinRef>,
}

impl Net {
    pub fn driver(&self) -> PinRef {
        self.pins[0]
    }

    pub fn sinks(&self) -> &[PinRef] {
        &self.pins[1..]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TsvKind {
    Signal,
    Dummy,
}

/// Footprint of one TSV including its keep-out zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsvGeometry {
    /// Via diameter, µm.
    pub diameter: f64,
    /// Keep-out annulus width, µm.
    pub keep_out: f64,
}

impl Default for TsvGeometry {
    fn default() -> Self {
        Self { diameter: 10.0, keep_out: 5.0 }
    }
}

impl TsvGeometry {
    /// Side of the square footprint occupied by one TSV.
    pub fn side(&self) -> f64 {
        self.diameter + 2.0 * self.keep_out
    }

    pub fn footprint(&self) -> f64 {
        self.side() * self.side()
    }
}

/// Group of densely packed TSVs sharing one square footprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsvIsland {
    pub center: (f64, f64),
    pub count: usize,
    pub kind: TsvKind,
}

impl TsvIsland {
    /// Square footprint with area `count × per-TSV footprint`.
    pub fn rect(&self, geom: &TsvGeometry) -> Rect {
        let side = geom.side() * (self.count as f64).sqrt();
        Rect::centered(self.center.0, self.center.1, side, side)
    }
}

/// Connected group of modules sharing one supply voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageVolume {
    /// Block indices, ascending.
    pub members: Vec<usize>,
    pub feasible: Vec<VoltageLevel>,
    pub voltage: VoltageLevel,
    /// Power of the members at the chosen voltage, W.
    pub power: f64,
    /// Set when a member had no feasible level and was forced to 1.2 V.
    pub forced: bool,
}

/// Complete two-die solution. Both dies share one fixed outline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Floorplan {
    pub outline: (f64, f64),
    pub blocks: Vec<BlockModule>,
    pub terminals: Vec<Terminal>,
    pub nets: Vec<Net>,
    pub tsvs: Vec<TsvIsland>,
    pub volumes: Vec<VoltageVolume>,
    pub tsv_geometry: TsvGeometry,
}

impl Floorplan {
    pub fn new(outline: (f64, f64)) -> Self {
        Self {
            outline,
            blocks: Vec::new(),
            terminals: Vec::new(),
            nets: Vec::new(),
            tsvs: Vec::new(),
            volumes: Vec::new(),
            tsv_geometry: TsvGeometry::default(),
        }
    }

    pub fn blocks_on(&self, die: Die) -> impl Iterator<Item = (usize, &BlockModule)> {
        self.blocks.iter().enumerate().filter(move |(_, b)| b.die == die)
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.id == id)
    }

    pub fn pin_position(&self, pin: PinRef) -> (f64, f64) {
        match pin {
            PinRef::Block(i) => self.blocks[i].center(),
            PinRef::Terminal(i) => self.terminals[i].pos,
        }
    }

    pub fn pin_name(&self, pin: PinRef) -> &str {
        match pin {
            PinRef::Block(i) => &self.blocks[i].id,
            PinRef::Terminal(i) => &self.terminals[i].id,
        }
    }

    /// Effective (voltage-scaled) power summed over one die, W.
    pub fn die_power(&self, die: Die) -> f64 {
        self.blocks_on(die).map(|(_, b)| b.effective_power()).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.blocks.iter().map(BlockModule::effective_power).sum()
    }

    pub fn signal_tsv_count(&self) -> usize {
        self.tsvs.iter().filter(|t| t.kind == TsvKind::Signal).map(|t| t.count).sum()
    }

    pub fn dummy_tsv_count(&self) -> usize {
        self.tsvs.iter().filter(|t| t.kind == TsvKind::Dummy).map(|t| t.count).sum()
    }

    /// True if two blocks on the same die share positive area.
    pub fn blocks_overlap(&self, a: usize, b: usize) -> bool {
        let (ba, bb) = (&self.blocks[a], &self.blocks[b]);
        ba.die == bb.die && ba.rect().overlaps(&bb.rect())
    }

    /// Area of blocks on `die` covered by `rect`.
    pub fn blocked_area(&self, die: Die, rect: &Rect) -> f64 {
        self.blocks_on(die).map(|(_, b)| b.rect().overlap_area(rect)).sum()
    }

    /// Whether `rect` lies on die-1 whitespace inside the outline and clear of
    /// every existing TSV island.
    pub fn is_tsv_site_free(&self, rect: &Rect) -> bool {
        rect.inside(self.outline)
            && self.blocked_area(Die::Bottom, rect) == 0.0
            && self.tsvs.iter().all(|t| !t.rect(&self.tsv_geometry).overlaps(rect))
    }

    pub fn legality(&self) -> Legality {
        let mut out_of_outline = Vec::new();
        let mut overlaps = Vec::new();
        let mut misplaced_tsvs = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if !b.rect().inside(self.outline) {
                out_of_outline.push(i);
            }
            for j in (i + 1)..self.blocks.len() {
                if self.blocks_overlap(i, j) {
                    overlaps.push((i, j));
                }
            }
        }
        for (k, t) in self.tsvs.iter().enumerate() {
            let r = t.rect(&self.tsv_geometry);
            if !r.inside(self.outline) || self.blocked_area(Die::Bottom, &r) > 0.0 {
                misplaced_tsvs.push(k);
            }
        }
        Legality { out_of_outline, overlaps, misplaced_tsvs }
    }

    pub fn is_legal(&self) -> bool {
        self.legality().is_legal()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Legality {
    pub out_of_outline: Vec<usize>,
    pub overlaps: Vec<(usize, usize)>,
    pub misplaced_tsvs: Vec<usize>,
}

impl Legality {
    pub fn is_legal(&self) -> bool {
        self.out_of_outline.is_empty() && self.overlaps.is_empty() && self.misplaced_tsvs.is_empty()
    }
}

/// Power-density map of one die in W/µm².
///
/// Each block spreads its effective power uniformly over its footprint; a bin
/// receives the share of every block it overlaps.
pub fn rasterize_power<T: Scalar>(fp: &Floorplan, die: Die, dims: (usize, usize)) -> Result<Grid2D<T>> {
    rasterize_power_with(fp, die, dims, |_, b| b.effective_power())
}

/// Like [`rasterize_power`] with caller-supplied power (W) per block index.
pub fn rasterize_power_with<T: Scalar>(
    fp: &Floorplan,
    die: Die,
    dims: (usize, usize),
    power_of: impl Fn(usize, &BlockModule) -> f64,
) -> Result<Grid2D<T>> {
    let mut acc = vec![0.0f64; dims.0 * dims.1];
    let grid = Grid2D::<T>::over_outline(fp.outline, dims)?;
    let bin_area = grid.bin_area();
    for (i, b) in fp.blocks_on(die) {
        let area = b.dims.0 * b.dims.1;
        if area <= 0.0 {
            continue;
        }
        let density = power_of(i, b) / area;
        splat(&grid, &b.rect(), |i, covered| acc[i] += density * covered / bin_area);
    }
    Grid2D::from_values(dims.0, dims.1, grid.pitch(), acc.into_iter().map(T::of).collect())
}

/// Numeric-id convenience wrapper: `die` must be 1 or 2.
pub fn rasterize_power_die<T: Scalar>(fp: &Floorplan, die: u8, dims: (usize, usize)) -> Result<Grid2D<T>> {
    rasterize_power(fp, Die::from_number(die)?, dims)
}

/// Fraction of each bin covered by TSV footprints (keep-out included), at most 1.
pub fn rasterize_tsv_density<T: Scalar>(fp: &Floorplan, dims: (usize, usize)) -> Result<Grid2D<T>> {
    let grid = Grid2D::<T>::over_outline(fp.outline, dims)?;
    let bin_area = grid.bin_area();
    let mut acc = vec![0.0f64; dims.0 * dims.1];
    for t in &fp.tsvs {
        splat(&grid, &t.rect(&fp.tsv_geometry), |i, covered| acc[i] += covered / bin_area);
    }
    Grid2D::from_values(dims.0, dims.1, grid.pitch(), acc.into_iter().map(|v| T::of(v.min(1.0))).collect())
}

/// Calls `f(bin_index, covered_area)` for every bin the rectangle overlaps.
fn splat<T: Scalar>(grid: &Grid2D<T>, r: &Rect, mut f: impl FnMut(usize, f64)) {
    let (px, py) = grid.pitch();
    let (nx, ny) = grid.dims();
    let span = |lo: f64, hi: f64, p: f64, n: usize| {
        let a = ((lo / p).floor().max(0.0) as usize).min(n);
        let b = ((hi / p).ceil().max(0.0) as usize).min(n);
        a..b
    };
    for y in span(r.y, r.y1(), py, ny) {
        let oy = (r.y1().min((y + 1) as f64 * py) - r.y.max(y as f64 * py)).max(0.0);
        if oy == 0.0 {
            continue;
        }
        for x in span(r.x, r.x1(), px, nx) {
            let ox = (r.x1().min((x + 1) as f64 * px) - r.x.max(x as f64 * px)).max(0.0);
            if ox > 0.0 {
                f(y * nx + x, ox * oy);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: &str, die: Die, pos: (f64, f64), dims: (f64, f64), power: f64) -> BlockModule {
        BlockModule {
            id: id.into(),
            kind: BlockKind::Hard,
            area: dims.0 * dims.1,
            aspect_limits: (dims.0 / dims.1, dims.0 / dims.1),
            pos,
            dims,
            die,
            nominal_power: power,
            voltage: VoltageLevel::Nominal,
        }
    }

    #[test]
    fn voltage_levels_carry_published_scalings() {
        let t: Vec<_> = VoltageLevel::ALL.iter().map(|l| (l.volts(), l.power_scale(), l.delay_scale())).collect();
        assert_eq!(t, vec![(0.8, 0.817, 1.56), (1.0, 1.0, 1.0), (1.2, 1.496, 0.83)]);
    }

    #[test]
    fn exact_cover_single_bin() {
        let mut fp = Floorplan::new((20.0, 20.0));
        fp.blocks.push(block("a", Die::Bottom, (0.0, 0.0), (10.0, 10.0), 1.0));
        let g: Grid2D<f64> = rasterize_power(&fp, Die::Bottom, (2, 2)).unwrap();
        assert_eq!(g.values(), &[0.01, 0.0, 0.0, 0.0]);
        let top: Grid2D<f64> = rasterize_power(&fp, Die::Top, (2, 2)).unwrap();
        assert!(top.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bad_die_number_is_domain_error() {
        let fp = Floorplan::new((20.0, 20.0));
        assert!(matches!(rasterize_power_die::<f64>(&fp, 3, (2, 2)), Err(Error::Domain(_))));
        assert!(rasterize_power_die::<f64>(&fp, 2, (2, 2)).is_ok());
    }

    #[test]
    fn straddling_block_splits_30_70() {
        let mut fp = Floorplan::new((20.0, 10.0));
        // bins are 10 wide; block spans x in [7, 17)
        fp.blocks.push(block("a", Die::Bottom, (7.0, 0.0), (10.0, 10.0), 1.0));
        let g: Grid2D<f64> = rasterize_power(&fp, Die::Bottom, (2, 2)).unwrap();
        let bin_area = 10.0 * 5.0;
        assert!((g.get(0, 0) * bin_area * 2.0 - 0.3).abs() < 1e-12);
        assert!((g.get(1, 0) * bin_area * 2.0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn voltage_scales_rasterized_power() {
        let mut fp = Floorplan::new((20.0, 20.0));
        let mut b = block("a", Die::Top, (0.0, 0.0), (20.0, 20.0), 2.0);
        b.voltage = VoltageLevel::High;
        fp.blocks.push(b);
        let g: Grid2D<f64> = rasterize_power(&fp, Die::Top, (4, 4)).unwrap();
        assert!((g.sum() * g.bin_area() - 2.0 * 1.496).abs() < 1e-12);
    }

    #[test]
    fn tsv_density_exact_cover_and_clamp() {
        let mut fp = Floorplan::new((40.0, 40.0));
        fp.tsvs.push(TsvIsland { center: (10.0, 10.0), count: 1, kind: TsvKind::Signal });
        fp.tsvs.push(TsvIsland { center: (10.0, 10.0), count: 1, kind: TsvKind::Dummy });
        let g: Grid2D<f64> = rasterize_tsv_density(&fp, (2, 2)).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 1), 0.0);
        let empty: Grid2D<f64> = rasterize_tsv_density(&Floorplan::new((40.0, 40.0)), (2, 2)).unwrap();
        assert_eq!(empty.sum(), 0.0);
    }

    #[test]
    fn legality_detects_overlap_symmetrically() {
        let mut fp = Floorplan::new((100.0, 100.0));
        fp.blocks.push(block("a", Die::Bottom, (0.0, 0.0), (50.0, 50.0), 1.0));
        fp.blocks.push(block("b", Die::Bottom, (40.0, 40.0), (50.0, 50.0), 1.0));
        fp.blocks.push(block("c", Die::Top, (40.0, 40.0), (50.0, 50.0), 1.0));
        assert!(fp.blocks_overlap(0, 1) && fp.blocks_overlap(1, 0));
        assert!(!fp.blocks_overlap(0, 2) && !fp.blocks_overlap(2, 0));
        assert_eq!(fp.legality().overlaps, vec![(0, 1)]);
        fp.blocks[1].pos = (50.0, 0.0);
        assert!(fp.is_legal());
        fp.blocks[1].pos = (60.0, 0.0);
        assert!(!fp.is_legal());
    }

    #[test]
    fn soft_dims_preserve_area() {
        for &ar in &[0.33, 0.5, 1.0, 2.0, 3.0] {
            let (w, h) = BlockModule::soft_dims(40_000.0, ar);
            assert!((w * h - 40_000.0).abs() / 40_000.0 < 1e-3);
        }
    }
}
