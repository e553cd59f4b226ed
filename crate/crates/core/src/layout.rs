//! Per-die sequence-pair encoding, packing, and signal-TSV insertion.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BlockKind, BlockModule, Die, Floorplan, PinRef, TsvIsland, TsvKind};

/// Annealing state: die per block, a sequence pair per die, soft-block
/// aspect ratios and the per-block isolate flag used by volume assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEncoding {
    pub die: Vec<Die>,
    /// `[die 1, die 2]`, each `(positive, negative)` sequence of block indices.
    pub seq: [(Vec<usize>, Vec<usize>); 2],
    /// `w / h`; ignored for hard blocks.
    pub aspect: Vec<f64>,
    pub isolated: Vec<bool>,
}

impl LayoutEncoding {
    /// Dies balanced by area (largest first onto the lighter die), random
    /// sequences, soft blocks square where allowed.
    pub fn initial<R: Rng>(blocks: &[BlockModule], rng: &mut R) -> Self {
        let n = blocks.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| blocks[b].area.total_cmp(&blocks[a].area).then(a.cmp(&b)));
        let mut die = vec![Die::Bottom; n];
        let mut load = [0.0f64; 2];
        for i in order {
            let d = if load[0] <= load[1] { Die::Bottom } else { Die::Top };
            die[i] = d;
            load[d.slot()] += blocks[i].area;
        }
        let mut seq: [(Vec<usize>, Vec<usize>); 2] = Default::default();
        for d in [Die::Bottom, Die::Top] {
            let mut members: Vec<usize> = (0..n).filter(|&i| die[i] == d).collect();
            members.shuffle(rng);
            let pos = members.clone();
            members.shuffle(rng);
            seq[d.slot()] = (pos, members);
        }
        let aspect = blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Soft => 1.0f64.clamp(b.aspect_limits.0, b.aspect_limits.1),
                BlockKind::Hard => b.aspect(),
            })
            .collect();
        Self { die, seq, aspect, isolated: vec![false; n] }
    }

    /// Every block appears exactly once, in both sequences of its own die.
    pub fn is_valid(&self) -> bool {
        let n = self.die.len();
        if self.aspect.len() != n || self.isolated.len() != n {
            return false;
        }
        let mut seen = vec![[0u8; 2]; n];
        for d in [Die::Bottom, Die::Top] {
            let (p, q) = &self.seq[d.slot()];
            if p.len() != q.len() {
                return false;
            }
            for (k, list) in [p, q].into_iter().enumerate() {
                for &i in list {
                    if i >= n || self.die[i] != d {
                        return false;
                    }
                    seen[i][k] += 1;
                }
            }
        }
        seen.iter().all(|s| *s == [1, 1])
    }
}

/// Lower-left positions from a sequence pair: `a` is left of `b` when it
/// precedes `b` in both sequences, below `b` when it follows `b` in the
/// positive and precedes it in the negative sequence.
pub fn pack_sequence_pair(pos: &[usize], neg: &[usize], dims: &[(f64, f64)]) -> Vec<(usize, (f64, f64))> {
    let n = dims.len();
    let mut rank = vec![usize::MAX; n];
    for (k, &b) in pos.iter().enumerate() {
        rank[b] = k;
    }
    let mut placed: Vec<(usize, (f64, f64))> = Vec::with_capacity(neg.len());
    for &b in neg {
        let (mut x, mut y) = (0.0f64, 0.0f64);
        for &(a, (xa, ya)) in &placed {
            if rank[a] < rank[b] {
                x = x.max(xa + dims[a].0);
            } else {
                y = y.max(ya + dims[a].1);
            }
        }
        placed.push((b, (x, y)));
    }
    placed
}

/// Place the blocks of `template` per the encoding. Voltages are reset to
/// 1.0 V, volumes cleared, and one signal TSV is inserted per cross-die net.
pub fn decode(enc: &LayoutEncoding, template: &Floorplan) -> Floorplan {
    let mut fp = template.clone();
    fp.tsvs.retain(|t| t.kind == TsvKind::Dummy);
    fp.volumes.clear();
    for (i, b) in fp.blocks.iter_mut().enumerate() {
        b.die = enc.die[i];
        b.voltage = crate::model::VoltageLevel::Nominal;
        if b.kind == BlockKind::Soft {
            let a = enc.aspect[i].clamp(b.aspect_limits.0, b.aspect_limits.1);
            b.dims = BlockModule::soft_dims(b.area, a);
        }
    }
    let dims: Vec<(f64, f64)> = fp.blocks.iter().map(|b| b.dims).collect();
    for d in [Die::Bottom, Die::Top] {
        let (p, q) = &enc.seq[d.slot()];
        for (b, xy) in pack_sequence_pair(p, q, &dims) {
            fp.blocks[b].pos = xy;
        }
    }
    insert_signal_tsvs(&mut fp);
    fp
}

/// Occupancy of die-1 sites on the TSV raster (one TSV footprint per cell).
pub struct TsvRaster {
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub taken: Vec<bool>,
}

impl TsvRaster {
    /// Cells overlapping a die-1 block or an existing island are taken.
    pub fn new(fp: &Floorplan) -> Self {
        let cell = fp.tsv_geometry.side();
        let nx = (fp.outline.0 / cell).floor().max(0.0) as usize;
        let ny = (fp.outline.1 / cell).floor().max(0.0) as usize;
        let mut r = Self { cell, nx, ny, taken: vec![false; nx * ny] };
        for (_, b) in fp.blocks_on(Die::Bottom) {
            r.mark(b.rect());
        }
        for t in &fp.tsvs {
            r.mark(t.rect(&fp.tsv_geometry));
        }
        r
    }

    fn mark(&mut self, rect: crate::model::Rect) {
        if rect.w <= 0.0 || rect.h <= 0.0 {
            return;
        }
        let span = |lo: f64, hi: f64, n: usize| {
            let a = ((lo / self.cell).floor().max(0.0) as usize).min(n);
            let b = ((hi / self.cell).ceil().max(0.0) as usize).min(n);
            a..b
        };
        for y in span(rect.y, rect.y1(), self.ny) {
            for x in span(rect.x, rect.x1(), self.nx) {
                self.taken[y * self.nx + x] = true;
            }
        }
    }

    pub fn center(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) * self.cell, (y as f64 + 0.5) * self.cell)
    }

    /// Free cell nearest to `target`, searched in square rings of growing
    /// radius; within a ring the closest cell wins, ties by row-major order.
    pub fn nearest_free(&self, target: (f64, f64)) -> Option<(usize, usize)> {
        if self.nx == 0 || self.ny == 0 {
            return None;
        }
        let cx = ((target.0 / self.cell).floor().max(0.0) as usize).min(self.nx - 1) as isize;
        let cy = ((target.1 / self.cell).floor().max(0.0) as usize).min(self.ny - 1) as isize;
        let max_r = self.nx.max(self.ny) as isize;
        for r in 0..=max_r {
            let mut best: Option<(f64, (usize, usize))> = None;
            for y in (cy - r)..=(cy + r) {
                if y < 0 || y >= self.ny as isize {
                    continue;
                }
                let on_edge_row = y == cy - r || y == cy + r;
                let mut x = cx - r;
                while x <= cx + r {
                    if x >= 0 && x < self.nx as isize && !self.taken[y as usize * self.nx + x as usize] {
                        let c = self.center(x as usize, y as usize);
                        let d = (c.0 - target.0).powi(2) + (c.1 - target.1).powi(2);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, (x as usize, y as usize)));
                        }
                    }
                    x += if on_edge_row || r == 0 { 1 } else { 2 * r };
                }
            }
            if let Some((_, cell)) = best {
                return Some(cell);
            }
        }
        None
    }

    pub fn take(&mut self, x: usize, y: usize) {
        self.taken[y * self.nx + x] = true;
    }
}

/// One single-TSV island per net whose block pins span both dies, at the free
/// die-1 site nearest the centre of the net's block-pin bounding box. Nets
/// that find no site are skipped; the count of skipped nets is returned.
pub fn insert_signal_tsvs(fp: &mut Floorplan) -> usize {
    let mut raster = TsvRaster::new(fp);
    let mut skipped = 0;
    let mut new = Vec::new();
    for net in &fp.nets {
        let mut dies = [false; 2];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &p in &net.pins {
            if let PinRef::Block(i) = p {
                dies[fp.blocks[i].die.slot()] = true;
                let (x, y) = fp.blocks[i].center();
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        if !(dies[0] && dies[1]) {
            continue;
        }
        match raster.nearest_free(((x0 + x1) / 2.0, (y0 + y1) / 2.0)) {
            Some((x, y)) => {
                raster.take(x, y);
                new.push(TsvIsland { center: raster.center(x, y), count: 1, kind: TsvKind::Signal });
            }
            None => skipped += 1,
        }
    }
    fp.tsvs.extend(new);
    skipped
}
