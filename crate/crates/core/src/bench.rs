//! GSRC benchmark bundles: `.blocks`, `.nets`, optional `.pl` and a
//! per-module power file.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockKind, BlockModule, Die, Floorplan, Net, PinRef, Terminal, VoltageLevel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Soft { area: f64, min_aspect: f64, max_aspect: f64 },
    Hard { w: f64, h: f64 },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match *self {
            Shape::Soft { area, .. } => area,
            Shape::Hard { w, h } => w * h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: String,
    pub shape: Shape,
    /// Nominal power at 1.0 V, W.
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    pub id: String,
    /// From the `.pl` file, if one was given.
    pub pos: Option<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerSource {
    File,
    Synthesized,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkBundle {
    pub blocks: Vec<BlockSpec>,
    pub terminals: Vec<TerminalSpec>,
    pub nets: Vec<Net>,
    pub scale_factor: f64,
    pub power_source: PowerSource,
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { iter: text.lines().enumerate() }
    }
}

impl<'a> Iterator for Lines<'a> {
    /// 1-based line number and trimmed content.
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        for (k, raw) in self.iter.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with("UCSC") || line.starts_with("UCLA") {
                continue;
            }
            return Some((k + 1, line));
        }
        None
    }
}

/// `Key : value` header line.
fn header(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once(':')?;
    let k = k.trim();
    if k.starts_with("Num") || k == "NetDegree" {
        Some((k, v.trim()))
    } else {
        None
    }
}

fn number(line: usize, tok: &str, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("invalid {what} `{tok}`")));
    }
    Ok(v)
}

fn count(line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.split_whitespace()
        .next()
        .unwrap_or("")
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

struct Declared {
    value: usize,
    line: usize,
}

fn check_declared(decl: &Option<Declared>, found: usize, what: &str) -> Result<()> {
    match decl {
        Some(d) if d.value != found => {
            Err(Error::parse(d.line, format!("declared {} {what}, found {found}", d.value)))
        }
        _ => Ok(()),
    }
}

fn parse_blocks(text: &str) -> Result<(Vec<BlockSpec>, Vec<TerminalSpec>)> {
    let mut blocks = Vec::new();
    let mut terminals = Vec::new();
    let (mut n_soft, mut n_hard, mut n_term) = (None, None, None);
    let mut names: HashMap<String, usize> = HashMap::new();
    let (mut soft, mut hard) = (0usize, 0usize);
    let mut last_line = 0;
    for (ln, line) in Lines::new(text) {
        last_line = ln;
        if let Some((key, value)) = header(line) {
            let decl = Some(Declared { value: count(ln, value, key)?, line: ln });
            match key {
                "NumSoftRectangularBlocks" => n_soft = decl,
                "NumHardRectilinearBlocks" => n_hard = decl,
                "NumTerminals" => n_term = decl,
                _ => return Err(Error::parse(ln, format!("unexpected header `{key}`"))),
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(Error::parse(ln, "expected `<name> <type> ...`"));
        }
        let name = toks[0].to_string();
        if names.insert(name.clone(), ln).is_some() {
            return Err(Error::parse(ln, format!("duplicate name `{name}`")));
        }
        match toks[1] {
            "softrectangular" => {
                if toks.len() != 5 {
                    return Err(Error::parse(ln, "soft block needs `<area> <minAR> <maxAR>`"));
                }
                let area = number(ln, toks[2], "area")?;
                let min_aspect = number(ln, toks[3], "aspect ratio")?;
                let max_aspect = number(ln, toks[4], "aspect ratio")?;
                if area <= 0.0 || min_aspect <= 0.0 || max_aspect < min_aspect {
                    return Err(Error::parse(ln, "soft block needs area > 0 and 0 < minAR <= maxAR"));
                }
                blocks.push(BlockSpec { id: name, shape: Shape::Soft { area, min_aspect, max_aspect }, power: 0.0 });
                soft += 1;
            }
            "hardrectilinear" => {
                let rest = toks[2..].join(" ");
                let mut it = rest.splitn(2, char::is_whitespace);
                let k = count(ln, it.next().unwrap_or(""), "vertex count")?;
                let coords: Vec<&str> = it
                    .next()
                    .unwrap_or("")
                    .split(|c: char| c == '(' || c == ')' || c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .collect();
                if k < 4 || coords.len() != 2 * k {
                    return Err(Error::parse(ln, format!("hard block needs {k} >= 4 vertices `(x, y)`")));
                }
                let mut xs = Vec::with_capacity(k);
                let mut ys = Vec::with_capacity(k);
                for pair in coords.chunks(2) {
                    xs.push(number(ln, pair[0], "coordinate")?);
                    ys.push(number(ln, pair[1], "coordinate")?);
                }
                let w = xs.iter().copied().fold(f64::MIN, f64::max) - xs.iter().copied().fold(f64::MAX, f64::min);
                let h = ys.iter().copied().fold(f64::MIN, f64::max) - ys.iter().copied().fold(f64::MAX, f64::min);
                if w <= 0.0 || h <= 0.0 {
                    return Err(Error::parse(ln, "hard block has an empty bounding box"));
                }
                blocks.push(BlockSpec { id: name, shape: Shape::Hard { w, h }, power: 0.0 });
                hard += 1;
            }
            "terminal" => {
                if toks.len() != 2 {
                    return Err(Error::parse(ln, "terminal line takes no fields"));
                }
                terminals.push(TerminalSpec { id: name, pos: None });
            }
            other => return Err(Error::parse(ln, format!("unknown block type `{other}`"))),
        }
    }
    if blocks.is_empty() && terminals.is_empty() {
        return Err(Error::parse(last_line.max(1), "no blocks declared"));
    }
    check_declared(&n_soft, soft, "soft blocks")?;
    check_declared(&n_hard, hard, "hard blocks")?;
    check_declared(&n_term, terminals.len(), "terminals")?;
    Ok((blocks, terminals))
}

fn resolver(blocks: &[BlockSpec], terminals: &[TerminalSpec]) -> HashMap<String, PinRef> {
    let mut map = HashMap::new();
    for (i, b) in blocks.iter().enumerate() {
        map.insert(b.id.clone(), PinRef::Block(i));
    }
    for (i, t) in terminals.iter().enumerate() {
        map.insert(t.id.clone(), PinRef::Terminal(i));
    }
    map
}

fn parse_nets(text: &str, pins: &HashMap<String, PinRef>) -> Result<Vec<Net>> {
    let mut nets: Vec<Net> = Vec::new();
    let (mut n_nets, mut n_pins) = (None, None);
    // (line of the NetDegree header, expected degree)
    let mut open: Option<(usize, usize)> = None;
    let mut total_pins = 0usize;
    let close = |open: &Option<(usize, usize)>, nets: &[Net]| -> Result<()> {
        if let Some((ln, k)) = *open {
            let got = nets.last().map_or(0, |n| n.pins.len());
            if got != k {
                return Err(Error::parse(ln, format!("net declares {k} pins, found {got}")));
            }
        }
        Ok(())
    };
    for (ln, line) in Lines::new(text) {
        if let Some((key, value)) = header(line) {
            match key {
                "NumNets" => n_nets = Some(Declared { value: count(ln, value, key)?, line: ln }),
                "NumPins" => n_pins = Some(Declared { value: count(ln, value, key)?, line: ln }),
                "NetDegree" => {
                    close(&open, &nets)?;
                    let mut toks = value.split_whitespace();
                    let k = count(ln, toks.next().unwrap_or(""), "net degree")?;
                    if k < 2 {
                        return Err(Error::parse(ln, format!("net degree {k} < 2")));
                    }
                    let id = toks.next().map_or_else(|| format!("n{}", nets.len()), str::to_string);
                    nets.push(Net { id, pins: Vec::with_capacity(k) });
                    open = Some((ln, k));
                }
                _ => return Err(Error::parse(ln, format!("unexpected header `{key}`"))),
            }
            continue;
        }
        let Some((_, k)) = open else {
            return Err(Error::parse(ln, "pin line outside a net"));
        };
        let net = nets.last_mut().expect("open net");
        if net.pins.len() == k {
            return Err(Error::parse(ln, format!("net declares {k} pins, found more")));
        }
        let name = line.split_whitespace().next().unwrap_or("");
        let pin = pins.get(name).ok_or_else(|| Error::Reference { line: ln, name: name.to_string() })?;
        net.pins.push(*pin);
        total_pins += 1;
    }
    close(&open, &nets)?;
    if n_nets.is_none() {
        return Err(Error::parse(1, "missing `NumNets` header"));
    }
    check_declared(&n_nets, nets.len(), "nets")?;
    check_declared(&n_pins, total_pins, "pins")?;
    Ok(nets)
}

fn parse_pl(text: &str, pins: &HashMap<String, PinRef>, terminals: &mut [TerminalSpec]) -> Result<()> {
    for (ln, line) in Lines::new(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(ln, "expected `<name> <x> <y>`"));
        }
        let x = number(ln, toks[1], "x")?;
        let y = number(ln, toks[2], "y")?;
        match pins.get(toks[0]) {
            Some(PinRef::Terminal(i)) => terminals[*i].pos = Some((x, y)),
            Some(PinRef::Block(_)) => {}
            None => return Err(Error::Reference { line: ln, name: toks[0].to_string() }),
        }
    }
    Ok(())
}

fn parse_power(text: &str, blocks: &mut [BlockSpec]) -> Result<()> {
    let index: HashMap<&str, usize> = blocks.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    let mut seen = vec![false; blocks.len()];
    let mut values = vec![0.0; blocks.len()];
    for (ln, line) in Lines::new(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(ln, "expected `<name> <watts>`"));
        }
        let i = *index.get(toks[0]).ok_or_else(|| Error::Reference { line: ln, name: toks[0].to_string() })?;
        let w = number(ln, toks[1], "power")?;
        if w < 0.0 {
            return Err(Error::parse(ln, "negative power"));
        }
        values[i] = w;
        seen[i] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::domain(format!("power file has no entry for `{}`", blocks[k].id)));
    }
    for (b, w) in blocks.iter_mut().zip(values) {
        b.power = w;
    }
    Ok(())
}

/// Parse a benchmark. Without a power file the bundle's powers are zero and
/// its source is [`PowerSource::Missing`]; see [`synthesize_power`].
pub fn parse_gsrc(
    blocks_text: &str,
    nets_text: &str,
    pl_text: Option<&str>,
    power_text: Option<&str>,
) -> Result<BenchmarkBundle> {
    let (mut blocks, mut terminals) = parse_blocks(blocks_text)?;
    let pins = resolver(&blocks, &terminals);
    let nets = parse_nets(nets_text, &pins)?;
    if let Some(pl) = pl_text {
        parse_pl(pl, &pins, &mut terminals)?;
    }
    let power_source = match power_text {
        Some(text) => {
            parse_power(text, &mut blocks)?;
            PowerSource::File
        }
        None => PowerSource::Missing,
    };
    Ok(BenchmarkBundle { blocks, terminals, nets, scale_factor: 1.0, power_source })
}

/// Draw each module's power once from a log-uniform distribution over
/// `[0.2, 5]` times the mean, then rescale so the powers sum to `total`.
pub fn synthesize_power(bundle: &mut BenchmarkBundle, total: f64, seed: u64) -> Result<()> {
    if !(total > 0.0) {
        return Err(Error::domain(format!("total power must be positive, got {total}")));
    }
    let n = bundle.blocks.len();
    if n == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = total / n as f64;
    let (lo, hi) = (0.2f64.ln(), 5.0f64.ln());
    let raw: Vec<f64> = (0..n).map(|_| mean * rng.random_range(lo..hi).exp()).collect();
    let sum: f64 = raw.iter().sum();
    for (b, p) in bundle.blocks.iter_mut().zip(raw) {
        b.power = p * total / sum;
    }
    bundle.power_source = PowerSource::Synthesized;
    Ok(())
}

/// Multiply every module area by `factor`. Hard blocks and terminal
/// positions scale by `sqrt(factor)`; powers are unchanged.
pub fn apply_scale(bundle: &BenchmarkBundle, factor: f64) -> Result<BenchmarkBundle> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::domain(format!("scale factor must be >= 1, got {factor}")));
    }
    let lin = factor.sqrt();
    let mut out = bundle.clone();
    for b in &mut out.blocks {
        b.shape = match b.shape {
            Shape::Soft { area, min_aspect, max_aspect } => Shape::Soft { area: area * factor, min_aspect, max_aspect },
            Shape::Hard { w, h } => Shape::Hard { w: w * lin, h: h * lin },
        };
    }
    for t in &mut out.terminals {
        t.pos = t.pos.map(|(x, y)| (x * lin, y * lin));
    }
    out.scale_factor *= factor;
    Ok(out)
}

impl BenchmarkBundle {
    pub fn total_area(&self) -> f64 {
        self.blocks.iter().map(|b| b.shape.area()).sum()
    }

    pub fn total_power(&self) -> f64 {
        self.blocks.iter().map(|b| b.power).sum()
    }

    pub fn pin_count(&self) -> usize {
        self.nets.iter().map(|n| n.pins.len()).sum()
    }

    /// Unplaced floorplan: every block at the origin of die 1, soft blocks
    /// square (clamped to their aspect range), all at 1.0 V. Terminals
    /// without a `.pl` position are spread evenly along the outline
    /// boundary; given positions are clamped into the outline.
    pub fn to_floorplan(&self, outline: (f64, f64)) -> Floorplan {
        let mut fp = Floorplan::new(outline);
        for b in &self.blocks {
            let (kind, area, limits, dims) = match b.shape {
                Shape::Soft { area, min_aspect, max_aspect } => {
                    let a = 1.0f64.clamp(min_aspect, max_aspect);
                    (BlockKind::Soft, area, (min_aspect, max_aspect), BlockModule::soft_dims(area, a))
                }
                Shape::Hard { w, h } => (BlockKind::Hard, w * h, (w / h, w / h), (w, h)),
            };
            fp.blocks.push(BlockModule {
                id: b.id.clone(),
                kind,
                area,
                aspect_limits: limits,
                pos: (0.0, 0.0),
                dims,
                die: Die::Bottom,
                nominal_power: b.power,
                voltage: VoltageLevel::Nominal,
            });
        }
        let n = self.terminals.len().max(1) as f64;
        let perimeter = 2.0 * (outline.0 + outline.1);
        for (k, t) in self.terminals.iter().enumerate() {
            let pos = match t.pos {
                Some((x, y)) => (x.clamp(0.0, outline.0), y.clamp(0.0, outline.1)),
                None => perimeter_point(outline, perimeter * (k as f64 + 0.5) / n),
            };
            fp.terminals.push(Terminal { id: t.id.clone(), pos });
        }
        fp.nets = self.nets.clone();
        fp
    }

    fn pin_name(&self, pin: PinRef) -> &str {
        match pin {
            PinRef::Block(i) => &self.blocks[i].id,
            PinRef::Terminal(i) => &self.terminals[i].id,
        }
    }

    pub fn write_blocks(&self) -> String {
        let soft = self.blocks.iter().filter(|b| matches!(b.shape, Shape::Soft { .. })).count();
        let mut s = String::from("UCSC blocks 1.0\n\n");
        let _ = writeln!(s, "NumSoftRectangularBlocks : {soft}");
        let _ = writeln!(s, "NumHardRectilinearBlocks : {}", self.blocks.len() - soft);
        let _ = writeln!(s, "NumTerminals : {}\n", self.terminals.len());
        for b in &self.blocks {
            match b.shape {
                Shape::Soft { area, min_aspect, max_aspect } => {
                    let _ = writeln!(s, "{} softrectangular {area} {min_aspect} {max_aspect}", b.id);
                }
                Shape::Hard { w, h } => {
                    let _ = writeln!(s, "{} hardrectilinear 4 (0, 0) (0, {h}) ({w}, {h}) ({w}, 0)", b.id);
                }
            }
        }
        s.push('\n');
        for t in &self.terminals {
            let _ = writeln!(s, "{} terminal", t.id);
        }
        s
    }

    pub fn write_nets(&self) -> String {
        let mut s = String::from("UCLA nets 1.0\n\n");
        let _ = writeln!(s, "NumNets : {}", self.nets.len());
        let _ = writeln!(s, "NumPins : {}\n", self.pin_count());
        for n in &self.nets {
            let _ = writeln!(s, "NetDegree : {} {}", n.pins.len(), n.id);
            for p in &n.pins {
                let _ = writeln!(s, "{} B", self.pin_name(*p));
            }
        }
        s
    }

    /// Terminal positions; `None` when no terminal has one.
    pub fn write_pl(&self) -> Option<String> {
        if self.terminals.iter().all(|t| t.pos.is_none()) {
            return None;
        }
        let mut s = String::from("UCLA pl 1.0\n\n");
        for t in &self.terminals {
            if let Some((x, y)) = t.pos {
                let _ = writeln!(s, "{} {x} {y}", t.id);
            }
        }
        Some(s)
    }

    pub fn write_power(&self) -> String {
        let mut s = String::from("# module power at 1.0 V, W\n");
        for b in &self.blocks {
            let _ = writeln!(s, "{} {}", b.id, b.power);
        }
        s
    }
}

fn perimeter_point(outline: (f64, f64), mut d: f64) -> (f64, f64) {
    let (w, h) = outline;
    if d < w {
        return (d, 0.0);
    }
    d -= w;
    if d < h {
        return (w, d);
    }
    d -= h;
    if d < w {
        return (w - d, h);
    }
    d -= w;
    (0.0, (h - d).max(0.0))
}
