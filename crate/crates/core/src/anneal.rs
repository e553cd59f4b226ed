//! Multi-objective simulated annealing over per-die sequence pairs.
//!
//! Each candidate is decoded, gets signal TSVs and voltage volumes, and is
//! scored on packing, wirelength, delay, in-loop peak temperature, power and
//! volume count; the tsc setup adds correlation and spatial entropy. Terms are
//! normalized by their running averages over accepted solutions.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkBundle;
use crate::config::{CostWeights, EngineConfig};
use crate::error::Result;
use crate::grid::Grid2D;
use crate::harden::{harden, HardeningTrace};
use crate::layout::{decode, LayoutEncoding};
use crate::leakage::{mean_defined, pearson, spatial_entropy_with};
use crate::model::{rasterize_power, rasterize_tsv_density, BlockKind, Die, Floorplan, Mode};
use crate::thermal::{solve_steady, BlurEstimator};
use crate::timing::{baseline_slacks, compute_slacks};
use crate::volumes::assign_volumes;

pub const TERM_COUNT: usize = 9;

/// Raw cost terms, all non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    /// Relative overshoot of the outline, summed over both dies and axes.
    pub outline: f64,
    /// Whitespace share inside each die's bounding box, averaged over dies.
    pub packing: f64,
    /// Half-perimeter wirelength, m.
    pub wirelength: f64,
    /// Critical delay at the assigned voltages, ns.
    pub delay: f64,
    /// Estimated peak rise above ambient, K.
    pub peak_temp: f64,
    /// W
    pub power: f64,
    pub volumes: f64,
    /// Mean of the defined `|r_d|`.
    pub correlation: f64,
    /// Mean spatial entropy of both dies, bits.
    pub entropy: f64,
}

impl Terms {
    pub fn to_array(&self) -> [f64; TERM_COUNT] {
        [
            self.outline,
            self.packing,
            self.wirelength,
            self.delay,
            self.peak_temp,
            self.power,
            self.volumes,
            self.correlation,
            self.entropy,
        ]
    }
}

/// Weights in [`Terms::to_array`] order for one setup; pa ignores leakage.
pub fn mode_weights(w: &CostWeights, mode: Mode) -> [f64; TERM_COUNT] {
    let leak = match mode {
        Mode::Pa => 0.0,
        Mode::Tsc => 1.0,
    };
    [
        w.outline,
        w.packing,
        w.wirelength,
        w.delay,
        w.peak_temp,
        w.power,
        w.volumes,
        leak * w.correlation,
        leak * w.entropy,
    ]
}

/// Classical criteria only, shared by both setups.
pub fn classical_weights(w: &CostWeights) -> [f64; TERM_COUNT] {
    mode_weights(w, Mode::Pa)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terms: Terms,
    /// In-loop estimate of `r_1`, `r_2`.
    pub r: [Option<f64>; 2],
    pub s: [f64; 2],
    /// Weighted sum of the normalized terms.
    pub total: f64,
    /// Fits the outline and has no overlaps.
    pub legal: bool,
}

/// Running averages over accepted solutions. The outline term is kept
/// unnormalized (it is already relative and zero for legal layouts).
#[derive(Clone, Debug, Default)]
pub struct Normalizer {
    sum: [f64; TERM_COUNT],
    count: usize,
}

impl Normalizer {
    pub fn observe(&mut self, t: &Terms) {
        for (s, v) in self.sum.iter_mut().zip(t.to_array()) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn scale(&self, k: usize) -> f64 {
        if k == 0 || self.count == 0 {
            return 1.0;
        }
        let avg = self.sum[k] / self.count as f64;
        if avg > 1e-12 {
            avg
        } else {
            1.0
        }
    }

    pub fn total(&self, t: &Terms, weights: &[f64; TERM_COUNT]) -> f64 {
        t.to_array().iter().enumerate().map(|(k, v)| weights[k] * v / self.scale(k)).sum()
    }
}

/// Scores floorplans with a calibrated in-loop estimator.
pub struct Evaluator {
    pub cfg: EngineConfig,
    est: BlurEstimator<f64>,
}

impl Evaluator {
    pub fn new(cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let mut est = BlurEstimator::new(cfg.stack.clone());
        let probe = Grid2D::<f64>::over_outline(cfg.outline(), cfg.loop_grid())?;
        est.calibrate(cfg.loop_grid(), probe.pitch())?;
        Ok(Self { cfg: cfg.clone(), est })
    }

    /// Decode, then assign voltage volumes for the setup.
    pub fn prepare(&self, enc: &LayoutEncoding, template: &Floorplan, mode: Mode) -> Result<Floorplan> {
        let mut fp = decode(enc, template);
        let baseline = baseline_slacks(&fp, &self.cfg.tech)?;
        assign_volumes(&mut fp, &baseline, &self.cfg.tech, mode, &self.cfg.volumes, &enc.isolated);
        Ok(fp)
    }

    /// Raw terms of a prepared floorplan; `total` uses unit normalization.
    pub fn evaluate(&self, fp: &Floorplan, mode: Mode) -> Result<CostBreakdown> {
        let terms_r_s = self.terms(fp)?;
        let (terms, r, s) = terms_r_s;
        let total = Normalizer::default().total(&terms, &mode_weights(&self.cfg.weights, mode));
        Ok(CostBreakdown { terms, r, s, total, legal: fp.is_legal() })
    }

    fn terms(&self, fp: &Floorplan) -> Result<(Terms, [Option<f64>; 2], [f64; 2])> {
        let (w, h) = fp.outline;
        let mut outline = 0.0;
        let mut packing = 0.0;
        let mut dies = 0;
        for die in [Die::Bottom, Die::Top] {
            let (mut xm, mut ym, mut area) = (0.0f64, 0.0f64, 0.0);
            let mut any = false;
            for (_, b) in fp.blocks_on(die) {
                xm = xm.max(b.pos.0 + b.dims.0);
                ym = ym.max(b.pos.1 + b.dims.1);
                area += b.dims.0 * b.dims.1;
                any = true;
            }
            if any {
                outline += (xm / w - 1.0).max(0.0) + (ym / h - 1.0).max(0.0);
                packing += (1.0 - area / (xm * ym)).max(0.0);
                dies += 1;
            }
        }
        if dies > 0 {
            packing /= dies as f64;
        }
        let wirelength = hpwl(fp) * 1e-6;
        let delay = compute_slacks(fp, &self.cfg.tech)?.critical_delay;

        let dims = self.cfg.loop_grid();
        let p1 = rasterize_power(fp, Die::Bottom, dims)?;
        let p2 = rasterize_power(fp, Die::Top, dims)?;
        let density = rasterize_tsv_density(fp, dims)?;
        let thermal = self.est.estimate(&p1, &p2, &density)?;
        let r = [pearson(&p1, &thermal.temps[0])?.value, pearson(&p2, &thermal.temps[1])?.value];
        let s = [spatial_entropy_with(&p1, &self.cfg.entropy).value, spatial_entropy_with(&p2, &self.cfg.entropy).value];
        let abs_r: Vec<Option<f64>> = r.iter().map(|v| v.map(f64::abs)).collect();
        let terms = Terms {
            outline,
            packing,
            wirelength,
            delay,
            peak_temp: (thermal.peak - self.cfg.stack.ambient).max(0.0),
            power: fp.total_power(),
            volumes: fp.volumes.len() as f64,
            correlation: mean_defined(&abs_r).unwrap_or(0.0),
            entropy: (s[0] + s[1]) / 2.0,
        };
        Ok((terms, r, s))
    }
}

/// Standalone evaluation of a prepared floorplan (calibrates an estimator).
pub fn evaluate(fp: &Floorplan, mode: Mode, cfg: &EngineConfig) -> Result<CostBreakdown> {
    Evaluator::new(cfg)?.evaluate(fp, mode)
}

/// Half-perimeter wirelength over block centres and terminal positions, µm.
pub fn hpwl(fp: &Floorplan) -> f64 {
    fp.nets
        .iter()
        .map(|net| {
            let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in &net.pins {
                let (x, y) = fp.pin_position(p);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            (x1 - x0) + (y1 - y0)
        })
        .sum()
}

/// Table-style metrics of one run, as written to the report JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub mode: Mode,
    pub seed: u64,
    pub legal: bool,
    /// Verified with the detailed solver on the report grid.
    pub correlation_r1: Option<f64>,
    pub correlation_r2: Option<f64>,
    pub entropy_s1: f64,
    pub entropy_s2: f64,
    pub power_w: f64,
    pub critical_delay_ns: f64,
    pub wirelength_m: f64,
    pub peak_temp_k: f64,
    pub signal_tsvs: usize,
    pub dummy_tsvs: usize,
    pub voltage_volumes: usize,
    pub forced_volumes: usize,
    pub outline_violation: f64,
    /// In-loop estimates for the final layout.
    pub estimate_r1: Option<f64>,
    pub estimate_r2: Option<f64>,
    /// Estimate and verification agree in sign and within 0.15 on both dies.
    pub estimate_agrees: bool,
    pub hardening_steps: usize,
    pub hardening_r_start: Option<f64>,
    pub hardening_r_end: Option<f64>,
    pub evaluations: usize,
    pub temperature_steps: usize,
    pub warnings: Vec<String>,
}

/// Result of one annealing run.
#[derive(Clone, Debug)]
pub struct AnnealOutcome {
    pub floorplan: Floorplan,
    pub report: LeakageReport,
    pub final_cost: CostBreakdown,
    pub hardening: Option<HardeningTrace>,
    /// Report-grid maps of the final layout, `[die 1, die 2]`.
    pub power: [Grid2D<f64>; 2],
    pub temp: [Grid2D<f64>; 2],
    pub tsv_density: Grid2D<f64>,
    /// Wall time, s.
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
struct Entry {
    enc: LayoutEncoding,
    cost: CostBreakdown,
}

/// Both archives: lowest total cost, and lowest (r̄, S̄) among legal layouts.
/// Entries are only appended when they improve on the last one.
#[derive(Clone, Debug, Default)]
struct Archives {
    by_cost: Vec<(Entry, f64)>,
    by_leakage: Vec<Entry>,
}

impl Archives {
    fn offer(&mut self, e: &Entry, total: f64) {
        let better_cost = match self.by_cost.last() {
            None => true,
            Some((last, t)) => (e.cost.legal && !last.cost.legal) || (e.cost.legal == last.cost.legal && total < *t),
        };
        if better_cost {
            self.by_cost.push((e.clone(), total));
        }
        if e.cost.legal {
            let key = |c: &CostBreakdown| (c.terms.correlation, c.terms.entropy);
            let better = self.by_leakage.last().is_none_or(|last| {
                let (a, b) = (key(&e.cost), key(&last.cost));
                a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
            });
            if better {
                self.by_leakage.push(e.clone());
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Move {
    SwapBoth,
    SwapOne,
    Die,
    Reshape,
    Isolate,
}

const MOVES: [(Move, f64); 5] =
    [(Move::SwapBoth, 0.3), (Move::SwapOne, 0.25), (Move::Die, 0.15), (Move::Reshape, 0.2), (Move::Isolate, 0.1)];

fn perturb<R: Rng>(enc: &LayoutEncoding, fp: &Floorplan, bias: f64, rng: &mut R) -> LayoutEncoding {
    let mut e = enc.clone();
    let n = e.die.len();
    let mv = MOVES.choose_weighted(rng, |m| m.1).map(|m| m.0).unwrap_or(Move::SwapBoth);
    match mv {
        Move::SwapBoth | Move::SwapOne => {
            let slot = if e.seq[0].0.len() >= 2 && (e.seq[1].0.len() < 2 || rng.random_bool(0.5)) { 0 } else { 1 };
            let len = e.seq[slot].0.len();
            if len < 2 {
                return e;
            }
            let (a, b) = (rng.random_range(0..len), rng.random_range(0..len));
            let (x, y) = (e.seq[slot].0[a], e.seq[slot].0[b]);
            match mv {
                Move::SwapBoth => {
                    swap_values(&mut e.seq[slot].0, x, y);
                    swap_values(&mut e.seq[slot].1, x, y);
                }
                _ => {
                    if rng.random_bool(0.5) {
                        swap_values(&mut e.seq[slot].0, x, y);
                    } else {
                        swap_values(&mut e.seq[slot].1, x, y);
                    }
                }
            }
        }
        Move::Die => {
            let pick = if rng.random_bool(bias) {
                // high power goes up, low power comes down
                let cands: Vec<usize> = (0..3).map(|_| rng.random_range(0..n)).collect();
                let gain = |i: usize| {
                    let p = fp.blocks[i].nominal_power / fp.blocks[i].area.max(1e-9);
                    if e.die[i] == Die::Bottom {
                        p
                    } else {
                        -p
                    }
                };
                *cands.iter().max_by(|a, b| gain(**a).total_cmp(&gain(**b))).expect("three candidates")
            } else {
                rng.random_range(0..n)
            };
            let from = e.die[pick].slot();
            if e.seq[from].0.len() <= 1 {
                return e;
            }
            let to = 1 - from;
            e.seq[from].0.retain(|&v| v != pick);
            e.seq[from].1.retain(|&v| v != pick);
            let (i, j) = (rng.random_range(0..=e.seq[to].0.len()), rng.random_range(0..=e.seq[to].1.len()));
            e.seq[to].0.insert(i, pick);
            e.seq[to].1.insert(j, pick);
            e.die[pick] = if to == 0 { Die::Bottom } else { Die::Top };
        }
        Move::Reshape => {
            let soft: Vec<usize> = (0..n).filter(|&i| fp.blocks[i].kind == BlockKind::Soft).collect();
            if let Some(&i) = soft.choose(rng) {
                let (lo, hi) = fp.blocks[i].aspect_limits;
                e.aspect[i] = if hi > lo { rng.random_range(lo.ln()..=hi.ln()).exp() } else { lo };
            }
        }
        Move::Isolate => {
            let i = rng.random_range(0..n);
            e.isolated[i] = !e.isolated[i];
        }
    }
    e
}

fn swap_values(seq: &mut [usize], x: usize, y: usize) {
    let (a, b) = (seq.iter().position(|&v| v == x), seq.iter().position(|&v| v == y));
    if let (Some(a), Some(b)) = (a, b) {
        seq.swap(a, b);
    }
}

/// Moves per temperature and cooling factor. When the evaluation cap leaves
/// fewer than `COMPRESSED_STEPS` full-length steps, steps are shortened to
/// fit that many and cooling is tightened so the temperature still falls by
/// three decades over the budget.
pub fn schedule(a: &crate::config::AnnealParams, blocks: usize) -> (usize, f64) {
    let full = ((a.moves_per_block * blocks as f64).ceil() as usize).max(1);
    if a.max_evals / full >= COMPRESSED_STEPS {
        return (full, a.cooling);
    }
    let per_step = (a.max_evals / COMPRESSED_STEPS).max(1);
    (per_step, a.cooling.min(1e-3f64.powf(1.0 / COMPRESSED_STEPS as f64)))
}

pub const COMPRESSED_STEPS: usize = 60;

/// Anneal the bundle (already scaled and with powers) in one setup.
pub fn anneal(bundle: &BenchmarkBundle, cfg: &EngineConfig, mode: Mode) -> Result<AnnealOutcome> {
    let started = Instant::now();
    let eval = Evaluator::new(cfg)?;
    let mut template = bundle.to_floorplan(cfg.outline());
    template.tsv_geometry = cfg.tsv;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = &cfg.anneal;
    let weights = mode_weights(&cfg.weights, mode);

    let mut enc = LayoutEncoding::initial(&template.blocks, &mut rng);
    let score = |e: &LayoutEncoding| -> Result<CostBreakdown> { eval.evaluate(&eval.prepare(e, &template, mode)?, mode) };
    let mut cur = Entry { enc: enc.clone(), cost: score(&enc)? };
    let mut evals = 1usize;
    let mut norm = Normalizer::default();
    norm.observe(&cur.cost.terms);
    let mut archives = Archives::default();
    archives.offer(&cur, norm.total(&cur.cost.terms, &weights));

    // initial temperature from a short random walk
    let mut temperature = 0.0;
    if a.max_evals > 0 && !template.blocks.is_empty() {
        let mut uphill = Vec::new();
        let mut prev = cur.clone();
        for _ in 0..a.probe_moves.min(a.max_evals.saturating_sub(evals)) {
            let e = perturb(&prev.enc, &template, a.design_rule_bias, &mut rng);
            let c = score(&e)?;
            evals += 1;
            norm.observe(&c.terms);
            let next = Entry { enc: e, cost: c };
            uphill.push((prev.cost.terms, next.cost.terms));
            prev = next;
        }
        let deltas: Vec<f64> = uphill
            .iter()
            .map(|(p, q)| norm.total(q, &weights) - norm.total(p, &weights))
            .filter(|d| *d > 0.0)
            .collect();
        let mean_up = if deltas.is_empty() { 1.0 } else { deltas.iter().sum::<f64>() / deltas.len() as f64 };
        temperature = -mean_up / a.initial_accept.ln();
    }

    let (per_step, cooling) = schedule(a, template.blocks.len());
    let mut steps = 0usize;
    'outer: while evals < a.max_evals && temperature > 0.0 {
        let mut accepted = 0usize;
        let mut tried = 0usize;
        for _ in 0..per_step {
            if evals >= a.max_evals {
                break;
            }
            enc = perturb(&cur.enc, &template, a.design_rule_bias, &mut rng);
            let c = score(&enc)?;
            evals += 1;
            tried += 1;
            let old = norm.total(&cur.cost.terms, &weights);
            let new = norm.total(&c.terms, &weights);
            let take = new <= old || rng.random::<f64>() < (-(new - old) / temperature).exp();
            if take {
                accepted += 1;
                cur = Entry { enc: enc.clone(), cost: c };
                norm.observe(&cur.cost.terms);
                archives.offer(&cur, norm.total(&cur.cost.terms, &weights));
            }
        }
        steps += 1;
        temperature *= cooling;
        if tried > 0 && (accepted as f64) < a.stop_accept * tried as f64 {
            break 'outer;
        }
    }

    // final pick under the final normalization
    let classical = classical_weights(&cfg.weights);
    let mut pool: Vec<&Entry> = archives.by_cost.iter().map(|(e, _)| e).chain(archives.by_leakage.iter()).collect();
    pool.push(&cur);
    let legal: Vec<&Entry> = pool.iter().copied().filter(|e| e.cost.legal).collect();
    let cost_of = |e: &Entry| norm.total(&e.cost.terms, &classical);
    let chosen: &Entry = if legal.is_empty() {
        pool.iter().copied().min_by(|x, y| norm.total(&x.cost.terms, &weights).total_cmp(&norm.total(&y.cost.terms, &weights))).expect("nonempty pool")
    } else {
        let best = legal.iter().map(|e| cost_of(e)).fold(f64::INFINITY, f64::min);
        match mode {
            Mode::Pa => legal.iter().copied().min_by(|x, y| cost_of(x).total_cmp(&cost_of(y))).expect("nonempty"),
            Mode::Tsc => {
                let limit = best * (1.0 + a.delta) + 1e-12;
                legal
                    .iter()
                    .copied()
                    .filter(|e| cost_of(e) <= limit)
                    .min_by(|x, y| {
                        x.cost
                            .terms
                            .correlation
                            .total_cmp(&y.cost.terms.correlation)
                            .then(x.cost.terms.entropy.total_cmp(&y.cost.terms.entropy))
                            .then(cost_of(x).total_cmp(&cost_of(y)))
                    })
                    .expect("best entry is within its own bound")
            }
        }
    };

    let mut fp = eval.prepare(&chosen.enc, &template, mode)?;
    let mut warnings = Vec::new();
    let hardening = match mode {
        Mode::Tsc if fp.is_legal() => {
            let trace = harden(&fp, cfg)?;
            fp = trace.floorplan.clone();
            Some(trace)
        }
        _ => None,
    };
    let final_cost = eval.evaluate(&fp, mode)?;

    let p1: Grid2D<f64> = rasterize_power(&fp, Die::Bottom, cfg.grid())?;
    let p2 = rasterize_power(&fp, Die::Top, cfg.grid())?;
    let density = rasterize_tsv_density(&fp, cfg.grid())?;
    let thermal = solve_steady(&p1, &p2, &density, &cfg.stack, &cfg.solver)?;
    let r1 = pearson(&p1, &thermal.temps[0])?.value;
    let r2 = pearson(&p2, &thermal.temps[1])?.value;
    let s1 = spatial_entropy_with(&p1, &cfg.entropy).value;
    let s2 = spatial_entropy_with(&p2, &cfg.entropy).value;
    // the estimate is checked against a detailed solve on its own grid
    let check = if cfg.loop_grid() == cfg.grid() {
        [r1, r2]
    } else {
        let q1: Grid2D<f64> = rasterize_power(&fp, Die::Bottom, cfg.loop_grid())?;
        let q2 = rasterize_power(&fp, Die::Top, cfg.loop_grid())?;
        let qd = rasterize_tsv_density(&fp, cfg.loop_grid())?;
        let t = solve_steady(&q1, &q2, &qd, &cfg.stack, &cfg.solver)?;
        [pearson(&q1, &t.temps[0])?.value, pearson(&q2, &t.temps[1])?.value]
    };
    let agrees = [(check[0], final_cost.r[0]), (check[1], final_cost.r[1])].iter().all(|(v, e)| match (v, e) {
        (Some(v), Some(e)) => v.signum() == e.signum() && (v - e).abs() <= 0.15,
        (None, None) => true,
        _ => false,
    });
    if !agrees {
        warnings.push(format!(
            "in-loop correlation estimate {:?} disagrees with verification {:?}",
            final_cost.r,
            check
        ));
    }
    let legal = fp.is_legal();
    if !legal {
        warnings.push("no legal floorplan found within the budget; returning best effort".into());
    }

    let report = LeakageReport {
        mode,
        seed: cfg.seed,
        legal,
        correlation_r1: r1,
        correlation_r2: r2,
        entropy_s1: s1,
        entropy_s2: s2,
        power_w: fp.total_power(),
        critical_delay_ns: final_cost.terms.delay,
        wirelength_m: final_cost.terms.wirelength,
        peak_temp_k: thermal.peak,
        signal_tsvs: fp.signal_tsv_count(),
        dummy_tsvs: fp.dummy_tsv_count(),
        voltage_volumes: fp.volumes.len(),
        forced_volumes: fp.volumes.iter().filter(|v| v.forced).count(),
        outline_violation: final_cost.terms.outline,
        estimate_r1: final_cost.r[0],
        estimate_r2: final_cost.r[1],
        estimate_agrees: agrees,
        hardening_steps: hardening.as_ref().map_or(0, |h| h.steps.len()),
        hardening_r_start: hardening.as_ref().and_then(|h| h.start_r),
        hardening_r_end: hardening.as_ref().and_then(|h| h.final_r()),
        evaluations: evals,
        temperature_steps: steps,
        warnings,
    };
    Ok(AnnealOutcome { floorplan: fp, report, final_cost, hardening, power: [p1, p2], temp: thermal.temps, tsv_density: density, runtime_s: started.elapsed().as_secs_f64() })
}
