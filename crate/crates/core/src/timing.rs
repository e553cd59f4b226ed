//! Net delays, longest-path timing and per-module voltage feasibility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockModule, Floorplan, Net, PinRef, VoltageLevel};

/// Interconnect and module-delay constants. Resistances in Ω, capacitances
/// in fF, so `Ω·fF × 1e-6` is ns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    /// Ω/µm
    pub r_wire: f64,
    /// fF/µm
    pub c_wire: f64,
    pub r_driver: f64,
    pub c_sink: f64,
    pub r_tsv: f64,
    pub c_tsv: f64,
    /// ns
    pub clock_target: f64,
    /// Module delay per √µm² of area at 1.0 V, ns/µm.
    pub k_delay: f64,
}

impl Default for TechParams {
    fn default() -> Self {
        Self {
            r_wire: 0.1,
            c_wire: 0.2,
            r_driver: 50.0,
            c_sink: 2.0,
            r_tsv: 0.05,
            c_tsv: 30.0,
            clock_target: 1.5,
            k_delay: 4e-4,
        }
    }
}

const OHM_FF_TO_NS: f64 = 1e-6;

fn pin_die(fp: &Floorplan, pin: PinRef) -> Option<crate::model::Die> {
    match pin {
        PinRef::Block(i) => Some(fp.blocks[i].die),
        PinRef::Terminal(_) => None,
    }
}

fn placed(fp: &Floorplan, pin: PinRef) -> Result<(f64, f64)> {
    let p = fp.pin_position(pin);
    if p.0.is_finite() && p.1.is_finite() {
        Ok(p)
    } else {
        Err(Error::State(format!("pin `{}` is not placed", fp.pin_name(pin))))
    }
}

/// Star-topology Elmore delay from the driver to each sink, ns, in sink
/// order. A sink on the other die than the driver goes through one TSV;
/// terminals never do.
pub fn elmore_sink_delays(net: &Net, fp: &Floorplan, tech: &TechParams) -> Result<Vec<f64>> {
    let driver = net.driver();
    let d = placed(fp, driver)?;
    let drv_die = pin_die(fp, driver);
    let mut lengths = Vec::with_capacity(net.sinks().len());
    let mut c_total = 0.0;
    for &s in net.sinks() {
        let p = placed(fp, s)?;
        let len = (p.0 - d.0).abs() + (p.1 - d.1).abs();
        let cross = matches!((drv_die, pin_die(fp, s)), (Some(a), Some(b)) if a != b);
        c_total += tech.c_wire * len + tech.c_sink + if cross { tech.c_tsv } else { 0.0 };
        lengths.push((len, cross));
    }
    Ok(lengths
        .into_iter()
        .map(|(len, cross)| {
            let mut rc = tech.r_driver * c_total + tech.r_wire * len * (tech.c_wire * len / 2.0 + tech.c_sink);
            if cross {
                rc += tech.r_tsv * (tech.c_tsv / 2.0 + tech.c_sink);
            }
            rc * OHM_FF_TO_NS
        })
        .collect())
}

/// Worst sink delay of a net, ns.
pub fn elmore_delay(net: &Net, fp: &Floorplan, tech: &TechParams) -> Result<f64> {
    Ok(elmore_sink_delays(net, fp, tech)?.into_iter().fold(0.0, f64::max))
}

/// Intrinsic module delay at the module's assigned voltage, ns.
pub fn module_delay(block: &BlockModule, tech: &TechParams) -> f64 {
    tech.k_delay * block.area.sqrt() * block.voltage.delay_scale()
}

/// Longest-path timing over modules and terminals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingGraph {
    /// Blocks first (same indices as the floorplan), then terminals.
    pub nodes: Vec<PinRef>,
    pub node_delay: Vec<f64>,
    /// Driver → sink edges kept after cycle breaking: `(from, to, ns)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub dropped_edges: usize,
    /// Latest time a signal reaches the node's input.
    pub arrival: Vec<f64>,
    /// Longest delay from the node's output to any path end.
    pub tail: Vec<f64>,
    pub slack: Vec<f64>,
    pub critical_delay: f64,
    pub clock_target: f64,
}

impl TimingGraph {
    pub fn block_slack(&self, block: usize) -> f64 {
        self.slack[block]
    }

    /// Longest path through the node, ns.
    pub fn path_through(&self, node: usize) -> f64 {
        self.arrival[node] + self.node_delay[node] + self.tail[node]
    }
}

/// Timing with the modules at their assigned voltages.
pub fn compute_slacks(fp: &Floorplan, tech: &TechParams) -> Result<TimingGraph> {
    timing_with(fp, tech, |b| module_delay(b, tech))
}

/// Timing with every module at 1.0 V, the reference for voltage feasibility.
pub fn baseline_slacks(fp: &Floorplan, tech: &TechParams) -> Result<TimingGraph> {
    timing_with(fp, tech, |b| tech.k_delay * b.area.sqrt())
}

fn timing_with(fp: &Floorplan, tech: &TechParams, delay: impl Fn(&BlockModule) -> f64) -> Result<TimingGraph> {
    if !(tech.clock_target > 0.0) {
        return Err(Error::domain(format!("clock target must be positive, got {}", tech.clock_target)));
    }
    let nb = fp.blocks.len();
    let n = nb + fp.terminals.len();
    let node = |p: PinRef| match p {
        PinRef::Block(i) => i,
        PinRef::Terminal(i) => nb + i,
    };
    let nodes: Vec<PinRef> = (0..nb).map(PinRef::Block).chain((0..fp.terminals.len()).map(PinRef::Terminal)).collect();
    let node_delay: Vec<f64> = nodes
        .iter()
        .map(|p| match *p {
            PinRef::Block(i) => delay(&fp.blocks[i]),
            PinRef::Terminal(_) => 0.0,
        })
        .collect();

    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for net in &fp.nets {
        let from = node(net.driver());
        for (&s, d) in net.sinks().iter().zip(elmore_sink_delays(net, fp, tech)?) {
            let to = node(s);
            if to != from {
                out[from].push((to, d));
            }
        }
    }

    // Depth-first cycle breaking, visiting roots and successors in ascending
    // id order; edges into a node on the current stack are dropped.
    let name = |v: usize| fp.pin_name(nodes[v]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| name(a).cmp(name(b)).then(a.cmp(&b)));
    for adj in out.iter_mut() {
        adj.sort_by(|a, b| name(a.0).cmp(name(b.0)).then(a.0.cmp(&b.0)).then(a.1.total_cmp(&b.1)));
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    let mut kept: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut postorder = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for &root in &order {
        if mark[root] != Mark::New {
            continue;
        }
        mark[root] = Mark::Open;
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut k)) = stack.last_mut() {
            if *k < out[v].len() {
                let (w, d) = out[v][*k];
                *k += 1;
                match mark[w] {
                    Mark::Open => dropped += 1,
                    Mark::Done => kept[v].push((w, d)),
                    Mark::New => {
                        kept[v].push((w, d));
                        mark[w] = Mark::Open;
                        stack.push((w, 0));
                    }
                }
            } else {
                mark[v] = Mark::Done;
                postorder.push(v);
                stack.pop();
            }
        }
    }
    let topo: Vec<usize> = postorder.into_iter().rev().collect();

    let mut arrival = vec![0.0f64; n];
    for &v in &topo {
        let ready = arrival[v] + node_delay[v];
        for &(w, d) in &kept[v] {
            arrival[w] = arrival[w].max(ready + d);
        }
    }
    let mut tail = vec![0.0f64; n];
    for &v in topo.iter().rev() {
        tail[v] = kept[v].iter().map(|&(w, d)| d + node_delay[w] + tail[w]).fold(0.0, f64::max);
    }
    let through: Vec<f64> = (0..n).map(|v| arrival[v] + node_delay[v] + tail[v]).collect();
    let critical_delay = through.iter().copied().fold(0.0, f64::max);
    let slack = through.iter().map(|t| tech.clock_target - t).collect();
    let edges = kept.iter().enumerate().flat_map(|(v, adj)| adj.iter().map(move |&(w, d)| (v, w, d))).collect();
    Ok(TimingGraph {
        nodes,
        node_delay,
        edges,
        dropped_edges: dropped,
        arrival,
        tail,
        slack,
        critical_delay,
        clock_target: tech.clock_target,
    })
}

/// Levels whose extra delay fits in the module's baseline slack:
/// `(delay_scale − 1) · delay ≤ slack`.
pub fn feasible_voltages(module_delay: f64, slack: f64) -> Vec<VoltageLevel> {
    VoltageLevel::ALL.into_iter().filter(|v| (v.delay_scale() - 1.0) * module_delay <= slack).collect()
}
