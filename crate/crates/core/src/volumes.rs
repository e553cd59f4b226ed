//! Voltage volumes: connected module groups (possibly spanning both dies)
//! sharing one supply level, grown breadth-first and picked greedily.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{Floorplan, Mode, VoltageLevel, VoltageVolume};
use crate::timing::{feasible_voltages, TechParams, TimingGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeParams {
    /// Largest gap between two same-die blocks that still counts as abutting, µm.
    pub adjacency_gap: f64,
    /// Cross-die adjacency needs this fraction of the smaller footprint to overlap.
    pub overlap_min: f64,
    /// Node cap per volume tree.
    pub tree_cap: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for VolumeParams {
    fn default() -> Self {
        Self { adjacency_gap: 10.0, overlap_min: 0.25, tree_cap: 64, alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

/// Bit set over [`VoltageLevel::ALL`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Levels(u8);

impl Levels {
    fn of(levels: &[VoltageLevel]) -> Self {
        Levels(levels.iter().map(|l| 1u8 << (*l as u8)).fold(0, |a, b| a | b))
    }

    fn and(self, other: Self) -> Self {
        Levels(self.0 & other.0)
    }

    fn is_empty(self) -> bool {
        self.0 == 0
    }

    fn to_vec(self) -> Vec<VoltageLevel> {
        VoltageLevel::ALL.into_iter().filter(|l| self.0 & (1 << (*l as u8)) != 0).collect()
    }
}

/// Adjacency lists (ascending) over block indices.
pub fn adjacency(fp: &Floorplan, params: &VolumeParams) -> Vec<Vec<usize>> {
    let n = fp.blocks.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (fp.blocks[i].rect(), fp.blocks[j].rect());
            let linked = if fp.blocks[i].die == fp.blocks[j].die {
                let gap_x = (a.x.max(b.x) - a.x1().min(b.x1())).max(0.0);
                let gap_y = (a.y.max(b.y) - a.y1().min(b.y1())).max(0.0);
                let span_x = a.x1().min(b.x1()) - a.x.max(b.x);
                let span_y = a.y1().min(b.y1()) - a.y.max(b.y);
                (gap_x <= params.adjacency_gap && span_y > 0.0) || (gap_y <= params.adjacency_gap && span_x > 0.0)
            } else {
                a.overlap_area(&b) >= params.overlap_min * a.area().min(b.area())
                    && a.overlap_area(&b) > 0.0
            };
            if linked {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Feasible levels per block from baseline (1.0 V) slacks.
pub fn module_feasibility(fp: &Floorplan, baseline: &TimingGraph, tech: &TechParams) -> Vec<Vec<VoltageLevel>> {
    fp.blocks
        .iter()
        .enumerate()
        .map(|(i, b)| feasible_voltages(tech.k_delay * b.area.sqrt(), baseline.block_slack(i)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Ascending block indices.
    pub members: Vec<usize>,
    /// Intersection of the members' feasible sets.
    pub feasible: Vec<VoltageLevel>,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeTree {
    pub root: usize,
    pub nodes: Vec<TreeNode>,
}

/// Breadth-first growth from `root`: each child adds one module adjacent to
/// the parent's members; branches stop where the feasible intersection
/// becomes empty. Member sets are deduplicated and the tree holds at most
/// `cap` nodes. A root without feasible levels yields an empty tree.
pub fn build_volume_tree(root: usize, adj: &[Vec<usize>], feasible: &[Vec<VoltageLevel>], cap: usize) -> VolumeTree {
    let sets: Vec<Levels> = feasible.iter().map(|f| Levels::of(f)).collect();
    let mut tree = VolumeTree { root, nodes: Vec::new() };
    if sets[root].is_empty() || cap == 0 {
        return tree;
    }
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut levels = vec![sets[root]];
    tree.nodes.push(TreeNode { members: vec![root], feasible: sets[root].to_vec(), parent: None });
    seen.insert(vec![root]);
    let mut queue = VecDeque::from([0usize]);
    'bfs: while let Some(k) = queue.pop_front() {
        let members = tree.nodes[k].members.clone();
        let mut frontier: Vec<usize> =
            members.iter().flat_map(|&m| adj[m].iter().copied()).filter(|v| members.binary_search(v).is_err()).collect();
        frontier.sort_unstable();
        frontier.dedup();
        for v in frontier {
            let joint = levels[k].and(sets[v]);
            if joint.is_empty() {
                continue;
            }
            let mut child = members.clone();
            let at = child.binary_search(&v).unwrap_err();
            child.insert(at, v);
            if !seen.insert(child.clone()) {
                continue;
            }
            if tree.nodes.len() == cap {
                break 'bfs;
            }
            tree.nodes.push(TreeNode { members: child, feasible: joint.to_vec(), parent: Some(k) });
            levels.push(joint);
            queue.push_back(tree.nodes.len() - 1);
        }
    }
    tree
}

/// Level and total cost of one candidate volume. The cost of a partition is
/// the sum over its volumes.
///
/// - pa: `α · s(v) · P_V / p̄ + β`, with the lowest-power feasible level.
/// - tsc: `|V| · (α · σ_V + β · |s(v) · ρ_V − ρ̄|) / ρ̄ + γ`, where `ρ` are
///   power densities and the level brings `ρ_V` closest to the mean `ρ̄`.
fn cost(members: &[usize], feasible: &[VoltageLevel], fp: &Floorplan, mode: Mode, params: &VolumeParams, stats: &PoolStats) -> (VoltageLevel, f64) {
    let n = members.len() as f64;
    let power: f64 = members.iter().map(|&i| fp.blocks[i].nominal_power).sum();
    match mode {
        Mode::Pa => {
            let level = *feasible
                .iter()
                .min_by(|a, b| a.power_scale().total_cmp(&b.power_scale()))
                .expect("nonempty feasible set");
            (level, params.alpha * level.power_scale() * power / stats.mean_power + params.beta)
        }
        Mode::Tsc => {
            let area: f64 = members.iter().map(|&i| fp.blocks[i].area).sum();
            let dens: Vec<f64> = members.iter().map(|&i| fp.blocks[i].nominal_power / fp.blocks[i].area).collect();
            let mean = dens.iter().sum::<f64>() / n;
            let sd = (dens.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
            let group = power / area;
            let dev = |l: &VoltageLevel| (l.power_scale() * group - stats.mean_density).abs();
            let level = *feasible
                .iter()
                .min_by(|a, b| dev(a).total_cmp(&dev(b)).then(a.power_scale().total_cmp(&b.power_scale())))
                .expect("nonempty feasible set");
            let c = n * (params.alpha * sd + params.beta * dev(&level)) / stats.mean_density + params.gamma;
            (level, c)
        }
    }
}

struct PoolStats {
    mean_power: f64,
    mean_density: f64,
}

/// Greedy cover of all modules by disjoint candidate volumes. Candidates are
/// taken in order of decreasing saving against leaving their members as
/// singletons; ties go to the lexicographically smaller list of member ids.
/// Modules without a feasible level become forced 1.2 V singletons.
pub fn select_volumes(
    fp: &Floorplan,
    trees: &[VolumeTree],
    feasible: &[Vec<VoltageLevel>],
    mode: Mode,
    params: &VolumeParams,
) -> Vec<VoltageVolume> {
    let n = fp.blocks.len();
    let total_power: f64 = fp.blocks.iter().map(|b| b.nominal_power).sum();
    let total_area: f64 = fp.blocks.iter().map(|b| b.area).sum();
    let positive = |v: f64| if v > 0.0 { v } else { 1.0 };
    let stats = PoolStats {
        mean_power: positive(total_power / n.max(1) as f64),
        mean_density: positive(total_power / positive(total_area)),
    };
    let mut covered = vec![false; n];
    let mut out = Vec::new();
    for (i, f) in feasible.iter().enumerate() {
        if f.is_empty() {
            covered[i] = true;
            let level = VoltageLevel::High;
            out.push(VoltageVolume {
                members: vec![i],
                feasible: Vec::new(),
                voltage: level,
                power: fp.blocks[i].nominal_power * level.power_scale(),
                forced: true,
            });
        }
    }
    let single: Vec<f64> =
        (0..n).map(|i| if feasible[i].is_empty() { 0.0 } else { cost(&[i], &feasible[i], fp, mode, params, &stats).1 }).collect();
    let mut seen: HashSet<&[usize]> = HashSet::new();
    let mut pool: Vec<(&TreeNode, VoltageLevel, f64)> = Vec::new();
    for node in trees.iter().flat_map(|t| t.nodes.iter()) {
        if seen.insert(&node.members) {
            let (level, c) = cost(&node.members, &node.feasible, fp, mode, params, &stats);
            let saving = node.members.iter().map(|&i| single[i]).sum::<f64>() - c;
            pool.push((node, level, saving));
        }
    }
    let ids = |node: &TreeNode| node.members.iter().map(|&i| fp.blocks[i].id.as_str()).collect::<Vec<_>>();
    pool.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| ids(a.0).cmp(&ids(b.0))));
    for (node, level, _) in pool {
        if node.members.iter().any(|&m| covered[m]) {
            continue;
        }
        for &m in &node.members {
            covered[m] = true;
        }
        out.push(VoltageVolume {
            members: node.members.clone(),
            feasible: node.feasible.clone(),
            voltage: level,
            power: node.members.iter().map(|&i| fp.blocks[i].nominal_power).sum::<f64>() * level.power_scale(),
            forced: false,
        });
    }
    // blocks missing from every tree (not expected when every block roots one)
    for i in 0..n {
        if !covered[i] {
            let level = VoltageLevel::Nominal;
            out.push(VoltageVolume {
                members: vec![i],
                feasible: feasible[i].clone(),
                voltage: level,
                power: fp.blocks[i].nominal_power,
                forced: false,
            });
        }
    }
    out
}

/// Set each block's voltage from its volume and store the volumes.
pub fn apply_volumes(fp: &mut Floorplan, volumes: Vec<VoltageVolume>) {
    for v in &volumes {
        for &m in &v.members {
            fp.blocks[m].voltage = v.voltage;
        }
    }
    fp.volumes = volumes;
}

/// Full assignment: trees from every root, greedy selection, voltages set.
/// Blocks flagged in `isolated` only form singleton volumes.
pub fn assign_volumes(
    fp: &mut Floorplan,
    baseline: &TimingGraph,
    tech: &TechParams,
    mode: Mode,
    params: &VolumeParams,
    isolated: &[bool],
) {
    let feasible = module_feasibility(fp, baseline, tech);
    let mut adj = adjacency(fp, params);
    for (i, list) in adj.iter_mut().enumerate() {
        if isolated.get(i).copied().unwrap_or(false) {
            list.clear();
        } else {
            list.retain(|&j| !isolated.get(j).copied().unwrap_or(false));
        }
    }
    let trees: Vec<VolumeTree> =
        (0..fp.blocks.len()).map(|r| build_volume_tree(r, &adj, &feasible, params.tree_cap)).collect();
    let volumes = select_volumes(fp, &trees, &feasible, mode, params);
    apply_volumes(fp, volumes);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockKind, BlockModule, Die};
    use VoltageLevel::*;

    fn row(n: usize, power: f64) -> Floorplan {
        let mut fp = Floorplan::new((1000.0, 1000.0));
        for i in 0..n {
            fp.blocks.push(BlockModule {
                id: format!("m{i}"),
                kind: BlockKind::Hard,
                area: 100.0,
                aspect_limits: (1.0, 1.0),
                pos: (10.0 * i as f64, 0.0),
                dims: (10.0, 10.0),
                die: Die::Bottom,
                nominal_power: power,
                voltage: Nominal,
            });
        }
        fp
    }

    #[test]
    fn abutting_blocks_are_adjacent() {
        let mut fp = row(3, 1.0);
        fp.blocks[2].pos = (50.0, 0.0);
        let adj = adjacency(&fp, &VolumeParams::default());
        assert_eq!(adj[0], vec![1]);
        assert!(adj[2].is_empty());
        fp.blocks[2].die = Die::Top;
        fp.blocks[2].pos = (3.0, 0.0);
        let adj = adjacency(&fp, &VolumeParams::default());
        assert_eq!(adj[2], vec![0, 1]);
    }

    #[test]
    fn isolated_module_gives_single_node() {
        let t = build_volume_tree(0, &[vec![]], &[vec![Low, Nominal]], 64);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].feasible, vec![Low, Nominal]);
    }

    #[test]
    fn merging_intersects_feasible_sets() {
        let t = build_volume_tree(0, &[vec![1], vec![0]], &[vec![Low, Nominal], vec![Nominal, High]], 64);
        assert_eq!(t.nodes[1].members, vec![0, 1]);
        assert_eq!(t.nodes[1].feasible, vec![Nominal]);
        let t = build_volume_tree(0, &[vec![1], vec![0]], &[vec![Low], vec![High]], 64);
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn identical_modules_form_one_low_volume() {
        let fp = row(4, 1.0);
        let adj = adjacency(&fp, &VolumeParams::default());
        let feas = vec![VoltageLevel::ALL.to_vec(); 4];
        let trees: Vec<_> = (0..4).map(|r| build_volume_tree(r, &adj, &feas, 64)).collect();
        let v = select_volumes(&fp, &trees, &feas, Mode::Pa, &VolumeParams::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].members, vec![0, 1, 2, 3]);
        assert_eq!(v[0].voltage, Low);
    }

    #[test]
    fn ties_go_to_smaller_ids() {
        let fp = row(2, 1.0);
        let feas = vec![vec![Nominal], vec![Nominal]];
        let trees: Vec<_> = (0..2).map(|r| build_volume_tree(r, &[vec![], vec![]], &feas, 64)).collect();
        let v = select_volumes(&fp, &trees, &feas, Mode::Pa, &VolumeParams::default());
        assert_eq!(v[0].members, vec![0]);
        assert_eq!(v[1].members, vec![1]);
    }

    #[test]
    fn empty_feasible_set_is_forced_high() {
        let fp = row(2, 1.0);
        let feas = vec![vec![], vec![Nominal]];
        let adj = adjacency(&fp, &VolumeParams::default());
        let trees: Vec<_> = (0..2).map(|r| build_volume_tree(r, &adj, &feas, 64)).collect();
        let v = select_volumes(&fp, &trees, &feas, Mode::Tsc, &VolumeParams::default());
        assert_eq!(v.len(), 2);
        assert!(v[0].forced && v[0].voltage == High);
        assert_eq!(v[1].members, vec![1]);
    }

    #[test]
    fn nominal_volumes_keep_nominal_power() {
        let mut fp = row(5, 0.3);
        let vols = (0..5)
            .map(|i| VoltageVolume { members: vec![i], feasible: vec![Nominal], voltage: Nominal, power: 0.3, forced: false })
            .collect();
        apply_volumes(&mut fp, vols);
        assert_eq!(fp.total_power(), fp.blocks.iter().map(|b| b.nominal_power).sum::<f64>());
    }
}
