use tsvshield::config::EngineConfig;
use tsvshield::harden::{draw_powers, harden, localize_attack, sample_activities, stability_map, StopReason};
use tsvshield::model::{rasterize_power, rasterize_tsv_density, BlockKind, BlockModule, Die, Floorplan, VoltageLevel};
use tsvshield::synth::hotspot_case;
use tsvshield::thermal::solve_steady;

fn block(id: &str, die: Die, pos: (f64, f64), dims: (f64, f64), p: f64) -> BlockModule {
    BlockModule {
        id: id.into(),
        kind: BlockKind::Hard,
        area: dims.0 * dims.1,
        aspect_limits: (dims.0 / dims.1, dims.0 / dims.1),
        pos,
        dims,
        die,
        nominal_power: p,
        voltage: VoltageLevel::Nominal,
    }
}

fn small_cfg(outline: f64, n: usize) -> EngineConfig {
    let mut cfg = EngineConfig::default();
    cfg.outline_w = outline;
    cfg.outline_h = outline;
    cfg.grid_nx = n;
    cfg.grid_ny = n;
    cfg.sampling.m = 8;
    cfg
}

fn pearson_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Mean of the defined per-die correlations, recomputed from scratch.
fn r_mean(fp: &Floorplan, cfg: &EngineConfig) -> Option<f64> {
    let p1 = rasterize_power(fp, Die::Bottom, cfg.grid()).unwrap();
    let p2 = rasterize_power(fp, Die::Top, cfg.grid()).unwrap();
    let d = rasterize_tsv_density(fp, cfg.grid()).unwrap();
    let t = solve_steady(&p1, &p2, &d, &cfg.stack, &cfg.solver).unwrap();
    let r: Vec<f64> = [
        pearson_oracle(p1.values(), t.temps[0].values()),
        pearson_oracle(p2.values(), t.temps[1].values()),
    ]
    .into_iter()
    .flatten()
    .collect();
    (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
}

fn toy_fp() -> Floorplan {
    let mut fp = Floorplan::new((1000.0, 1000.0));
    fp.blocks.push(block("a", Die::Bottom, (0.0, 0.0), (500.0, 500.0), 0.4));
    fp.blocks.push(block("b", Die::Bottom, (500.0, 0.0), (500.0, 500.0), 0.0));
    fp.blocks.push(block("c", Die::Top, (0.0, 0.0), (1000.0, 400.0), 0.3));
    fp.blocks.push(block("d", Die::Top, (0.0, 400.0), (600.0, 600.0), 0.9));
    fp
}

#[test]
fn zero_whitespace_gives_empty_trace() {
    let mut fp = Floorplan::new((1000.0, 1000.0));
    fp.blocks.push(block("a", Die::Bottom, (0.0, 0.0), (500.0, 1000.0), 0.5));
    fp.blocks.push(block("b", Die::Bottom, (500.0, 0.0), (500.0, 1000.0), 0.1));
    fp.blocks.push(block("c", Die::Top, (0.0, 0.0), (1000.0, 1000.0), 1.0));
    let cfg = small_cfg(1000.0, 8);
    let trace = harden(&fp, &cfg).unwrap();
    assert!(trace.steps.is_empty());
    assert_eq!(trace.stop, StopReason::NoWhitespace);
    assert_eq!(trace.floorplan, fp);
}

#[test]
fn single_step_is_verified_by_recomputation() {
    let (fp, mut cfg) = hotspot_case();
    cfg.sampling.m = 8;
    cfg.harden.max_steps = 1;
    let trace = harden(&fp, &cfg).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.stop, StopReason::StepLimit);
    let before = r_mean(&fp, &cfg).unwrap();
    let after = r_mean(&trace.floorplan, &cfg).unwrap();
    assert!((before - trace.start_r.unwrap()).abs() < 1e-9);
    assert!((after - trace.steps[0].r_mean).abs() < 1e-9);
    assert!(after < before);
    assert_eq!(trace.floorplan.dummy_tsv_count(), cfg.harden.island_tsv_count);
}

#[test]
fn accepted_insertions_never_raise_mean_correlation() {
    let (fp, mut cfg) = hotspot_case();
    cfg.sampling.m = 8;
    cfg.harden.max_steps = 6;
    let trace = harden(&fp, &cfg).unwrap();
    let mut partial = fp.clone();
    let mut prev = r_mean(&fp, &cfg).unwrap();
    for s in &trace.steps {
        partial.tsvs.push(s.island.clone());
        let r = r_mean(&partial, &cfg).unwrap();
        assert!(r < prev, "{r} !< {prev}");
        assert!((r - s.r_mean).abs() < 1e-9);
        prev = r;
    }
    // islands stay in die-1 whitespace
    let out = &trace.floorplan;
    for t in &out.tsvs {
        let r = t.rect(&out.tsv_geometry);
        assert!(out.blocks.iter().filter(|b| b.die == Die::Bottom).all(|b| !b.rect().overlaps(&r)));
        assert!(r.inside(out.outline));
    }
}

#[test]
fn sampling_statistics_match_the_target() {
    let fp = toy_fp();
    let m = 100;
    let draws: Vec<Vec<f64>> = (0..m).map(|k| draw_powers(&fp, 0.1, 42, k)).collect();
    for (i, b) in fp.blocks.iter().enumerate() {
        let p = b.effective_power();
        let v: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let mean = v.iter().sum::<f64>() / m as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        if p == 0.0 {
            assert!(v.iter().all(|x| *x == 0.0));
            continue;
        }
        assert!((mean - p).abs() <= 0.03 * p, "block {i}: mean {mean} vs {p}");
        assert!((sd - 0.1 * p).abs() <= 0.2 * 0.1 * p, "block {i}: std {sd} vs {}", 0.1 * p);
        assert!(v.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn zero_std_samples_equal_nominal() {
    let fp = toy_fp();
    let cfg = small_cfg(1000.0, 8);
    let s = sample_activities(&fp, 3, 0.0, 7, &cfg).unwrap();
    let nominal: Vec<f64> = fp.blocks.iter().map(|b| b.effective_power()).collect();
    for x in &s {
        assert_eq!(x.powers, nominal);
        assert_eq!(x.thermal.temps, s[0].thermal.temps);
    }
    assert!(sample_activities(&fp, 1, 0.1, 7, &cfg).is_err());
}

#[test]
fn sampling_is_seeded() {
    let fp = toy_fp();
    let cfg = small_cfg(1000.0, 8);
    let a = sample_activities(&fp, 4, 0.1, 9, &cfg).unwrap();
    let b = sample_activities(&fp, 4, 0.1, 9, &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.powers, y.powers);
        assert_eq!(x.thermal.temps, y.thermal.temps);
    }
    let maps = stability_map(&a).unwrap();
    assert_eq!(maps[0].values.len(), 64);
}

#[test]
fn dominant_source_is_localized() {
    let mut fp = Floorplan::new((1000.0, 1000.0));
    for j in 0..4 {
        for i in 0..4 {
            let p = if (i, j) == (2, 1) { 2.0 } else { 0.05 };
            fp.blocks.push(block(&format!("m{i}{j}"), Die::Top, (i as f64 * 250.0, j as f64 * 250.0), (250.0, 250.0), p));
            fp.blocks.push(block(&format!("n{i}{j}"), Die::Bottom, (i as f64 * 250.0, j as f64 * 250.0), (250.0, 250.0), 0.05));
        }
    }
    let cfg = small_cfg(1000.0, 16);
    let rep = localize_attack(&fp, &["m21".to_string()], &cfg).unwrap();
    assert!(rep.success);
    assert!(rep.margin > 0.0);

    let mut quiet = cfg.clone();
    quiet.harden.attack_sigma = 0.0;
    let rep = localize_attack(&fp, &["m21".to_string()], &quiet).unwrap();
    assert!(!rep.success);
    assert!(rep.max_delta.abs() < 1e-9);

    assert!(localize_attack(&fp, &[], &cfg).is_err());
    assert!(localize_attack(&fp, &["nope".to_string()], &cfg).is_err());
}

#[test]
fn hardening_shrinks_detection_margin() {
    let (fp, mut cfg) = hotspot_case();
    cfg.sampling.m = 8;
    cfg.harden.max_steps = 8;
    let target = vec!["a10".to_string()];
    let before = localize_attack(&fp, &target, &cfg).unwrap();
    let trace = harden(&fp, &cfg).unwrap();
    assert!(!trace.steps.is_empty());
    let after = localize_attack(&trace.floorplan, &target, &cfg).unwrap();
    assert!(after.margin < before.margin, "{} !< {}", after.margin, before.margin);
}
