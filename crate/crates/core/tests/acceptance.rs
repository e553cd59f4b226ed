//! Acceptance run. Each test prints one `criterion N: PASS|FAIL` line; run
//! with `--nocapture` to see them. Criterion 6 is logged only.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tsvshield::anneal::{anneal, AnnealOutcome};
use tsvshield::bench::{apply_scale, parse_gsrc, BenchmarkBundle};
use tsvshield::config::{parse_config, EngineConfig};
use tsvshield::grid::Grid2D;
use tsvshield::harden::harden;
use tsvshield::io::floorplan_to_dump;
use tsvshield::leakage::{nested_means_classify, pearson, spatial_entropy, stability};
use tsvshield::model::{rasterize_power, rasterize_tsv_density, Die, Floorplan, Mode};
use tsvshield::sweep::{run_sweep, PowerPattern, SweepConfig, TsvPattern};
use tsvshield::synth::{generate, hotspot_case, SynthSpec};
use tsvshield::thermal::{heat_to_ambient, network_system, solve_steady, SolverOptions, StackModel};

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn pearson_oracle(p: &[f64], t: &[f64]) -> Option<f64> {
    let n = p.len() as f64;
    let (sp, st) = (p.iter().sum::<f64>(), t.iter().sum::<f64>());
    let spp: f64 = p.iter().map(|x| x * x).sum();
    let stt: f64 = t.iter().map(|x| x * x).sum();
    let spt: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let num = n * spt - sp * st;
    let den = ((n * spp - sp * sp) * (n * stt - st * st)).sqrt();
    (den > 0.0).then(|| num / den)
}

fn nested_means_oracle(values: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let lo = values.iter().copied().fold(f64::MAX, f64::min);
    let hi = values.iter().copied().fold(f64::MIN, f64::max);
    let mut out = Vec::new();
    let mut stack = vec![idx];
    // depth-first, low half before high half
    while let Some(c) = stack.pop() {
        let n = c.len() as f64;
        let mean = c.iter().map(|&i| values[i]).sum::<f64>() / n;
        let sd = (c.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n).sqrt();
        let (a, b): (Vec<usize>, Vec<usize>) = c.iter().partition(|&&i| values[i] < mean);
        if sd <= 1e-9 * (hi - lo) || a.is_empty() || b.is_empty() {
            out.push(c);
        } else {
            stack.push(b);
            stack.push(a);
        }
    }
    out
}

fn entropy_oracle(values: &[f64], nx: usize) -> f64 {
    let n = values.len();
    let classes = nested_means_oracle(values);
    let d = |a: usize, b: usize| ((a % nx) as f64 - (b % nx) as f64).abs() + ((a / nx) as f64 - (b / nx) as f64).abs();
    let mut s = 0.0;
    for c in &classes {
        let inside = |i: usize| c.contains(&i);
        let (mut intra, mut pi) = (0.0, 0);
        let (mut inter, mut pe) = (0.0, 0);
        for &a in c {
            for b in 0..n {
                if b == a {
                    continue;
                }
                if inside(b) {
                    intra += d(a, b);
                    pi += 1;
                } else {
                    inter += d(a, b);
                    pe += 1;
                }
            }
        }
        let di = if pi == 0 { 0.5 } else { intra / pi as f64 };
        let de = if pe == 0 { 0.5 } else { inter / pe as f64 };
        let p = c.len() as f64 / n as f64;
        s -= de / di * p * p.log2();
    }
    s
}

fn grid(nx: usize, ny: usize, pitch: f64, v: Vec<f64>) -> Grid2D<f64> {
    Grid2D::from_values(nx, ny, (pitch, pitch), v).unwrap()
}

#[test]
fn criterion_1_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut fails = 0;
    let mut check = |got: f64, want: f64| {
        let err = (got - want).abs() / want.abs().max(got.abs()).max(1e-300);
        worst = worst.max(err);
        if !rel_close(got, want, 1e-9) {
            fails += 1;
        }
    };
    for _ in 0..100 {
        let p: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let t: Vec<f64> = p.iter().map(|x| 300.0 + 2.0 * x + rng.random::<f64>()).collect();
        let got = pearson(&grid(8, 8, 1.0, p.clone()), &grid(8, 8, 1.0, t.clone())).unwrap().value.unwrap();
        check(got, pearson_oracle(&p, &t).unwrap());
    }
    for _ in 0..100 {
        let m = 8;
        let ps: Vec<Vec<f64>> = (0..m).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
        let ts: Vec<Vec<f64>> = ps.iter().map(|p| p.iter().map(|x| x + 0.3 * rng.random::<f64>()).collect()).collect();
        let pg: Vec<_> = ps.iter().map(|v| grid(4, 4, 1.0, v.clone())).collect();
        let tg: Vec<_> = ts.iter().map(|v| grid(4, 4, 1.0, v.clone())).collect();
        let s = stability(&pg, &tg).unwrap();
        for bin in 0..16 {
            let p: Vec<f64> = ps.iter().map(|v| v[bin]).collect();
            let t: Vec<f64> = ts.iter().map(|v| v[bin]).collect();
            check(s.values[bin].unwrap(), pearson_oracle(&p, &t).unwrap());
        }
    }
    let mut class_mismatch = 0;
    for _ in 0..100 {
        let v: Vec<f64> = (0..64).map(|_| rng.random::<f64>().powi(3)).collect();
        let mut got = nested_means_classify(&v);
        let mut want = nested_means_oracle(&v);
        for c in got.iter_mut().chain(want.iter_mut()) {
            c.sort_unstable();
        }
        got.sort();
        want.sort();
        if got != want {
            class_mismatch += 1;
        }
    }
    for case in 0..100 {
        let (nx, ny) = (2 + case % 7, 2 + (case / 7) % 7);
        let v: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0..5) as f64 * 0.2 + 0.1).collect();
        let got = spatial_entropy(&grid(nx, ny, 1.0, v.clone())).value;
        let want = entropy_oracle(&v, nx);
        if want.abs() < 1e-15 {
            check(got.abs() + 1.0, 1.0);
        } else {
            check(got, want);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = fails == 0 && class_mismatch == 0 && secs < 10.0;
    report(1, pass, format!("worst rel err {worst:.2e}, {fails} value / {class_mismatch} class mismatches, {secs:.1} s"));
    assert!(pass);
}

/// Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
        }
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

fn flip_x(g: &[f64], n: usize) -> Vec<f64> {
    (0..n * n).map(|i| g[(i / n) * n + (n - 1 - i % n)]).collect()
}

#[test]
fn criterion_2_thermal() {
    let t0 = Instant::now();
    let stack = StackModel::default();
    let tight = SolverOptions { tolerance: 1e-12, max_iterations: 50_000 };
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let pitch = 62.5;

    let mut direct_err = 0.0f64;
    for _ in 0..5 {
        let p1 = grid(8, 8, pitch, (0..64).map(|_| rng.random_range(0.0..2e-5)).collect());
        let p2 = grid(8, 8, pitch, (0..64).map(|_| rng.random_range(0.0..2e-5)).collect());
        let d = grid(8, 8, pitch, (0..64).map(|_| if rng.random_bool(0.3) { rng.random() } else { 0.0 }).collect());
        let (a, b) = network_system(&p1, &p2, &d, &stack).unwrap();
        let theta = dense_solve(a, b);
        let res = solve_steady(&p1, &p2, &d, &stack, &tight).unwrap();
        let max_rise = theta.iter().copied().fold(0.0, f64::max);
        for (i, want) in theta.iter().enumerate() {
            let got = res.temps[i / 64].values()[i % 64] - stack.ambient;
            direct_err = direct_err.max((got - want).abs() / max_rise);
        }
    }

    let n = 32;
    let p1 = grid(n, n, pitch, (0..n * n).map(|_| rng.random_range(0.0..1e-6)).collect());
    let p2 = grid(n, n, pitch, (0..n * n).map(|_| rng.random_range(0.0..1e-6)).collect());
    let d = grid(n, n, pitch, (0..n * n).map(|_| rng.random_range(0.0..0.2)).collect());
    let res = solve_steady(&p1, &p2, &d, &stack, &SolverOptions::default()).unwrap();
    let injected = (p1.sum() + p2.sum()) * p1.bin_area();
    let balance = (heat_to_ambient(&res, &stack) - injected).abs() / injected;

    let (mut mono, mut mirror) = (true, true);
    let k = 6;
    for _ in 0..20 {
        let a: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..1e-5)).collect();
        let b: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..1e-5)).collect();
        let dv: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..0.5)).collect();
        let base = solve_steady(&grid(k, k, pitch, a.clone()), &grid(k, k, pitch, b.clone()), &grid(k, k, pitch, dv.clone()), &stack, &tight)
            .unwrap();
        let mut hot = a.clone();
        hot[rng.random_range(0..k * k)] += 5e-6;
        let more = solve_steady(&grid(k, k, pitch, hot), &grid(k, k, pitch, b.clone()), &grid(k, k, pitch, dv.clone()), &stack, &tight)
            .unwrap();
        for die in 0..2 {
            mono &= more.temps[die].values().iter().zip(base.temps[die].values()).all(|(x, y)| *x >= y - 1e-9);
        }
        let m = solve_steady(
            &grid(k, k, pitch, flip_x(&a, k)),
            &grid(k, k, pitch, flip_x(&b, k)),
            &grid(k, k, pitch, flip_x(&dv, k)),
            &stack,
            &tight,
        )
        .unwrap();
        for die in 0..2 {
            let want = flip_x(base.temps[die].values(), k);
            mirror &= m.temps[die].values().iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-9);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = direct_err <= 1e-8 && balance <= 1e-4 && mono && mirror && secs < 60.0;
    report(
        2,
        pass,
        format!("direct {direct_err:.1e}, balance {balance:.1e}, monotone {mono}, mirror {mirror}, {secs:.1} s"),
    );
    assert!(pass);
}

fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    pearson_oracle(&rank(a), &rank(b)).unwrap_or(0.0)
}

#[test]
fn criterion_3_sweep() {
    let t0 = Instant::now();
    let rep = run_sweep(&SweepConfig { seed: 1, ..Default::default() }).unwrap();
    let a = TsvPattern::ALL.iter().all(|&t| {
        let col: Vec<_> = rep.rows().filter(|r| r.tsv == t).collect();
        match col.iter().find(|r| r.power == PowerPattern::GloballyUniform).and_then(|r| r.r1) {
            Some(g) => col.iter().all(|r| r.r1.is_none_or(|v| v >= g)),
            None => false,
        }
    });
    let max = rep.rows().filter(|r| r.r1.is_some()).max_by(|x, y| x.r1.unwrap().total_cmp(&y.r1.unwrap())).unwrap();
    let b = max.power == PowerPattern::LargeGradients && max.tsv.is_regular();
    let s1: Vec<f64> = PowerPattern::ALL.iter().map(|&p| rep.row(p, TsvPattern::None).unwrap().s1).collect();
    let r1: Vec<f64> = PowerPattern::ALL
        .iter()
        .map(|&p| {
            let v: Vec<f64> = rep.rows().filter(|x| x.power == p).filter_map(|x| x.r1).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let rho = spearman_oracle(&s1, &r1);
    let secs = t0.elapsed().as_secs_f64();
    let pass = a && b && rho >= 0.5 && secs < 300.0;
    report(
        3,
        pass,
        format!("(a) {a}, (b) {b} [max {}+{}], (c) rho {rho:.2}, {secs:.1} s", max.power.label(), max.tsv.label()),
    );
    assert!(pass);
}

fn n100() -> (BenchmarkBundle, EngineConfig) {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../benchmarks/n100/");
    let read = |f: &str| std::fs::read_to_string(format!("{dir}{f}")).unwrap();
    let mut cfg = parse_config(&read("config.txt")).unwrap();
    cfg.sampling.m = 16;
    cfg.anneal.max_evals = 4000;
    let bundle = parse_gsrc(&read("n100.blocks"), &read("n100.nets"), None, Some(&read("n100.power"))).unwrap();
    let bundle = apply_scale(&bundle, cfg.scale_factor).unwrap();
    (bundle, cfg)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criteria_4_and_6_floorplanning() {
    let t0 = Instant::now();
    let (bundle, cfg) = n100();
    let jobs: Vec<(Mode, u64)> = [Mode::Pa, Mode::Tsc].iter().flat_map(|&m| (1..=10).map(move |s| (m, s))).collect();
    let runs: Vec<(Mode, AnnealOutcome)> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let mut c = cfg.clone();
            c.seed = seed;
            (mode, anneal(&bundle, &c, mode).unwrap())
        })
        .collect();
    let of = |m: Mode| runs.iter().filter(move |(k, _)| *k == m).map(|(_, o)| &o.report);
    let r1 = |m: Mode| mean(of(m).filter_map(|r| r.correlation_r1));
    let (pa, tsc) = (r1(Mode::Pa), r1(Mode::Tsc));
    let legal = runs.iter().filter(|(_, o)| o.report.legal).count();
    let secs = t0.elapsed().as_secs_f64();
    let pass = tsc <= 0.97 * pa && secs < 1800.0;
    report(
        4,
        pass,
        format!("mean r1 pa {pa:.4} tsc {tsc:.4} (ratio {:.3}), {legal}/20 legal, {secs:.0} s", tsc / pa),
    );

    let power = |m: Mode| mean(of(m).map(|r| r.power_w));
    let vols = |m: Mode| mean(of(m).map(|r| r.voltage_volumes as f64));
    let dummy = mean(of(Mode::Tsc).map(|r| r.dummy_tsvs as f64));
    let signal = mean(of(Mode::Tsc).map(|r| r.signal_tsvs as f64));
    let checks = [
        ("power", power(Mode::Tsc) <= 1.15 * power(Mode::Pa), format!("{:.3}x", power(Mode::Tsc) / power(Mode::Pa))),
        ("dummy tsvs", dummy <= 0.05 * signal, format!("{:.1}% of signal", 100.0 * dummy / signal)),
        ("volumes", vols(Mode::Tsc) >= vols(Mode::Pa), format!("tsc {:.1} pa {:.1}", vols(Mode::Tsc), vols(Mode::Pa))),
    ];
    for (name, ok, detail) in checks {
        report(6, ok, format!("(soft) {name}: {detail}"));
    }
    assert!(pass);
}

fn r_mean_oracle(fp: &Floorplan, cfg: &EngineConfig) -> f64 {
    let p1 = rasterize_power(fp, Die::Bottom, cfg.grid()).unwrap();
    let p2 = rasterize_power(fp, Die::Top, cfg.grid()).unwrap();
    let d = rasterize_tsv_density(fp, cfg.grid()).unwrap();
    let t = solve_steady(&p1, &p2, &d, &cfg.stack, &cfg.solver).unwrap();
    let r: Vec<f64> = [pearson_oracle(p1.values(), t.temps[0].values()), pearson_oracle(p2.values(), t.temps[1].values())]
        .into_iter()
        .flatten()
        .collect();
    r.iter().sum::<f64>() / r.len() as f64
}

#[test]
fn criterion_5_hardening() {
    let t0 = Instant::now();
    let (fp, cfg) = hotspot_case();
    let trace = harden(&fp, &cfg).unwrap();
    let start = trace.start_r.unwrap();
    let end = trace.final_r().unwrap();
    let decreasing = trace.steps.windows(2).all(|w| w[1].r_mean < w[0].r_mean) && trace.steps.first().is_some_and(|s| s.r_mean < start);

    let mut partial = fp.clone();
    let mut prev = r_mean_oracle(&fp, &cfg);
    let mut verified = (prev - start).abs() < 1e-6;
    for s in &trace.steps {
        partial.tsvs.push(s.island.clone());
        let r = r_mean_oracle(&partial, &cfg);
        verified &= r < prev && (r - s.r_mean).abs() < 1e-6;
        prev = r;
    }
    let drop = 1.0 - end / start;
    let secs = t0.elapsed().as_secs_f64();
    let pass = decreasing && verified && drop >= 0.05 && secs < 300.0;
    report(
        5,
        pass,
        format!("{} steps, r {start:.4} -> {end:.4} ({:.1}% drop), recomputed {verified}, {secs:.1} s", trace.steps.len(), 100.0 * drop),
    );
    assert!(pass);
}

#[test]
fn criterion_7_determinism() {
    let mut cfg = EngineConfig::default();
    cfg.outline_w = 1000.0;
    cfg.outline_h = 1000.0;
    cfg.scale_factor = 1.0;
    cfg.grid_nx = 32;
    cfg.grid_ny = 32;
    cfg.tech.clock_target = 0.35;
    cfg.sampling.m = 8;
    cfg.harden.max_steps = 4;
    cfg.anneal.max_evals = 500;
    cfg.seed = 3;
    let bundle = generate(&SynthSpec::toy()).unwrap();
    let run = || {
        let o = anneal(&bundle, &cfg, Mode::Tsc).unwrap();
        (serde_json::to_vec_pretty(&o.report).unwrap(), floorplan_to_dump(&o.floorplan))
    };
    let (a, b) = (run(), run());
    let pass = a == b;
    report(7, pass, format!("report {} bytes, floorplan {} bytes", a.0.len(), a.1.len()));
    assert!(pass);
}
