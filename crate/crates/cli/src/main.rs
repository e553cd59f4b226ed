//! `tsvshield` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use tsvshield::anneal::{anneal, AnnealOutcome, LeakageReport};
use tsvshield::bench::{apply_scale, parse_gsrc, synthesize_power, BenchmarkBundle, PowerSource};
use tsvshield::config::{parse_config, EngineConfig};
use tsvshield::error::Error;
use tsvshield::grid::Grid2D;
use tsvshield::harden::{harden, localize_attack};
use tsvshield::io::{floorplan_from_dump, floorplan_to_dump, grid_to_csv, write_report_json};
use tsvshield::model::{rasterize_power, rasterize_tsv_density, Die, Floorplan, Mode};
use tsvshield::sweep::{run_sweep, SweepConfig};
use tsvshield::synth::{generate, SynthSpec};
use tsvshield::thermal::solve_steady;

#[derive(Parser, Debug)]
#[command(name = "tsvshield", version, about = "Thermal side-channel aware 3D IC floorplanning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Anneal a benchmark in one or both setups.
    Floorplan(FloorplanArgs),
    /// Run the power/TSV pattern sweep.
    Sweep(SweepArgs),
    /// Insert dummy thermal TSVs into a floorplan dump.
    Harden(DumpArgs),
    /// Simulate the localization attack on a floorplan dump.
    Attack(AttackArgs),
    /// Write a bundled synthetic benchmark.
    GenBench(GenArgs),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report grid, `NX` or `NXxNY`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Pa,
    Tsc,
    Both,
}

#[derive(Args, Debug)]
struct FloorplanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    nets: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long)]
    delta: Option<f64>,
    /// Evaluation budget per run.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    floorplan: PathBuf,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    floorplan: PathBuf,
    /// Comma-separated module ids.
    #[arg(long)]
    targets: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BenchName {
    N100,
    Toy,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    name: BenchName,
    #[arg(long)]
    out: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|v| *v >= 2).ok_or(format!("bad grid `{s}`"));
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

/// Usage and input errors exit with 2, engine errors with 1.
enum Failure {
    Usage(anyhow::Error),
    Engine(anyhow::Error),
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn engine(e: Error) -> Failure {
    match e {
        Error::Parse { .. } | Error::Reference { .. } => Failure::Usage(e.into()),
        _ => Failure::Engine(e.into()),
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: String,
    seed: u64,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

struct Input {
    path: PathBuf,
    text: String,
}

fn read_input(path: &Path) -> CmdResult<Input> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(usage)?;
    Ok(Input { path: path.to_path_buf(), text })
}

fn hash(input: &Input) -> InputHash {
    let digest = Sha256::digest(input.text.as_bytes());
    InputHash {
        path: input.path.display().to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    }
}

fn load_config(common: &Common, inputs: &mut Vec<Input>) -> CmdResult<EngineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let input = read_input(p)?;
            let cfg = parse_config(&input.text).map_err(|e| usage(anyhow!("{}: {e}", p.display())))?;
            inputs.push(input);
            cfg
        }
        None => EngineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some((nx, ny)) = common.grid {
        cfg.grid_nx = nx;
        cfg.grid_ny = ny;
    }
    Ok(cfg)
}

/// Collects the files written by a command, relative to the output directory.
struct Outputs {
    root: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> CmdResult<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display())).map_err(usage)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    fn text(&mut self, rel: &str, text: &str) -> CmdResult<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure::Engine(e.into()))?;
        }
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display())).map_err(Failure::Engine)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> CmdResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Engine(e.into()))?;
        text.push('\n');
        self.text(rel, &text)
    }

    fn grid(&mut self, rel: &str, grid: &Grid2D<f64>) -> CmdResult<()> {
        self.text(rel, &grid_to_csv(grid))
    }

    fn manifest(mut self, command: &str, cfg: &EngineConfig, inputs: &[Input], started: Instant) -> CmdResult<()> {
        self.written.push("manifest.json".into());
        let m = RunManifest {
            command: command.to_string(),
            config: cfg.to_text(),
            seed: cfg.seed,
            inputs: inputs.iter().map(hash).collect(),
            outputs: self.written.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        write_report_json(&m, &self.root.join("manifest.json")).map_err(engine)
    }
}

fn thread_pool() -> CmdResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("TSVSHIELD_THREADS") {
        let n: usize = v.parse().ok().filter(|n| *n >= 1).ok_or_else(|| usage(anyhow!("TSVSHIELD_THREADS must be a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Engine(e.into()))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

#[derive(Serialize)]
struct ModeAggregate {
    mode: Mode,
    runs: usize,
    legal_runs: usize,
    mean_r1: Option<f64>,
    mean_r2: Option<f64>,
    mean_s1: f64,
    mean_s2: f64,
    mean_power_w: f64,
    mean_critical_delay_ns: f64,
    mean_wirelength_m: f64,
    mean_peak_temp_k: f64,
    mean_signal_tsvs: f64,
    mean_dummy_tsvs: f64,
    mean_voltage_volumes: f64,
}

fn aggregate(mode: Mode, reports: &[&LeakageReport]) -> ModeAggregate {
    let n = reports.len().max(1) as f64;
    let mean = |f: &dyn Fn(&LeakageReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&LeakageReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    ModeAggregate {
        mode,
        runs: reports.len(),
        legal_runs: reports.iter().filter(|r| r.legal).count(),
        mean_r1: mean_opt(&|r| r.correlation_r1),
        mean_r2: mean_opt(&|r| r.correlation_r2),
        mean_s1: mean(&|r| r.entropy_s1),
        mean_s2: mean(&|r| r.entropy_s2),
        mean_power_w: mean(&|r| r.power_w),
        mean_critical_delay_ns: mean(&|r| r.critical_delay_ns),
        mean_wirelength_m: mean(&|r| r.wirelength_m),
        mean_peak_temp_k: mean(&|r| r.peak_temp_k),
        mean_signal_tsvs: mean(&|r| r.signal_tsvs as f64),
        mean_dummy_tsvs: mean(&|r| r.dummy_tsvs as f64),
        mean_voltage_volumes: mean(&|r| r.voltage_volumes as f64),
    }
}

fn write_maps(out: &mut Outputs, dir: &str, power: &[Grid2D<f64>; 2], temp: &[Grid2D<f64>; 2], tsv: &Grid2D<f64>) -> CmdResult<()> {
    out.grid(&format!("{dir}/power_die1.csv"), &power[0])?;
    out.grid(&format!("{dir}/power_die2.csv"), &power[1])?;
    out.grid(&format!("{dir}/temp_die1.csv"), &temp[0])?;
    out.grid(&format!("{dir}/temp_die2.csv"), &temp[1])?;
    out.grid(&format!("{dir}/tsv_density.csv"), tsv)
}

fn cmd_floorplan(args: &FloorplanArgs) -> CmdResult<()> {
    let started = Instant::now();
    if args.runs == 0 {
        return Err(usage(anyhow!("--runs must be at least 1")));
    }
    let mut inputs = Vec::new();
    let mut cfg = load_config(&args.common, &mut inputs)?;
    if let Some(d) = args.delta {
        cfg.anneal.delta = d;
    }
    if let Some(b) = args.budget {
        cfg.anneal.max_evals = b;
    }
    cfg.validate().map_err(|e| usage(anyhow!("invalid configuration: {e}")))?;

    let blocks = read_input(&args.blocks)?;
    let nets = read_input(&args.nets)?;
    let pl = sibling(&args.blocks, "pl");
    let pl = if pl.exists() { Some(read_input(&pl)?) } else { None };
    let power = sibling(&args.blocks, "power");
    let power = if power.exists() { Some(read_input(&power)?) } else { None };
    let mut bundle: BenchmarkBundle = parse_gsrc(
        &blocks.text,
        &nets.text,
        pl.as_ref().map(|i| i.text.as_str()),
        power.as_ref().map(|i| i.text.as_str()),
    )
    .map_err(|e| usage(anyhow!("benchmark: {e}")))?;
    inputs.extend([Some(blocks), Some(nets), pl, power].into_iter().flatten());
    if bundle.power_source == PowerSource::Missing {
        eprintln!("warning: no .power file next to the blocks file; synthesizing {} W", cfg.total_power);
        synthesize_power(&mut bundle, cfg.total_power, 0x5eed).map_err(engine)?;
    }
    let bundle = apply_scale(&bundle, cfg.scale_factor).map_err(|e| usage(anyhow!("{e}")))?;

    let modes: Vec<Mode> = match args.mode {
        ModeArg::Pa => vec![Mode::Pa],
        ModeArg::Tsc => vec![Mode::Tsc],
        ModeArg::Both => vec![Mode::Pa, Mode::Tsc],
    };
    let base = cfg.seed;
    let jobs: Vec<(Mode, u64)> =
        modes.iter().flat_map(|&m| (0..args.runs as u64).map(move |k| (m, base.wrapping_add(k)))).collect();
    let pool = thread_pool()?;
    let results: Vec<(Mode, u64, tsvshield::error::Result<AnnealOutcome>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mode, seed)| {
                let mut c = cfg.clone();
                c.seed = seed;
                (mode, seed, anneal(&bundle, &c, mode))
            })
            .collect()
    });

    let mut out = Outputs::new(&args.common.out)?;
    let mut outcomes = Vec::new();
    for (mode, seed, res) in results {
        let o = res.map_err(|e| Failure::Engine(anyhow!("{} run with seed {seed}: {e}", mode.label())))?;
        outcomes.push((mode, seed, o));
    }
    for (mode, seed, o) in &outcomes {
        let dir = format!("{}/seed_{seed}", mode.label());
        out.json(&format!("{dir}/report.json"), &o.report)?;
        out.text(&format!("{dir}/floorplan.txt"), &floorplan_to_dump(&o.floorplan))?;
        write_maps(&mut out, &dir, &o.power, &o.temp, &o.tsv_density)?;
        if let Some(h) = &o.hardening {
            out.json(&format!("{dir}/hardening.json"), &TraceView::from(h))?;
        }
        for w in &o.report.warnings {
            eprintln!("warning: {} seed {seed}: {w}", mode.label());
        }
    }
    let agg: Vec<ModeAggregate> = modes
        .iter()
        .map(|&m| aggregate(m, &outcomes.iter().filter(|(mm, _, _)| *mm == m).map(|(_, _, o)| &o.report).collect::<Vec<_>>()))
        .collect();
    out.json("aggregate.json", &agg)?;
    for a in &agg {
        println!(
            "{}: runs {} legal {} mean r1 {} mean power {:.4} W volumes {:.1} dummy TSVs {:.1}",
            a.mode.label(),
            a.runs,
            a.legal_runs,
            a.mean_r1.map_or("undefined".into(), |v| format!("{v:.4}")),
            a.mean_power_w,
            a.mean_voltage_volumes,
            a.mean_dummy_tsvs
        );
    }
    let illegal = outcomes.iter().filter(|(_, _, o)| !o.report.legal).count();
    out.manifest("floorplan", &cfg, &inputs, started)?;
    if illegal > 0 {
        return Err(Failure::Engine(anyhow!("{illegal} run(s) found no legal floorplan; best-effort layouts were written")));
    }
    Ok(())
}

/// Hardening trace without the embedded floorplan.
#[derive(Serialize)]
struct TraceView<'a> {
    start_r: Option<f64>,
    start: [Option<f64>; 2],
    steps: &'a [tsvshield::harden::HardenStep],
    rejected: &'a Option<tsvshield::harden::HardenStep>,
    stop: tsvshield::harden::StopReason,
    final_r: Option<f64>,
}

impl<'a> From<&'a tsvshield::harden::HardeningTrace> for TraceView<'a> {
    fn from(t: &'a tsvshield::harden::HardeningTrace) -> Self {
        Self { start_r: t.start_r, start: t.start, steps: &t.steps, rejected: &t.rejected, stop: t.stop, final_r: t.final_r() }
    }
}

fn cmd_sweep(args: &SweepArgs) -> CmdResult<()> {
    let started = Instant::now();
    let mut inputs = Vec::new();
    let cfg = load_config(&args.common, &mut inputs)?;
    let sc = SweepConfig {
        grid: args.common.grid.unwrap_or((32, 32)),
        seed: cfg.seed,
        stack: cfg.stack.clone(),
        solver: cfg.solver.clone(),
        entropy: cfg.entropy.clone(),
        ..SweepConfig::default()
    };
    let report = run_sweep(&sc).map_err(engine)?;
    let mut out = Outputs::new(&args.common.out)?;
    out.text("sweep.csv", &report.to_csv())?;
    for c in &report.cases {
        let dir = format!("maps/{}_{}", c.row.power.label(), c.row.tsv.label());
        write_maps(&mut out, &dir, &c.power, &c.temp, &c.tsv_density)?;
    }
    print!("{}", report.to_csv());
    out.manifest("sweep", &cfg, &inputs, started)
}

fn load_dump(common: &Common, path: &Path) -> CmdResult<(Floorplan, EngineConfig, Vec<Input>)> {
    let mut inputs = Vec::new();
    let mut cfg = load_config(common, &mut inputs)?;
    let dump = read_input(path)?;
    let fp = floorplan_from_dump(&dump.text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    inputs.push(dump);
    cfg.outline_w = fp.outline.0;
    cfg.outline_h = fp.outline.1;
    cfg.validate().map_err(|e| usage(anyhow!("invalid configuration: {e}")))?;
    Ok((fp, cfg, inputs))
}

fn steady_maps(fp: &Floorplan, cfg: &EngineConfig) -> tsvshield::error::Result<([Grid2D<f64>; 2], [Grid2D<f64>; 2], Grid2D<f64>)> {
    let p1 = rasterize_power(fp, Die::Bottom, cfg.grid())?;
    let p2 = rasterize_power(fp, Die::Top, cfg.grid())?;
    let d = rasterize_tsv_density(fp, cfg.grid())?;
    let t = solve_steady(&p1, &p2, &d, &cfg.stack, &cfg.solver)?;
    Ok(([p1, p2], t.temps, d))
}

fn cmd_harden(args: &DumpArgs) -> CmdResult<()> {
    let started = Instant::now();
    let (fp, cfg, inputs) = load_dump(&args.common, &args.floorplan)?;
    let trace = harden(&fp, &cfg).map_err(engine)?;
    let before = steady_maps(&fp, &cfg).map_err(engine)?;
    let after = steady_maps(&trace.floorplan, &cfg).map_err(engine)?;
    let mut out = Outputs::new(&args.common.out)?;
    out.json("trace.json", &TraceView::from(&trace))?;
    out.text("floorplan.txt", &floorplan_to_dump(&trace.floorplan))?;
    write_maps(&mut out, "before", &before.0, &before.1, &before.2)?;
    write_maps(&mut out, "after", &after.0, &after.1, &after.2)?;
    println!("step,r1,r2,r_mean");
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.6}"));
    println!("0,{},{},{}", fmt(trace.start[0]), fmt(trace.start[1]), fmt(trace.start_r));
    for (k, s) in trace.steps.iter().enumerate() {
        println!("{},{},{},{:.6}", k + 1, fmt(s.r[0]), fmt(s.r[1]), s.r_mean);
    }
    println!("stop: {:?}", trace.stop);
    out.manifest("harden", &cfg, &inputs, started)
}

fn cmd_attack(args: &AttackArgs) -> CmdResult<()> {
    let started = Instant::now();
    let targets: Vec<String> = args.targets.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
    if targets.is_empty() {
        return Err(usage(anyhow!("--targets needs at least one module id")));
    }
    let (fp, cfg, inputs) = load_dump(&args.common, &args.floorplan)?;
    for t in &targets {
        if fp.block_index(t).is_none() {
            return Err(usage(anyhow!("unknown target module `{t}`")));
        }
    }
    let report = localize_attack(&fp, &targets, &cfg).map_err(engine)?;
    let mut out = Outputs::new(&args.common.out)?;
    out.json("attack.json", &report)?;
    let pitch = ((fp.outline.0 / report.dims.0 as f64), (fp.outline.1 / report.dims.1 as f64));
    for (k, name) in ["delta_die1.csv", "delta_die2.csv"].iter().enumerate() {
        let g = Grid2D::from_values(report.dims.0, report.dims.1, pitch, report.delta[k].clone()).map_err(engine)?;
        out.grid(name, &g)?;
    }
    println!(
        "hottest rise {:.4} K at die {} bin ({}, {}); success {}; margin {:.4} K",
        report.max_delta, report.argmax.0, report.argmax.1, report.argmax.2, report.success, report.margin
    );
    out.manifest("attack", &cfg, &inputs, started)
}

fn cmd_gen_bench(args: &GenArgs) -> CmdResult<()> {
    let (spec, cfg) = match args.name {
        BenchName::N100 => {
            let mut c = EngineConfig::default();
            c.total_power = 7.83;
            c.tech.clock_target = 22.0;
            (SynthSpec::n100(), c)
        }
        BenchName::Toy => {
            let mut c = EngineConfig::default();
            c.outline_w = 1000.0;
            c.outline_h = 1000.0;
            c.scale_factor = 1.0;
            c.total_power = 1.2;
            c.grid_nx = 32;
            c.grid_ny = 32;
            c.tech.clock_target = 0.35;
            c.sampling.m = 16;
            (SynthSpec::toy(), c)
        }
    };
    let name = match args.name {
        BenchName::N100 => "n100",
        BenchName::Toy => "toy",
    };
    let b = generate(&spec).map_err(engine)?;
    let mut out = Outputs::new(&args.out)?;
    out.text(&format!("{name}.blocks"), &b.write_blocks())?;
    out.text(&format!("{name}.nets"), &b.write_nets())?;
    out.text(&format!("{name}.power"), &b.write_power())?;
    if let Some(pl) = b.write_pl() {
        out.text(&format!("{name}.pl"), &pl)?;
    }
    out.text("config.txt", &cfg.to_text())?;
    for f in &out.written {
        println!("{}", out.root.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.command {
        Command::Floorplan(a) => cmd_floorplan(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Harden(a) => cmd_harden(a),
        Command::Attack(a) => cmd_attack(a),
        Command::GenBench(a) => cmd_gen_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Engine(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
