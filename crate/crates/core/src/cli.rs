//! `ssd` command line: argument parsing, config loading and dispatch.
//!
//! Exit codes: 0 success, 1 usage or invalid configuration, 2 numerical gate
//! failure, 3 I/O.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boundary::{run_boundary, write_file, BoundaryConfig};
use crate::bp::{brute_force_posterior, run_bp, BpConfig};
use crate::channel::{oracle_posterior, posterior_density, posterior_params, ChannelPoint};
use crate::density::GridSpec;
use crate::detectors::{h_csbp_analytic, DetectorKind, Posterior};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::experiments::{
    draw_instance, linspace, run_sweep, trial_stream, write_results, DetectorName, FailureHeatmap,
    SweepConfig, SweepMode,
};
use crate::measurement::{build_forest, measure};
use crate::signal::{sample_signal, sample_support, SpikeSlabPrior};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_GATE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ssd", version, about = "Sparse support detection: BP posteriors, BHT and CS-BP detectors, phase transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config, or a sidecar written by an earlier run. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form posterior densities of the decoupled channel, one CSV per (x0, sigma_w).
    Posterior(ModelArgs),
    /// Phase-transition boundaries of BHT and CS-BP for each (q, sigma_x) pair.
    Boundary(ModelArgs),
    /// Failure-rate heatmap, decoupled or full-vector Monte Carlo.
    Sweep(ModelArgs),
    /// One BP decode with a probe at element 0; prints per-element results.
    Decode(ModelArgs),
    /// Posterior oracle agreement and tree-BP exactness.
    Selftest(ModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Bht,
    Csbp,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Decoupled,
    Full,
}

/// A list of reals: `a,b,c` or `lo:hi:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}"));
    let v = match parts.as_slice() {
        [lo, hi, k] => {
            let k: usize = k.trim().parse().map_err(|_| format!("not a count: {k:?}"))?;
            linspace(num(lo)?, num(hi)?, k)
        }
        [list] => list.split(',').map(num).collect::<std::result::Result<_, _>>()?,
        _ => return Err("expected a,b,c or lo:hi:count".into()),
    };
    if v.is_empty() {
        return Err("empty grid".into());
    }
    Ok(Grid(v))
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Signal length N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Measurements M.
    #[arg(long)]
    pub m: Option<usize>,
    /// Column weight L.
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Mixing rate; `boundary` takes a comma list.
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
    /// Slab width; `boundary` takes a comma list.
    #[arg(long = "sigma-x", value_delimiter = ',')]
    pub sigma_x: Vec<f64>,
    /// Noise levels: `a,b,c` or `lo:hi:count`.
    #[arg(long = "sigma-w-grid", value_parser = parse_grid)]
    pub sigma_w_grid: Option<Grid>,
    /// Signal magnitudes: `a,b,c` or `lo:hi:count`.
    #[arg(long = "x0-grid", value_parser = parse_grid)]
    pub x0_grid: Option<Grid>,
    /// Monte Carlo trials per cell.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// CS-BP spacing: spike mass is compared as mass / delta.
    #[arg(long)]
    pub delta: Option<f64>,
}

impl ModelArgs {
    fn single(v: &[f64], flag: &str) -> Result<Option<f64>> {
        match v {
            [] => Ok(None),
            [x] => Ok(Some(*x)),
            _ => Err(Error::invalid(format!("--{flag} takes one value here"))),
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_USAGE;
        }
        if let Err(e) = exec::set_threads(t) {
            log::warn!("could not resize the thread pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_GATE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::InvalidParameter(_) | Error::Parse { .. } | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_GATE,
    }
}

/// Returns whether every gate passed.
pub fn dispatch(cli: &Cli) -> Result<bool> {
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Posterior(a) => posterior_cmd(a, cfg, &cli.out).map(|_| true),
        Command::Boundary(a) => boundary_cmd(a, cfg, &cli.out).map(|_| true),
        Command::Sweep(a) => sweep_cmd(a, cfg, cli.seed, &cli.out).map(|_| true),
        Command::Decode(a) => decode_cmd(a, cfg, cli.seed).map(|_| true),
        Command::Selftest(_) => selftest(cli.seed.unwrap_or(0)),
    }
}

/// Reads a config file, unwrapping the `config` field of a sidecar.
fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let inner = value.get("config").cloned().unwrap_or_else(|| value.clone());
    let cfg = serde_json::from_value(inner).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((cfg, value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub q: f64,
    pub sigma_x: f64,
    pub l: usize,
    pub sigma_w_grid: Vec<f64>,
    pub x0_grid: Vec<f64>,
    pub delta: Option<f64>,
}

fn posterior_cmd(a: &ModelArgs, file: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = match file {
        Some(p) => load::<PosteriorConfig>(p)?.0,
        None => PosteriorConfig {
            q: 0.05,
            sigma_x: 5.0,
            l: 4,
            sigma_w_grid: vec![0.5, 1.0, 2.0, 4.0],
            x0_grid: vec![2.5],
            delta: None,
        },
    };
    if let Some(q) = ModelArgs::single(&a.q, "q")? {
        cfg.q = q;
    }
    if let Some(s) = ModelArgs::single(&a.sigma_x, "sigma-x")? {
        cfg.sigma_x = s;
    }
    cfg.l = a.l.unwrap_or(cfg.l);
    if let Some(g) = &a.sigma_w_grid {
        cfg.sigma_w_grid = g.0.clone();
    }
    if let Some(g) = &a.x0_grid {
        cfg.x0_grid = g.0.clone();
    }
    cfg.delta = a.delta.or(cfg.delta);

    let prior = SpikeSlabPrior::gaussian(cfg.q, cfg.sigma_x)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    println!("x0,sigma_w,rho,mu,theta,h_bht,h_csbp,delta,file");
    for &x0 in &cfg.x0_grid {
        for &sw in &cfg.sigma_w_grid {
            let point = ChannelPoint::new(x0, sw, cfg.l, prior)?;
            let pp = posterior_params(&point)?;
            let grid = GridSpec::resolving(8.0 * cfg.sigma_x, pp.theta())?;
            let density = posterior_density(&pp, &grid)?;
            let delta = cfg.delta.unwrap_or(grid.spacing());
            let bht = pp.detect(&DetectorKind::Bht, &prior)?.h_value;
            let csbp = h_csbp_analytic(&pp, delta)?.h_value;
            let name = format!("posterior_x{x0}_sw{sw}.csv");
            write_file(&out.join(&name), &density.to_csv())?;
            println!(
                "{x0},{sw},{},{},{},{bht},{csbp},{delta},{name}",
                pp.rho,
                pp.mu,
                pp.theta()
            );
            files.push(name);
        }
    }
    let sidecar = serde_json::json!({ "config": cfg, "files": files });
    write_file(&out.join("posterior.json"), &serde_json::to_string_pretty(&sidecar)?)
}

fn boundary_cmd(a: &ModelArgs, file: Option<&Path>, out: &Path) -> Result<()> {
    let base = match file {
        Some(p) => {
            let (mut c, raw) = load::<BoundaryConfig>(p)?;
            // a sidecar records the spacing it resolved
            if let Some(d) = raw.get("delta").and_then(|d| d.as_f64()) {
                c.delta.get_or_insert(d);
            }
            c
        }
        None => BoundaryConfig {
            q: 0.02,
            sigma_x: 10.0,
            l: 4,
            sigma_w_grid: linspace(0.1, 6.0, 60),
            delta: None,
            solver: None,
        },
    };
    let qs = if !a.q.is_empty() {
        a.q.clone()
    } else if file.is_some() {
        vec![base.q]
    } else {
        vec![0.02, 0.05]
    };
    let sxs = if !a.sigma_x.is_empty() {
        a.sigma_x.clone()
    } else if file.is_some() {
        vec![base.sigma_x]
    } else {
        vec![10.0, 5.0]
    };
    println!("stem,delta,bht_dominates,max_gap,mean_gap,bht_monotone,csbp_monotone,flagged");
    for &q in &qs {
        for &sx in &sxs {
            let mut cfg = base.clone();
            cfg.q = q;
            cfg.sigma_x = sx;
            cfg.l = a.l.unwrap_or(cfg.l);
            if let Some(g) = &a.sigma_w_grid {
                cfg.sigma_w_grid = g.0.clone();
            }
            cfg.delta = a.delta.or(cfg.delta);
            let r = run_boundary(&cfg, Execution::default())?;
            r.write(out)?;
            let gap = |g: Option<f64>| g.map(|v| v.to_string()).unwrap_or_default();
            println!(
                "{},{},{},{},{},{},{},{}",
                cfg.stem(),
                r.delta,
                r.dominance.dominates,
                gap(r.dominance.max_gap),
                gap(r.dominance.mean_gap),
                r.bht.is_monotone(),
                r.csbp.is_monotone(),
                r.bht.flagged().count() + r.csbp.flagged().count()
            );
        }
    }
    Ok(())
}

/// Sweep config from the file or desk defaults, with flags applied.
pub fn sweep_config(a: &ModelArgs, file: Option<&Path>, seed: Option<u64>) -> Result<SweepConfig> {
    let mode_flag = a.mode.map(|m| match m {
        ModeArg::Decoupled => SweepMode::Decoupled,
        ModeArg::Full => SweepMode::FullVector,
    });
    let mut cfg = match file {
        Some(p) => load::<SweepConfig>(p)?.0,
        None => SweepConfig::desk(mode_flag.unwrap_or(SweepMode::FullVector))?,
    };
    if let Some(m) = mode_flag {
        cfg.mode = m;
    }
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.m = a.m.unwrap_or(cfg.m);
    cfg.l = a.l.unwrap_or(cfg.l);
    if let Some(q) = ModelArgs::single(&a.q, "q")? {
        cfg.q = q;
    }
    if let Some(sx) = ModelArgs::single(&a.sigma_x, "sigma-x")? {
        cfg.sigma_x = sx;
        cfg.bp = BpConfig {
            grid: GridSpec::for_sigma_x(sx)?,
            ..cfg.bp
        };
    }
    if let Some(g) = &a.sigma_w_grid {
        cfg.sigma_w_grid = g.0.clone();
    }
    if let Some(g) = &a.x0_grid {
        cfg.x0_grid = g.0.clone();
    }
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    if let Some(d) = a.detector {
        cfg.detectors = match d {
            DetectorArg::Bht => vec![DetectorName::Bht],
            DetectorArg::Csbp => vec![DetectorName::Csbp],
            DetectorArg::Both => vec![DetectorName::Bht, DetectorName::Csbp],
        };
    }
    cfg.delta = a.delta.or(cfg.delta);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn heatmap_table(hm: &FailureHeatmap, detector: usize) -> String {
    let mut s = format!("{} failure estimate (rows sigma_w, columns x0)\n", hm.detectors[detector].name());
    let _ = write!(s, "{:>8}", "");
    for x in &hm.config.x0_grid {
        let _ = write!(s, " {x:>7.3}");
    }
    s.push('\n');
    for (i, sw) in hm.config.sigma_w_grid.iter().enumerate() {
        let _ = write!(s, "{sw:>8.3}");
        for j in 0..hm.config.x0_grid.len() {
            let _ = write!(s, " {:>7.3}", hm.cell(i, j, detector).estimate());
        }
        s.push('\n');
    }
    s
}

fn sweep_cmd(a: &ModelArgs, file: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = sweep_config(a, file, seed)?;
    let hm = run_sweep(&cfg, Execution::default())?;
    let csv = write_results(&hm, out)?;
    for d in 0..hm.detectors.len() {
        print!("{}", heatmap_table(&hm, d));
    }
    let nonconverged: usize = hm.cells.iter().step_by(hm.detectors.len()).map(|c| c.nonconverged).sum();
    if nonconverged > 0 {
        log::warn!("{nonconverged} BP runs hit max_iters");
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn decode_cmd(a: &ModelArgs, file: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut a = a.clone();
    a.mode = Some(ModeArg::Full);
    let mut cfg = sweep_config(&a, file, seed)?;
    cfg.trials = 1;
    let sw = a.sigma_w_grid.as_ref().map_or(1.0, |g| g.0[0]);
    let x0 = a.x0_grid.as_ref().map_or(5.0, |g| g.0[0]);
    let prior = cfg.prior()?;
    let inst = draw_instance(&cfg, None, sw, x0, trial_stream(0, 0))?;
    let outcome = run_bp(&inst.matrix, &inst.y, &prior, sw, &cfg.bp)?;
    let d = &outcome.diagnostics;
    eprintln!(
        "iterations {} converged {} final_delta {:e} fallbacks {}",
        d.iterations, d.converged, d.final_delta, d.fallbacks
    );
    let kinds = cfg.detector_kinds()?;
    print!("index,value,spike_mass,slab_mean");
    for k in &kinds {
        print!(",{}", k.name());
    }
    println!();
    for (i, b) in outcome.beliefs.iter().enumerate() {
        let g = b.grid();
        let mass = b.slab_mass();
        let weighted: Vec<f64> = g.nodes().zip(b.slab()).map(|(x, v)| x * v).collect();
        let moment = g.trapezoid(&weighted);
        let mean = if mass > 0.0 { moment / mass } else { 0.0 };
        print!("{i},{},{},{}", inst.signal.values[i], b.spike(), mean);
        for k in &kinds {
            print!(",{}", u8::from(b.detect(k, &prior)?.decision));
        }
        println!();
    }
    Ok(())
}

/// Worst closed-form vs oracle L1 distance over `points` random channel points.
pub fn oracle_gate(points: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let sw = 10f64.powf(rng.random_range(-1.0..=20f64.log10()));
        let x0 = rng.random_range(0.0..=15.0);
        let q = if rng.random::<bool>() { 0.02 } else { 0.05 };
        let sx = if rng.random::<bool>() { 5.0 } else { 10.0 };
        let p = ChannelPoint::new(x0, sw, 4, SpikeSlabPrior::gaussian(q, sx)?)?;
        let pp = posterior_params(&p)?;
        let g = GridSpec::resolving(8.0 * sx.max(x0), pp.theta())?;
        let d = posterior_density(&pp, &g)?.l1_distance(&oracle_posterior(&p, &g)?)?;
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Worst per-element L1 distance between BP and brute force over random
/// acyclic instances with at most 8 elements.
pub fn tree_gate(instances: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = SpikeSlabPrior::gaussian(0.05, 5.0)?;
    let gen = SpikeSlabPrior::gaussian(0.3, 5.0)?;
    let cfg = BpConfig::for_prior(&prior)?;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let l = rng.random_range(1..=3);
        let sw = rng.random_range(0.5..=2.0);
        let mat = build_forest(n, l, rng.random_range(0..=1), &mut rng)?;
        let support = sample_support(&gen, n, &mut rng);
        let signal = sample_signal(&prior, &support, None, &mut rng)?;
        let y = measure(&mat, &signal, sw, &mut rng)?.y;
        let bp = run_bp(&mat, &y, &prior, sw, &cfg)?;
        let exact = brute_force_posterior(&mat, &y, &prior, sw, &cfg.grid)?;
        for (a, b) in bp.beliefs.iter().zip(&exact) {
            worst = worst.max(a.l1_distance(b)?);
        }
    }
    Ok(worst)
}

fn selftest(seed: u64) -> Result<bool> {
    let oracle = oracle_gate(200, seed)?;
    let tree = tree_gate(20, seed)?;
    let checks = [("posterior oracle l1", oracle, 1e-6), ("tree BP l1", tree, 2e-2)];
    let mut ok = true;
    for (name, worst, tol) in checks {
        let pass = worst <= tol;
        ok &= pass;
        println!("{} {name}: worst {worst:.3e} (tol {tol:e})", if pass { "PASS" } else { "FAIL" });
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid("1,2.5,4").unwrap(), Grid(vec![1.0, 2.5, 4.0]));
        assert_eq!(parse_grid("0:1:3").unwrap(), Grid(vec![0.0, 0.5, 1.0]));
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["ssd", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["ssd", "sweep", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["ssd", "sweep", "--detector", "maybe"]), EXIT_USAGE);
        assert_eq!(run(["ssd", "--help"]), EXIT_OK);
    }

    #[test]
    fn invalid_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = run(["ssd", "sweep", "--mode", "full", "--n", "10", "--m", "20", "--out", out]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn missing_config_file_is_io() {
        assert_eq!(run(["ssd", "sweep", "--config", "/nonexistent/cfg.json"]), EXIT_IO);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let base = SweepConfig::desk(SweepMode::Decoupled).unwrap();
        std::fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();
        let a = ModelArgs {
            trials: Some(7),
            q: vec![0.05],
            ..Default::default()
        };
        let cfg = sweep_config(&a, Some(&path), Some(9)).unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.q, 0.05);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, SweepMode::Decoupled);
        assert_eq!(cfg.x0_grid, base.x0_grid);
    }

    #[test]
    fn decoupled_sweep_replays_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a");
        let args = ["ssd", "sweep", "--mode", "decoupled", "--sigma-w-grid", "0.5:4:5", "--out"];
        let mut v: Vec<OsString> = args.iter().map(OsString::from).collect();
        v.push(out.clone().into());
        assert_eq!(run(v), EXIT_OK);
        let stem = "sweep_q0.02_sx10_L4_decoupled";
        let again = dir.path().join("b");
        let code = run([
            OsString::from("ssd"),
            "sweep".into(),
            "--config".into(),
            out.join(format!("{stem}.json")).into(),
            "--out".into(),
            again.clone().into(),
        ]);
        assert_eq!(code, EXIT_OK);
        let a = std::fs::read(out.join(format!("{stem}.csv"))).unwrap();
        let b = std::fs::read(again.join(format!("{stem}.csv"))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_and_posterior_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = run(["ssd", "boundary", "--q", "0.05", "--sigma-x", "5", "--sigma-w-grid", "0.5:3:6", "--out", out]);
        assert_eq!(code, EXIT_OK);
        let csv = std::fs::read_to_string(dir.path().join("boundary_q0.05_sx5_L4.csv")).unwrap();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 7);
        assert!(dir.path().join("boundary_q0.05_sx5_L4_delta.csv").exists());

        assert_eq!(run(["ssd", "posterior", "--out", out]), EXIT_OK);
        for sw in ["0.5", "1", "2", "4"] {
            assert!(dir.path().join(format!("posterior_x2.5_sw{sw}.csv")).exists());
        }
    }

    #[test]
    fn gates_pass() {
        assert!(oracle_gate(20, 1).unwrap() <= 1e-6);
        assert!(tree_gate(5, 1).unwrap() <= 2e-2);
    }
}
