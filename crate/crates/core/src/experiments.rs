//! Monte Carlo failure-rate sweeps over `(sigma_w, |x0|)`, in the decoupled
//! scalar model or on full BP decodes, with CSV output and a JSON sidecar
//! that replays to identical bytes.
//!
//! Every trial draws from its own ChaCha8 stream of the master seed:
//! stream `(cell << 32) | trial`, so results do not depend on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{default_csbp_delta, detection_value, write_file, BoundaryReport};
use crate::bp::{run_bp, BpConfig};
use crate::density::GridSpec;
use crate::detectors::{DetectorKind, Posterior};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::measurement::{build_matrix, measure, SparseBinaryMatrix};
use crate::signal::{sample_signal, sample_support, Probe, SignalInstance, SlabMode, SpikeSlabPrior};

/// Stream used for the shared matrix under [`MatrixPolicy::Fixed`].
const FIXED_MATRIX_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Decoupled,
    FullVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixPolicy {
    FreshPerTrial,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorName {
    Bht,
    Csbp,
}

/// How the non-probe nonzeros are drawn in full-vector trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    /// `+-|x0|` of the cell.
    ProbeMagnitude,
    TwoPoint { magnitude: f64 },
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub q: f64,
    pub sigma_x: f64,
    pub detectors: Vec<DetectorName>,
    /// CS-BP spacing. Defaults to the BP grid spacing for full-vector sweeps
    /// and to the resolving spacing at the smallest `sigma_w` when decoupled.
    pub delta: Option<f64>,
    pub sigma_w_grid: Vec<f64>,
    pub x0_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub bp: BpConfig,
    pub matrix: MatrixPolicy,
    pub background: Background,
    pub max_retries: usize,
}

pub fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

impl SweepConfig {
    /// N = 256, M = 128, L = 4, q = 0.02, sigma_x = 10, 100 trials on an 8 x 8 grid.
    pub fn desk(mode: SweepMode) -> Result<Self> {
        let (q, sigma_x) = (0.02, 10.0);
        Ok(Self {
            mode,
            n: 256,
            m: 128,
            l: 4,
            q,
            sigma_x,
            detectors: vec![DetectorName::Bht, DetectorName::Csbp],
            delta: None,
            sigma_w_grid: linspace(0.3, 2.4, 8),
            x0_grid: linspace(0.5, 11.0, 8),
            trials: 100,
            seed: 2013,
            bp: BpConfig::for_prior(&SpikeSlabPrior::gaussian(q, sigma_x)?)?,
            matrix: MatrixPolicy::FreshPerTrial,
            background: Background::ProbeMagnitude,
            max_retries: 1000,
        })
    }

    /// Detection prior: Gaussian slab, whatever generates the signal.
    pub fn prior(&self) -> Result<SpikeSlabPrior> {
        SpikeSlabPrior::gaussian(self.q, self.sigma_x)
    }

    pub fn validate(&self) -> Result<()> {
        let prior = self.prior()?;
        if self.l == 0 {
            return Err(Error::invalid("column weight L must be >= 1"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.sigma_w_grid.is_empty() || self.x0_grid.is_empty() {
            return Err(Error::invalid("sigma_w and x0 grids must be nonempty"));
        }
        if self.detectors.is_empty() {
            return Err(Error::invalid("no detectors selected"));
        }
        if self.detectors.iter().enumerate().any(|(i, d)| self.detectors[..i].contains(d)) {
            return Err(Error::invalid("detector listed twice"));
        }
        if let Some(d) = self.delta {
            DetectorKind::csbp(d)?;
        }
        if self.x0_grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("x0 grid must be finite"));
        }
        match self.mode {
            SweepMode::Decoupled => {
                if self.sigma_w_grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(Error::invalid("decoupled sweep needs sigma_w > 0"));
                }
            }
            SweepMode::FullVector => {
                if self.m >= self.n {
                    return Err(Error::invalid(format!(
                        "full-vector sweep needs M < N, got M = {}, N = {}",
                        self.m, self.n
                    )));
                }
                if self.sigma_w_grid.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
                    return Err(Error::invalid("sigma_w must be finite and >= 0"));
                }
                if self.x0_grid.contains(&0.0) {
                    return Err(Error::invalid("probe magnitude |x0| must be > 0"));
                }
                self.bp.validate()?;
                GridSpec::new(self.bp.grid.half_width(), self.bp.grid.n_points())?;
                if let Background::TwoPoint { magnitude } = self.background {
                    SpikeSlabPrior::new(prior.q, prior.sigma_x, SlabMode::TwoPoint { magnitude })?;
                }
            }
        }
        Ok(())
    }

    pub fn csbp_delta(&self) -> Result<f64> {
        match (self.delta, self.mode) {
            (Some(d), _) => Ok(d),
            (None, SweepMode::FullVector) => Ok(self.bp.grid.spacing()),
            (None, SweepMode::Decoupled) => {
                let min = self.sigma_w_grid.iter().copied().fold(f64::INFINITY, f64::min);
                default_csbp_delta(&self.prior()?, self.l, min)
            }
        }
    }

    pub fn detector_kinds(&self) -> Result<Vec<DetectorKind>> {
        self.detectors
            .iter()
            .map(|d| match d {
                DetectorName::Bht => Ok(DetectorKind::Bht),
                DetectorName::Csbp => DetectorKind::csbp(self.csbp_delta()?),
            })
            .collect()
    }

    pub fn n_cells(&self) -> usize {
        self.sigma_w_grid.len() * self.x0_grid.len()
    }

    /// Stem for output files, e.g. `sweep_q0.02_sx10_L4_full_vector`.
    pub fn stem(&self) -> String {
        let mode = match self.mode {
            SweepMode::Decoupled => "decoupled",
            SweepMode::FullVector => "full_vector",
        };
        format!("sweep_q{}_sx{}_L{}_{mode}", self.q, self.sigma_x, self.l)
    }

    fn generator(&self, x0: f64) -> Result<SpikeSlabPrior> {
        let mode = match self.background {
            Background::ProbeMagnitude => SlabMode::TwoPoint { magnitude: x0.abs() },
            Background::TwoPoint { magnitude } => SlabMode::TwoPoint { magnitude },
            Background::Gaussian => SlabMode::GaussianSlab,
        };
        SpikeSlabPrior::new(self.q, self.sigma_x, mode)
    }
}

pub fn trial_stream(cell: usize, trial: usize) -> u64 {
    ((cell as u64) << 32) | trial as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Binomial standard error of an estimated rate.
pub fn std_error(estimate: f64, trials: usize) -> f64 {
    (estimate * (1.0 - estimate) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub sigma_w: f64,
    pub x0: f64,
    pub detector: DetectorKind,
    pub failures: usize,
    pub trials: usize,
    /// Trials whose BP run hit `max_iters`; they are still scored.
    pub nonconverged: usize,
    /// Mean fraction of misdetected elements over the whole vector; full-vector only.
    pub support_error_rate: Option<f64>,
}

impl CellResult {
    pub fn estimate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }

    pub fn std_error(&self) -> f64 {
        std_error(self.estimate(), self.trials)
    }
}

/// Cells ordered by `sigma_w`, then `x0`, then detector.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureHeatmap {
    pub config: SweepConfig,
    pub detectors: Vec<DetectorKind>,
    pub cells: Vec<CellResult>,
}

impl FailureHeatmap {
    pub fn cell(&self, sw: usize, x: usize, detector: usize) -> &CellResult {
        let nd = self.detectors.len();
        &self.cells[(sw * self.config.x0_grid.len() + x) * nd + detector]
    }

    pub fn detector_index(&self, name: DetectorName) -> Option<usize> {
        self.config.detectors.iter().position(|&d| d == name)
    }

    /// Estimates of one detector as `[sigma_w][x0]`.
    pub fn estimates(&self, detector: usize) -> Vec<Vec<f64>> {
        (0..self.config.sigma_w_grid.len())
            .map(|s| {
                (0..self.config.x0_grid.len())
                    .map(|x| self.cell(s, x, detector).estimate())
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("sigma_w,x0,detector,failures,trials,estimate,nonconverged,support_error_rate\n");
        for c in &self.cells {
            let ser = c.support_error_rate.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.sigma_w,
                c.x0,
                c.detector.name(),
                c.failures,
                c.trials,
                c.estimate(),
                c.nonconverged,
                ser
            );
        }
        out
    }

    fn sidecar(&self) -> Sidecar {
        let nd = self.detectors.len();
        Sidecar {
            config: self.config.clone(),
            detectors: self.detectors.clone(),
            stream_rule: "trial t of cell c uses ChaCha8 stream (c << 32) | t of the master seed".into(),
            cell_streams: (0..self.cells.len() / nd).map(|c| trial_stream(c, 0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    config: SweepConfig,
    detectors: Vec<DetectorKind>,
    stream_rule: String,
    cell_streams: Vec<u64>,
}

/// Per-cell 0/1 failure of the closed-form detectors.
pub fn run_decoupled_sweep(cfg: &SweepConfig, mode: Execution) -> Result<FailureHeatmap> {
    if cfg.mode != SweepMode::Decoupled {
        return Err(Error::invalid("run_decoupled_sweep needs mode = decoupled"));
    }
    cfg.validate()?;
    let prior = cfg.prior()?;
    let detectors = cfg.detector_kinds()?;
    let nx = cfg.x0_grid.len();
    let cells = exec::try_map(mode, cfg.n_cells(), |c| {
        let (sw, x0) = (cfg.sigma_w_grid[c / nx], cfg.x0_grid[c % nx]);
        detectors
            .iter()
            .map(|kind| {
                let r = detection_value(kind, sw, x0, cfg.l, &prior)?;
                Ok(CellResult {
                    sigma_w: sw,
                    x0,
                    detector: *kind,
                    failures: usize::from(!r.decision),
                    trials: 1,
                    nonconverged: 0,
                    support_error_rate: None,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(FailureHeatmap {
        config: cfg.clone(),
        detectors,
        cells: cells.into_iter().flatten().collect(),
    })
}

struct TrialOutcome {
    probe_failed: Vec<bool>,
    support_errors: Vec<usize>,
    converged: bool,
}

/// One random instance: matrix, signal with the probe at element 0, and
/// measurements, all drawn from `stream`.
pub struct Instance {
    pub matrix: SparseBinaryMatrix,
    pub signal: SignalInstance,
    pub y: Vec<f64>,
}

/// Draws an instance; `fixed` replaces the per-trial matrix when given.
pub fn draw_instance(
    cfg: &SweepConfig,
    fixed: Option<&SparseBinaryMatrix>,
    sigma_w: f64,
    x0: f64,
    stream: u64,
) -> Result<Instance> {
    let mut rng = rng_for(cfg.seed, stream);
    let matrix = match fixed {
        Some(m) => m.clone(),
        None => build_matrix(cfg.n, cfg.m, cfg.l, &mut rng, cfg.max_retries)?,
    };
    let generator = cfg.generator(x0)?;
    let mut support = sample_support(&generator, cfg.n, &mut rng);
    support[0] = true;
    let probe = Probe {
        index: 0,
        magnitude: x0.abs(),
    };
    let signal = sample_signal(&generator, &support, Some(probe), &mut rng)?;
    let y = measure(&matrix, &signal, sigma_w, &mut rng)?.y;
    Ok(Instance { matrix, signal, y })
}

fn run_trial(
    cfg: &SweepConfig,
    prior: &SpikeSlabPrior,
    detectors: &[DetectorKind],
    fixed: Option<&SparseBinaryMatrix>,
    sigma_w: f64,
    x0: f64,
    stream: u64,
) -> Result<TrialOutcome> {
    let Instance { matrix, signal, y } = draw_instance(cfg, fixed, sigma_w, x0, stream)?;
    let support = &signal.support;
    let out = run_bp(&matrix, &y, prior, sigma_w, &cfg.bp)?;
    let mut probe_failed = Vec::with_capacity(detectors.len());
    let mut support_errors = Vec::with_capacity(detectors.len());
    for kind in detectors {
        let mut errors = 0;
        for (i, belief) in out.beliefs.iter().enumerate() {
            let decision = belief.detect(kind, prior)?.decision;
            if i == 0 {
                probe_failed.push(!decision);
            }
            errors += usize::from(decision != support[i]);
        }
        support_errors.push(errors);
    }
    Ok(TrialOutcome {
        probe_failed,
        support_errors,
        converged: out.diagnostics.converged,
    })
}

/// BP decodes with a forced probe at element 0; failure is H0 at the probe.
pub fn run_full_sweep(cfg: &SweepConfig, mode: Execution) -> Result<FailureHeatmap> {
    if cfg.mode != SweepMode::FullVector {
        return Err(Error::invalid("run_full_sweep needs mode = full_vector"));
    }
    cfg.validate()?;
    let prior = cfg.prior()?;
    let detectors = cfg.detector_kinds()?;
    let fixed = match cfg.matrix {
        MatrixPolicy::Fixed => {
            let mut rng = rng_for(cfg.seed, FIXED_MATRIX_STREAM);
            Some(build_matrix(cfg.n, cfg.m, cfg.l, &mut rng, cfg.max_retries)?)
        }
        MatrixPolicy::FreshPerTrial => None,
    };
    let nx = cfg.x0_grid.len();
    let total = cfg.n_cells() * cfg.trials;
    let done = AtomicUsize::new(0);
    log::info!("full sweep: {} cells x {} trials", cfg.n_cells(), cfg.trials);
    let outcomes = exec::try_map(mode, total, |w| {
        let (c, t) = (w / cfg.trials, w % cfg.trials);
        let (sw, x0) = (cfg.sigma_w_grid[c / nx], cfg.x0_grid[c % nx]);
        let r = run_trial(cfg, &prior, &detectors, fixed.as_ref(), sw, x0, trial_stream(c, t));
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if k.is_multiple_of((total / 10).max(1)) {
            log::info!("full sweep: {k}/{total} trials");
        }
        r
    })?;

    let mut cells = Vec::with_capacity(cfg.n_cells() * detectors.len());
    for (c, chunk) in outcomes.chunks(cfg.trials).enumerate() {
        let (sw, x0) = (cfg.sigma_w_grid[c / nx], cfg.x0_grid[c % nx]);
        let nonconverged = chunk.iter().filter(|o| !o.converged).count();
        for (d, kind) in detectors.iter().enumerate() {
            let errors: usize = chunk.iter().map(|o| o.support_errors[d]).sum();
            cells.push(CellResult {
                sigma_w: sw,
                x0,
                detector: *kind,
                failures: chunk.iter().filter(|o| o.probe_failed[d]).count(),
                trials: cfg.trials,
                nonconverged,
                support_error_rate: Some(errors as f64 / (cfg.trials * cfg.n) as f64),
            });
        }
    }
    Ok(FailureHeatmap {
        config: cfg.clone(),
        detectors,
        cells,
    })
}

pub fn run_sweep(cfg: &SweepConfig, mode: Execution) -> Result<FailureHeatmap> {
    match cfg.mode {
        SweepMode::Decoupled => run_decoupled_sweep(cfg, mode),
        SweepMode::FullVector => run_full_sweep(cfg, mode),
    }
}

/// Something that persists as CSV plus a JSON sidecar.
pub trait Artifact {
    /// Writes into `dir` and returns the main CSV path.
    fn write(&self, dir: &Path) -> Result<PathBuf>;
}

impl Artifact for FailureHeatmap {
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.config.stem();
        let csv = dir.join(format!("{stem}.csv"));
        write_file(&csv, &self.to_csv())?;
        write_file(
            &dir.join(format!("{stem}.json")),
            &serde_json::to_string_pretty(&self.sidecar())?,
        )?;
        Ok(csv)
    }
}

impl Artifact for BoundaryReport {
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        BoundaryReport::write(self, dir)
    }
}

pub fn write_results<A: Artifact>(artifact: &A, dir: &Path) -> Result<PathBuf> {
    artifact.write(dir)
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Reads a heatmap back from its CSV; the sidecar must sit next to it.
pub fn read_results(csv: &Path) -> Result<FailureHeatmap> {
    let side = read_sidecar(&csv.with_extension("json"))?;
    let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("sigma_w,x0,detector,failures,trials,estimate,nonconverged,support_error_rate") {
        return Err(Error::parse(csv, "unexpected header"));
    }
    let mut cells = Vec::new();
    for (k, line) in lines.enumerate() {
        let bad = |what: &str| Error::parse(csv, format!("line {}: {what}", k + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad count"));
        let detector = *side
            .detectors
            .iter()
            .find(|d| d.name() == f[2])
            .ok_or_else(|| bad("unknown detector"))?;
        cells.push(CellResult {
            sigma_w: num(f[0])?,
            x0: num(f[1])?,
            detector,
            failures: int(f[3])?,
            trials: int(f[4])?,
            nonconverged: int(f[6])?,
            support_error_rate: if f[7].is_empty() { None } else { Some(num(f[7])?) },
        });
    }
    if cells.len() != side.config.n_cells() * side.detectors.len() {
        return Err(Error::parse(csv, "cell count does not match the sidecar config"));
    }
    Ok(FailureHeatmap {
        config: side.config,
        detectors: side.detectors,
        cells,
    })
}

/// Recomputes a sweep from its JSON sidecar.
pub fn replay_sweep(sidecar: &Path, mode: Execution) -> Result<FailureHeatmap> {
    let side = read_sidecar(sidecar)?;
    let hm = run_sweep(&side.config, mode)?;
    if hm.detectors != side.detectors {
        return Err(Error::parse(sidecar, "detectors resolve differently than recorded"));
    }
    Ok(hm)
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| r[k] = avg);
        i = j + 1;
    }
    r
}

/// Rows (fixed `|x0|`) whose Spearman correlation with `sigma_w` is negative,
/// and columns (fixed `sigma_w`) whose correlation with `|x0|` is positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrendReport {
    pub bad_rows: Vec<usize>,
    pub bad_columns: Vec<usize>,
}

pub fn trend_report(hm: &FailureHeatmap, detector: usize) -> TrendReport {
    let est = hm.estimates(detector);
    let (sw, x0) = (&hm.config.sigma_w_grid, &hm.config.x0_grid);
    let mut r = TrendReport::default();
    for x in 0..x0.len() {
        let row: Vec<f64> = est.iter().map(|e| e[x]).collect();
        if spearman(sw, &row).is_some_and(|c| c < 0.0) {
            r.bad_rows.push(x);
        }
    }
    let mags: Vec<f64> = x0.iter().map(|v| v.abs()).collect();
    for (s, col) in est.iter().enumerate() {
        if spearman(&mags, col).is_some_and(|c| c > 0.0) {
            r.bad_columns.push(s);
        }
    }
    r
}

/// Cells where `a`'s estimate exceeds `b`'s by more than two standard
/// errors of the difference.
pub fn dominance_violations(hm: &FailureHeatmap, a: usize, b: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..hm.config.sigma_w_grid.len() {
        for x in 0..hm.config.x0_grid.len() {
            let (ca, cb) = (hm.cell(s, x, a), hm.cell(s, x, b));
            let se = (ca.std_error().powi(2) + cb.std_error().powi(2)).sqrt();
            if ca.estimate() > cb.estimate() + 2.0 * se {
                out.push((s, x));
            }
        }
    }
    out
}
