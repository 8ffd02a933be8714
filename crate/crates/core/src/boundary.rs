//! Phase-transition boundaries of the decoupled channel: for each noise level
//! the magnitude `x0_star` above which a detector decides H1.
//! Success region is `|x0| > x0_star(sigma_w)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{posterior_params, ChannelPoint};
use crate::density::GridSpec;
use crate::detectors::{DetectionResult, DetectorKind, Posterior};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::signal::SpikeSlabPrior;

/// Closed-form detection value of the decoupled channel at `(sigma_w, x0)`.
pub fn detection_value(
    kind: &DetectorKind,
    sigma_w: f64,
    x0: f64,
    l: usize,
    prior: &SpikeSlabPrior,
) -> Result<DetectionResult> {
    let p = ChannelPoint::new(x0, sigma_w, l, *prior)?;
    posterior_params(&p)?.detect(kind, prior)
}

/// CS-BP spacing used when none is given: the grid that resolves the
/// narrowest posterior slab over the noise levels considered.
pub fn default_csbp_delta(prior: &SpikeSlabPrior, l: usize, min_sigma_w: f64) -> Result<f64> {
    let theta = posterior_params(&ChannelPoint::new(0.0, min_sigma_w, l, *prior)?)?.theta();
    Ok(GridSpec::resolving(8.0 * prior.sigma_x, theta)?.spacing())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Search range is `[0, x_max]`.
    pub x_max: f64,
    pub tol: f64,
    pub prescan: usize,
}

impl SolverConfig {
    pub fn for_prior(prior: &SpikeSlabPrior) -> Self {
        Self {
            x_max: 8.0 * prior.sigma_x,
            tol: 1e-6,
            prescan: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max >= 0.0 && self.x_max.is_finite()) {
            return Err(Error::invalid(format!("x_max must be finite and >= 0, got {}", self.x_max)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("solver tol must be positive, got {}", self.tol)));
        }
        if self.prescan < 2 {
            return Err(Error::invalid("prescan needs at least 2 nodes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    /// `+inf` when nothing in the search range succeeds.
    pub x0_star: f64,
    /// Final bisection bracket: `h(lo) <= 0 < h(hi)`. Both `+inf` for the sentinel.
    pub lo: f64,
    pub hi: f64,
    /// The prescan saw more than one sign change; the smallest crossing was kept.
    pub multiple_crossings: bool,
}

pub fn boundary_point(
    kind: &DetectorKind,
    sigma_w: f64,
    l: usize,
    prior: &SpikeSlabPrior,
    solver: &SolverConfig,
) -> Result<BoundaryPoint> {
    if !(sigma_w > 0.0) {
        return Err(Error::invalid(format!("sigma_w must be > 0, got {sigma_w}")));
    }
    solver.validate()?;
    let h = |x: f64| detection_value(kind, sigma_w, x, l, prior).map(|r| r.decision);
    if h(0.0)? {
        return Err(Error::PositiveAtOrigin);
    }
    let k = solver.prescan;
    let nodes: Vec<f64> = (0..k).map(|i| solver.x_max * i as f64 / (k - 1) as f64).collect();
    let signs = nodes.iter().map(|&x| h(x)).collect::<Result<Vec<bool>>>()?;
    let crossings: Vec<usize> = (1..k).filter(|&i| signs[i] != signs[i - 1]).collect();
    let Some(&first) = crossings.first() else {
        return Ok(BoundaryPoint {
            x0_star: f64::INFINITY,
            lo: f64::INFINITY,
            hi: f64::INFINITY,
            multiple_crossings: false,
        });
    };
    let (mut lo, mut hi) = (nodes[first - 1], nodes[first]);
    while hi - lo > solver.tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BoundaryPoint {
        x0_star: 0.5 * (lo + hi),
        lo,
        hi,
        multiple_crossings: crossings.len() > 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    MultipleCrossings,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub q: f64,
    pub sigma_x: f64,
    pub l: usize,
    /// CS-BP spacing; `None` for BHT.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtBoundary {
    pub detector: DetectorKind,
    pub params: CurveParams,
    pub solver: SolverConfig,
    pub sigma_w_grid: Vec<f64>,
    /// `NaN` where the point failed; see `status`.
    pub x0_star: Vec<f64>,
    pub brackets: Vec<(f64, f64)>,
    pub status: Vec<PointStatus>,
    /// Indices `i` with `x0_star[i + 1] < x0_star[i]`.
    pub decreasing_at: Vec<usize>,
}

impl PtBoundary {
    pub fn len(&self) -> usize {
        self.sigma_w_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_w_grid.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.decreasing_at.is_empty()
    }

    pub fn flagged(&self) -> impl Iterator<Item = (usize, &PointStatus)> {
        self.status.iter().enumerate().filter(|(_, s)| **s != PointStatus::Ok)
    }

    /// Whether `|x0|` fails at node `i`. Inside the final bracket the
    /// detector is evaluated directly, so this agrees with the closed form.
    pub fn fails_at(&self, i: usize, x0: f64, prior: &SpikeSlabPrior) -> Result<bool> {
        let x = x0.abs();
        let (lo, hi) = self.brackets[i];
        if let PointStatus::Failed(msg) = &self.status[i] {
            return Err(Error::invalid(format!("boundary point {i} failed: {msg}")));
        }
        if x <= lo {
            return Ok(true);
        }
        if x >= hi && hi.is_finite() {
            return Ok(false);
        }
        let r = detection_value(&self.detector, self.sigma_w_grid[i], x, self.params.l, prior)?;
        Ok(!r.decision)
    }
}

fn check_sigma_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("sigma_w grid is empty"));
    }
    if grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("sigma_w grid must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sigma_w grid must be strictly increasing"));
    }
    Ok(())
}

pub fn boundary_curve(
    kind: &DetectorKind,
    sigma_w_grid: &[f64],
    l: usize,
    prior: &SpikeSlabPrior,
    solver: &SolverConfig,
    mode: Execution,
) -> Result<PtBoundary> {
    check_sigma_grid(sigma_w_grid)?;
    solver.validate()?;
    let points = exec::map(mode, sigma_w_grid.len(), |i| {
        boundary_point(kind, sigma_w_grid[i], l, prior, solver)
    });
    let mut x0_star = Vec::with_capacity(points.len());
    let mut brackets = Vec::with_capacity(points.len());
    let mut status = Vec::with_capacity(points.len());
    for p in points {
        match p {
            Ok(p) => {
                x0_star.push(p.x0_star);
                brackets.push((p.lo, p.hi));
                status.push(if p.multiple_crossings {
                    PointStatus::MultipleCrossings
                } else {
                    PointStatus::Ok
                });
            }
            Err(e) => {
                x0_star.push(f64::NAN);
                brackets.push((f64::NAN, f64::NAN));
                status.push(PointStatus::Failed(e.to_string()));
            }
        }
    }
    // an infinite entry followed by a finite one counts as a decrease
    let decreasing_at = (0..x0_star.len().saturating_sub(1))
        .filter(|&i| x0_star[i + 1] < x0_star[i])
        .collect();
    let delta = match *kind {
        DetectorKind::CsBp { delta } => Some(delta),
        DetectorKind::Bht => None,
    };
    Ok(PtBoundary {
        detector: *kind,
        params: CurveParams {
            q: prior.q,
            sigma_x: prior.sigma_x,
            l,
            delta,
        },
        solver: *solver,
        sigma_w_grid: sigma_w_grid.to_vec(),
        x0_star,
        brackets,
        status,
        decreasing_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// `a.x0_star <= b.x0_star` at every node.
    pub dominates: bool,
    /// Nodes where it does not hold.
    pub violations: Vec<usize>,
    /// Gaps are `b - a`, over nodes where both are finite; `None` if there are none.
    pub max_gap: Option<f64>,
    pub mean_gap: Option<f64>,
    /// Least-squares slope of the gap against `sigma_w` over the upper half of the grid.
    pub upper_half_slope: Option<f64>,
}

pub fn region_dominance(a: &PtBoundary, b: &PtBoundary) -> Result<DominanceReport> {
    if a.sigma_w_grid != b.sigma_w_grid {
        return Err(Error::GridMismatch("boundaries use different sigma_w grids".into()));
    }
    let (pa, pb) = (a.params, b.params);
    if pa.q != pb.q || pa.sigma_x != pb.sigma_x || pa.l != pb.l {
        return Err(Error::GridMismatch(format!(
            "boundaries use different channels: (q, sigma_x, L) = ({}, {}, {}) vs ({}, {}, {})",
            pa.q, pa.sigma_x, pa.l, pb.q, pb.sigma_x, pb.l
        )));
    }
    let violations: Vec<usize> = (0..a.len())
        .filter(|&i| !(a.x0_star[i] <= b.x0_star[i]))
        .collect();
    let gaps: Vec<(f64, f64)> = (0..a.len())
        .filter(|&i| a.x0_star[i].is_finite() && b.x0_star[i].is_finite())
        .map(|i| (a.sigma_w_grid[i], b.x0_star[i] - a.x0_star[i]))
        .collect();
    let max_gap = gaps.iter().map(|g| g.1).reduce(f64::max);
    let mean_gap = (!gaps.is_empty()).then(|| gaps.iter().map(|g| g.1).sum::<f64>() / gaps.len() as f64);
    let half = a.sigma_w_grid[a.len() / 2];
    let upper: Vec<(f64, f64)> = gaps.iter().copied().filter(|g| g.0 >= half).collect();
    Ok(DominanceReport {
        dominates: violations.is_empty(),
        violations,
        max_gap,
        mean_gap,
        upper_half_slope: slope(&upper),
    })
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Everything needed to recompute a boundary report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub q: f64,
    pub sigma_x: f64,
    pub l: usize,
    pub sigma_w_grid: Vec<f64>,
    /// CS-BP spacing; defaults to [`default_csbp_delta`] at the smallest `sigma_w`.
    pub delta: Option<f64>,
    pub solver: Option<SolverConfig>,
}

impl BoundaryConfig {
    pub fn prior(&self) -> Result<SpikeSlabPrior> {
        SpikeSlabPrior::gaussian(self.q, self.sigma_x)
    }

    pub fn validate(&self) -> Result<()> {
        self.prior()?;
        if self.l == 0 {
            return Err(Error::invalid("column weight L must be >= 1"));
        }
        check_sigma_grid(&self.sigma_w_grid)?;
        if let Some(d) = self.delta {
            DetectorKind::csbp(d)?;
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        Ok(())
    }

    /// Stem for output files, e.g. `boundary_q0.05_sx5_L4`.
    pub fn stem(&self) -> String {
        format!("boundary_q{}_sx{}_L{}", self.q, self.sigma_x, self.l)
    }
}

/// BHT and CS-BP curves for one channel, plus CS-BP at half its spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub config: BoundaryConfig,
    pub delta: f64,
    pub bht: PtBoundary,
    pub csbp: PtBoundary,
    pub csbp_half_delta: PtBoundary,
    pub dominance: DominanceReport,
}

pub fn run_boundary(cfg: &BoundaryConfig, mode: Execution) -> Result<BoundaryReport> {
    cfg.validate()?;
    let prior = cfg.prior()?;
    let grid = &cfg.sigma_w_grid;
    let delta = match cfg.delta {
        Some(d) => d,
        None => default_csbp_delta(&prior, cfg.l, grid[0])?,
    };
    let solver = cfg.solver.unwrap_or_else(|| SolverConfig::for_prior(&prior));
    let curve = |kind: DetectorKind| boundary_curve(&kind, grid, cfg.l, &prior, &solver, mode);
    let bht = curve(DetectorKind::Bht)?;
    let csbp = curve(DetectorKind::csbp(delta)?)?;
    let csbp_half_delta = curve(DetectorKind::csbp(delta / 2.0)?)?;
    let dominance = region_dominance(&bht, &csbp)?;
    Ok(BoundaryReport {
        config: cfg.clone(),
        delta,
        bht,
        csbp,
        csbp_half_delta,
        dominance,
    })
}

fn header(out: &mut String, r: &BoundaryReport) {
    let c = &r.config;
    let _ = writeln!(out, "# q = {}", c.q);
    let _ = writeln!(out, "# sigma_x = {}", c.sigma_x);
    let _ = writeln!(out, "# L = {}", c.l);
    let _ = writeln!(out, "# delta = {}", r.delta);
    let _ = writeln!(out, "# solver_tol = {}", r.bht.solver.tol);
    let _ = writeln!(out, "# x_max = {}", r.bht.solver.x_max);
}

impl BoundaryReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, self);
        out.push_str("sigma_w,x0_star_bht,x0_star_csbp\n");
        for i in 0..self.bht.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.bht.sigma_w_grid[i], self.bht.x0_star[i], self.csbp.x0_star[i]
            );
        }
        out
    }

    /// CS-BP at `delta` and `delta / 2`.
    pub fn delta_csv(&self) -> String {
        let mut out = String::new();
        header(&mut out, self);
        out.push_str("sigma_w,x0_star_csbp_delta,x0_star_csbp_half_delta\n");
        for i in 0..self.csbp.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.csbp.sigma_w_grid[i], self.csbp.x0_star[i], self.csbp_half_delta.x0_star[i]
            );
        }
        out
    }

    /// Writes `<stem>.csv`, `<stem>_delta.csv` and the `<stem>.json` sidecar
    /// into `dir`. Returns the CSV path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.config.stem();
        let csv = dir.join(format!("{stem}.csv"));
        write_file(&csv, &self.to_csv())?;
        write_file(&dir.join(format!("{stem}_delta.csv")), &self.delta_csv())?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            delta: self.delta,
            dominance: self.dominance.clone(),
            flagged: self
                .bht
                .flagged()
                .map(|(i, s)| ("bht".to_string(), i, s.clone()))
                .chain(self.csbp.flagged().map(|(i, s)| ("csbp".to_string(), i, s.clone())))
                .collect(),
        };
        write_file(
            &dir.join(format!("{stem}.json")),
            &serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(csv)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: BoundaryConfig,
    delta: f64,
    dominance: DominanceReport,
    flagged: Vec<(String, usize, PointStatus)>,
}

/// Recomputes a report from its JSON sidecar.
pub fn replay_boundary(sidecar: &Path, mode: Execution) -> Result<BoundaryReport> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(sidecar, e.to_string()))?;
    let pinned = BoundaryConfig {
        delta: Some(s.delta),
        ..s.config.clone()
    };
    let mut r = run_boundary(&pinned, mode)?;
    r.config = s.config;
    Ok(r)
}

/// Writes through `<path>.tmp` and a rename, so an interrupted run never
/// leaves a complete-looking file behind.
pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> SpikeSlabPrior {
        SpikeSlabPrior::gaussian(0.05, 5.0).unwrap()
    }

    fn solver() -> SolverConfig {
        SolverConfig::for_prior(&fig2())
    }

    #[test]
    fn bht_boundary_is_rho_half() {
        let p = boundary_point(&DetectorKind::Bht, 2.0, 4, &fig2(), &solver()).unwrap();
        assert!(!p.multiple_crossings);
        let rho = |x: f64| posterior_params(&ChannelPoint::new(x, 2.0, 4, fig2()).unwrap()).unwrap().rho;
        assert!(rho(p.lo) <= 0.5 && rho(p.hi) > 0.5);
        // dense scan at step 1e-4
        let scan = (0..200_000)
            .map(|k| k as f64 * 1e-4)
            .find(|&x| rho(x) > 0.5)
            .unwrap();
        assert!((scan - p.x0_star).abs() <= 1e-4, "{scan} vs {}", p.x0_star);
    }

    #[test]
    fn near_noiseless_boundary_is_near_zero() {
        let d = default_csbp_delta(&fig2(), 4, 1e-4).unwrap();
        for kind in [DetectorKind::Bht, DetectorKind::csbp(d).unwrap()] {
            let p = boundary_point(&kind, 1e-4, 4, &fig2(), &solver()).unwrap();
            assert!(p.x0_star < 1e-2, "{} {}", kind.name(), p.x0_star);
        }
    }

    #[test]
    fn csbp_misses_fig2_point() {
        let kind = DetectorKind::csbp(default_csbp_delta(&fig2(), 4, 0.1).unwrap()).unwrap();
        let p = boundary_point(&kind, 2.0, 4, &fig2(), &solver()).unwrap();
        assert!(p.x0_star > 2.5);
    }

    #[test]
    fn sentinel_when_nothing_succeeds() {
        let s = SolverConfig { x_max: 0.5, ..solver() };
        let p = boundary_point(&DetectorKind::Bht, 5.0, 4, &fig2(), &s).unwrap();
        assert_eq!(p.x0_star, f64::INFINITY);
    }

    #[test]
    fn positive_at_origin_is_an_error() {
        let prior = SpikeSlabPrior::gaussian(0.7, 5.0).unwrap();
        // posterior stays near the prior at high noise
        let r = boundary_point(&DetectorKind::Bht, 50.0, 4, &prior, &SolverConfig::for_prior(&prior));
        assert!(matches!(r, Err(Error::PositiveAtOrigin)));
    }

    #[test]
    fn curve_rejects_bad_grids() {
        for g in [vec![], vec![1.0, 1.0], vec![0.0, 1.0]] {
            let r = boundary_curve(&DetectorKind::Bht, &g, 4, &fig2(), &solver(), Execution::Sequential);
            assert!(r.is_err());
        }
    }

    #[test]
    fn self_dominance_has_zero_gap() {
        let g: Vec<f64> = (1..=10).map(|i| i as f64 * 0.5).collect();
        let c = boundary_curve(&DetectorKind::Bht, &g, 4, &fig2(), &solver(), Execution::Sequential).unwrap();
        let r = region_dominance(&c, &c).unwrap();
        assert!(r.dominates);
        assert_eq!(r.max_gap, Some(0.0));
        assert_eq!(r.mean_gap, Some(0.0));
        assert!(c.is_monotone());
    }

    #[test]
    fn dominance_needs_matching_channels() {
        let g = [1.0, 2.0];
        let a = boundary_curve(&DetectorKind::Bht, &g, 4, &fig2(), &solver(), Execution::Sequential).unwrap();
        let other = SpikeSlabPrior::gaussian(0.02, 5.0).unwrap();
        let b = boundary_curve(&DetectorKind::Bht, &g, 4, &other, &solver(), Execution::Sequential).unwrap();
        assert!(matches!(region_dominance(&a, &b), Err(Error::GridMismatch(_))));
        let c = boundary_curve(&DetectorKind::Bht, &[1.0, 3.0], 4, &fig2(), &solver(), Execution::Sequential).unwrap();
        assert!(region_dominance(&a, &c).is_err());
    }

    #[test]
    fn classification_matches_closed_form() {
        let g = [0.5, 1.0, 2.0, 4.0];
        let prior = fig2();
        let c = boundary_curve(&DetectorKind::Bht, &g, 4, &prior, &solver(), Execution::Sequential).unwrap();
        for (i, &sw) in g.iter().enumerate() {
            let star = c.x0_star[i];
            for x in [0.0, star - 1e-3, star, star + 1e-7, star + 1e-3, 30.0] {
                let direct = !detection_value(&c.detector, sw, x, 4, &prior).unwrap().decision;
                assert_eq!(c.fails_at(i, x, &prior).unwrap(), direct, "sw {sw} x {x}");
            }
        }
    }

    #[test]
    fn report_round_trips_through_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BoundaryConfig {
            q: 0.05,
            sigma_x: 5.0,
            l: 4,
            sigma_w_grid: vec![0.5, 1.0, 2.0],
            delta: None,
            solver: None,
        };
        let r = run_boundary(&cfg, Execution::Sequential).unwrap();
        assert!(r.dominance.dominates);
        let csv = r.write(dir.path()).unwrap();
        let first = std::fs::read(&csv).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert!(text.contains("sigma_w,x0_star_bht,x0_star_csbp\n"));
        assert!(text.starts_with("# q = 0.05\n"));

        let sidecar = dir.path().join(format!("{}.json", cfg.stem()));
        let again = replay_boundary(&sidecar, Execution::Parallel).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let csv2 = again.write(dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(csv2).unwrap());
    }
}
