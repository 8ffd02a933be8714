//! Elementwise support detectors.
//!
//! Both detectors return a log-domain score `h`; `h > 0` decides H1 (element
//! on the support) and `h <= 0` decides H0.

use serde::{Deserialize, Serialize};

use crate::channel::PosteriorParams;
use crate::density::{log_normal_pdf, GridSpec, HybridDensity, MAX_POINTS};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::signal::SpikeSlabPrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorKind {
    Bht,
    /// `delta` converts the spike mass into a density (`mass / delta`) so it
    /// can be compared with the slab.
    CsBp { delta: f64 },
}

impl DetectorKind {
    pub fn csbp(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!("CS-BP delta must be positive, got {delta}")));
        }
        Ok(DetectorKind::CsBp { delta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Bht => "bht",
            DetectorKind::CsBp { .. } => "csbp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub h_value: f64,
    pub decision: bool,
}

impl DetectionResult {
    /// Ties and NaN go to H0.
    pub fn from_h(h_value: f64) -> Self {
        Self {
            h_value,
            decision: h_value > 0.0,
        }
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Closed-form BHT score. The two integrals reduce to `rho / q` and
/// `(1 - rho) / (1 - q)`, so `h = log(rho / (1 - rho))`; it is assembled here
/// from its pieces with `log rho` and `log(1 - rho)` taken from the log-odds, so
/// saturated posteriors keep their full score.
pub fn h_bht_analytic(params: &PosteriorParams, q: f64) -> DetectionResult {
    let log_num = params.ln_rho() - q.ln();
    let log_den = params.ln_one_minus_rho() - (1.0 - q).ln();
    DetectionResult::from_h(q.ln() - (1.0 - q).ln() + log_num - log_den)
}

/// Numeric BHT score on a grid posterior.
///
/// The point mass at zero, in both the prior and the posterior, is replaced
/// by `Normal(0, eps^2)`, and both hypothesis integrals
///
/// ```text
/// num = ∫ f1(x)/f(x) post(x) dx      den = ∫ N_eps(x)/f(x) post(x) dx
/// f = q f1 + (1 - q) N_eps,  f1 = N(0, sigma_x^2)
/// ```
///
/// are evaluated directly. Around zero, where `N_eps` lives, a fine sub-grid
/// is used and the slab is interpolated between nodes in log space (the slab
/// near zero is often a far Gaussian tail, which straight-line interpolation
/// overstates by orders of magnitude).
pub fn h_bht_grid(posterior: &HybridDensity, prior: &SpikeSlabPrior, eps: f64) -> Result<DetectionResult> {
    posterior.ensure_normalized()?;
    let log_slab: Vec<f64> = posterior.slab().iter().map(|v| v.ln()).collect();
    bht_log_quadrature(posterior.grid(), &log_slab, posterior.spike().ln(), prior, eps)
}

/// [`h_bht_grid`] for the closed-form posterior sampled on `grid`, carried in
/// log form throughout so that saturated posteriors (log-odds beyond the
/// `f64` exponent range) still produce finite scores.
pub fn h_bht_grid_params(
    params: &PosteriorParams,
    grid: &GridSpec,
    prior: &SpikeSlabPrior,
    eps: f64,
) -> Result<DetectionResult> {
    let theta = params.theta();
    if theta < 2.0 * grid.spacing() {
        return Err(Error::Resolution {
            std: theta,
            spacing: grid.spacing(),
        });
    }
    let ln_rho = params.ln_rho();
    let log_slab: Vec<f64> = grid
        .nodes()
        .map(|x| ln_rho + log_normal_pdf(x, params.mu, theta))
        .collect();
    bht_log_quadrature(grid, &log_slab, params.ln_one_minus_rho(), prior, eps)
}

/// Refines the grid (doubling `n_points` from the resolving grid) until two
/// successive [`h_bht_grid_params`] values differ by less than `tol`.
pub fn h_bht_converged(
    params: &PosteriorParams,
    prior: &SpikeSlabPrior,
    half_width: f64,
    tol: f64,
) -> Result<(DetectionResult, GridSpec)> {
    let mut grid = GridSpec::resolving(half_width, params.theta())?;
    let mut last = h_bht_grid_params(params, &grid, prior, grid.spacing() / 8.0)?;
    while grid.n_points() < MAX_POINTS {
        grid = GridSpec::new(half_width, 2 * grid.n_points())?;
        let next = h_bht_grid_params(params, &grid, prior, grid.spacing() / 8.0)?;
        let settled = (next.h_value - last.h_value).abs() < tol;
        last = next;
        if settled {
            return Ok((last, grid));
        }
    }
    log::warn!("BHT grid score did not settle to {tol} by {MAX_POINTS} points");
    Ok((last, grid))
}

/// Running log-sum-exp.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY || v.is_nan() {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    fn ln(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

fn bht_log_quadrature(
    grid: &GridSpec,
    log_slab: &[f64],
    log_spike: f64,
    prior: &SpikeSlabPrior,
    eps: f64,
) -> Result<DetectionResult> {
    let dx = grid.spacing();
    if !(eps > 0.0 && eps <= dx) {
        return Err(Error::invalid(format!("eps must lie in (0, dx = {dx}], got {eps}")));
    }
    let q = prior.q;
    let sx = prior.sigma_x;
    let log_q = q.ln();
    let log_1q = (1.0 - q).ln();
    // log f1/f and log N_eps/f
    let ratios = |x: f64| -> (f64, f64) {
        let lf1 = log_normal_pdf(x, 0.0, sx);
        let le = log_normal_pdf(x, 0.0, eps);
        let lf = logaddexp(log_q + lf1, log_1q + le);
        (lf1 - lf, le - lf)
    };

    let n = grid.n_points();
    let c = grid.center();
    let k = ((12.0 * eps).max(2.0 * dx) / dx).ceil() as usize;
    let k = k.min(c).min(n - 1 - c);

    let mut num = LogSum::new();
    let mut den = LogSum::new();
    // Coarse trapezoid on both tails, ending on the window edges.
    let log_dx = dx.ln();
    let log_half_dx = (0.5 * dx).ln();
    for range in [0..=c - k, c + k..=n - 1] {
        let (lo, hi) = (*range.start(), *range.end());
        for m in range {
            let lw = if m == lo || m == hi { log_half_dx } else { log_dx };
            let (r1, r0) = ratios(grid.x(m));
            num.add(lw + r1 + log_slab[m]);
            den.add(lw + r0 + log_slab[m]);
        }
    }
    // Fine trapezoid across the window.
    let per_cell = 256usize.max((32.0 * dx / eps).ceil() as usize);
    let steps = 2 * k * per_cell;
    let h = dx / per_cell as f64;
    let (log_h, log_half_h) = (h.ln(), (0.5 * h).ln());
    for s in 0..=steps {
        let x = -(k as f64) * dx + s as f64 * h;
        let lw = if s == 0 || s == steps { log_half_h } else { log_h };
        let t = c as f64 + x / dx;
        let i = (t.floor() as usize).min(n - 2);
        let f = t - i as f64;
        let slab_here = interp_log(log_slab[i], log_slab[i + 1], f);
        let mass = logaddexp(slab_here, log_spike + log_normal_pdf(x, 0.0, eps));
        let (r1, r0) = ratios(x);
        num.add(lw + r1 + mass);
        den.add(lw + r0 + mass);
    }
    Ok(DetectionResult::from_h(log_q - log_1q + num.ln() - den.ln()))
}

fn interp_log(a: f64, b: f64, f: f64) -> f64 {
    if a.is_finite() && b.is_finite() {
        (1.0 - f) * a + f * b
    } else {
        // a zero endpoint: fall back to straight-line interpolation
        logaddexp(a + (1.0 - f).ln(), b + f.ln())
    }
}

/// Closed-form CS-BP score: slab peak at the MAP point `mu` against the
/// density at zero, `(1 - rho) / delta + rho N(0; mu, theta^2)`.
pub fn h_csbp_analytic(params: &PosteriorParams, delta: f64) -> Result<DetectionResult> {
    DetectorKind::csbp(delta)?;
    let ln_rho = params.ln_rho();
    let theta = params.theta();
    if theta == 0.0 {
        // Degenerate limits: a point mass either at x0 != 0 or merged with the spike.
        let h = if params.rho > 0.0 && params.mu != 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        return Ok(DetectionResult::from_h(h));
    }
    let log_peak = ln_rho + log_normal_pdf(params.mu, params.mu, theta);
    let log_zero = logaddexp(
        params.ln_one_minus_rho() - delta.ln(),
        ln_rho + log_normal_pdf(0.0, params.mu, theta),
    );
    Ok(DetectionResult::from_h(log_peak - log_zero))
}

/// Grid CS-BP score: largest slab value off the zero node against
/// `spike / delta + slab(0)`.
pub fn h_csbp_grid(posterior: &HybridDensity, delta: f64) -> Result<DetectionResult> {
    DetectorKind::csbp(delta)?;
    posterior.ensure_normalized()?;
    let c = posterior.grid().center();
    let peak = posterior
        .slab()
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != c)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let at_zero = posterior.spike() / delta + posterior.slab_at_zero();
    Ok(DetectionResult::from_h(peak.ln() - at_zero.ln()))
}

/// A marginal posterior either detector can score.
pub trait Posterior: Sync {
    fn detect(&self, kind: &DetectorKind, prior: &SpikeSlabPrior) -> Result<DetectionResult>;
}

impl Posterior for PosteriorParams {
    fn detect(&self, kind: &DetectorKind, prior: &SpikeSlabPrior) -> Result<DetectionResult> {
        match *kind {
            DetectorKind::Bht => Ok(h_bht_analytic(self, prior.q)),
            DetectorKind::CsBp { delta } => h_csbp_analytic(self, delta),
        }
    }
}

impl Posterior for HybridDensity {
    fn detect(&self, kind: &DetectorKind, prior: &SpikeSlabPrior) -> Result<DetectionResult> {
        match *kind {
            DetectorKind::Bht => h_bht_grid(self, prior, self.grid().spacing() / 8.0),
            DetectorKind::CsBp { delta } => h_csbp_grid(self, delta),
        }
    }
}

/// Elementwise decisions for `n` elements.
pub fn detect_support<P: Posterior>(
    posteriors: &[P],
    kind: &DetectorKind,
    prior: &SpikeSlabPrior,
    n: usize,
) -> Result<Vec<bool>> {
    if posteriors.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: posteriors.len(),
        });
    }
    exec::try_map(Execution::default(), posteriors.len(), |i| {
        posteriors[i].detect(kind, prior).map(|r| r.decision)
    })
}
