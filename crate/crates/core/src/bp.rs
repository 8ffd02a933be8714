//! Belief propagation over the bipartite graph of a sparse binary matrix,
//! with messages carried as hybrid densities, plus a brute-force oracle for
//! tiny instances.
//!
//! Check messages are built spectrally. Every variable-to-check message is
//! transformed once per row on a frame of `n` nodes; rows whose neighbor sum
//! spills past that frame are redone on wider ones. The leave-one-out
//! products come from prefix and suffix products, so a row of degree `d`
//! costs `2d` real FFTs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{FrameFft, GridSpec, HybridDensity};
use crate::error::{Error, Result};
use crate::measurement::SparseBinaryMatrix;
use crate::signal::{prior_density, SpikeSlabPrior};

/// Largest `N` accepted by [`brute_force_posterior`].
pub const BRUTE_FORCE_MAX_N: usize = 12;

/// Mass allowed in the outer quarter of the convolution frame before a check
/// update is declared aliased.
const ALIAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub grid: GridSpec,
}

impl BpConfig {
    /// 20 iterations, tolerance 1e-4, no damping, grid `±8 sigma_x` at 1024 points.
    pub fn for_prior(prior: &SpikeSlabPrior) -> Result<Self> {
        Ok(Self {
            max_iters: 20,
            tol: 1e-4,
            damping: 0.0,
            grid: GridSpec::for_sigma_x(prior.sigma_x)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Noise width actually used in check updates: never below half a grid step,
/// so a noiseless measurement still convolves with a representable kernel.
pub fn effective_noise(sigma_w: f64, grid: &GridSpec) -> f64 {
    sigma_w.max(0.5 * grid.spacing())
}

/// Message store. Edge `e = i * L + k` joins column `i` and its `k`-th row.
/// Check-to-variable messages never carry a spike.
#[derive(Debug, Clone)]
pub struct BpState {
    grid: GridSpec,
    l: usize,
    v_slab: Vec<f64>,
    v_spike: Vec<f64>,
    u_slab: Vec<f64>,
    iteration: usize,
}

impl BpState {
    fn new(prior: &HybridDensity, edges: usize, l: usize) -> Self {
        let n = prior.grid().n_points();
        let mut v_slab = Vec::with_capacity(edges * n);
        for _ in 0..edges {
            v_slab.extend_from_slice(prior.slab());
        }
        Self {
            grid: *prior.grid(),
            l,
            v_slab,
            v_spike: vec![prior.spike(); edges],
            u_slab: vec![0.0; edges * n],
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn n_edges(&self) -> usize {
        self.v_spike.len()
    }

    pub fn edge(&self, column: usize, k: usize) -> usize {
        column * self.l + k
    }

    pub fn v_message(&self, e: usize) -> HybridDensity {
        let n = self.grid.n_points();
        HybridDensity::from_parts(self.grid, self.v_slab[e * n..(e + 1) * n].to_vec(), self.v_spike[e])
            .expect("stored messages are valid")
    }

    pub fn u_message(&self, e: usize) -> HybridDensity {
        let n = self.grid.n_points();
        HybridDensity::from_parts(self.grid, self.u_slab[e * n..(e + 1) * n].to_vec(), 0.0)
            .expect("stored messages are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpDiagnostics {
    pub iterations: usize,
    /// Largest per-edge L1 change of the variable messages in the last iteration.
    pub final_delta: f64,
    pub converged: bool,
    /// `trace[l]` is the max message change of iteration `l + 1`.
    pub trace: Vec<f64>,
    /// Updates that collapsed to zero mass and were replaced (previous message
    /// or flat likelihood).
    pub fallbacks: usize,
    pub noise_std: f64,
}

impl BpDiagnostics {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,max_delta\n");
        for (i, d) in self.trace.iter().enumerate() {
            let _ = writeln!(s, "{},{:e}", i + 1, d);
        }
        s
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct BpOutcome {
    pub beliefs: Vec<HybridDensity>,
    pub diagnostics: BpDiagnostics,
    pub state: BpState,
}

/// FFT plan and scratch for check updates on one grid. The convolution
/// frame holds `len` nodes centred on zero.
struct CheckKernel {
    grid: GridSpec,
    len: usize,
    fft: FrameFft,
    frame: Vec<f64>,
    density: Vec<f64>,
    noise: Vec<Complex64>,
    /// Spectrum bins from here on are zero once the noise is applied.
    active: usize,
    spectra: Vec<Vec<Complex64>>,
    prefix: Vec<Vec<Complex64>>,
    suffix: Vec<Complex64>,
    loo: Vec<Complex64>,
}

impl CheckKernel {
    fn new(grid: GridSpec, noise_std: f64, len: usize) -> Self {
        let mut fft = FrameFft::new(len);
        let mut frame = vec![0.0; len];
        let spec_len = fft.spectrum_len();
        let mut noise = vec![Complex64::new(0.0, 0.0); spec_len];
        fft.gaussian_spectrum(noise_std, grid.spacing(), &mut frame, &mut noise);
        let active = noise
            .iter()
            .rposition(|v| v.norm() > 1e-300)
            .map_or(spec_len, |k| k + 1);
        Self {
            grid,
            len,
            fft,
            frame,
            density: vec![0.0; len],
            noise,
            active,
            spectra: Vec::new(),
            prefix: Vec::new(),
            suffix: vec![Complex64::new(0.0, 0.0); spec_len],
            loo: vec![Complex64::new(0.0, 0.0); spec_len],
        }
    }

    fn ensure_degree(&mut self, d: usize) {
        let spec_len = self.fft.spectrum_len();
        while self.spectra.len() < d {
            self.spectra.push(vec![Complex64::new(0.0, 0.0); spec_len]);
        }
        while self.prefix.len() < d + 1 {
            self.prefix.push(vec![Complex64::new(0.0, 0.0); spec_len]);
        }
    }

    fn load(&mut self, idx: usize, slab: &[f64], spike: f64) {
        let out = &mut self.spectra[idx];
        self.fft.slab_spectrum(&self.grid, slab, &mut self.frame, out);
        out.iter_mut().for_each(|v| v.re += spike);
    }

    /// Prefix products in `prefix[1..=d]`; `prefix[0]` is one.
    fn build_prefix(&mut self, d: usize) {
        let a = self.active;
        self.prefix[0][..a].iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        for k in 0..d {
            let (done, rest) = self.prefix.split_at_mut(k + 1);
            for ((o, p), s) in rest[0][..a].iter_mut().zip(&done[k][..a]).zip(&self.spectra[k][..a]) {
                *o = p * s;
            }
        }
    }

    /// All check-to-variable messages of one row, written into `u_slab`.
    /// Returns how many had to be replaced by a flat message.
    fn row(
        &mut self,
        y: f64,
        edges: &[usize],
        v_slab: &[f64],
        v_spike: &[f64],
        u_slab: &mut [f64],
    ) -> Result<usize> {
        let n = self.grid.n_points();
        let d = edges.len();
        let a = self.active;
        self.ensure_degree(d);
        for (idx, &e) in edges.iter().enumerate() {
            self.load(idx, &v_slab[e * n..(e + 1) * n], v_spike[e]);
        }
        self.build_prefix(d);
        self.suffix[..a].iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        let mut flat = 0;
        for idx in (0..d).rev() {
            for (((o, p), s), w) in self.loo[..a]
                .iter_mut()
                .zip(&self.prefix[idx][..a])
                .zip(&self.suffix[..a])
                .zip(&self.noise[..a])
            {
                *o = p * s * w;
            }
            self.loo[a..].iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            let e = edges[idx];
            let out = &mut u_slab[e * n..(e + 1) * n];
            if !self.emit(y, out)? {
                self.flat(out);
                flat += 1;
            }
            for (s, v) in self.suffix[..a].iter_mut().zip(&self.spectra[idx][..a]) {
                *s *= v;
            }
        }
        Ok(flat)
    }

    /// Likelihood of `x_i` from row value `y`, given the spectrum in `self.loo`
    /// (other neighbors' sum plus noise). Returns false when nothing of it
    /// lands on the grid.
    fn emit(&mut self, y: f64, out: &mut [f64]) -> Result<bool> {
        self.fft.inverse(&mut self.loo, &mut self.density);
        let len = self.len;
        let half = len / 2;
        let dx = self.grid.spacing();
        let inv_dx = 1.0 / dx;
        self.density.iter_mut().for_each(|v| *v = (*v * inv_dx).max(0.0));
        // offsets beyond +-3/8 of the frame sit at indices (3len/8, 5len/8)
        let outer = dx * self.density[3 * len / 8 + 1..5 * len / 8].iter().sum::<f64>();
        if outer > ALIAS_TOL {
            return Err(Error::Aliasing(outer));
        }
        // unwrap the frame: index k now holds offset k - len/2
        self.density.rotate_left(half);
        // out[m] = p_S(y - x_m), linear interpolation, zero off the frame
        let t0 = y * inv_dx + self.grid.center() as f64;
        let fl0 = t0.floor();
        let frac = t0 - fl0;
        let base = fl0 as isize + half as isize;
        let lin = &self.density;
        let at = |k: isize| -> f64 {
            if (0..len as isize).contains(&k) {
                lin[k as usize]
            } else {
                0.0
            }
        };
        let n = out.len() as isize;
        // nodes whose stencil lies inside the frame take the unchecked path
        let m_lo = (base - len as isize + 2).clamp(0, n);
        let m_hi = (base + 1).clamp(m_lo, n);
        for m in (0..m_lo).chain(m_hi..n) {
            let k = base - m;
            out[m as usize] = (1.0 - frac) * at(k) + frac * at(k + 1);
        }
        if m_lo < m_hi {
            let window = &lin[(base - m_hi + 1) as usize..(base - m_lo + 2) as usize];
            for (o, w) in out[m_lo as usize..m_hi as usize].iter_mut().zip(window.windows(2).rev()) {
                *o = (1.0 - frac) * w[0] + frac * w[1];
            }
        }
        let mass = self.grid.trapezoid(out);
        if !(mass.is_finite() && mass > 0.0) {
            return Ok(false);
        }
        let inv = 1.0 / mass;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(true)
    }

    fn flat(&self, out: &mut [f64]) {
        let v = 1.0 / (self.grid.hi() - self.grid.lo());
        out.iter_mut().for_each(|o| *o = v);
    }
}

/// Likelihood message for `x_i` from row value `y_j`, given the
/// variable-to-check messages of the row's other neighbors:
/// `U(u) ∝ p(y_j - u)` with `p` the density of their sum plus noise.
pub fn check_update(
    y_j: f64,
    neighbors: &[HybridDensity],
    sigma_w: f64,
    grid: &GridSpec,
) -> Result<HybridDensity> {
    if !(sigma_w >= 0.0) {
        return Err(Error::invalid(format!("sigma_w must be >= 0, got {sigma_w}")));
    }
    for d in neighbors {
        grid.check_same(d.grid())?;
    }
    let mut k = CheckKernel::new(*grid, effective_noise(sigma_w, grid), 2 * grid.n_points());
    k.ensure_degree(neighbors.len());
    for (i, d) in neighbors.iter().enumerate() {
        k.load(i, d.slab(), d.spike());
    }
    k.build_prefix(neighbors.len());
    let a = k.active;
    for ((o, p), w) in k.loo[..a].iter_mut().zip(&k.prefix[neighbors.len()]).zip(&k.noise) {
        *o = p * w;
    }
    k.loo[a..].iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    let mut out = vec![0.0; grid.n_points()];
    if !k.emit(y_j, &mut out)? {
        return Err(Error::MassAnnihilated);
    }
    HybridDensity::from_parts(*grid, out, 0.0)
}

/// Normalized product of `prior` and `incoming`, optionally blended with the
/// previous message: `(1 - damping) * new + damping * previous`.
pub fn variable_update(
    prior: &HybridDensity,
    incoming: &[HybridDensity],
    previous: Option<&HybridDensity>,
    damping: f64,
) -> Result<HybridDensity> {
    prior.ensure_normalized()?;
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::invalid(format!("damping must lie in [0, 1), got {damping}")));
    }
    let grid = *prior.grid();
    let c = grid.center();
    let mut slab = prior.slab().to_vec();
    let mut spike = prior.spike();
    for u in incoming {
        grid.check_same(u.grid())?;
        u.ensure_normalized()?;
        spike *= u.slab_at_zero();
        slab.iter_mut().zip(u.slab()).for_each(|(a, b)| *a *= b);
        debug_assert_eq!(u.slab()[c], u.slab_at_zero());
    }
    let fresh = HybridDensity::from_parts(grid, slab, spike)?.normalized()?;
    match previous {
        Some(prev) if damping > 0.0 => {
            grid.check_same(prev.grid())?;
            let slab = fresh
                .slab()
                .iter()
                .zip(prev.slab())
                .map(|(a, b)| (1.0 - damping) * a + damping * b)
                .collect();
            let spike = (1.0 - damping) * fresh.spike() + damping * prev.spike();
            HybridDensity::from_parts(grid, slab, spike)?.normalized()
        }
        _ => Ok(fresh),
    }
}

/// Flooding-schedule BP. Non-convergence is reported in the diagnostics;
/// beliefs are returned either way.
pub fn run_bp(
    matrix: &SparseBinaryMatrix,
    y: &[f64],
    prior: &SpikeSlabPrior,
    sigma_w: f64,
    cfg: &BpConfig,
) -> Result<BpOutcome> {
    cfg.validate()?;
    if y.len() != matrix.n_rows() {
        return Err(Error::Dimension {
            expected: matrix.n_rows(),
            got: y.len(),
        });
    }
    if !(sigma_w >= 0.0) {
        return Err(Error::invalid(format!("sigma_w must be >= 0, got {sigma_w}")));
    }
    let grid = cfg.grid;
    let n = grid.n_points();
    let c = grid.center();
    let l = matrix.column_weight();
    let prior_d = prior_density(prior, &grid)?;
    let noise_std = effective_noise(sigma_w, &grid);

    // edges of each row, as (edge, column), columns ascending
    let mut row_edges: Vec<Vec<usize>> = vec![Vec::new(); matrix.n_rows()];
    for i in 0..matrix.n_cols() {
        for (k, &j) in matrix.column(i).iter().enumerate() {
            row_edges[j].push(i * l + k);
        }
    }

    let mut state = BpState::new(&prior_d, matrix.n_cols() * l, l);
    // rows run on a frame as wide as the grid and are redone on frames of
    // twice the width while the neighbor sum spills past it; the last frame
    // holds the whole sum of the densest row
    let max_deg = row_edges.iter().map(Vec::len).max().unwrap_or(1);
    let reach = (max_deg.saturating_sub(1) * n) as f64 / 2.0 + 8.0 * noise_std / grid.spacing() + 2.0;
    let mut levels = 1;
    while 3.0 * ((n << (levels - 1)) as f64) / 8.0 < reach {
        levels += 1;
    }
    let mut kernels = vec![CheckKernel::new(grid, noise_std, n)];
    let mut fallbacks = 0;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut fresh = vec![0.0; n];
    let mut left = vec![0.0; l * n];
    let mut right = vec![0.0; n];
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        for (j, edges) in row_edges.iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let BpState { v_slab, v_spike, u_slab, .. } = &mut state;
            let mut level = 0;
            fallbacks += loop {
                match kernels[level].row(y[j], edges, v_slab, v_spike, u_slab) {
                    Err(Error::Aliasing(_)) if level + 1 < levels => {
                        level += 1;
                        if kernels.len() == level {
                            kernels.push(CheckKernel::new(grid, noise_std, n << level));
                        }
                    }
                    other => break other?,
                }
            };
        }

        let mut delta: f64 = 0.0;
        let dx = grid.spacing();
        for i in 0..matrix.n_cols() {
            let u = &state.u_slab[i * l * n..(i + 1) * l * n];
            // left[k] = prior * u_0 ... u_{k-1}; right carries u_{k+1} ... u_{L-1}
            left[..n].copy_from_slice(prior_d.slab());
            for k in 1..l {
                let (done, rest) = left.split_at_mut(k * n);
                for ((o, a), b) in rest[..n].iter_mut().zip(&done[(k - 1) * n..]).zip(&u[(k - 1) * n..k * n]) {
                    *o = a * b;
                }
            }
            right.iter_mut().for_each(|v| *v = 1.0);
            let mut right_spike = 1.0;
            for k in (0..l).rev() {
                let e = i * l + k;
                let spike = prior_d.spike()
                    * (0..k).map(|k2| u[k2 * n + c]).product::<f64>()
                    * right_spike;
                let mut sum = 0.0;
                for ((f, a), b) in fresh.iter_mut().zip(&left[k * n..(k + 1) * n]).zip(&right) {
                    *f = a * b;
                    sum += *f;
                }
                let uk = &u[k * n..(k + 1) * n];
                right.iter_mut().zip(uk).for_each(|(r, v)| *r *= v);
                right_spike *= uk[c];

                let mass = spike + dx * (sum - 0.5 * (fresh[0] + fresh[n - 1]));
                if !(mass.is_finite() && mass > 0.0) {
                    fallbacks += 1;
                    continue;
                }
                let old_slab = &mut state.v_slab[e * n..(e + 1) * n];
                let old_spike = &mut state.v_spike[e];
                let inv = (1.0 - cfg.damping) / mass;
                let keep = cfg.damping;
                let new_spike = spike * inv + keep * *old_spike;
                let ends = 0.5 * ((fresh[0] * inv + (keep - 1.0) * old_slab[0]).abs()
                    + (fresh[n - 1] * inv + (keep - 1.0) * old_slab[n - 1]).abs());
                let mut diffs = 0.0;
                for (o, f) in old_slab.iter_mut().zip(&fresh) {
                    let v = f * inv + keep * *o;
                    diffs += (v - *o).abs();
                    *o = v;
                }
                let change = (new_spike - *old_spike).abs() + (diffs - ends) * dx;
                *old_spike = new_spike;
                delta = delta.max(change);
            }
        }
        state.iteration += 1;
        trace.push(delta);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut beliefs = Vec::with_capacity(matrix.n_cols());
    for i in 0..matrix.n_cols() {
        let mut spike = prior_d.spike();
        let mut slab = prior_d.slab().to_vec();
        for k in 0..l {
            let u = &state.u_slab[(i * l + k) * n..(i * l + k + 1) * n];
            spike *= u[c];
            slab.iter_mut().zip(u).for_each(|(a, b)| *a *= b);
        }
        let belief = match HybridDensity::from_parts(grid, slab, spike)?.normalized() {
            Ok(b) => b,
            Err(Error::MassAnnihilated) => {
                fallbacks += 1;
                prior_d.clone()
            }
            Err(e) => return Err(e),
        };
        beliefs.push(belief);
    }
    if !converged {
        log::debug!(
            "BP stopped after {} iterations with max message change {:e}",
            cfg.max_iters,
            trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(BpOutcome {
        beliefs,
        diagnostics: BpDiagnostics {
            iterations: state.iteration,
            final_delta: trace.last().copied().unwrap_or(f64::NAN),
            converged,
            trace,
            fallbacks,
            noise_std,
        },
        state,
    })
}

/// Exact marginals by enumerating all `2^N` support patterns. Given a
/// pattern `s`, `y ~ N(0, sigma_w^2 I + sigma_x^2 Phi_s Phi_s^T)` and the
/// nonzeros are jointly Gaussian, so every conditional slab is a Gaussian
/// that is sampled onto `grid`.
pub fn brute_force_posterior(
    matrix: &SparseBinaryMatrix,
    y: &[f64],
    prior: &SpikeSlabPrior,
    sigma_w: f64,
    grid: &GridSpec,
) -> Result<Vec<HybridDensity>> {
    let n = matrix.n_cols();
    let m = matrix.n_rows();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge(n));
    }
    if y.len() != m {
        return Err(Error::Dimension { expected: m, got: y.len() });
    }
    if !(sigma_w > 0.0) {
        return Err(Error::ZeroNoise);
    }
    let phi = DMatrix::from_fn(m, n, |r, col| {
        if matrix.column(col).contains(&r) {
            1.0
        } else {
            0.0
        }
    });
    let yv = DVector::from_column_slice(y);
    let sw2 = sigma_w * sigma_w;
    let sx2 = prior.sigma_x * prior.sigma_x;
    let log_2pi = (2.0 * std::f64::consts::PI).ln();

    struct Pattern {
        log_w: f64,
        members: Vec<usize>,
        mean: Vec<f64>,
        var: Vec<f64>,
    }
    let mut patterns = Vec::with_capacity(1 << n);
    for mask in 0usize..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let k = members.len();
        let phi_s = phi.select_columns(&members);
        let cov = DMatrix::identity(m, m) * sw2 + (&phi_s * phi_s.transpose()) * sx2;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::invalid("pattern covariance is not positive definite"))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = yv.dot(&chol.solve(&yv));
        let log_w = k as f64 * prior.q.ln()
            + (n - k) as f64 * (1.0 - prior.q).ln()
            - 0.5 * (quad + log_det + m as f64 * log_2pi);
        let (mean, var) = if k == 0 {
            (Vec::new(), Vec::new())
        } else {
            let precision =
                phi_s.transpose() * &phi_s / sw2 + DMatrix::identity(k, k) / sx2;
            let post_cov = precision
                .try_inverse()
                .ok_or_else(|| Error::invalid("singular conditional precision"))?;
            let mean = &post_cov * (phi_s.transpose() * &yv) / sw2;
            (mean.iter().copied().collect(), post_cov.diagonal().iter().copied().collect())
        };
        patterns.push(Pattern {
            log_w,
            members,
            mean,
            var,
        });
    }
    let top = patterns.iter().map(|p| p.log_w).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = patterns.iter().map(|p| (p.log_w - top).exp()).collect();

    let xs: Vec<f64> = grid.nodes().collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut spike = 0.0;
        let mut slab = vec![0.0; xs.len()];
        for (p, &w) in patterns.iter().zip(&weights) {
            if w < 1e-300 {
                continue;
            }
            match p.members.iter().position(|&c| c == i) {
                None => spike += w,
                Some(pos) => {
                    let (mu, sd) = (p.mean[pos], p.var[pos].sqrt());
                    for (s, &x) in slab.iter_mut().zip(&xs) {
                        *s += w * crate::density::normal_pdf(x, mu, sd);
                    }
                }
            }
        }
        out.push(HybridDensity::from_parts(*grid, slab, spike)?.normalized()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{oracle_posterior, ChannelPoint};
    use crate::measurement::{build_forest, build_matrix, measure};
    use crate::signal::{sample_signal, sample_support, Probe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> SpikeSlabPrior {
        SpikeSlabPrior::gaussian(0.05, 5.0).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::for_sigma_x(5.0).unwrap()
    }

    #[test]
    fn check_update_without_neighbors_is_the_noise() {
        let g = grid();
        let u = check_update(1.5, &[], 1.0, &g).unwrap();
        let want = HybridDensity::make_gaussian(g, 1.5, 1.0).unwrap();
        assert!(u.l1_distance(&want).unwrap() < 1e-3);
        let spike = HybridDensity::spike_only(g);
        let u2 = check_update(1.5, &[spike], 1.0, &g).unwrap();
        assert!(u.l1_distance(&u2).unwrap() < 1e-9);
    }

    #[test]
    fn check_update_mean_identity() {
        let g = grid();
        let a = HybridDensity::make_gaussian(g, 1.0, 2.0).unwrap();
        let b = prior_density(&prior(), &g).unwrap();
        let y = 4.0;
        let u = check_update(y, &[a.clone(), b.clone()], 0.7, &g).unwrap();
        let total = u.moments().unwrap().mean + a.moments().unwrap().mean + b.moments().unwrap().mean;
        assert!((total - y).abs() < g.spacing(), "{total}");
    }

    #[test]
    fn variable_update_examples() {
        let g = grid();
        let p = prior_density(&prior(), &g).unwrap();
        assert_eq!(variable_update(&p, &[], None, 0.0).unwrap(), p.clone().normalized().unwrap());

        let msg = HybridDensity::make_gaussian(g, 2.0, 1.0).unwrap();
        let v = variable_update(&p, &[msg.clone(), msg.clone(), msg.clone()], None, 0.0).unwrap();
        let slab_only = HybridDensity::from_parts(g, v.slab().to_vec(), 0.0).unwrap().normalized().unwrap();
        let want = 3.0 * 2.0 * 25.0 / (3.0 * 25.0 + 1.0);
        assert!((slab_only.moments().unwrap().mean - want).abs() < 1e-6);

        let same = variable_update(&p, std::slice::from_ref(&msg), None, 0.0).unwrap();
        let damped = variable_update(&p, std::slice::from_ref(&msg), Some(&same), 0.3).unwrap();
        assert!(same.l1_distance(&damped).unwrap() < 1e-12);
    }

    fn tree_case(seed: u64, n: usize, l: usize, sw: f64) -> (SparseBinaryMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = build_forest(n, l, 1, &mut rng).unwrap();
        let support = sample_support(&SpikeSlabPrior::gaussian(0.3, 5.0).unwrap(), n, &mut rng);
        let sig = sample_signal(&prior(), &support, None, &mut rng).unwrap();
        let y = measure(&mat, &sig, sw, &mut rng).unwrap().y;
        (mat, y)
    }

    #[test]
    fn tree_bp_is_exact() {
        for seed in 0..4 {
            let (mat, y) = tree_case(seed, 6, 2, 1.0);
            let cfg = BpConfig::for_prior(&prior()).unwrap();
            let bp = run_bp(&mat, &y, &prior(), 1.0, &cfg).unwrap();
            assert!(bp.diagnostics.converged);
            let exact = brute_force_posterior(&mat, &y, &prior(), 1.0, &cfg.grid).unwrap();
            for (a, b) in bp.beliefs.iter().zip(&exact) {
                let d = a.l1_distance(b).unwrap();
                assert!(d <= 2e-2, "seed {seed}: {d}");
            }
        }
    }

    #[test]
    fn brute_force_single_observation_matches_channel_oracle() {
        let mat = SparseBinaryMatrix::from_columns(1, vec![vec![0]]).unwrap();
        let g = grid();
        let bf = brute_force_posterior(&mat, &[2.0], &prior(), 1.5, &g).unwrap();
        let p = ChannelPoint::new(2.0, 1.5, 1, prior()).unwrap();
        let o = oracle_posterior(&p, &g).unwrap();
        assert!(bf[0].l1_distance(&o).unwrap() < 1e-6);
        assert!(matches!(
            brute_force_posterior(&mat, &[2.0], &prior(), 0.0, &g),
            Err(Error::ZeroNoise)
        ));
    }

    #[test]
    fn brute_force_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mat = build_forest(4, 2, 0, &mut rng).unwrap();
        let g = grid();
        let y = vec![3.0, -1.0, 2.0, 0.5, 1.0];
        let rare = SpikeSlabPrior::gaussian(1e-9, 5.0).unwrap();
        for d in brute_force_posterior(&mat, &y, &rare, 1.0, &g).unwrap() {
            assert!(d.spike() > 0.999);
        }
        let big = GridSpec::new(40.0, 1024).unwrap();
        let p = prior_density(&prior(), &big).unwrap();
        for d in brute_force_posterior(&mat, &y, &prior(), 1e5, &big).unwrap() {
            assert!(d.l1_distance(&p).unwrap() < 1e-3);
        }
        let wide = SparseBinaryMatrix::from_columns(1, vec![vec![0]; 13]);
        if let Ok(w) = wide {
            assert!(matches!(
                brute_force_posterior(&w, &[0.0], &prior(), 1.0, &g),
                Err(Error::TooLarge(13))
            ));
        }
    }

    #[test]
    fn near_noiseless_recovers_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mat = build_matrix(64, 48, 4, &mut rng, 1000).unwrap();
        let mut support = vec![false; 64];
        support[5] = true;
        support[40] = true;
        let two = SpikeSlabPrior::new(0.05, 5.0, crate::signal::SlabMode::TwoPoint { magnitude: 2.5 }).unwrap();
        let sig = sample_signal(&two, &support, Some(Probe { index: 5, magnitude: 2.5 }), &mut rng).unwrap();
        let y = measure(&mat, &sig, 1e-6, &mut rng).unwrap().y;
        let cfg = BpConfig::for_prior(&prior()).unwrap();
        let bp = run_bp(&mat, &y, &prior(), 1e-6, &cfg).unwrap();
        for (b, x) in bp.beliefs.iter().zip(&sig.values) {
            let mean = b.moments().unwrap().mean;
            assert!((mean - x).abs() < 1e-2, "{mean} vs {x}");
        }
    }

    #[test]
    fn all_zero_signal_keeps_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mat = build_matrix(64, 48, 4, &mut rng, 1000).unwrap();
        let y: Vec<f64> = (0..48).map(|j| 0.5 * ((j as f64) * 0.7).sin()).collect();
        let cfg = BpConfig::for_prior(&prior()).unwrap();
        let bp = run_bp(&mat, &y, &prior(), 1.0, &cfg).unwrap();
        assert!(bp.beliefs.iter().all(|b| b.spike() > 0.5));
        let again = run_bp(&mat, &y, &prior(), 1.0, &cfg).unwrap();
        assert_eq!(bp.beliefs, again.beliefs);
        assert!(bp.diagnostics.trace_csv().starts_with("iteration,max_delta\n1,"));
    }
}
