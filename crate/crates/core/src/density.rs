//! One-dimensional densities in hybrid form: an explicit point mass at zero
//! plus a continuous slab sampled on a uniform grid.
//!
//! Grid convention: `n_points` (a power of two) nodes at `x_m = (m - n/2) * dx`
//! with `dx = 2 * half_width / n_points`. The grid spans `[-G, G - dx]`, node
//! `n/2` sits exactly at zero, and node `m` mirrors node `n - m` for `m >= 1`.
//! This is the FFT-natural layout; the price is one unpaired node at `-G`.
//!
//! All integrals use the trapezoidal rule on this grid.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on total mass for a density to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Largest grid `GridSpec::resolving` will hand out.
pub const MAX_POINTS: usize = 1 << 24;

const MIN_POINTS: usize = 64;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * SQRT_2PI)
}

pub fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Mass of `Normal(mean, std^2)` lying outside `[lo, hi]`.
pub fn normal_mass_outside(lo: f64, hi: f64, mean: f64, std: f64) -> f64 {
    let s = std * std::f64::consts::SQRT_2;
    0.5 * libm::erfc((mean - lo) / s) + 0.5 * libm::erfc((hi - mean) / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: f64,
    n_points: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::invalid(format!(
                "grid half_width must be positive, got {half_width}"
            )));
        }
        if n_points < MIN_POINTS || !n_points.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid n_points must be a power of two >= {MIN_POINTS}, got {n_points}"
            )));
        }
        Ok(Self {
            half_width,
            n_points,
        })
    }

    /// Default grid for a slab of standard deviation `sigma_x`: `G = 8 sigma_x`, 1024 nodes.
    pub fn for_sigma_x(sigma_x: f64) -> Result<Self> {
        Self::new(8.0 * sigma_x, 1024)
    }

    /// Smallest power-of-two grid (at least 1024 nodes) on `[-G, G)` whose
    /// spacing is at most `min_std / 2`.
    pub fn resolving(half_width: f64, min_std: f64) -> Result<Self> {
        let mut n = 1024;
        while 2.0 * half_width / n as f64 > 0.5 * min_std {
            if n >= MAX_POINTS {
                return Err(Error::Resolution {
                    std: min_std,
                    spacing: 2.0 * half_width / n as f64,
                });
            }
            n *= 2;
        }
        Self::new(half_width, n)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    /// Index of the node at zero.
    pub fn center(&self) -> usize {
        self.n_points / 2
    }

    pub fn x(&self, m: usize) -> f64 {
        (m as f64 - self.center() as f64) * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |m| self.x(m))
    }

    pub fn lo(&self) -> f64 {
        -self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.x(self.n_points - 1)
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let sum: f64 = values.iter().sum();
        self.spacing() * (sum - 0.5 * (values[0] + values[values.len() - 1]))
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// A density `spike * delta_0 + slab(x)`.
///
/// `slab` holds density values (units 1/x) at the grid nodes, `spike` is a
/// dimensionless mass.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridDensity {
    grid: GridSpec,
    slab: Vec<f64>,
    spike: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub spike_mass: f64,
}

impl HybridDensity {
    pub fn from_parts(grid: GridSpec, slab: Vec<f64>, spike: f64) -> Result<Self> {
        if slab.len() != grid.n_points() {
            return Err(Error::Dimension {
                expected: grid.n_points(),
                got: slab.len(),
            });
        }
        if !(spike.is_finite() && spike >= 0.0) {
            return Err(Error::invalid(format!("spike mass {spike} is not finite and >= 0")));
        }
        if let Some(v) = slab.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("slab value {v} is not finite and >= 0")));
        }
        Ok(Self { grid, slab, spike })
    }

    /// Unit point mass at zero.
    pub fn spike_only(grid: GridSpec) -> Self {
        Self {
            grid,
            slab: vec![0.0; grid.n_points()],
            spike: 1.0,
        }
    }

    /// Flat slab over the whole grid, normalized.
    pub fn uniform(grid: GridSpec) -> Self {
        let width = grid.hi() - grid.lo();
        Self {
            grid,
            slab: vec![1.0 / width; grid.n_points()],
            spike: 0.0,
        }
    }

    /// Sampled `Normal(mean, std^2)` without a spike.
    pub fn make_gaussian(grid: GridSpec, mean: f64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::invalid(format!("std must be positive, got {std}")));
        }
        if std < 2.0 * grid.spacing() {
            return Err(Error::Resolution {
                std,
                spacing: grid.spacing(),
            });
        }
        if !(grid.lo()..=grid.hi()).contains(&mean) {
            return Err(Error::invalid(format!(
                "mean {mean} lies outside the grid [{}, {}]",
                grid.lo(),
                grid.hi()
            )));
        }
        let lost = normal_mass_outside(grid.lo(), grid.hi(), mean, std);
        if lost > NORMALIZATION_TOL {
            return Err(Error::GridTooNarrow {
                what: format!("Normal({mean}, {std}^2)"),
                lost,
                half_width: grid.half_width(),
            });
        }
        let slab = grid.nodes().map(|x| normal_pdf(x, mean, std)).collect();
        Self { grid, slab, spike: 0.0 }.normalized()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn slab(&self) -> &[f64] {
        &self.slab
    }

    pub fn spike(&self) -> f64 {
        self.spike
    }

    pub fn slab_mass(&self) -> f64 {
        self.grid.trapezoid(&self.slab)
    }

    pub fn total_mass(&self) -> f64 {
        self.spike + self.slab_mass()
    }

    /// Slab density at the zero node.
    pub fn slab_at_zero(&self) -> f64 {
        self.slab[self.grid.center()]
    }

    /// Slab density at arbitrary `x`, linearly interpolated; zero off-grid.
    pub fn slab_at(&self, x: f64) -> f64 {
        let t = x / self.grid.spacing() + self.grid.center() as f64;
        if t < 0.0 || t > (self.grid.n_points() - 1) as f64 {
            return 0.0;
        }
        let i = t.floor() as usize;
        if i + 1 >= self.slab.len() {
            return self.slab[self.slab.len() - 1];
        }
        let frac = t - i as f64;
        self.slab[i] * (1.0 - frac) + self.slab[i + 1] * frac
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::NotNormalized(self.total_mass()))
        }
    }

    pub fn normalized(mut self) -> Result<Self> {
        let mass = self.total_mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::MassAnnihilated);
        }
        let inv = 1.0 / mass;
        self.spike *= inv;
        self.slab.iter_mut().for_each(|v| *v *= inv);
        Ok(self)
    }

    /// Normalized pointwise product.
    ///
    /// A spike meeting a slab picks up the slab density at zero. Two spikes
    /// meeting are treated as one grid bin each, so their product carries
    /// `1/dx`; this matches what a fully sampled representation would compute
    /// and leaves every other case exact.
    pub fn product(&self, other: &HybridDensity) -> Result<HybridDensity> {
        self.grid.check_same(&other.grid)?;
        let dx = self.grid.spacing();
        let spike = self.spike * other.spike / dx
            + self.spike * other.slab_at_zero()
            + other.spike * self.slab_at_zero();
        let slab = self
            .slab
            .iter()
            .zip(&other.slab)
            .map(|(a, b)| a * b)
            .collect();
        HybridDensity {
            grid: self.grid,
            slab,
            spike,
        }
        .normalized()
    }

    /// Density of the sum of independent variables distributed as `inputs`,
    /// plus independent `Normal(0, noise_std^2)` noise, on the common grid.
    ///
    /// Fails with [`Error::Aliasing`] when more than `NORMALIZATION_TOL` of the
    /// resulting mass falls outside the grid.
    pub fn convolve_sum(inputs: &[HybridDensity], noise_std: f64) -> Result<HybridDensity> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("convolve_sum needs at least one input"))?;
        let grid = first.grid;
        for d in inputs {
            grid.check_same(&d.grid)?;
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise std must be >= 0, got {noise_std}")));
        }
        let n = grid.n_points();
        let dx = grid.spacing();
        let kernel_half = if noise_std > 0.0 {
            (8.0 * noise_std / dx).ceil() as usize + 1
        } else {
            0
        };
        // Long enough that the linear convolution never wraps.
        let len = (inputs.len() * n + 2 * kernel_half + 1).next_power_of_two();
        let mut fft = FrameFft::new(len);
        let mut frame = vec![0.0; len];
        let mut spec = vec![Complex64::new(0.0, 0.0); fft.spectrum_len()];
        let mut acc = vec![Complex64::new(1.0, 0.0); fft.spectrum_len()];
        let mut spike = 1.0;
        for d in inputs {
            fft.hybrid_spectrum(d, &mut frame, &mut spec);
            acc.iter_mut().zip(&spec).for_each(|(a, s)| *a *= s);
            spike *= d.spike;
        }
        if noise_std > 0.0 {
            fft.gaussian_spectrum(noise_std, dx, &mut frame, &mut spec);
            acc.iter_mut().zip(&spec).for_each(|(a, s)| *a *= s);
            spike = 0.0;
        } else {
            acc.iter_mut().for_each(|a| *a -= spike);
        }
        fft.inverse(&mut acc, &mut frame);
        let inv_dx = 1.0 / dx;
        frame.iter_mut().for_each(|v| *v = (*v * inv_dx).max(0.0));

        let total = spike + dx * frame.iter().sum::<f64>();
        let c = grid.center() as isize;
        let slab: Vec<f64> = (0..n)
            .map(|m| frame[wrap(m as isize - c, len)])
            .collect();
        let out = HybridDensity { grid, slab, spike };
        let lost = (total - out.total_mass()) / total;
        if lost > NORMALIZATION_TOL {
            return Err(Error::Aliasing(lost));
        }
        out.normalized()
    }

    /// Mean, variance and spike mass; the spike sits at zero.
    pub fn moments(&self) -> Result<Moments> {
        self.ensure_normalized()?;
        let g = &self.grid;
        let xs: Vec<f64> = g.nodes().collect();
        let first: Vec<f64> = xs.iter().zip(&self.slab).map(|(x, f)| x * f).collect();
        let second: Vec<f64> = xs.iter().zip(&first).map(|(x, f)| x * f).collect();
        let mean = g.trapezoid(&first);
        let variance = (g.trapezoid(&second) - mean * mean).max(0.0);
        Ok(Moments {
            mean,
            variance,
            spike_mass: self.spike,
        })
    }

    /// `integral |a - b| + |spike_a - spike_b|`.
    pub fn l1_distance(&self, other: &HybridDensity) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let diff: Vec<f64> = self
            .slab
            .iter()
            .zip(&other.slab)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(self.grid.trapezoid(&diff) + (self.spike - other.spike).abs())
    }

    /// Two-column `x,density` CSV preceded by a `# spike_mass=` comment.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.slab.len() * 24);
        let _ = writeln!(s, "# spike_mass={}", self.spike);
        s.push_str("x,density\n");
        for (x, v) in self.grid.nodes().zip(&self.slab) {
            let _ = writeln!(s, "{x},{v}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<HybridDensity> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|msg| Error::parse(path, msg))
    }

    fn parse_csv(text: &str) -> Result<HybridDensity, String> {
        let mut spike = None;
        let mut xs = Vec::new();
        let mut vals = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# spike_mass=") {
                spike = Some(rest.parse::<f64>().map_err(|e| e.to_string())?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') || line == "x,density" {
                continue;
            }
            let (x, v) = line
                .split_once(',')
                .ok_or_else(|| format!("malformed row `{line}`"))?;
            xs.push(x.parse::<f64>().map_err(|e| e.to_string())?);
            vals.push(v.parse::<f64>().map_err(|e| e.to_string())?);
        }
        let spike = spike.ok_or("missing `# spike_mass=` header")?;
        let lo = *xs.first().ok_or("no rows")?;
        let grid = GridSpec::new(-lo, xs.len()).map_err(|e| e.to_string())?;
        for (m, x) in xs.iter().enumerate() {
            if (grid.x(m) - x).abs() > 1e-9 * grid.half_width() {
                return Err(format!("row {m}: x = {x} is off the grid"));
            }
        }
        HybridDensity::from_parts(grid, vals, spike).map_err(|e| e.to_string())
    }
}

pub(crate) fn wrap(r: isize, len: usize) -> usize {
    r.rem_euclid(len as isize) as usize
}

/// Real FFT over a periodic frame where index `p` stands for `x = p * dx`
/// (negative offsets wrapped to the top of the frame).
pub(crate) struct FrameFft {
    len: usize,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
    fwd_scratch: Vec<Complex64>,
    inv_scratch: Vec<Complex64>,
}

impl FrameFft {
    pub(crate) fn new(len: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let fwd_scratch = fwd.make_scratch_vec();
        let inv_scratch = inv.make_scratch_vec();
        Self {
            len,
            fwd,
            inv,
            fwd_scratch,
            inv_scratch,
        }
    }

    pub(crate) fn spectrum_len(&self) -> usize {
        self.len / 2 + 1
    }

    /// Forward transform; `frame` is clobbered.
    pub(crate) fn forward(&mut self, frame: &mut [f64], out: &mut [Complex64]) {
        self.fwd
            .process_with_scratch(frame, out, &mut self.fwd_scratch)
            .expect("frame and spectrum lengths match the plan");
    }

    /// Inverse transform scaled by `1/len`; `spec` is clobbered.
    pub(crate) fn inverse(&mut self, spec: &mut [Complex64], out: &mut [f64]) {
        spec[0].im = 0.0;
        let last = spec.len() - 1;
        spec[last].im = 0.0;
        self.inv
            .process_with_scratch(spec, out, &mut self.inv_scratch)
            .expect("frame and spectrum lengths match the plan");
        let scale = 1.0 / self.len as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Characteristic-function-like spectrum of a hybrid density:
    /// `spike + dx * FFT(slab)`.
    pub(crate) fn hybrid_spectrum(
        &mut self,
        d: &HybridDensity,
        frame: &mut [f64],
        out: &mut [Complex64],
    ) {
        self.slab_spectrum(d.grid(), d.slab(), frame, out);
        out.iter_mut().for_each(|v| v.re += d.spike());
    }

    pub(crate) fn slab_spectrum(
        &mut self,
        grid: &GridSpec,
        slab: &[f64],
        frame: &mut [f64],
        out: &mut [Complex64],
    ) {
        // node m sits at offset m - c: nonnegative offsets first, negative ones wrapped to the top
        let c = grid.center();
        let n = slab.len();
        frame[..n - c].copy_from_slice(&slab[c..]);
        frame[n - c..self.len - c].iter_mut().for_each(|v| *v = 0.0);
        frame[self.len - c..].copy_from_slice(&slab[..c]);
        self.forward(frame, out);
        let dx = grid.spacing();
        out.iter_mut().for_each(|v| *v *= dx);
    }

    /// Spectrum of a sampled `Normal(0, std^2)` kernel whose discrete mass is one.
    pub(crate) fn gaussian_spectrum(
        &mut self,
        std: f64,
        dx: f64,
        frame: &mut [f64],
        out: &mut [Complex64],
    ) {
        frame.iter_mut().for_each(|v| *v = 0.0);
        let half = ((8.0 * std / dx).ceil() as usize + 1).min(self.len / 2 - 1) as isize;
        let mut sum = 0.0;
        for r in -half..=half {
            let v = normal_pdf(r as f64 * dx, 0.0, std);
            frame[wrap(r, self.len)] = v;
            sum += v;
        }
        let norm = 1.0 / sum;
        frame.iter_mut().for_each(|v| *v *= norm);
        self.forward(frame, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(40.0, 1024).unwrap()
    }

    #[test]
    fn grid_contains_zero_and_mirrors() {
        let g = grid();
        assert_eq!(g.x(g.center()), 0.0);
        assert_eq!(g.spacing(), 80.0 / 1024.0);
        for m in 1..g.n_points() {
            assert!((g.x(m) + g.x(g.n_points() - m)).abs() < 1e-12);
        }
        assert!(GridSpec::new(40.0, 1000).is_err());
        assert!(GridSpec::new(40.0, 32).is_err());
    }

    #[test]
    fn resolving_grid_meets_spacing() {
        let g = GridSpec::resolving(40.0, 0.05).unwrap();
        assert!(g.spacing() <= 0.025);
        assert!(2.0 * g.spacing() > 0.025);
        assert_eq!(GridSpec::resolving(40.0, 10.0).unwrap().n_points(), 1024);
    }

    #[test]
    fn gaussian_peak_mean_and_mass() {
        let g = grid();
        let sigma = 5.0;
        let d = HybridDensity::make_gaussian(g, 0.0, sigma).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        let peak = 1.0 / (sigma * SQRT_2PI);
        assert!((d.slab_at_zero() - peak).abs() < 1e-9);

        let shifted = HybridDensity::make_gaussian(g, 3.3, 2.0).unwrap();
        let m = shifted.moments().unwrap();
        assert!((m.mean - 3.3).abs() < g.spacing());
        assert!((m.variance - 4.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_errors() {
        let g = grid();
        assert!(matches!(
            HybridDensity::make_gaussian(g, 0.0, 0.1),
            Err(Error::Resolution { .. })
        ));
        assert!(HybridDensity::make_gaussian(g, 50.0, 1.0).is_err());
        assert!(matches!(
            HybridDensity::make_gaussian(g, 38.0, 2.0),
            Err(Error::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn product_of_gaussians_matches_closed_form() {
        let g = grid();
        let (m1, s1, m2, s2) = (1.5, 2.0, -2.0, 3.0);
        let a = HybridDensity::make_gaussian(g, m1, s1).unwrap();
        let b = HybridDensity::make_gaussian(g, m2, s2).unwrap();
        let p = a.product(&b).unwrap();
        let var = s1 * s1 * s2 * s2 / (s1 * s1 + s2 * s2);
        let mean = (m1 * s2 * s2 + m2 * s1 * s1) / (s1 * s1 + s2 * s2);
        let m = p.moments().unwrap();
        assert!((m.mean - mean).abs() < 1e-8, "{} vs {mean}", m.mean);
        assert!((m.variance - var).abs() < 1e-8);
        let reference = HybridDensity::make_gaussian(g, mean, var.sqrt()).unwrap();
        assert!(p.l1_distance(&reference).unwrap() < 1e-8);
    }

    #[test]
    fn product_identities() {
        let g = grid();
        let a = HybridDensity::from_parts(
            g,
            HybridDensity::make_gaussian(g, 1.0, 3.0)
                .unwrap()
                .slab()
                .iter()
                .map(|v| v * 0.3)
                .collect(),
            0.7,
        )
        .unwrap();
        let u = HybridDensity::uniform(g);
        assert!(a.product(&u).unwrap().l1_distance(&a).unwrap() < 1e-12);

        let s = HybridDensity::spike_only(g);
        let ss = s.product(&s).unwrap();
        assert_eq!(ss.spike(), 1.0);
        assert!(ss.slab().iter().all(|v| *v == 0.0));

        let zero_far = HybridDensity::from_parts(g, vec![0.0; g.n_points()], 0.0).unwrap();
        assert!(matches!(a.product(&zero_far), Err(Error::MassAnnihilated)));
    }

    #[test]
    fn spike_times_slab_picks_density_at_zero() {
        let g = grid();
        let slab = HybridDensity::make_gaussian(g, 2.0, 3.0).unwrap();
        let prior = HybridDensity::from_parts(
            g,
            HybridDensity::make_gaussian(g, 0.0, 5.0)
                .unwrap()
                .slab()
                .iter()
                .map(|v| v * 0.05)
                .collect(),
            0.95,
        )
        .unwrap();
        let p = prior.product(&slab).unwrap();
        // Unnormalized: spike 0.95 * N(0; 2, 9), slab 0.05 N(x;0,25) N(x;2,9).
        let spike_w = 0.95 * normal_pdf(0.0, 2.0, 3.0);
        let slab_w = 0.05 * normal_pdf(2.0, 0.0, 34f64.sqrt());
        let expected = spike_w / (spike_w + slab_w);
        assert!((p.spike() - expected).abs() < 1e-9);
    }

    #[test]
    fn convolution_of_spike_with_noise_is_gaussian() {
        let g = grid();
        let d = HybridDensity::convolve_sum(&[HybridDensity::spike_only(g)], 2.0).unwrap();
        let r = HybridDensity::make_gaussian(g, 0.0, 2.0).unwrap();
        assert!(d.l1_distance(&r).unwrap() < 1e-9);
        assert_eq!(d.spike(), 0.0);
    }

    #[test]
    fn convolution_of_gaussians() {
        let g = grid();
        let a = HybridDensity::make_gaussian(g, 1.0, 2.0).unwrap();
        let b = HybridDensity::make_gaussian(g, -3.0, 1.5).unwrap();
        let c = HybridDensity::convolve_sum(&[a.clone(), b.clone()], 0.0).unwrap();
        let r = HybridDensity::make_gaussian(g, -2.0, (4.0f64 + 2.25).sqrt()).unwrap();
        assert!(c.l1_distance(&r).unwrap() < 1e-4);
        let m = c.moments().unwrap();
        assert!((m.mean + 2.0).abs() < g.spacing());

        // spikes pass through unchanged without noise
        let s = HybridDensity::spike_only(g);
        let cs = HybridDensity::convolve_sum(&[s.clone(), a.clone()], 0.0).unwrap();
        assert!(cs.l1_distance(&a).unwrap() < 1e-9);
        let ss = HybridDensity::convolve_sum(&[s.clone(), s], 0.0).unwrap();
        assert!((ss.spike() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convolution_aliasing_guard() {
        let g = grid();
        let a = HybridDensity::make_gaussian(g, 30.0, 2.0).unwrap();
        let err = HybridDensity::convolve_sum(&[a.clone(), a], 0.0).unwrap_err();
        assert!(matches!(err, Error::Aliasing(_)));
    }

    #[test]
    fn moments_and_normalization() {
        let g = grid();
        let s = HybridDensity::spike_only(g).moments().unwrap();
        assert_eq!((s.mean, s.variance, s.spike_mass), (0.0, 0.0, 1.0));
        let bad = HybridDensity::from_parts(g, vec![0.0; 1024], 0.5).unwrap();
        assert!(matches!(bad.moments(), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn l1_cases() {
        let g = grid();
        let a = HybridDensity::make_gaussian(g, 0.0, 4.0).unwrap();
        assert_eq!(a.l1_distance(&a).unwrap(), 0.0);
        let s = HybridDensity::spike_only(g);
        assert!((s.l1_distance(&a).unwrap() - 2.0).abs() < 1e-12);
        // shift << sigma: L1 ~ shift * sqrt(2/pi) / sigma
        let shift = 4.0 * g.spacing();
        let b = HybridDensity::make_gaussian(g, shift, 4.0).unwrap();
        let expect = shift * (2.0 / std::f64::consts::PI).sqrt() / 4.0;
        let got = a.l1_distance(&b).unwrap();
        assert!((got - expect).abs() / expect < 1e-2, "{got} vs {expect}");
        let other = HybridDensity::spike_only(GridSpec::new(20.0, 1024).unwrap());
        assert!(matches!(a.l1_distance(&other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::new(10.0, 64).unwrap();
        let slab: Vec<f64> = HybridDensity::make_gaussian(g, 0.5, 1.5)
            .unwrap()
            .slab()
            .iter()
            .map(|v| v * 0.4)
            .collect();
        let d = HybridDensity::from_parts(g, slab, 0.6).unwrap();
        let back = HybridDensity::parse_csv(&d.to_csv()).unwrap();
        assert_eq!(back, d);
    }

    fn arb_density() -> impl Strategy<Value = HybridDensity> {
        (-5.0f64..5.0, 1.0f64..4.0, 0.0f64..1.0).prop_map(|(mean, std, spike)| {
            let g = GridSpec::new(40.0, 1024).unwrap();
            let slab = HybridDensity::make_gaussian(g, mean, std)
                .unwrap()
                .slab()
                .iter()
                .map(|v| v * (1.0 - spike))
                .collect();
            HybridDensity::from_parts(g, slab, spike).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn product_commutes_and_associates(a in arb_density(), b in arb_density(), c in arb_density()) {
            let ab = a.product(&b).unwrap();
            prop_assert!(ab.l1_distance(&b.product(&a).unwrap()).unwrap() < 1e-12);
            prop_assert!(ab.is_normalized());
            let left = ab.product(&c).unwrap();
            let right = a.product(&b.product(&c).unwrap()).unwrap();
            prop_assert!(left.l1_distance(&right).unwrap() < 1e-9);
        }

        #[test]
        fn convolution_is_order_invariant(a in arb_density(), b in arb_density(), c in arb_density()) {
            let x = HybridDensity::convolve_sum(&[a.clone(), b.clone(), c.clone()], 0.5).unwrap();
            let y = HybridDensity::convolve_sum(&[c, a, b], 0.5).unwrap();
            prop_assert!(x.l1_distance(&y).unwrap() < 1e-8);
            prop_assert!(x.is_normalized());
        }
    }
}
