//! Spike-and-slab signal prior and random sparse signal generation.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::{normal_mass_outside, normal_pdf, GridSpec, HybridDensity, NORMALIZATION_TOL};
use crate::error::{Error, Result};

/// How nonzero signal values are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabMode {
    /// Zero-mean normal with standard deviation `sigma_x`.
    GaussianSlab,
    /// `+magnitude` or `-magnitude` with equal probability.
    TwoPoint { magnitude: f64 },
}

/// `f(x) = q N(x; 0, sigma_x^2) + (1 - q) delta_0`, plus the rule used to
/// generate nonzeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabPrior {
    pub q: f64,
    pub sigma_x: f64,
    pub slab_mode: SlabMode,
}

impl SpikeSlabPrior {
    pub fn new(q: f64, sigma_x: f64, slab_mode: SlabMode) -> Result<Self> {
        let prior = Self {
            q,
            sigma_x,
            slab_mode,
        };
        prior.validate()?;
        if q >= 0.5 {
            log::warn!("mixing rate q = {q} is not sparse; detection analysis assumes q << 1");
        }
        Ok(prior)
    }

    pub fn gaussian(q: f64, sigma_x: f64) -> Result<Self> {
        Self::new(q, sigma_x, SlabMode::GaussianSlab)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::invalid(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if !(self.sigma_x.is_finite() && self.sigma_x > 0.0) {
            return Err(Error::invalid(format!(
                "sigma_x must be positive, got {}",
                self.sigma_x
            )));
        }
        if let SlabMode::TwoPoint { magnitude } = self.slab_mode {
            if !(magnitude.is_finite() && magnitude > 0.0) {
                return Err(Error::invalid(format!(
                    "two-point magnitude must be positive, got {magnitude}"
                )));
            }
        }
        Ok(())
    }

    /// Same mixing rate and slab width, Gaussian generation.
    pub fn as_gaussian(&self) -> Self {
        Self {
            slab_mode: SlabMode::GaussianSlab,
            ..*self
        }
    }

    /// Log prior odds `log(q / (1 - q))`.
    pub fn log_odds(&self) -> f64 {
        (self.q / (1.0 - self.q)).ln()
    }

    pub fn slab_pdf(&self, x: f64) -> f64 {
        normal_pdf(x, 0.0, self.sigma_x)
    }
}

/// A realization `x0` together with its support `S` and an optional probe element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalInstance {
    pub values: Vec<f64>,
    pub support: Vec<bool>,
    pub probe_index: Option<usize>,
}

impl SignalInstance {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `support[i] == (values[i] != 0)` everywhere, and the probe is on the support.
    pub fn is_consistent(&self) -> bool {
        self.values.len() == self.support.len()
            && self
                .values
                .iter()
                .zip(&self.support)
                .all(|(v, s)| (*v != 0.0) == *s)
            && self.probe_index.is_none_or(|i| self.support.get(i) == Some(&true))
    }
}

/// Forces one support element to `+-magnitude` with a random sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub magnitude: f64,
}

pub fn sample_support<R: Rng + ?Sized>(prior: &SpikeSlabPrior, n: usize, rng: &mut R) -> Vec<bool> {
    let coin = Bernoulli::new(prior.q).expect("q validated in (0, 1)");
    (0..n).map(|_| coin.sample(rng)).collect()
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

pub fn sample_signal<R: Rng + ?Sized>(
    prior: &SpikeSlabPrior,
    support: &[bool],
    probe: Option<Probe>,
    rng: &mut R,
) -> Result<SignalInstance> {
    if let Some(p) = probe {
        if support.get(p.index) != Some(&true) {
            return Err(Error::invalid(format!(
                "probe index {} is not on the support",
                p.index
            )));
        }
        if !(p.magnitude.is_finite() && p.magnitude > 0.0) {
            return Err(Error::invalid(format!(
                "probe magnitude must be positive, got {}",
                p.magnitude
            )));
        }
    }
    let slab = Normal::new(0.0, prior.sigma_x).expect("sigma_x validated positive");
    let values = support
        .iter()
        .enumerate()
        .map(|(i, &on)| {
            if !on {
                return 0.0;
            }
            if let Some(p) = probe.filter(|p| p.index == i) {
                return random_sign(rng) * p.magnitude;
            }
            match prior.slab_mode {
                SlabMode::TwoPoint { magnitude } => random_sign(rng) * magnitude,
                SlabMode::GaussianSlab => loop {
                    // a Gaussian draw of exactly zero would break S_i = 1 <=> x_i != 0
                    let v = slab.sample(rng);
                    if v != 0.0 {
                        break v;
                    }
                },
            }
        })
        .collect();
    Ok(SignalInstance {
        values,
        support: support.to_vec(),
        probe_index: probe.map(|p| p.index),
    })
}

/// The prior as a hybrid density: spike `1 - q`, slab `q N(0, sigma_x^2)`.
pub fn prior_density(prior: &SpikeSlabPrior, grid: &GridSpec) -> Result<HybridDensity> {
    let lost = prior.q * normal_mass_outside(grid.lo(), grid.hi(), 0.0, prior.sigma_x);
    if lost > NORMALIZATION_TOL {
        return Err(Error::GridTooNarrow {
            what: format!("prior slab N(0, {}^2)", prior.sigma_x),
            lost,
            half_width: grid.half_width(),
        });
    }
    let mut slab: Vec<f64> = grid.nodes().map(|x| prior.slab_pdf(x)).collect();
    let scale = prior.q / grid.trapezoid(&slab);
    slab.iter_mut().for_each(|v| *v *= scale);
    HybridDensity::from_parts(*grid, slab, 1.0 - prior.q)
}
