//! Decoupled scalar channel: closed-form marginal posterior of one signal
//! element whose `L` incoming check messages have all converged to
//! `N(x0, sigma_w^2)`, plus a direct numeric evaluation used as its oracle.
//!
//! Multiplying the prior by the `L` Gaussian messages gives
//!
//! ```text
//! f(x | y) ∝ q c2 N(x; mu, theta^2) + (1 - q) c1 delta_0
//! c1 = exp(-L x0^2 / (2 sigma_w^2)) / sqrt(2 pi sigma_w^2 / L)
//! c2 = exp(-x0^2 / (2 (sigma_x^2 + sigma_w^2 / L))) / sqrt(2 pi (sigma_x^2 + sigma_w^2 / L))
//! ```
//!
//! Note the negative exponent in `c2`: it is the evidence `N(x0; 0, sigma_x^2 + sigma_w^2/L)`
//! left over from the Gaussian product. A positive exponent would make the
//! support evidence grow with `|x0|` at the wrong rate and breaks agreement
//! with [`oracle_posterior`] by orders of magnitude; `oracle_gate` tests pin this.

use serde::{Deserialize, Serialize};

use crate::density::{log_normal_pdf, normal_mass_outside, GridSpec, HybridDensity, NORMALIZATION_TOL};
use crate::error::{Error, Result};
use crate::signal::SpikeSlabPrior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelPoint {
    pub x0: f64,
    pub sigma_w: f64,
    pub l: usize,
    pub prior: SpikeSlabPrior,
}

impl ChannelPoint {
    pub fn new(x0: f64, sigma_w: f64, l: usize, prior: SpikeSlabPrior) -> Result<Self> {
        if l == 0 {
            return Err(Error::invalid("column weight L must be >= 1"));
        }
        if !(sigma_w >= 0.0) || !x0.is_finite() {
            return Err(Error::invalid(format!(
                "need finite x0 and sigma_w >= 0, got x0 = {x0}, sigma_w = {sigma_w}"
            )));
        }
        prior.validate()?;
        Ok(Self {
            x0,
            sigma_w,
            l,
            prior,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizingConstants {
    pub c1: f64,
    pub c2: f64,
    pub log_c1: f64,
    pub log_c2: f64,
}

/// `f(x | y) = rho N(x; mu, theta2) + (1 - rho) delta_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub rho: f64,
    pub mu: f64,
    pub theta2: f64,
    /// `log(rho / (1 - rho))`, kept separately because `rho` saturates.
    pub log_odds: f64,
    /// Absent for the symbolic limits.
    pub constants: Option<NormalizingConstants>,
}

impl PosteriorParams {
    pub fn theta(&self) -> f64 {
        self.theta2.sqrt()
    }

    /// `log rho`, stable for saturated `rho`.
    pub fn ln_rho(&self) -> f64 {
        -softplus(-self.log_odds)
    }

    /// `log(1 - rho)`, stable for saturated `rho`.
    pub fn ln_one_minus_rho(&self) -> f64 {
        -softplus(self.log_odds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Noiseless,
    InfiniteNoise,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x == f64::INFINITY {
        x
    } else if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(log_odds: f64) -> f64 {
    if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    }
}

pub fn posterior_params(p: &ChannelPoint) -> Result<PosteriorParams> {
    if p.sigma_w == 0.0 {
        return Err(Error::ZeroNoise);
    }
    let l = p.l as f64;
    let sx2 = p.prior.sigma_x * p.prior.sigma_x;
    let sw2 = p.sigma_w * p.sigma_w;
    let fused = sw2 / l;
    let two_pi = 2.0 * std::f64::consts::PI;
    let log_c1 = -l * p.x0 * p.x0 / (2.0 * sw2) - 0.5 * (two_pi * fused).ln();
    let log_c2 = -p.x0 * p.x0 / (2.0 * (sx2 + fused)) - 0.5 * (two_pi * (sx2 + fused)).ln();
    let q = p.prior.q;
    let log_odds = q.ln() - (1.0 - q).ln() + log_c2 - log_c1;
    Ok(PosteriorParams {
        rho: logistic(log_odds),
        mu: l * p.x0 * sx2 / (l * sx2 + sw2),
        theta2: sx2 * sw2 / (l * sx2 + sw2),
        log_odds,
        constants: Some(NormalizingConstants {
            c1: log_c1.exp(),
            c2: log_c2.exp(),
            log_c1,
            log_c2,
        }),
    })
}

pub fn limit_params(p: &ChannelPoint, which: Limit) -> PosteriorParams {
    match which {
        Limit::Noiseless if p.x0 != 0.0 => PosteriorParams {
            rho: 1.0,
            mu: p.x0,
            theta2: 0.0,
            log_odds: f64::INFINITY,
            constants: None,
        },
        Limit::Noiseless => PosteriorParams {
            rho: 0.0,
            mu: 0.0,
            theta2: 0.0,
            log_odds: f64::NEG_INFINITY,
            constants: None,
        },
        Limit::InfiniteNoise => PosteriorParams {
            rho: p.prior.q,
            mu: 0.0,
            theta2: p.prior.sigma_x * p.prior.sigma_x,
            log_odds: p.prior.log_odds(),
            constants: None,
        },
    }
}

/// Samples `(1 - rho) delta_0 + rho N(mu, theta2)` onto `grid`.
pub fn posterior_density(params: &PosteriorParams, grid: &GridSpec) -> Result<HybridDensity> {
    if !(0.0..=1.0).contains(&params.rho) {
        return Err(Error::invalid(format!("rho = {} outside [0, 1]", params.rho)));
    }
    if params.rho == 0.0 {
        return Ok(HybridDensity::spike_only(*grid));
    }
    let theta = params.theta();
    if theta < 2.0 * grid.spacing() {
        return Err(Error::Resolution {
            std: theta,
            spacing: grid.spacing(),
        });
    }
    let lost = params.rho * normal_mass_outside(grid.lo(), grid.hi(), params.mu, theta);
    if lost > NORMALIZATION_TOL {
        return Err(Error::GridTooNarrow {
            what: format!("posterior slab N({}, {}^2)", params.mu, theta),
            lost,
            half_width: grid.half_width(),
        });
    }
    let slab = grid
        .nodes()
        .map(|x| params.rho * log_normal_pdf(x, params.mu, theta).exp())
        .collect();
    // from the log-odds so a saturated rho keeps its tiny spike
    let spike = params.ln_one_minus_rho().exp();
    HybridDensity::from_parts(*grid, slab, spike)?.normalized()
}

/// Normalized `prior(x) * prod_{j=1..L} N(x; x0, sigma_w^2)` evaluated pointwise
/// on the grid, with the spike carried as the exact mass
/// `(1 - q) prod_j N(0; x0, sigma_w^2)`. Works in the log domain so that tiny
/// noise levels do not underflow.
pub fn oracle_posterior(p: &ChannelPoint, grid: &GridSpec) -> Result<HybridDensity> {
    if !(p.sigma_w > 0.0) {
        return Err(Error::ZeroNoise);
    }
    let q = p.prior.q;
    let message = |x: f64| -> f64 {
        (0..p.l)
            .map(|_| log_normal_pdf(x, p.x0, p.sigma_w))
            .sum::<f64>()
    };
    let log_slab: Vec<f64> = grid
        .nodes()
        .map(|x| q.ln() + log_normal_pdf(x, 0.0, p.prior.sigma_x) + message(x))
        .collect();
    let log_spike = (1.0 - q).ln() + message(0.0);
    let top = log_slab.iter().copied().fold(log_spike, f64::max);
    let slab = log_slab.iter().map(|v| (v - top).exp()).collect();
    HybridDensity::from_parts(*grid, slab, (log_spike - top).exp())?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_prior() -> SpikeSlabPrior {
        SpikeSlabPrior::gaussian(0.05, 5.0).unwrap()
    }

    fn point(x0: f64, sigma_w: f64) -> ChannelPoint {
        ChannelPoint::new(x0, sigma_w, 4, fig2_prior()).unwrap()
    }

    #[test]
    fn zero_element_has_shrunken_mixing_rate() {
        let pp = posterior_params(&point(0.0, 2.0)).unwrap();
        assert_eq!(pp.mu, 0.0);
        let k = pp.constants.unwrap();
        // c1 = 1/sqrt(2 pi sw^2/L), c2 = 1/sqrt(2 pi (sx^2 + sw^2/L)) at x0 = 0
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((k.c1 - 1.0 / (two_pi * 1.0f64).sqrt()).abs() < 1e-14);
        assert!((k.c2 - 1.0 / (two_pi * 26.0f64).sqrt()).abs() < 1e-14);
        assert!(pp.rho < 0.05);
    }

    #[test]
    fn fig2_parameters() {
        let pp = posterior_params(&point(2.5, 2.0)).unwrap();
        assert!((pp.mu - 250.0 / 104.0).abs() < 1e-12);
        assert!((pp.theta2 - 100.0 / 104.0).abs() < 1e-12);
        let rho = pp.rho;
        let k = pp.constants.unwrap();
        let direct = 0.05 * k.c2 / (0.05 * k.c2 + 0.95 * k.c1);
        assert!((rho - direct).abs() < 1e-14);
    }

    #[test]
    fn huge_noise_recovers_prior() {
        let pp = posterior_params(&point(2.5, 1e6)).unwrap();
        assert!((pp.rho - 0.05).abs() < 1e-3);
        assert!(pp.mu.abs() < 1e-3);
        assert!((pp.theta() - 5.0).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_is_redirected() {
        assert!(matches!(posterior_params(&point(1.0, 0.0)), Err(Error::ZeroNoise)));
    }

    #[test]
    fn limits() {
        let n = limit_params(&point(2.5, 0.0), Limit::Noiseless);
        assert_eq!((n.rho, n.mu, n.theta2), (1.0, 2.5, 0.0));
        let z = limit_params(&point(0.0, 0.0), Limit::Noiseless);
        assert_eq!((z.rho, z.mu, z.theta2), (0.0, 0.0, 0.0));
        let g = GridSpec::for_sigma_x(5.0).unwrap();
        assert_eq!(posterior_density(&z, &g).unwrap().spike(), 1.0);
        let inf = limit_params(&point(2.5, 1.0), Limit::InfiniteNoise);
        assert_eq!((inf.rho, inf.mu, inf.theta2), (0.05, 0.0, 25.0));

        for (sw, which) in [(1e-6, Limit::Noiseless), (1e6, Limit::InfiniteNoise)] {
            let pp = posterior_params(&point(2.5, sw)).unwrap();
            let lim = limit_params(&point(2.5, sw), which);
            assert!((pp.rho - lim.rho).abs() <= 1e-3 * lim.rho);
            assert!((pp.mu - lim.mu).abs() <= 1e-3 * lim.mu.abs().max(1e-3));
            assert!((pp.theta() - lim.theta()).abs() <= 1e-3 * lim.theta().max(1.0));
        }
    }

    #[test]
    fn density_extremes() {
        let g = GridSpec::for_sigma_x(5.0).unwrap();
        let pure = PosteriorParams {
            rho: 1.0,
            mu: 1.0,
            theta2: 1.0,
            log_odds: f64::INFINITY,
            constants: None,
        };
        let d = posterior_density(&pure, &g).unwrap();
        assert_eq!(d.spike(), 0.0);
        let narrow = PosteriorParams {
            theta2: 1e-4,
            ..pure
        };
        assert!(matches!(
            posterior_density(&narrow, &g),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn fig2_family_spreads_with_noise() {
        let g = GridSpec::for_sigma_x(5.0).unwrap();
        let mut last_spike = -1.0;
        let mut last_var = 0.0;
        for sw in [0.5, 1.0, 2.0, 4.0] {
            let d = posterior_density(&posterior_params(&point(2.5, sw)).unwrap(), &g).unwrap();
            let var = posterior_params(&point(2.5, sw)).unwrap().theta2;
            assert!(d.spike() > last_spike);
            assert!(var > last_var);
            last_spike = d.spike();
            last_var = var;
        }
    }

    #[test]
    fn oracle_gate() {
        for &(x0, sw) in &[(2.5, 0.5), (2.5, 1.0), (2.5, 2.0), (2.5, 4.0), (0.0, 1.0), (7.0, 3.0)] {
            let p = point(x0, sw);
            let pp = posterior_params(&p).unwrap();
            let g = GridSpec::resolving(40.0, pp.theta()).unwrap();
            let closed = posterior_density(&pp, &g).unwrap();
            let oracle = oracle_posterior(&p, &g).unwrap();
            let d = closed.l1_distance(&oracle).unwrap();
            assert!(d <= 1e-6, "x0 {x0} sw {sw}: l1 {d}");
        }
    }

    #[test]
    fn positive_exponent_in_c2_disagrees_with_oracle() {
        // the transcription with exp(+x0^2 / ...) must fail the same gate
        let p = point(2.5, 2.0);
        let pp = posterior_params(&p).unwrap();
        let k = pp.constants.unwrap();
        let sx2_fused = 25.0 + 1.0;
        let log_c2_plus = k.log_c2 + 2.0 * 2.5 * 2.5 / (2.0 * sx2_fused);
        let log_odds = (0.05f64 / 0.95).ln() + log_c2_plus - k.log_c1;
        let wrong = PosteriorParams {
            rho: logistic(log_odds),
            log_odds,
            ..pp
        };
        let g = GridSpec::resolving(40.0, pp.theta()).unwrap();
        let d = posterior_density(&wrong, &g)
            .unwrap()
            .l1_distance(&oracle_posterior(&p, &g).unwrap())
            .unwrap();
        assert!(d > 1e-2, "{d}");
    }

    #[test]
    fn oracle_flat_prior_single_message() {
        let prior = SpikeSlabPrior::gaussian(1.0 - 1e-12, 1e3).unwrap();
        let p = ChannelPoint::new(3.0, 2.0, 1, prior).unwrap();
        let g = GridSpec::new(40.0, 1024).unwrap();
        let o = oracle_posterior(&p, &g).unwrap();
        let r = HybridDensity::make_gaussian(g, 3.0, 2.0).unwrap();
        assert!(o.l1_distance(&r).unwrap() < 1e-4);
    }

    #[test]
    fn oracle_at_zero_never_creates_support() {
        let g = GridSpec::new(40.0, 4096).unwrap();
        for sw in [0.3, 1.0, 5.0, 20.0] {
            let o = oracle_posterior(&point(0.0, sw), &g).unwrap();
            assert!(o.spike() > 0.95, "sw {sw}: {}", o.spike());
        }
    }

    #[test]
    fn structural_invariants() {
        let prior = fig2_prior();
        for &sw in &[0.1, 0.5, 1.0, 3.0, 10.0] {
            let mut last = f64::NEG_INFINITY;
            for k in 0..200 {
                let x0 = k as f64 * 0.1;
                for sign in [1.0, -1.0] {
                    let pp = posterior_params(&ChannelPoint::new(sign * x0, sw, 4, prior).unwrap())
                        .unwrap();
                    assert!(pp.mu * sign >= 0.0);
                    assert!(pp.mu.abs() <= x0 + 1e-12);
                    assert!(pp.theta2 <= (25.0f64).min(sw * sw / 4.0) + 1e-12);
                    assert!((0.0..=1.0).contains(&pp.rho));
                }
                let pp = posterior_params(&ChannelPoint::new(x0, sw, 4, prior).unwrap()).unwrap();
                assert!(pp.log_odds > last, "rho not increasing at sw {sw} x0 {x0}");
                last = pp.log_odds;
            }
        }
    }
}
