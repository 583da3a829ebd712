//! Synthetic background survey and the learned background model.
//!
//! The survey generator stands in for an empirical road survey: a fixed
//! spectral shape scaled by a smooth multiplicative modulation along the road,
//! with Poisson counts per bin. The model keeps, for every surveyed position,
//! the MAP rate vector of the observations within `radius` metres under a
//! Poisson likelihood and a multivariate Gaussian prior on the rates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::{poisson, rng_from_seed};
use crate::spectra::{gaussian_bin_mass, BinningScheme, EnergySpectrum, SpectrumTemplate};

/// One 1 s survey spectrum at a road position (chainage, metres).
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyObservation {
    pub t_s: f64,
    pub position: f64,
    pub spectrum: EnergySpectrum,
}

/// Term `amplitude * sin(2 pi p / wavelength + phase)` of the rate modulation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Modulator {
    pub amplitude: f64,
    pub wavelength_m: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSurveyConfig {
    pub road_length_m: f64,
    pub duration_s: f64,
    pub speed_mps: f64,
    /// Expected total counts per second before modulation.
    pub base_rate_total: f64,
    pub spatial_modulators: Vec<Modulator>,
    pub base_shape: SpectrumTemplate,
    pub seed: u64,
}

impl SyntheticSurveyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.road_length_m > 0.0 && self.duration_s >= 1.0 && self.speed_mps > 0.0) {
            return Err(Error::param(
                "survey needs positive road length and speed and at least 1 s duration",
            ));
        }
        if !(self.base_rate_total > 0.0) {
            return Err(Error::param("survey base rate must be positive"));
        }
        if self
            .spatial_modulators
            .iter()
            .any(|m| !(m.wavelength_m > 0.0 && m.amplitude.is_finite() && m.phase_rad.is_finite()))
        {
            return Err(Error::param("modulator wavelengths must be positive"));
        }
        let swing: f64 = self.spatial_modulators.iter().map(|m| m.amplitude.abs()).sum();
        if swing >= 1.0 {
            return Err(Error::param(format!(
                "modulator amplitudes sum to {swing}; rates would reach zero"
            )));
        }
        Ok(())
    }

    /// Multiplicative rate factor at road position `p`.
    pub fn modulation(&self, p: f64) -> f64 {
        1.0 + self
            .spatial_modulators
            .iter()
            .map(|m| {
                m.amplitude * (std::f64::consts::TAU * p / m.wavelength_m + m.phase_rad).sin()
            })
            .sum::<f64>()
    }

    /// Generator truth: expected counts per second in each bin at `p`.
    pub fn true_rates(&self, p: f64) -> Vec<f64> {
        let scale = self.base_rate_total * self.modulation(p);
        self.base_shape.mass().iter().map(|m| m * scale).collect()
    }

    /// The vehicle drives back and forth over `[0, road_length_m]`.
    pub fn position_at(&self, t: f64) -> f64 {
        let period = 2.0 * self.road_length_m;
        let d = (t * self.speed_mps).rem_euclid(period);
        if d > self.road_length_m {
            period - d
        } else {
            d
        }
    }
}

/// Continuum-plus-lines background shape used when no other is configured:
/// two falling exponentials, a flat floor and the 1461 and 2614 keV lines.
pub fn default_background_shape(binning: &BinningScheme) -> SpectrumTemplate {
    let exp_part = |tau: f64, weight: f64| -> Vec<f64> {
        binning
            .edges()
            .windows(2)
            .map(|e| weight * tau * ((-e[0] / tau).exp() - (-e[1] / tau).exp()))
            .collect()
    };
    let soft = exp_part(150.0, 1.0);
    let hard = exp_part(800.0, 0.05);
    let mut weights: Vec<f64> = binning
        .edges()
        .windows(2)
        .zip(soft.iter().zip(&hard))
        .map(|(e, (s, h))| s + h + 0.002 * (e[1] - e[0]))
        .collect();
    let continuum: f64 = weights.iter().sum();
    for (line, frac) in [(1461.0, 0.03), (2614.0, 0.01)] {
        let sigma = 0.07 * line / crate::spectra::FWHM_PER_SIGMA;
        for (w, m) in weights.iter_mut().zip(gaussian_bin_mass(binning, line, sigma)) {
            *w += frac * continuum * m;
        }
    }
    SpectrumTemplate::from_weights(weights).expect("background shape is positive")
}

/// One observation per second, Poisson counts around the generator truth.
pub fn generate_survey(config: &SyntheticSurveyConfig) -> Result<Vec<SurveyObservation>> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let n_obs = config.duration_s.floor() as usize;
    let mut out = Vec::with_capacity(n_obs);
    for i in 0..n_obs {
        let t = i as f64;
        let position = config.position_at(t);
        let counts = config
            .true_rates(position)
            .into_iter()
            .map(|r| poisson(&mut rng, r))
            .collect();
        out.push(SurveyObservation {
            t_s: t,
            position,
            spectrum: EnergySpectrum::new(counts, 1.0)?,
        });
    }
    Ok(out)
}

/// Shrinkage of the sample covariance toward its diagonal.
pub const COVARIANCE_SHRINKAGE: f64 = 0.1;
/// Ridge added to the covariance, relative to its mean diagonal (floored at 1).
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Gaussian prior over bin rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePrior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl RatePrior {
    pub fn n_bins(&self) -> usize {
        self.mean.len()
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Self {
        Self {
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
            mean: DVector::from_vec(mean),
        }
    }
}

/// Sample mean and shrunk sample covariance of the observed rates:
/// `S <- (1 - g) S + g diag(S) + eps I`, `eps = 1e-6 * max(mean diag S, 1)`.
pub fn estimate_prior(observations: &[SurveyObservation]) -> Result<RatePrior> {
    if observations.len() < 2 {
        return Err(Error::data(format!(
            "prior estimation needs at least 2 observations, got {}",
            observations.len()
        )));
    }
    let n_bins = observations[0].spectrum.n_bins();
    if observations.iter().any(|o| o.spectrum.n_bins() != n_bins) {
        return Err(Error::data("survey spectra have inconsistent bin counts"));
    }
    let n = observations.len() as f64;
    let rates: Vec<DVector<f64>> = observations
        .iter()
        .map(|o| {
            DVector::from_iterator(
                n_bins,
                o.spectrum.counts.iter().map(|&c| c as f64 / o.spectrum.live_time),
            )
        })
        .collect();
    let mut mean = DVector::zeros(n_bins);
    for r in &rates {
        mean += r;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(n_bins, n_bins);
    for r in &rates {
        let d = r - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= n - 1.0;
    let diag = cov.diagonal();
    let ridge = COVARIANCE_RIDGE * (diag.sum() / n_bins as f64).max(1.0);
    cov *= 1.0 - COVARIANCE_SHRINKAGE;
    for k in 0..n_bins {
        cov[(k, k)] += COVARIANCE_SHRINKAGE * diag[k] + ridge;
    }
    Ok(RatePrior {
        mean,
        covariance: cov,
    })
}

/// Summed counts and live time of a set of spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSums {
    pub counts: Vec<f64>,
    pub live_time: f64,
}

impl CountSums {
    pub fn from_spectra<'a>(spectra: impl IntoIterator<Item = &'a EnergySpectrum>) -> Self {
        let mut counts: Vec<u64> = Vec::new();
        let mut live_time = 0.0;
        for s in spectra {
            if counts.is_empty() {
                counts = vec![0; s.n_bins()];
            }
            for (acc, &c) in counts.iter_mut().zip(&s.counts) {
                *acc += c;
            }
            live_time += s.live_time;
        }
        Self {
            counts: counts.into_iter().map(|c| c as f64).collect(),
            live_time,
        }
    }
}

const MAP_MAX_ITER: usize = 200;
const MAP_GRAD_TOL: f64 = 1e-11;
const MAP_STEP_TOL: f64 = 1e-13;
/// Lower bound for rates of bins without counts.
const MAP_RATE_FLOOR: f64 = 1e-12;

/// Newton solver for the Poisson-likelihood, Gaussian-prior MAP rates.
#[derive(Debug, Clone)]
pub struct MapEstimator {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl MapEstimator {
    pub fn new(prior: &RatePrior) -> Result<Self> {
        let chol = prior
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("prior covariance is not positive definite"))?;
        Ok(Self {
            mean: prior.mean.clone(),
            precision: chol.inverse(),
        })
    }

    /// `sum_k [x_k ln l_k - t l_k] - (l - mu)' P (l - mu) / 2`.
    pub fn objective(&self, sums: &CountSums, rates: &DVector<f64>) -> f64 {
        let mut f = 0.0;
        for (k, &x) in sums.counts.iter().enumerate() {
            if x > 0.0 {
                f += x * rates[k].ln();
            }
            f -= sums.live_time * rates[k];
        }
        let d = rates - &self.mean;
        f - 0.5 * d.dot(&(&self.precision * &d))
    }

    pub fn gradient(&self, sums: &CountSums, rates: &DVector<f64>) -> DVector<f64> {
        let d = rates - &self.mean;
        let mut g = -(&self.precision * d);
        for (k, &x) in sums.counts.iter().enumerate() {
            g[k] += x / rates[k] - sums.live_time;
        }
        g
    }

    /// Gradient inf-norm over bins not held at the rate floor.
    fn projected_gradient_norm(&self, sums: &CountSums, rates: &DVector<f64>) -> f64 {
        let g = self.gradient(sums, rates);
        (0..g.len())
            .filter(|&k| !(sums.counts[k] == 0.0 && rates[k] <= MAP_RATE_FLOOR && g[k] < 0.0))
            .map(|k| g[k].abs())
            .fold(0.0, f64::max)
    }

    /// Scale for the relative gradient tolerance.
    fn gradient_scale(sums: &CountSums, rates: &DVector<f64>) -> f64 {
        let data = sums
            .counts
            .iter()
            .zip(rates.iter())
            .map(|(x, l)| x / l)
            .fold(0.0, f64::max);
        1.0 + sums.live_time + data
    }

    pub fn solve(&self, sums: &CountSums) -> Result<DVector<f64>> {
        let n = self.mean.len();
        if sums.counts.len() != n {
            return Err(Error::data(format!(
                "spectra have {} bins, prior has {n}",
                sums.counts.len()
            )));
        }
        if !(sums.live_time > 0.0) {
            return Err(Error::data("MAP estimate needs a nonempty neighborhood"));
        }
        let mut rates = DVector::from_iterator(
            n,
            (0..n).map(|k| {
                let mle = sums.counts[k] / sums.live_time;
                if mle > 0.0 {
                    mle
                } else {
                    self.mean[k].max(1e-6)
                }
            }),
        );
        let mut f = self.objective(sums, &rates);
        let mut grad_norm = f64::INFINITY;
        for _ in 0..MAP_MAX_ITER {
            let g = self.gradient(sums, &rates);
            // Empty bins may want to leave the feasible region; pinned at the
            // floor with an outward gradient they drop out of the Newton system.
            let free: Vec<usize> = (0..n)
                .filter(|&k| !(sums.counts[k] == 0.0 && rates[k] <= MAP_RATE_FLOOR && g[k] < 0.0))
                .collect();
            grad_norm = free.iter().map(|&k| g[k].abs()).fold(0.0, f64::max);
            if grad_norm <= MAP_GRAD_TOL * Self::gradient_scale(sums, &rates) {
                return Ok(rates);
            }
            let m = free.len();
            let mut neg_hessian = DMatrix::from_fn(m, m, |i, j| self.precision[(free[i], free[j])]);
            for (i, &k) in free.iter().enumerate() {
                neg_hessian[(i, i)] += sums.counts[k] / (rates[k] * rates[k]);
            }
            let reduced = neg_hessian
                .cholesky()
                .ok_or_else(|| Error::numeric("MAP Hessian is not negative definite"))?
                .solve(&DVector::from_iterator(m, free.iter().map(|&k| g[k])));
            let mut step = DVector::zeros(n);
            for (i, &k) in free.iter().enumerate() {
                step[k] = reduced[i];
            }

            // Bins with counts must stay strictly positive; empty bins are
            // projected onto the floor instead.
            let mut alpha = 1.0;
            while (0..n).any(|k| sums.counts[k] > 0.0 && rates[k] + alpha * step[k] <= 0.0) {
                alpha *= 0.5;
            }
            let mut accepted = None;
            while alpha * step.amax() > MAP_STEP_TOL * (1.0 + rates.amax()) {
                let mut candidate = &rates + alpha * &step;
                for k in 0..n {
                    if sums.counts[k] == 0.0 {
                        candidate[k] = candidate[k].max(MAP_RATE_FLOOR);
                    }
                }
                let fc = self.objective(sums, &candidate);
                // Near the optimum objective differences drown in rounding;
                // a smaller gradient then certifies progress.
                if fc >= f || self.projected_gradient_norm(sums, &candidate) < grad_norm {
                    accepted = Some((candidate, fc));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((candidate, fc)) => {
                    let moved = (&candidate - &rates).amax();
                    rates = candidate;
                    f = fc;
                    if moved <= MAP_STEP_TOL * (1.0 + rates.amax()) {
                        return Ok(rates);
                    }
                }
                // No representable ascent remains along the Newton direction.
                None if step.amax() <= 1e-9 * (1.0 + rates.amax()) => return Ok(rates),
                None => break,
            }
        }
        Err(Error::numeric(format!(
            "MAP Newton iteration did not converge; final gradient inf-norm {grad_norm:e}"
        )))
    }
}

/// MAP rate vector for the observations in `neighborhood`.
pub fn map_rates(neighborhood: &[SurveyObservation], prior: &RatePrior) -> Result<Vec<f64>> {
    let sums = CountSums::from_spectra(neighborhood.iter().map(|o| &o.spectrum));
    Ok(MapEstimator::new(prior)?.solve(&sums)?.as_slice().to_vec())
}

/// Per-location MAP background rates along the road.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    /// Sorted, distinct road positions.
    pub locations: Vec<f64>,
    /// Counts per second per bin at each location.
    pub rates: Vec<Vec<f64>>,
    pub prior: RatePrior,
    pub radius: f64,
}

pub const DEFAULT_RADIUS_M: f64 = 20.0;

impl BackgroundModel {
    pub fn n_bins(&self) -> usize {
        self.prior.n_bins()
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.is_empty() || self.locations.len() != self.rates.len() {
            return Err(Error::data("background model needs one rate vector per location"));
        }
        if self.locations.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::data("background model locations must be strictly increasing"));
        }
        let n = self.n_bins();
        if self.rates.iter().any(|r| r.len() != n || r.iter().any(|&l| !(l > 0.0))) {
            return Err(Error::data("background rates must be positive with one entry per bin"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::data("background model radius must be positive"));
        }
        Ok(())
    }

    /// Rates of the nearest stored location; ties go to the smaller position.
    pub fn rates_at(&self, position: f64) -> &[f64] {
        let locs = &self.locations;
        let i = locs.partition_point(|&l| l < position);
        let idx = if i == 0 {
            0
        } else if i == locs.len() {
            locs.len() - 1
        } else if position - locs[i - 1] <= locs[i] - position {
            i - 1
        } else {
            i
        };
        &self.rates[idx]
    }

    pub fn road_span(&self) -> (f64, f64) {
        (self.locations[0], *self.locations.last().unwrap())
    }
}

/// Run [`map_rates`] at every distinct surveyed position over the observations
/// within `radius` metres of road chainage.
pub fn build_background_model(
    observations: &[SurveyObservation],
    prior: RatePrior,
    radius: f64,
) -> Result<BackgroundModel> {
    if observations.is_empty() {
        return Err(Error::data("background model needs at least one observation"));
    }
    if !(radius > 0.0) {
        return Err(Error::param(format!("neighborhood radius must be positive, got {radius}")));
    }
    if observations.iter().any(|o| !o.position.is_finite()) {
        return Err(Error::data("survey positions must be finite"));
    }
    // Canonical order makes the neighborhood sums independent of input order.
    let mut sorted: Vec<&SurveyObservation> = observations.iter().collect();
    sorted.sort_by(|a, b| {
        a.position
            .total_cmp(&b.position)
            .then(a.t_s.total_cmp(&b.t_s))
            .then_with(|| a.spectrum.counts.cmp(&b.spectrum.counts))
    });
    let mut locations: Vec<f64> = sorted.iter().map(|o| o.position).collect();
    locations.dedup();

    let estimator = MapEstimator::new(&prior)?;
    let rates = locations
        .par_iter()
        .map(|&loc| {
            let lo = sorted.partition_point(|o| o.position < loc - radius);
            let hi = sorted.partition_point(|o| o.position <= loc + radius);
            let sums = CountSums::from_spectra(sorted[lo..hi].iter().map(|o| &o.spectrum));
            estimator
                .solve(&sums)
                .map(|r| r.as_slice().to_vec())
                .map_err(|e| Error::numeric(format!("location {loc} m: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BackgroundModel {
        locations,
        rates,
        prior,
        radius,
    })
}
