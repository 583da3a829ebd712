//! Per-second observations for the masked and unmasked arrays: Poisson
//! background from the learned model plus injected source counts.
//!
//! Only the in-window bins are resolved per element; out-of-window bins are
//! drawn for the aggregate directly. A sum of independent Poissons is Poisson
//! with the summed mean, so both routes give the same joint distribution of
//! the quantities an [`Observation`] keeps.

use rand::Rng;

use crate::error::Result;
use crate::sampling::poisson;
use crate::scene::{exposure, geometry, mask_coefficients, MaskModel, Pose, SourcePlacement, N_ELEMENTS};
use crate::spectra::{EnergySpectrum, SourceWindow, SpectrumTemplate};

/// Decays per second per microcurie.
pub const DECAYS_PER_UCI: f64 = 3.7e4;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub n_elements: usize,
    /// Face area of one element, m².
    pub element_area: f64,
    /// In-window photopeak efficiency.
    pub intrinsic_efficiency: f64,
    pub masked: bool,
}

impl DetectorConfig {
    pub fn new(element_width: f64, intrinsic_efficiency: f64, masked: bool) -> Self {
        Self {
            n_elements: N_ELEMENTS,
            element_area: element_width * element_width,
            intrinsic_efficiency,
            masked,
        }
    }

    pub fn array_area(&self) -> f64 {
        self.element_area * self.n_elements as f64
    }
}

/// Expected source counts for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMeans {
    /// Per element, summed over the window bins.
    pub element_window: Vec<f64>,
    /// Per bin, summed over elements.
    pub aggregate: Vec<f64>,
}

impl SourceMeans {
    pub fn zero(n_elements: usize, n_bins: usize) -> Self {
        Self {
            element_window: vec![0.0; n_elements],
            aggregate: vec![0.0; n_bins],
        }
    }
}

/// Counts per second per element from an unobstructed source: emission rate
/// times element exposure times efficiency.
pub fn element_source_rate(placement: &SourcePlacement, d: f64, config: &DetectorConfig) -> Result<f64> {
    Ok(placement.intensity_uci
        * DECAYS_PER_UCI
        * exposure(d, config.element_area, 1.0)?
        * config.intrinsic_efficiency)
}

pub fn source_mean_counts(
    placement: &SourcePlacement,
    pose: &Pose,
    config: &DetectorConfig,
    template: &SpectrumTemplate,
    window: &SourceWindow,
    mask: Option<&MaskModel>,
) -> Result<SourceMeans> {
    let (d, theta) = geometry(pose.position, placement.along, placement.offset)?;
    let per_element = element_source_rate(placement, d, config)?;
    let coefficients = match (config.masked, mask) {
        (true, Some(mask)) => mask_coefficients(mask, theta)?,
        (true, None) => {
            return Err(crate::Error::param("masked detector requires a mask model"))
        }
        (false, _) => vec![1.0; config.n_elements],
    };
    let kappa = window.mass_coverage();
    let element_window = coefficients.iter().map(|c| per_element * kappa * c).collect();
    let open_total: f64 = coefficients.iter().sum();
    let aggregate = template
        .mass()
        .iter()
        .map(|m| per_element * m * open_total)
        .collect();
    Ok(SourceMeans {
        element_window,
        aggregate,
    })
}

/// One 1 s observation of the array.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pose: Pose,
    /// In-window counts per element.
    pub element_window_counts: Vec<u64>,
    pub aggregate: EnergySpectrum,
}

impl Observation {
    /// Add Poisson source counts with the given means on top of these counts.
    pub fn inject<R: Rng + ?Sized>(&self, rng: &mut R, source: &SourceMeans, window: &SourceWindow) -> Self {
        let mut out = self.clone();
        add_counts(rng, &mut out, source, window, |_| 0.0, |_| 0.0);
        out
    }

    pub fn window_total(&self) -> u64 {
        self.element_window_counts.iter().sum()
    }
}

/// Draw every element-bin count as Poisson(background + source), with the
/// background split uniformly over the elements.
pub fn synthesize_observation<R: Rng + ?Sized>(
    rng: &mut R,
    pose: Pose,
    background_rates: &[f64],
    source: &SourceMeans,
    config: &DetectorConfig,
    window: &SourceWindow,
) -> Observation {
    let mut obs = Observation {
        pose,
        element_window_counts: vec![0; config.n_elements],
        aggregate: EnergySpectrum::zeros(background_rates.len(), 1.0),
    };
    let n = config.n_elements as f64;
    add_counts(
        rng,
        &mut obs,
        source,
        window,
        |k| background_rates[k] / n,
        |k| background_rates[k],
    );
    obs
}

fn add_counts<R: Rng + ?Sized>(
    rng: &mut R,
    obs: &mut Observation,
    source: &SourceMeans,
    window: &SourceWindow,
    element_background: impl Fn(usize) -> f64,
    aggregate_background: impl Fn(usize) -> f64,
) {
    // Per-element source mean in bin k is element_window[i] * share[k].
    let in_window: f64 = source.aggregate[window.bins()].iter().sum();
    let share = |k: usize| {
        if in_window > 0.0 {
            source.aggregate[k] / in_window
        } else {
            0.0
        }
    };
    for (i, count) in obs.element_window_counts.iter_mut().enumerate() {
        for k in window.bins() {
            let c = poisson(rng, element_background(k) + source.element_window[i] * share(k));
            *count += c;
            obs.aggregate.counts[k] += c;
        }
    }
    for k in (0..obs.aggregate.n_bins()).filter(|&k| !window.contains(k)) {
        obs.aggregate.counts[k] += poisson(rng, aggregate_background(k) + source.aggregate[k]);
    }
}
