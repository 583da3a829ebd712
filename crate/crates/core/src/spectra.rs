//! Energy binning, spectra, the source spectral template and its energy window.

use std::ops::Range;

use crate::error::{Error, Result};

/// Energy bin edges in keV, `n_bins + 1` strictly increasing values.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningScheme {
    edges: Vec<f64>,
}

/// Where an energy falls relative to a [`BinningScheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinLookup {
    Below,
    Bin(usize),
    Above,
}

impl BinningScheme {
    /// Edges follow `e_min + (e_max - e_min) * (k / n)^2`.
    pub fn quadratic(e_min: f64, e_max: f64, n: usize) -> Result<Self> {
        if !(e_min > 0.0 && e_max > e_min && e_max.is_finite()) {
            return Err(Error::param(format!(
                "binning range must satisfy 0 < e_min < e_max, got [{e_min}, {e_max}]"
            )));
        }
        if n < 2 {
            return Err(Error::param(format!("binning needs at least 2 bins, got {n}")));
        }
        let span = e_max - e_min;
        let mut edges: Vec<f64> = (0..=n)
            .map(|k| {
                let u = k as f64 / n as f64;
                e_min + span * u * u
            })
            .collect();
        edges[n] = e_max;
        Ok(Self { edges })
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn e_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn e_max(&self) -> f64 {
        self.edges[self.n_bins()]
    }

    /// Bins own their left edge: `edges[k] <= energy < edges[k + 1]`.
    pub fn bin_of(&self, energy: f64) -> BinLookup {
        let idx = self.edges.partition_point(|&e| e <= energy);
        if idx == 0 {
            BinLookup::Below
        } else if idx > self.n_bins() {
            BinLookup::Above
        } else {
            BinLookup::Bin(idx - 1)
        }
    }
}

/// Counts per energy bin for one observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpectrum {
    pub counts: Vec<u64>,
    pub live_time: f64,
}

impl EnergySpectrum {
    pub fn new(counts: Vec<u64>, live_time: f64) -> Result<Self> {
        if !(live_time > 0.0) {
            return Err(Error::param(format!("live time must be positive, got {live_time}")));
        }
        Ok(Self { counts, live_time })
    }

    pub fn zeros(n_bins: usize, live_time: f64) -> Self {
        Self {
            counts: vec![0; n_bins],
            live_time,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn window_counts(&self, window: &SourceWindow) -> u64 {
        self.counts[window.bins()].iter().sum()
    }
}

/// Probability that a detected source photon lands in each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTemplate {
    mass: Vec<f64>,
}

impl SpectrumTemplate {
    /// Normalize nonnegative weights into a template.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("template weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::param("template weights sum to zero"));
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { mass })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    /// Index of the largest bin; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = k;
            }
        }
        best
    }
}

/// Gaussian CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Mass of a Gaussian line integrated over each bin (not normalized).
pub(crate) fn gaussian_bin_mass(binning: &BinningScheme, center: f64, sigma: f64) -> Vec<f64> {
    binning
        .edges()
        .windows(2)
        .map(|e| normal_cdf((e[1] - center) / sigma) - normal_cdf((e[0] - center) / sigma))
        .map(|m| m.max(0.0))
        .collect()
}

/// Single Gaussian line at `peak` with FWHM `fwhm_fraction * peak`, renormalized
/// over the in-range bins.
pub fn make_snm_template(
    binning: &BinningScheme,
    peak: f64,
    fwhm_fraction: f64,
) -> Result<SpectrumTemplate> {
    if !(peak > binning.e_min() && peak < binning.e_max()) {
        return Err(Error::param(format!(
            "template peak {peak} keV outside ({}, {})",
            binning.e_min(),
            binning.e_max()
        )));
    }
    if !(fwhm_fraction > 0.0 && fwhm_fraction < 1.0) {
        return Err(Error::param(format!(
            "fwhm fraction must lie in (0, 1), got {fwhm_fraction}"
        )));
    }
    let sigma = fwhm_fraction * peak / FWHM_PER_SIGMA;
    SpectrumTemplate::from_weights(gaussian_bin_mass(binning, peak, sigma))
}

/// Contiguous run of bins `[start, end)` where the source template concentrates.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceWindow {
    start: usize,
    end: usize,
    mass_coverage: f64,
}

impl SourceWindow {
    pub fn new(start: usize, end: usize, template: &SpectrumTemplate) -> Result<Self> {
        if start >= end || end > template.n_bins() {
            return Err(Error::param(format!(
                "window [{start}, {end}) invalid for {} bins",
                template.n_bins()
            )));
        }
        let mass_coverage = template.mass()[start..end].iter().sum();
        Ok(Self {
            start,
            end,
            mass_coverage,
        })
    }

    pub fn bins(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.bins().contains(&bin)
    }

    /// Template mass inside the window.
    pub fn mass_coverage(&self) -> f64 {
        self.mass_coverage
    }

    pub(crate) fn set_mass_coverage(&mut self, coverage: f64) {
        self.mass_coverage = coverage;
    }
}

/// Smallest contiguous run containing the template argmax with mass at least
/// `coverage`. Among equally short runs the one with more mass wins, then the
/// one starting lower.
pub fn window_from_template(template: &SpectrumTemplate, coverage: f64) -> Result<SourceWindow> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::param(format!("window coverage must lie in (0, 1), got {coverage}")));
    }
    let n = template.n_bins();
    let peak = template.argmax();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &m in template.mass() {
        prefix.push(prefix.last().unwrap() + m);
    }
    for len in 1..=n {
        let lo = (peak + 1).saturating_sub(len);
        let hi = peak.min(n - len);
        let mut best: Option<(usize, f64)> = None;
        for start in lo..=hi {
            let mass = prefix[start + len] - prefix[start];
            if best.is_none_or(|(_, m)| mass > m) {
                best = Some((start, mass));
            }
        }
        if let Some((start, mass)) = best {
            if mass >= coverage {
                return SourceWindow::new(start, start + len, template);
            }
        }
    }
    // Floating-point shortfall of the full range below `coverage`.
    SourceWindow::new(0, n, template)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> BinningScheme {
        BinningScheme::quadratic(30.0, 3000.0, 128).unwrap()
    }

    #[test]
    fn quadratic_edges() {
        let b = scheme();
        assert_eq!(b.n_bins(), 128);
        assert_eq!(b.edges()[0], 30.0);
        assert_eq!(b.edges()[128], 3000.0);
        assert_eq!(b.edges()[64], 772.5);
        for (k, e) in b.edges().iter().enumerate() {
            let u = k as f64 / 128.0;
            assert!((e - (30.0 + 2970.0 * u * u)).abs() <= 1e-9);
        }
        assert!(b.edges().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn quadratic_rejects_bad_input() {
        assert!(BinningScheme::quadratic(0.0, 3000.0, 128).is_err());
        assert!(BinningScheme::quadratic(50.0, 30.0, 128).is_err());
        assert!(BinningScheme::quadratic(30.0, 3000.0, 1).is_err());
    }

    #[test]
    fn bin_lookup() {
        let b = scheme();
        assert_eq!(b.bin_of(29.9), BinLookup::Below);
        assert_eq!(b.bin_of(30.0), BinLookup::Bin(0));
        assert_eq!(b.bin_of(772.5), BinLookup::Bin(64));
        assert_eq!(b.bin_of(2999.999), BinLookup::Bin(127));
        assert_eq!(b.bin_of(3000.0), BinLookup::Above);
        for k in 0..128 {
            assert_eq!(b.bin_of(b.edges()[k]), BinLookup::Bin(k));
        }
    }

    #[test]
    fn snm_template_peaks_at_line() {
        let b = scheme();
        let t = make_snm_template(&b, 186.0, 0.12).unwrap();
        assert!((t.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(t.mass().iter().all(|&m| m >= 0.0));
        assert_eq!(BinLookup::Bin(t.argmax()), b.bin_of(186.0));
    }

    #[test]
    fn snm_template_rejects_out_of_range_peak() {
        let b = scheme();
        assert!(make_snm_template(&b, 20.0, 0.12).is_err());
        assert!(make_snm_template(&b, 3100.0, 0.12).is_err());
        assert!(make_snm_template(&b, 186.0, 1.5).is_err());
    }

    #[test]
    fn degenerate_template_window() {
        let mut w = vec![0.0; 20];
        w[10] = 1.0;
        let t = SpectrumTemplate::from_weights(w).unwrap();
        let win = window_from_template(&t, 0.9).unwrap();
        assert_eq!(win.bins(), 10..11);
        assert_eq!(win.mass_coverage(), 1.0);
    }

    #[test]
    fn gaussian_window_covers_requested_mass() {
        let b = scheme();
        let t = make_snm_template(&b, 186.0, 0.12).unwrap();
        let win = window_from_template(&t, 0.9).unwrap();
        assert!(win.mass_coverage() >= 0.9 && win.mass_coverage() <= 1.0);
        assert!(win.contains(t.argmax()));
    }

    #[test]
    fn coverage_is_monotone() {
        let b = scheme();
        let t = make_snm_template(&b, 186.0, 0.12).unwrap();
        let mut last = 0.0;
        for c in [0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99] {
            let win = window_from_template(&t, c).unwrap();
            assert!(win.mass_coverage() >= last);
            last = win.mass_coverage();
        }
    }
}
