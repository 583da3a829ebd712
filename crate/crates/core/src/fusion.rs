//! Spatial fusion of per-second scores.
//!
//! Both methods evaluate, for every hypothesized source cell, the exposure of
//! the array to that cell at each pose. Weighted combining (WC) back-projects
//! source estimates into a single SNR; Bayesian aggregation (BA) sums Gaussian
//! log-likelihood ratios and marginalizes a grid of source intensities.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{exposure, geometry, AngleGrid};
use crate::sensor::DECAYS_PER_UCI;

/// Grid of hypothesized source cells, along-road major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub along: Vec<f64>,
    pub offset: Vec<f64>,
}

impl SpatialGrid {
    /// `lo..=hi` in steps of `step` on each axis.
    pub fn new(along: (f64, f64), offset: (f64, f64), step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::param("grid step must be positive"));
        }
        let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
            if !(hi >= lo) {
                return Vec::new();
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        };
        let grid = Self {
            along: axis(along),
            offset: axis(offset),
        };
        if grid.along.is_empty() || grid.offset.is_empty() {
            return Err(Error::param("grid has no cells"));
        }
        Ok(grid)
    }

    /// Cells of `step`-spaced lattice points (multiples of `step`) whose along
    /// coordinate lies within `halfwidth` of `center` and inside `span`.
    pub fn neighborhood(
        center: f64,
        halfwidth: f64,
        span: (f64, f64),
        offset: (f64, f64),
        step: f64,
    ) -> Result<Self> {
        if !(step > 0.0 && halfwidth >= 0.0) {
            return Err(Error::param("neighborhood needs a positive step and nonnegative halfwidth"));
        }
        let lo = ((center - halfwidth).max(span.0) / step).ceil() * step;
        let hi = ((center + halfwidth).min(span.1) / step).floor() * step;
        if hi < lo {
            return Err(Error::param(format!(
                "neighborhood of {center} m does not intersect the grid"
            )));
        }
        Self::new((lo, hi), offset, step)
    }

    pub fn n_cells(&self) -> usize {
        self.along.len() * self.offset.len()
    }

    pub fn cell(&self, idx: usize) -> (f64, f64) {
        let n_off = self.offset.len();
        (self.along[idx / n_off], self.offset[idx % n_off])
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.along
            .iter()
            .flat_map(move |&a| self.offset.iter().map(move |&o| (a, o)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMethod {
    Bayesian,
    WeightedCombining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
    pub method: FusionMethod,
    /// Set when some cell's WC denominator had to be floored.
    pub degenerate: bool,
}

impl ScoreMap {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let mut write = || -> std::io::Result<()> {
            writeln!(f, "along_m,offset_m,score")?;
            for ((a, o), v) in self.grid.cells().zip(&self.values) {
                writeln!(f, "{a},{o},{v}")?;
            }
            f.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Array-level source and background estimates for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsStats {
    pub s_hat: f64,
    pub b_hat: f64,
    /// Variance of `s_hat`.
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimates {
    /// Bearing-free estimate (unmasked array).
    Single(ObsStats),
    /// One estimate per angle of the series' [`AngleGrid`] (masked array).
    PerAngle(Vec<ObsStats>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEntry {
    pub position: f64,
    pub estimates: Estimates,
}

/// Scorer output for one drive-by, one entry per second.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub entries: Vec<SeriesEntry>,
    pub angles: Option<AngleGrid>,
}

impl ScoreSeries {
    /// Estimates of observation `t` for a source at bearing `theta`.
    pub fn stats(&self, t: usize, theta: f64) -> Result<ObsStats> {
        match (&self.entries[t].estimates, &self.angles) {
            (Estimates::Single(s), _) => Ok(*s),
            (Estimates::PerAngle(v), Some(grid)) => v
                .get(grid.nearest(theta))
                .copied()
                .ok_or_else(|| Error::data("per-angle estimates do not match the angle grid")),
            (Estimates::PerAngle(_), None) => {
                Err(Error::data("per-angle estimates without an angle grid"))
            }
        }
    }
}

/// Exposure and in-window yield context for fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionGeometry {
    /// Face area of the whole array, m².
    pub array_area: f64,
    pub live_time: f64,
    pub efficiency: f64,
    /// Template mass inside the source window.
    pub window_coverage: f64,
}

impl FusionGeometry {
    pub fn exposure(&self, position: f64, cell: (f64, f64)) -> Result<(f64, f64)> {
        let (d, theta) = geometry(position, cell.0, cell.1)?;
        Ok((exposure(d, self.array_area, self.live_time)?, theta))
    }

    /// Expected unobstructed in-window counts per microcurie at this exposure.
    pub fn counts_per_uci(&self, exposure: f64) -> f64 {
        DECAYS_PER_UCI * exposure * self.efficiency * self.window_coverage
    }
}

const WC_DENOMINATOR_FLOOR: f64 = 1e-12;

/// `[sum_t s_t / e_t] / sqrt(sum_t b_t / e_t^2)` per cell. The geometry's
/// exposure scale cancels and is accepted only for symmetry with BA.
pub fn wc_aggregate(series: &ScoreSeries, grid: &SpatialGrid, _geom: &FusionGeometry) -> Result<ScoreMap> {
    let mut degenerate = false;
    let mut values = Vec::with_capacity(grid.n_cells());
    let mut per_obs = Vec::with_capacity(series.entries.len());
    for cell in grid.cells() {
        per_obs.clear();
        for (t, entry) in series.entries.iter().enumerate() {
            let (d, theta) = geometry(entry.position, cell.0, cell.1)?;
            per_obs.push((d * d, series.stats(t, theta)?));
        }
        // The statistic is homogeneous of degree zero in exposure, so only the
        // ratios e_t / e_max = d_min^2 / d_t^2 enter; area and live time cancel.
        let d2_min = per_obs.iter().map(|(d2, _)| *d2).fold(f64::INFINITY, f64::min);
        let mut num = 0.0;
        let mut den = 0.0;
        for (d2, st) in &per_obs {
            let w = d2_min / d2;
            num += st.s_hat / w;
            den += st.b_hat / (w * w);
        }
        if !(den > WC_DENOMINATOR_FLOOR) {
            degenerate = true;
            den = WC_DENOMINATOR_FLOOR;
        }
        values.push(if per_obs.is_empty() { 0.0 } else { num / den.sqrt() });
    }
    Ok(ScoreMap {
        grid: grid.clone(),
        values,
        method: FusionMethod::WeightedCombining,
        degenerate,
    })
}

/// Gaussian log densities of `s_hat` under H1 (mean `m`) and H0 (mean 0),
/// both with variance `var`.
pub fn ba_loglik_model(s_hat: f64, var: f64, m: f64) -> (f64, f64) {
    let norm = -0.5 * (std::f64::consts::TAU * var).ln();
    let h1 = norm - 0.5 * (s_hat - m).powi(2) / var;
    let h0 = norm - 0.5 * s_hat * s_hat / var;
    (h1, h0)
}

/// Hypothesized source intensities, µCi, increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    pub values: Vec<f64>,
}

impl IntensityGrid {
    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::param("intensity grid needs 0 < lo < hi and n >= 2"));
        }
        let ratio = (hi / lo).ln() / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| lo * (ratio * i as f64).exp()).collect();
        values[n - 1] = hi;
        Ok(Self { values })
    }

    pub fn single(value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::param("intensity must be positive"));
        }
        Ok(Self { values: vec![value] })
    }
}

/// `log(mean(exp(x)))` without overflow.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + (sum / xs.len() as f64).ln()
}

/// Log-mean-exp over intensities of the summed per-second log-likelihood ratios.
pub fn ba_aggregate(
    series: &ScoreSeries,
    grid: &SpatialGrid,
    intensities: &IntensityGrid,
    geom: &FusionGeometry,
) -> Result<ScoreMap> {
    let mut values = Vec::with_capacity(grid.n_cells());
    let mut lr = vec![0.0; intensities.values.len()];
    for cell in grid.cells() {
        // With m_t = I k_t the log-LR sums to I A - I^2 B / 2.
        let mut a = 0.0;
        let mut b = 0.0;
        for (t, entry) in series.entries.iter().enumerate() {
            let (e, theta) = geom.exposure(entry.position, cell)?;
            let st = series.stats(t, theta)?;
            let k = geom.counts_per_uci(e);
            a += st.s_hat * k / st.var;
            b += k * k / st.var;
        }
        for (l, &i) in lr.iter_mut().zip(&intensities.values) {
            *l = i * a - 0.5 * i * i * b;
        }
        values.push(log_mean_exp(&lr));
    }
    Ok(ScoreMap {
        grid: grid.clone(),
        values,
        method: FusionMethod::Bayesian,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub along: f64,
    pub offset: f64,
}

/// Largest score among cells with `|along - center| <= halfwidth`; ties go to
/// the smaller along coordinate, then the smaller offset.
pub fn extract_detection(map: &ScoreMap, center: f64, halfwidth: f64) -> Result<Detection> {
    let mut best: Option<Detection> = None;
    for ((along, offset), &score) in map.grid.cells().zip(&map.values) {
        if (along - center).abs() > halfwidth {
            continue;
        }
        if best.is_none_or(|b| score > b.score) {
            best = Some(Detection { score, along, offset });
        }
    }
    best.ok_or_else(|| {
        Error::param(format!(
            "no grid cells within {halfwidth} m of {center} m"
        ))
    })
}

/// Euclidean distance in the (along, offset) plane.
pub fn localization_error(detection: &Detection, along: f64, offset: f64) -> f64 {
    (detection.along - along).hypot(detection.offset - offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> FusionGeometry {
        FusionGeometry {
            array_area: 0.25,
            live_time: 1.0,
            efficiency: 0.5,
            window_coverage: 0.9,
        }
    }

    fn single(position: f64, s_hat: f64, b_hat: f64, var: f64) -> SeriesEntry {
        SeriesEntry {
            position,
            estimates: Estimates::Single(ObsStats { s_hat, b_hat, var }),
        }
    }

    fn grid() -> SpatialGrid {
        SpatialGrid::new((0.0, 20.0), (1.0, 10.0), 1.0).unwrap()
    }

    #[test]
    fn grid_axes() {
        let g = grid();
        assert_eq!(g.along.len(), 21);
        assert_eq!(g.offset.len(), 10);
        assert_eq!(g.cell(0), (0.0, 1.0));
        assert_eq!(g.cell(11), (1.0, 2.0));
        let n = SpatialGrid::neighborhood(5.5, 10.0, (0.0, 200.0), (1.0, 40.0), 1.0).unwrap();
        assert_eq!(n.along.first(), Some(&0.0));
        assert_eq!(n.along.last(), Some(&15.0));
        assert!(SpatialGrid::neighborhood(300.0, 10.0, (0.0, 200.0), (1.0, 40.0), 1.0).is_err());
    }

    #[test]
    fn wc_single_observation_identity() {
        let series = ScoreSeries { entries: vec![single(3.0, 7.0, 49.0, 49.0)], angles: None };
        let map = wc_aggregate(&series, &grid(), &geom()).unwrap();
        assert!(map.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wc_equal_exposures() {
        // Two poses mirrored about along = 10 see the cells on that line equally.
        let series = ScoreSeries {
            entries: vec![single(5.0, 6.0, 30.0, 1.0), single(15.0, 2.0, 34.0, 1.0)],
            angles: None,
        };
        let g = SpatialGrid::new((10.0, 10.0), (1.0, 5.0), 1.0).unwrap();
        let map = wc_aggregate(&series, &g, &geom()).unwrap();
        for v in map.values {
            assert!((v - 8.0 / 64f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn wc_flags_zero_background() {
        let series = ScoreSeries { entries: vec![single(0.0, 1.0, 0.0, 1.0)], angles: None };
        let map = wc_aggregate(&series, &grid(), &geom()).unwrap();
        assert!(map.degenerate);
        assert!(map.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ba_likelihood_ratios() {
        let (h1, h0) = ba_loglik_model(3.0, 2.0, 0.0);
        assert_eq!(h1, h0);
        let (h1, h0) = ba_loglik_model(4.0, 2.0, 4.0);
        assert!((h1 - h0 - 16.0 / 4.0).abs() < 1e-12);
        let (h1, h0) = ba_loglik_model(2.0, 3.0, 4.0);
        assert!((h1 - h0).abs() < 1e-12);
    }

    #[test]
    fn ba_empty_series_scores_zero() {
        let series = ScoreSeries { entries: vec![], angles: None };
        let ints = IntensityGrid::geometric(0.5, 1500.0, 16).unwrap();
        let map = ba_aggregate(&series, &grid(), &ints, &geom()).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ba_single_intensity_is_summed_llr() {
        let series = ScoreSeries {
            entries: vec![single(0.0, 30.0, 900.0, 900.0), single(10.0, -5.0, 800.0, 800.0)],
            angles: None,
        };
        let g = grid();
        let map = ba_aggregate(&series, &g, &IntensityGrid::single(40.0).unwrap(), &geom()).unwrap();
        for ((a, o), v) in g.cells().zip(&map.values) {
            let mut expect = 0.0;
            for e in &series.entries {
                let Estimates::Single(st) = e.estimates else { unreachable!() };
                let (x, _) = geom().exposure(e.position, (a, o)).unwrap();
                let (h1, h0) = ba_loglik_model(st.s_hat, st.var, 40.0 * geom().counts_per_uci(x));
                expect += h1 - h0;
            }
            assert!((v - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "{v} vs {expect}");
        }
    }

    #[test]
    fn intensity_grid_is_geometric() {
        let g = IntensityGrid::geometric(0.5, 1500.0, 16).unwrap();
        assert_eq!(g.values.len(), 16);
        assert_eq!(g.values[0], 0.5);
        assert_eq!(g.values[15], 1500.0);
        let r = g.values[1] / g.values[0];
        for w in g.values.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-9);
        }
    }

    #[test]
    fn log_mean_exp_is_stable() {
        assert!((log_mean_exp(&[1000.0, 1000.0]) - 1000.0).abs() < 1e-12);
        assert!((log_mean_exp(&[0.0, (3.0f64).ln()]) - 2f64.ln()).abs() < 1e-12);
    }

    fn map_from(values: Vec<f64>) -> ScoreMap {
        let g = SpatialGrid::new((0.0, 30.0), (1.0, 2.0), 1.0).unwrap();
        assert_eq!(values.len(), g.n_cells());
        ScoreMap { grid: g, values, method: FusionMethod::Bayesian, degenerate: false }
    }

    #[test]
    fn detection_windowing_and_ties() {
        let n = 31 * 2;
        let mut v = vec![0.0; n];
        let m = map_from(v.clone());
        let d = extract_detection(&m, 15.0, 10.0).unwrap();
        assert_eq!((d.along, d.offset), (5.0, 1.0));

        v[2 * 12 + 1] = 5.0;
        v[2 * 29] = 9.0;
        let m = map_from(v);
        let d = extract_detection(&m, 15.0, 10.0).unwrap();
        assert_eq!((d.score, d.along, d.offset), (5.0, 12.0, 2.0));
        let d = extract_detection(&m, 15.0, 15.0).unwrap();
        assert_eq!(d.score, 9.0);
        assert!(extract_detection(&m, 100.0, 10.0).is_err());
    }

    #[test]
    fn localization_distance() {
        let d = Detection { score: 0.0, along: 3.0, offset: 4.0 };
        assert_eq!(localization_error(&d, 3.0, 4.0), 0.0);
        assert_eq!(localization_error(&d, 0.0, 0.0), 5.0);
    }
}
