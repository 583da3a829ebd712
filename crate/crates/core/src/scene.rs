//! Drive-by geometry, inverse-square exposure, the coded mask and the
//! prior-augmented exposure matrix.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::sampling::rng_from_seed;

/// Detector elements per array side; the array is `ARRAY_SIDE x ARRAY_SIDE`.
pub const ARRAY_SIDE: usize = 10;
pub const N_ELEMENTS: usize = ARRAY_SIDE * ARRAY_SIDE;

/// Vehicle pose for one 1 s observation. `position` is the road chainage at
/// the middle of the integration interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t_s: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub speed: f64,
}

impl Trajectory {
    /// Constant-speed pass starting at `start`, one pose per whole second that
    /// fits in `length` metres.
    pub fn drive_by(start: f64, length: f64, speed: f64) -> Result<Self> {
        if !(speed > 0.0 && length >= speed) {
            return Err(Error::param(format!(
                "drive-by needs speed > 0 and length >= one second of travel, got {length} m at {speed} m/s"
            )));
        }
        let n = (length / speed).floor() as usize;
        let poses = (0..n)
            .map(|i| Pose {
                t_s: i as f64,
                position: start + (i as f64 + 0.5) * speed,
            })
            .collect();
        Ok(Self { poses, speed })
    }
}

/// Source location in the drive-by frame plus activity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePlacement {
    /// Road coordinate, metres.
    pub along: f64,
    /// Perpendicular stand-off from the road, metres.
    pub offset: f64,
    /// Activity, microcuries.
    pub intensity_uci: f64,
}

pub const MIN_STANDOFF_M: f64 = 1.0;
pub const MAX_STANDOFF_M: f64 = 40.0;

/// Uniform placement over `road_span`, stand-off in [1, 40] m, intensity
/// uniform over `band`. A degenerate band `(x, x)` yields intensity `x`.
pub fn sample_placement<R: Rng + ?Sized>(
    rng: &mut R,
    road_span: (f64, f64),
    band: (f64, f64),
) -> Result<SourcePlacement> {
    if !(road_span.1 >= road_span.0) {
        return Err(Error::param("road span must be ordered"));
    }
    if !(band.0 >= 0.0 && band.1 >= band.0) {
        return Err(Error::param(format!("invalid intensity band {band:?}")));
    }
    let u = |rng: &mut R, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let along = u(rng, road_span.0, road_span.1);
    let offset = u(rng, MIN_STANDOFF_M, MAX_STANDOFF_M);
    let intensity_uci = u(rng, band.0, band.1);
    Ok(SourcePlacement {
        along,
        offset,
        intensity_uci,
    })
}

/// Distance and bearing from the detector at road position `position` to a
/// point at (`along`, `offset`). The bearing is 0 abeam and positive ahead.
pub fn geometry(position: f64, along: f64, offset: f64) -> Result<(f64, f64)> {
    let dx = along - position;
    let d = dx.hypot(offset);
    if !(d > 0.0) {
        return Err(Error::param("source coincides with the detector"));
    }
    Ok((d, dx.atan2(offset)))
}

/// Fraction of isotropic emission intercepted by `area` at distance `d`,
/// times `live_time`.
pub fn exposure(d: f64, area: f64, live_time: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::param(format!("exposure distance must be positive, got {d}")));
    }
    Ok(live_time * area / (4.0 * PI * d * d))
}

/// One-dimensional coded mask in front of the array. Cell `i` spans
/// `[(i - n/2) * pitch, (i - n/2 + 1) * pitch)` (integer division), so with
/// `pitch == element_width` cell edges line up with element edges at normal
/// incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskModel {
    pub pattern: Vec<bool>,
    pub cell_pitch: f64,
    pub mask_standoff: f64,
    pub element_width: f64,
    pub seed: u64,
}

impl MaskModel {
    /// Seeded pseudo-random pattern with `round(open_fraction * n_cells)` open cells.
    pub fn random(
        n_cells: usize,
        open_fraction: f64,
        cell_pitch: f64,
        mask_standoff: f64,
        element_width: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_cells == 0 || !(0.0..=1.0).contains(&open_fraction) {
            return Err(Error::param("mask needs cells and an open fraction in [0, 1]"));
        }
        if !(cell_pitch > 0.0 && mask_standoff > 0.0 && element_width > 0.0) {
            return Err(Error::param("mask pitch, standoff and element width must be positive"));
        }
        let n_open = (open_fraction * n_cells as f64).round() as usize;
        let mut pattern: Vec<bool> = (0..n_cells).map(|i| i < n_open).collect();
        pattern.shuffle(&mut rng_from_seed(seed));
        Ok(Self {
            pattern,
            cell_pitch,
            mask_standoff,
            element_width,
            seed,
        })
    }

    pub fn open_fraction(&self) -> f64 {
        self.pattern.iter().filter(|&&o| o).count() as f64 / self.pattern.len() as f64
    }

    fn left_edge(&self) -> f64 {
        -((self.pattern.len() / 2) as f64) * self.cell_pitch
    }

    /// Open length of the mask inside `[lo, hi]`. The pattern repeats with
    /// period `n_cells * cell_pitch`, so every bearing sees a coded shadow.
    fn open_length(&self, lo: f64, hi: f64) -> f64 {
        let left = self.left_edge();
        let n = self.pattern.len() as i64;
        let first = ((lo - left) / self.cell_pitch).floor() as i64;
        let last = ((hi - left) / self.cell_pitch).ceil() as i64;
        (first..last)
            .filter(|&i| self.pattern[i.rem_euclid(n) as usize])
            .map(|i| {
                let a = left + i as f64 * self.cell_pitch;
                let b = a + self.cell_pitch;
                (hi.min(b) - lo.max(a)).max(0.0)
            })
            .sum()
    }
}

/// Center of element column `j` (columns run along the road).
pub fn column_center(j: usize, element_width: f64) -> f64 {
    (j as f64 - (ARRAY_SIDE as f64 - 1.0) / 2.0) * element_width
}

/// Per-element open fraction seen from bearing `theta`. Element `i` sits in
/// column `i % ARRAY_SIDE`; all elements of a column share a coefficient.
pub fn mask_coefficients(mask: &MaskModel, theta: f64) -> Result<Vec<f64>> {
    if !(theta.abs() < PI / 2.0) {
        return Err(Error::param(format!("bearing {theta} rad is not in front of the array")));
    }
    let w = mask.element_width;
    let shift = mask.mask_standoff * theta.tan();
    let columns: Vec<f64> = (0..ARRAY_SIDE)
        .map(|j| {
            let x = column_center(j, w) + shift;
            mask.open_length(x - w / 2.0, x + w / 2.0) / w
        })
        .collect();
    Ok((0..N_ELEMENTS).map(|i| columns[i % ARRAY_SIDE]).collect())
}

/// Number of rows of an exposure matrix: one per element plus two prior rows.
pub const EXPOSURE_ROWS: usize = N_ELEMENTS + 2;

/// Design `[1, c_i]` per element plus the background and source prior rows,
/// which carry their own right-hand-side targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix {
    pub coefficients: Vec<f64>,
    /// `[1/sigma_b, 0]`, target `b0/sigma_b`.
    pub background_prior: (f64, f64),
    /// `[0, 1/sigma_s]`, target 0.
    pub source_prior_sd: f64,
    pub angle: f64,
}

impl ExposureMatrix {
    pub fn n_rows(&self) -> usize {
        self.coefficients.len() + 2
    }

    /// Row `r` of the augmented design.
    pub fn row(&self, r: usize) -> [f64; 2] {
        let n = self.coefficients.len();
        if r < n {
            [1.0, self.coefficients[r]]
        } else if r == n {
            [1.0 / self.background_prior.1, 0.0]
        } else {
            [0.0, 1.0 / self.source_prior_sd]
        }
    }

    /// Targets of the two prior rows.
    pub fn prior_targets(&self) -> [f64; 2] {
        let (b0, sd) = self.background_prior;
        [b0 / sd, 0.0]
    }

    /// Right-hand side: detector data followed by the prior targets.
    pub fn rhs(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        out.extend_from_slice(&self.prior_targets());
        out
    }
}

/// `background_prior` is `(b0, sigma_b)`; the source prior has mean 0.
pub fn build_exposure_matrix(
    coefficients: &[f64],
    background_prior: (f64, f64),
    source_prior_sd: f64,
    angle: f64,
) -> Result<ExposureMatrix> {
    if !(background_prior.1 > 0.0 && source_prior_sd > 0.0) {
        return Err(Error::param("prior standard deviations must be positive"));
    }
    Ok(ExposureMatrix {
        coefficients: coefficients.to_vec(),
        background_prior,
        source_prior_sd,
        angle,
    })
}

/// Bearings at which decoding is evaluated: multiples of `step` strictly
/// inside `(-max, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    step_rad: f64,
    half_count: usize,
}

impl AngleGrid {
    pub fn new(step_deg: f64, max_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0 && max_deg > step_deg && max_deg < 90.0) {
            return Err(Error::param(format!(
                "angle grid needs 0 < step < max < 90 degrees, got step {step_deg}, max {max_deg}"
            )));
        }
        let ratio = max_deg / step_deg;
        let mut half_count = ratio.floor() as usize;
        if (half_count as f64) * step_deg >= max_deg {
            half_count -= 1;
        }
        Ok(Self {
            step_rad: step_deg.to_radians(),
            half_count,
        })
    }

    pub fn len(&self) -> usize {
        2 * self.half_count + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn angle(&self, idx: usize) -> f64 {
        (idx as f64 - self.half_count as f64) * self.step_rad
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.angle(i))
    }

    /// Index of the grid angle nearest `theta`, clamped to the grid ends.
    pub fn nearest(&self, theta: f64) -> usize {
        let k = (theta / self.step_rad).round() + self.half_count as f64;
        k.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;

    fn default_mask() -> MaskModel {
        MaskModel::random(37, 0.5, 0.05, 0.5, 0.05, 1).unwrap()
    }

    #[test]
    fn placement_support() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let p = sample_placement(&mut rng, (0.0, 200.0), (100.0, 250.0)).unwrap();
            assert!((1.0..=40.0).contains(&p.offset));
            assert!((100.0..=250.0).contains(&p.intensity_uci));
            assert!((0.0..=200.0).contains(&p.along));
        }
        let p = sample_placement(&mut rng, (0.0, 200.0), (0.0, 0.0)).unwrap();
        assert_eq!(p.intensity_uci, 0.0);
        assert!(sample_placement(&mut rng, (0.0, 200.0), (5.0, 1.0)).is_err());
    }

    #[test]
    fn geometry_conventions() {
        let (d, t) = geometry(50.0, 50.0, 10.0).unwrap();
        assert_eq!((d, t), (10.0, 0.0));
        let (d, t) = geometry(40.0, 50.0, 10.0).unwrap();
        assert!((d - 200f64.sqrt()).abs() < 1e-12);
        assert!((t - PI / 4.0).abs() < 1e-12);
        let (_, t) = geometry(60.0, 50.0, 10.0).unwrap();
        assert!((t + PI / 4.0).abs() < 1e-12);
        assert!(geometry(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn exposure_values() {
        let e = exposure(10.0, 0.0025, 1.0).unwrap();
        assert!((e - 0.0025 / (400.0 * PI)).abs() < 1e-20);
        assert!((e - 1.9894e-6).abs() < 1e-9);
        let e2 = exposure(20.0, 0.0025, 1.0).unwrap();
        assert!((e / e2 - 4.0).abs() < 1e-12);
        assert!(exposure(0.0, 1.0, 1.0).is_err());
        let base = exposure(1.0, 0.0025, 1.0).unwrap();
        for d in [0.5, 3.0, 22.0, 1e3] {
            let k = exposure(d, 0.0025, 1.0).unwrap() * d * d;
            assert!((k - base).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn mask_has_requested_open_fraction() {
        let m = default_mask();
        assert_eq!(m.pattern.len(), 37);
        assert!((m.open_fraction() - 0.5).abs() <= 1.0 / 37.0);
        assert_eq!(m, default_mask());
    }

    #[test]
    fn normal_incidence_follows_cells() {
        let mut m = default_mask();
        m.pattern = vec![false; 37];
        // Column j covers [(j - 5) w, (j - 4) w]; left edge of the mask is -18 w.
        m.pattern[18 - 5] = true;
        let c = mask_coefficients(&m, 0.0).unwrap();
        assert_eq!(c.len(), 100);
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert!((c[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pattern_wraps_at_grazing_bearings() {
        let m = default_mask();
        // A shift of one full period reproduces the on-axis coefficients.
        let period = m.pattern.len() as f64 * m.cell_pitch;
        let theta = (period / m.mask_standoff).atan();
        let c0 = mask_coefficients(&m, 0.0).unwrap();
        let c1 = mask_coefficients(&m, theta).unwrap();
        for (a, b) in c0.iter().zip(&c1) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(mask_coefficients(&m, PI / 2.0).is_err());
    }

    #[test]
    fn exposure_matrix_shape() {
        let em = build_exposure_matrix(&[0.0; 100], (4.0, 2.0), 1e6, 0.0).unwrap();
        assert_eq!(em.n_rows(), 102);
        for r in 0..100 {
            assert_eq!(em.row(r), [1.0, 0.0]);
        }
        assert_eq!(em.row(100), [0.5, 0.0]);
        assert_eq!(em.row(101), [0.0, 1e-6]);
        assert_eq!(em.prior_targets(), [2.0, 0.0]);
        assert_eq!(em.rhs(&[1.0; 100]).len(), 102);
    }

    #[test]
    fn angle_grid_open_interval() {
        let g = AngleGrid::new(1.0, 80.0).unwrap();
        assert_eq!(g.len(), 159);
        assert!((g.angle(0) + 79f64.to_radians()).abs() < 1e-12);
        assert_eq!(g.angle(79), 0.0);
        assert_eq!(g.nearest(0.004), 79);
        assert_eq!(g.nearest(10.6f64.to_radians()), 90);
        assert_eq!(g.nearest(1.5), 158);
        let g = AngleGrid::new(1.5, 80.0).unwrap();
        assert_eq!(g.len(), 107);
    }

    #[test]
    fn drive_by_poses() {
        let t = Trajectory::drive_by(100.0, 200.0, 10.0).unwrap();
        assert_eq!(t.poses.len(), 20);
        assert_eq!(t.poses[0].position, 105.0);
        assert_eq!(t.poses[19].position, 295.0);
        assert!(t.poses.windows(2).all(|w| w[1].t_s - w[0].t_s == 1.0));
    }
}
