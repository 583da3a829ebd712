//! Per-observation threat scores.
//!
//! Pseudoinverse decoding (PID) fits `y_i = b + s c_i` to the masked array's
//! in-window element counts, with one prior row pulling `b` toward the model
//! background and one weak prior row on `s`. Censored energy windowing (CEW)
//! predicts the unmasked array's in-window counts from the out-of-window bins
//! and scores the residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scene::ExposureMatrix;
use crate::spectra::{EnergySpectrum, SourceWindow};

/// Per-element coefficients from a PID solve at one bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidResult {
    /// Unobstructed in-window source counts per element.
    pub s_hat: f64,
    /// In-window background counts per element.
    pub b_hat: f64,
    pub var_s: f64,
    pub theta: f64,
}

/// Whitened pseudoinverse of one exposure matrix, reusable across observations
/// that share the bearing, noise model and priors.
#[derive(Debug, Clone)]
pub struct PidDecoder {
    /// Rows of the 2 x n pseudoinverse, already multiplied by the whitening.
    pinv: DMatrix<f64>,
    /// Contribution of the prior targets to (b, s).
    offset: [f64; 2],
    var_s: f64,
    theta: f64,
}

impl PidDecoder {
    pub fn new(em: &ExposureMatrix, noise_var: &[f64]) -> Result<Self> {
        let n = em.coefficients.len();
        if noise_var.len() != n {
            return Err(Error::param(format!(
                "noise variance has {} entries for {n} elements",
                noise_var.len()
            )));
        }
        if noise_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::param("noise variances must be positive"));
        }
        let weights: Vec<f64> = noise_var.iter().map(|v| v.sqrt().recip()).collect();
        let a = DMatrix::from_fn(em.n_rows(), 2, |r, c| {
            let w = if r < n { weights[r] } else { 1.0 };
            em.row(r)[c] * w
        });
        let svd = a.svd(true, true);
        let sv = &svd.singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > smax * 1e-14) {
            return Err(Error::numeric(format!(
                "augmented exposure matrix is rank deficient (singular values {smax:e}, {smin:e})"
            )));
        }
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        // A+ = V S^-1 U^T and (A^T A)^-1 = V S^-2 V^T.
        let mut pinv = DMatrix::<f64>::zeros(2, em.n_rows());
        let mut var_s = 0.0;
        for j in 0..2 {
            let inv = 1.0 / sv[j];
            for p in 0..2 {
                let vpj = v_t[(j, p)];
                for r in 0..em.n_rows() {
                    pinv[(p, r)] += vpj * inv * u[(r, j)];
                }
            }
            var_s += (v_t[(j, 1)] * inv).powi(2);
        }
        let targets = em.prior_targets();
        let offset = [
            pinv[(0, n)] * targets[0] + pinv[(0, n + 1)] * targets[1],
            pinv[(1, n)] * targets[0] + pinv[(1, n + 1)] * targets[1],
        ];
        let pinv = DMatrix::from_fn(2, n, |p, r| pinv[(p, r)] * weights[r]);
        Ok(Self {
            pinv,
            offset,
            var_s,
            theta: em.angle,
        })
    }

    pub fn decode(&self, y: &[f64]) -> Result<PidResult> {
        if y.len() != self.pinv.ncols() {
            return Err(Error::param(format!(
                "observation has {} elements, decoder expects {}",
                y.len(),
                self.pinv.ncols()
            )));
        }
        let y = DVector::from_column_slice(y);
        let x = &self.pinv * y;
        Ok(PidResult {
            b_hat: x[0] + self.offset[0],
            s_hat: x[1] + self.offset[1],
            var_s: self.var_s,
            theta: self.theta,
        })
    }
}

/// Solve the prior-augmented, whitened least squares for one observation.
pub fn pid_decode(counts: &[f64], em: &ExposureMatrix, noise_var: &[f64]) -> Result<PidResult> {
    PidDecoder::new(em, noise_var)?.decode(counts)
}

/// Ridge on the CEW slopes.
pub const CEW_RIDGE: f64 = 1e-6;
/// Floor applied to predicted window counts.
pub const CEW_PREDICTION_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CewModel {
    /// Intercept followed by one slope per out-of-window bin, ascending.
    pub weights: Vec<f64>,
    pub window: SourceWindow,
    pub n_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CewResult {
    pub s_hat: f64,
    pub b_hat: f64,
    pub score: f64,
}

impl CewModel {
    pub fn intercept(&self) -> f64 {
        self.weights[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.weights[1..]
    }

    pub fn predict(&self, spectrum: &EnergySpectrum) -> Result<f64> {
        if spectrum.n_bins() != self.n_bins {
            return Err(Error::param(format!(
                "spectrum has {} bins, CEW model expects {}",
                spectrum.n_bins(),
                self.n_bins
            )));
        }
        let mut slopes = self.slopes().iter();
        let mut pred = self.intercept();
        for (k, &c) in spectrum.counts.iter().enumerate() {
            if !self.window.contains(k) {
                pred += slopes.next().unwrap() * c as f64;
            }
        }
        Ok(pred)
    }
}

/// Regress in-window counts on the out-of-window bins plus an unpenalized
/// intercept, ridge [`CEW_RIDGE`] on the slopes.
pub fn fit_cew(training: &[EnergySpectrum], window: &SourceWindow) -> Result<CewModel> {
    let n_bins = training.first().map(|s| s.n_bins()).unwrap_or(0);
    if n_bins <= window.len() || window.bins().end > n_bins {
        return Err(Error::data("CEW training spectra do not cover the window"));
    }
    let outside: Vec<usize> = (0..n_bins).filter(|&k| !window.contains(k)).collect();
    let p = outside.len();
    if training.len() < 10 * p {
        return Err(Error::data(format!(
            "CEW needs at least {} training spectra for {p} predictors, got {}",
            10 * p,
            training.len()
        )));
    }
    if training.iter().any(|s| s.n_bins() != n_bins) {
        return Err(Error::data("CEW training spectra have inconsistent bin counts"));
    }
    let n = training.len();
    let x = DMatrix::from_fn(n, p, |i, j| training[i].counts[outside[j]] as f64);
    let y = DVector::from_iterator(n, training.iter().map(|s| s.window_counts(window) as f64));
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = y.add_scalar(-y_mean);
    let mut gram = xc.tr_mul(&xc);
    for j in 0..p {
        gram[(j, j)] += CEW_RIDGE;
    }
    let rhs = xc.tr_mul(&yc);
    let slopes = gram
        .cholesky()
        .ok_or_else(|| Error::numeric("CEW normal matrix is not positive definite"))?
        .solve(&rhs);
    let intercept = y_mean - x_mean.transpose().dot(&slopes);
    let mut weights = Vec::with_capacity(p + 1);
    weights.push(intercept);
    weights.extend(slopes.iter());
    Ok(CewModel {
        weights,
        window: window.clone(),
        n_bins,
    })
}

/// Residual of the in-window counts and its SNR `s / sqrt(max(b, 1))`.
pub fn cew_score(spectrum: &EnergySpectrum, model: &CewModel) -> Result<CewResult> {
    let b_hat = model.predict(spectrum)?;
    let s_hat = spectrum.window_counts(&model.window) as f64 - b_hat;
    Ok(CewResult {
        s_hat,
        b_hat,
        score: s_hat / b_hat.max(CEW_PREDICTION_FLOOR).sqrt(),
    })
}
