//! Survey CSV and model file formats.
//!
//! Survey CSV: header `t_s,pos_m,c0,...,c{n-1}`, one row per 1 s spectrum.
//!
//! Model file: JSON, see `docs/model-format.md`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::background::{BackgroundModel, RatePrior, SurveyObservation};
use crate::error::{Error, Result};
use crate::harness::Models;
use crate::scoring::CewModel;
use crate::spectra::{EnergySpectrum, SourceWindow, SpectrumTemplate};

pub fn write_survey(path: &Path, survey: &[SurveyObservation]) -> Result<()> {
    let n_bins = survey.first().map(|o| o.spectrum.n_bins()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut header = vec!["t_s".to_string(), "pos_m".to_string()];
    header.extend((0..n_bins).map(|k| format!("c{k}")));
    w.write_record(&header).map_err(|e| Error::format(path, e))?;
    for o in survey {
        let mut row = vec![o.t_s.to_string(), o.position.to_string()];
        row.extend(o.spectrum.counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_survey(path: &Path) -> Result<Vec<SurveyObservation>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = r.headers().map_err(|e| Error::format(path, e))?.clone();
    if header.len() < 3 || &header[0] != "t_s" || &header[1] != "pos_m" {
        return Err(Error::format(path, "survey header must start with t_s,pos_m,c0"));
    }
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("c{k}") {
            return Err(Error::format(path, format!("unexpected column {name:?}, wanted c{k}")));
        }
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 2));
        let t_s: f64 = record[0].parse().map_err(|_| bad("t_s"))?;
        let position: f64 = record[1].parse().map_err(|_| bad("pos_m"))?;
        let counts = record
            .iter()
            .skip(2)
            .map(|c| c.parse::<u64>().map_err(|_| bad("count")))
            .collect::<Result<Vec<_>>>()?;
        out.push(SurveyObservation {
            t_s,
            position,
            spectrum: EnergySpectrum::new(counts, 1.0)?,
        });
    }
    Ok(out)
}

pub const MODEL_FORMAT: &str = "maskeval-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    n_bins: usize,
    radius_m: f64,
    prior: PriorFile,
    locations: Vec<LocationFile>,
    cew: CewFile,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    mean: Vec<f64>,
    /// Row-major, `n_bins` rows.
    covariance: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LocationFile {
    position_m: f64,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CewFile {
    window_start: usize,
    window_end: usize,
    window_mass_coverage: f64,
    intercept: f64,
    slopes: Vec<f64>,
}

pub fn write_models(path: &Path, models: &Models) -> Result<()> {
    let bg = &models.background;
    let n = bg.n_bins();
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        n_bins: n,
        radius_m: bg.radius,
        prior: PriorFile {
            mean: bg.prior.mean.as_slice().to_vec(),
            covariance: (0..n)
                .map(|i| bg.prior.covariance.row(i).iter().copied().collect())
                .collect(),
        },
        locations: bg
            .locations
            .iter()
            .zip(&bg.rates)
            .map(|(&position_m, rates)| LocationFile {
                position_m,
                rates: rates.clone(),
            })
            .collect(),
        cew: CewFile {
            window_start: models.cew.window.bins().start,
            window_end: models.cew.window.bins().end,
            window_mass_coverage: models.cew.window.mass_coverage(),
            intercept: models.cew.intercept(),
            slopes: models.cew.slopes().to_vec(),
        },
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_models(path: &Path) -> Result<Models> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported model format {:?} v{}", file.format, file.version),
        ));
    }
    let n = file.n_bins;
    if file.prior.mean.len() != n
        || file.prior.covariance.len() != n
        || file.prior.covariance.iter().any(|r| r.len() != n)
    {
        return Err(Error::format(path, "prior dimensions do not match n_bins"));
    }
    let covariance = DMatrix::from_fn(n, n, |i, j| file.prior.covariance[i][j]);
    let background = BackgroundModel {
        locations: file.locations.iter().map(|l| l.position_m).collect(),
        rates: file.locations.into_iter().map(|l| l.rates).collect(),
        prior: RatePrior {
            mean: DVector::from_vec(file.prior.mean),
            covariance,
        },
        radius: file.radius_m,
    };
    background.validate().map_err(|e| Error::format(path, e))?;

    let c = file.cew;
    if c.window_start >= c.window_end || c.window_end > n {
        return Err(Error::format(path, "CEW window outside the binning"));
    }
    // Only the bin range matters for scoring; keep the recorded coverage.
    let mut weights = vec![0.0; n];
    for k in c.window_start..c.window_end {
        weights[k] = 1.0;
    }
    let mut window = SourceWindow::new(c.window_start, c.window_end, &SpectrumTemplate::from_weights(weights)?)?;
    window.set_mass_coverage(c.window_mass_coverage);
    if c.slopes.len() != n - window.len() {
        return Err(Error::format(path, "CEW slope count does not match the window"));
    }
    let mut w = vec![c.intercept];
    w.extend(c.slopes);
    Ok(Models {
        background,
        cew: CewModel {
            weights: w,
            window,
            n_bins: n,
        },
    })
}
