//! Monte Carlo experiment driver.
//!
//! Each replicate draws a source placement and a drive-by background sequence
//! from the learned model, injects the source on top of the same background
//! counts, and scores both the injected (H1) and the clean (H0) stream with
//! every requested method. Replicate seeds come from [`mix_seed`] over
//! `(master_seed, band index, replicate index)`, so results do not depend on
//! how work is scheduled.

pub mod report;
pub mod roc;
pub mod stats;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{build_background_model, estimate_prior, generate_survey, BackgroundModel, SurveyObservation};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fusion::{
    ba_aggregate, extract_detection, localization_error, wc_aggregate, Detection, Estimates,
    FusionGeometry, IntensityGrid, ObsStats, ScoreMap, ScoreSeries, SeriesEntry, SpatialGrid,
};
use crate::sampling::{mix_seed, rng_stream};
use crate::scene::{
    build_exposure_matrix, mask_coefficients, sample_placement, AngleGrid, SourcePlacement, Trajectory,
    MIN_STANDOFF_M,
};
use crate::scoring::{cew_score, fit_cew, CewModel, PidDecoder, CEW_PREDICTION_FLOOR};
use crate::sensor::{source_mean_counts, synthesize_observation, DetectorConfig, Observation, SourceMeans};
use crate::spectra::{SourceWindow, SpectrumTemplate};

pub use report::{build_report, Report, ReplicateRow};
pub use roc::{compute_roc, pd_at_fpr, PdAtFpr, RocCurve, RocPoint};
pub use stats::{localization_summary, LocSummary};

/// Detector and fusion combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mBA")]
    MaskedBa,
    #[serde(rename = "uBA")]
    UnmaskedBa,
    #[serde(rename = "mWC")]
    MaskedWc,
    #[serde(rename = "uWC")]
    UnmaskedWc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MaskedBa, Method::UnmaskedBa, Method::MaskedWc, Method::UnmaskedWc];

    pub fn masked(self) -> bool {
        matches!(self, Method::MaskedBa | Method::MaskedWc)
    }

    pub fn is_bayesian(self) -> bool {
        matches!(self, Method::MaskedBa | Method::UnmaskedBa)
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::MaskedBa => "mBA",
            Method::UnmaskedBa => "uBA",
            Method::MaskedWc => "mWC",
            Method::UnmaskedWc => "uWC",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::param(format!("unknown method {s:?}; expected mBA, uBA, mWC or uWC")))
    }
}

/// Parse a comma-separated method list such as `mBA,uWC`.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

/// Models learned from a training survey.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub background: BackgroundModel,
    pub cew: CewModel,
}

/// Fit the background model and the CEW regression on one survey.
pub fn learn(survey: &[SurveyObservation], config: &Config) -> Result<Models> {
    if survey.iter().any(|o| o.spectrum.n_bins() != config.n_bins) {
        return Err(Error::data(format!("survey spectra must have {} bins", config.n_bins)));
    }
    let prior = estimate_prior(survey)?;
    let background = build_background_model(survey, prior, config.radius_m)?;
    let spectra: Vec<_> = survey.iter().map(|o| o.spectrum.clone()).collect();
    let cew = fit_cew(&spectra, &config.window()?)?;
    Ok(Models { background, cew })
}

/// Convenience: generate the configured survey and learn from it.
pub fn learn_synthetic(config: &Config) -> Result<(Vec<SurveyObservation>, Models)> {
    let survey = generate_survey(&config.survey_config()?)?;
    let models = learn(&survey, config)?;
    Ok((survey, models))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub score_h1: f64,
    pub score_h0: f64,
    pub detection_h1: Detection,
    pub loc_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub band_index: usize,
    pub rep: usize,
    pub band: (f64, f64),
    pub seed: u64,
    pub placement: SourcePlacement,
    /// Road position where the drive-by starts on the background model.
    pub drive_start: f64,
    pub outcomes: Vec<MethodOutcome>,
    /// H1 score maps, kept only when requested.
    pub maps: Vec<(Method, ScoreMap)>,
}

impl ReplicateRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Everything a replicate needs, derived once from the configuration.
pub struct Experiment<'a> {
    pub config: Config,
    pub models: &'a Models,
    template: SpectrumTemplate,
    window: SourceWindow,
    mask: crate::scene::MaskModel,
    angles: AngleGrid,
    /// Mask coefficients per grid angle.
    mask_table: Vec<Vec<f64>>,
    intensities: IntensityGrid,
    geometry: FusionGeometry,
    unmasked: DetectorConfig,
    masked: DetectorConfig,
    pub keep_maps: bool,
}

/// Seed of replicate `rep` in band `band_index`.
pub fn replicate_seed(master_seed: u64, band_index: usize, rep: usize) -> u64 {
    mix_seed(master_seed, &[band_index as u64, rep as u64])
}

// Independent random streams within one replicate.
const STREAM_GEOMETRY: u64 = 0;
const STREAM_BACKGROUND: u64 = 1;
const STREAM_UNMASKED_SOURCE: u64 = 2;
const STREAM_MASKED_SOURCE: u64 = 3;

impl<'a> Experiment<'a> {
    pub fn new(config: &Config, models: &'a Models) -> Result<Self> {
        config.validate()?;
        models.background.validate()?;
        let window = config.window()?;
        if models.background.n_bins() != config.n_bins || models.cew.n_bins != config.n_bins {
            return Err(Error::param(format!(
                "models have {} bins but the configuration asks for {}",
                models.background.n_bins(),
                config.n_bins
            )));
        }
        if models.cew.window.bins() != window.bins() {
            return Err(Error::param(
                "CEW model window differs from the configured source window",
            ));
        }
        let (lo, hi) = models.background.road_span();
        if hi - lo < config.drive_length_m {
            return Err(Error::param(format!(
                "background model spans {} m, shorter than the {} m drive-by",
                hi - lo,
                config.drive_length_m
            )));
        }
        let mask = config.mask()?;
        let angles = config.angle_grid()?;
        let mask_table = angles
            .angles()
            .map(|theta| mask_coefficients(&mask, theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            models,
            template: config.template()?,
            window,
            mask,
            angles,
            mask_table,
            intensities: config.intensity_grid()?,
            geometry: config.fusion_geometry()?,
            unmasked: config.detector(false),
            masked: config.detector(true),
            keep_maps: false,
        })
    }

    pub fn window(&self) -> &SourceWindow {
        &self.window
    }

    pub fn geometry(&self) -> &FusionGeometry {
        &self.geometry
    }

    pub fn angles(&self) -> &AngleGrid {
        &self.angles
    }

    /// CEW statistics per observation; `var` is the floored prediction.
    pub fn unmasked_series(&self, observations: &[Observation]) -> Result<ScoreSeries> {
        let entries = observations
            .iter()
            .map(|o| {
                let r = cew_score(&o.aggregate, &self.models.cew)?;
                Ok(SeriesEntry {
                    position: o.pose.position,
                    estimates: Estimates::Single(ObsStats {
                        s_hat: r.s_hat,
                        b_hat: r.b_hat,
                        var: r.b_hat.max(CEW_PREDICTION_FLOOR),
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreSeries { entries, angles: None })
    }

    /// PID statistics at every grid angle for several streams observed at the
    /// same poses (e.g. H0 and H1), sharing one decoder per pose and angle.
    /// Estimates are scaled from per-element to array totals.
    pub fn masked_series(
        &self,
        streams: &[&[Observation]],
        background_rates: &[&[f64]],
    ) -> Result<Vec<ScoreSeries>> {
        let n_poses = background_rates.len();
        if streams.iter().any(|s| s.len() != n_poses) {
            return Err(Error::param("every stream needs one observation per pose"));
        }
        let n = self.masked.n_elements as f64;
        let mut entries: Vec<Vec<SeriesEntry>> = vec![Vec::with_capacity(n_poses); streams.len()];
        for (t, rates) in background_rates.iter().enumerate() {
            let b0 = rates[self.window.bins()].iter().sum::<f64>() / n;
            let noise_var = vec![b0.max(1.0); self.masked.n_elements];
            let counts: Vec<Vec<f64>> = streams
                .iter()
                .map(|s| s[t].element_window_counts.iter().map(|&c| c as f64).collect())
                .collect();
            let mut per_angle: Vec<Vec<ObsStats>> = vec![Vec::with_capacity(self.angles.len()); streams.len()];
            for (a, coefficients) in self.mask_table.iter().enumerate() {
                let em = build_exposure_matrix(
                    coefficients,
                    (b0, b0.sqrt()),
                    self.config.pid_source_prior_sd,
                    self.angles.angle(a),
                )?;
                let decoder = PidDecoder::new(&em, &noise_var)?;
                for (out, y) in per_angle.iter_mut().zip(&counts) {
                    let r = decoder.decode(y)?;
                    out.push(ObsStats {
                        s_hat: n * r.s_hat,
                        b_hat: n * r.b_hat,
                        var: n * n * r.var_s,
                    });
                }
            }
            for ((out, stats), stream) in entries.iter_mut().zip(per_angle).zip(streams) {
                out.push(SeriesEntry {
                    position: stream[t].pose.position,
                    estimates: Estimates::PerAngle(stats),
                });
            }
        }
        Ok(entries
            .into_iter()
            .map(|entries| ScoreSeries {
                entries,
                angles: Some(self.angles.clone()),
            })
            .collect())
    }

    pub fn fuse(&self, method: Method, series: &ScoreSeries, grid: &SpatialGrid) -> Result<ScoreMap> {
        if method.is_bayesian() {
            ba_aggregate(series, grid, &self.intensities, &self.geometry)
        } else {
            wc_aggregate(series, grid, &self.geometry)
        }
    }

    /// The ±halfwidth neighborhood grid around the true source.
    pub fn neighborhood(&self, placement: &SourcePlacement) -> Result<SpatialGrid> {
        SpatialGrid::neighborhood(
            placement.along,
            self.config.neighborhood_halfwidth_m,
            (0.0, self.config.drive_length_m),
            (MIN_STANDOFF_M, self.config.max_standoff_m),
            self.config.grid_step_m,
        )
    }

    pub fn run_replicate(&self, seed: u64, band: (f64, f64)) -> Result<ReplicateRecord> {
        let cfg = &self.config;
        let methods = &cfg.methods;
        let model = &self.models.background;

        let mut rng = rng_stream(seed, STREAM_GEOMETRY);
        let (lo, hi) = model.road_span();
        let drive_start = lo + (hi - lo - cfg.drive_length_m) * rng.random::<f64>();
        let placement = sample_placement(&mut rng, (0.0, cfg.drive_length_m), band)?;
        let trajectory = Trajectory::drive_by(0.0, cfg.drive_length_m, cfg.speed_mps)?;

        let need_masked = methods.iter().any(|m| m.masked());
        let need_unmasked = methods.iter().any(|m| !m.masked());
        let mut bg_rng = rng_stream(seed, STREAM_BACKGROUND);
        let mut u_rng = rng_stream(seed, STREAM_UNMASKED_SOURCE);
        let mut m_rng = rng_stream(seed, STREAM_MASKED_SOURCE);
        let zero = SourceMeans::zero(self.unmasked.n_elements, cfg.n_bins);

        let mut rates = Vec::with_capacity(trajectory.poses.len());
        let mut h0 = Vec::with_capacity(trajectory.poses.len());
        let mut h1_unmasked = Vec::new();
        let mut h1_masked = Vec::new();
        for pose in &trajectory.poses {
            let r = model.rates_at(drive_start + pose.position);
            let clean = synthesize_observation(&mut bg_rng, *pose, r, &zero, &self.unmasked, &self.window);
            if need_unmasked {
                let src = source_mean_counts(&placement, pose, &self.unmasked, &self.template, &self.window, None)?;
                h1_unmasked.push(clean.inject(&mut u_rng, &src, &self.window));
            }
            if need_masked {
                let src = source_mean_counts(
                    &placement,
                    pose,
                    &self.masked,
                    &self.template,
                    &self.window,
                    Some(&self.mask),
                )?;
                h1_masked.push(clean.inject(&mut m_rng, &src, &self.window));
            }
            rates.push(r);
            h0.push(clean);
        }

        let unmasked = if need_unmasked {
            Some((self.unmasked_series(&h1_unmasked)?, self.unmasked_series(&h0)?))
        } else {
            None
        };
        let masked = if need_masked {
            let mut s = self.masked_series(&[&h1_masked, &h0], &rates)?;
            let s0 = s.pop().unwrap();
            Some((s.pop().unwrap(), s0))
        } else {
            None
        };

        let grid = self.neighborhood(&placement)?;
        let halfwidth = cfg.neighborhood_halfwidth_m;
        let mut outcomes = Vec::with_capacity(methods.len());
        let mut maps = Vec::new();
        for &method in methods {
            let (s1, s0) = if method.masked() { masked.as_ref() } else { unmasked.as_ref() }
                .expect("series computed for every requested detector");
            let map1 = self.fuse(method, s1, &grid)?;
            let map0 = self.fuse(method, s0, &grid)?;
            let d1 = extract_detection(&map1, placement.along, halfwidth)?;
            let d0 = extract_detection(&map0, placement.along, halfwidth)?;
            outcomes.push(MethodOutcome {
                method,
                score_h1: d1.score,
                score_h0: d0.score,
                detection_h1: d1,
                loc_err: localization_error(&d1, placement.along, placement.offset),
            });
            if self.keep_maps {
                maps.push((method, map1));
            }
        }
        Ok(ReplicateRecord {
            band_index: 0,
            rep: 0,
            band,
            seed,
            placement,
            drive_start,
            outcomes,
            maps,
        })
    }

    /// All bands × replicates, in (band, replicate) order.
    pub fn run(&self, threads: usize) -> Result<Vec<ReplicateRecord>> {
        let cfg = &self.config;
        let jobs: Vec<(usize, usize)> = (0..cfg.bands.len())
            .flat_map(|b| (0..cfg.replicates_per_band).map(move |r| (b, r)))
            .collect();
        let work = || {
            jobs.par_iter()
                .map(|&(b, r)| {
                    let seed = replicate_seed(cfg.master_seed, b, r);
                    self.run_replicate(seed, cfg.bands[b])
                        .map(|mut rec| {
                            rec.band_index = b;
                            rec.rep = r;
                            rec
                        })
                        .map_err(|e| Error::Replicate {
                            band: b,
                            rep: r,
                            source: Box::new(e),
                        })
                })
                .collect::<Result<Vec<_>>>()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?;
        pool.install(work)
    }
}

/// Run the configured experiment and summarize it.
pub fn run_experiment(config: &Config, models: &Models) -> Result<(Vec<ReplicateRecord>, Report)> {
    let experiment = Experiment::new(config, models)?;
    let records = experiment.run(config.threads)?;
    let rows = report::rows_from_records(&records);
    let report = build_report(&rows, config.fpr_target)?;
    Ok((records, report))
}
