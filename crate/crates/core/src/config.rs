//! Flat TOML configuration shared by every subcommand. Unknown keys are
//! rejected; every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::background::{default_background_shape, Modulator, SyntheticSurveyConfig};
use crate::error::{Error, Result};
use crate::fusion::{FusionGeometry, IntensityGrid};
use crate::harness::Method;
use crate::scene::{AngleGrid, MaskModel};
use crate::sensor::DetectorConfig;
use crate::spectra::{make_snm_template, window_from_template, BinningScheme, SourceWindow, SpectrumTemplate};

/// Intensity bands of the reference study, µCi.
pub const PAPER_BANDS: [(f64, f64); 6] = [
    (1.0, 2.5),
    (5.0, 7.5),
    (10.0, 25.0),
    (50.0, 75.0),
    (100.0, 250.0),
    (500.0, 750.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // spectra
    pub e_min_kev: f64,
    pub e_max_kev: f64,
    pub n_bins: usize,
    pub template_peak_kev: f64,
    pub template_fwhm_fraction: f64,
    pub window_coverage: f64,

    // scene
    pub mask_seed: u64,
    pub mask_cells: usize,
    pub mask_open_fraction: f64,
    pub mask_standoff_m: f64,
    pub element_width_m: f64,
    pub theta_grid_deg: f64,
    pub theta_max_deg: f64,
    pub speed_mps: f64,

    // sensor
    pub efficiency: f64,

    // background survey and model
    pub road_length_m: f64,
    pub survey_duration_s: f64,
    pub survey_seed: u64,
    pub base_rate_cps: f64,
    pub modulators: Vec<Modulator>,
    pub radius_m: f64,

    // scoring
    pub pid_source_prior_sd: f64,

    // fusion
    pub intensity_min_uci: f64,
    pub intensity_max_uci: f64,
    pub intensity_points: usize,
    pub grid_step_m: f64,
    pub max_standoff_m: f64,
    pub neighborhood_halfwidth_m: f64,

    // harness
    pub bands: Vec<(f64, f64)>,
    pub replicates_per_band: usize,
    pub master_seed: u64,
    pub methods: Vec<Method>,
    pub fpr_target: f64,
    pub drive_length_m: f64,
    /// Worker threads; 0 picks the machine default.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            e_min_kev: 30.0,
            e_max_kev: 3000.0,
            n_bins: 128,
            template_peak_kev: 186.0,
            template_fwhm_fraction: 0.12,
            window_coverage: 0.90,

            mask_seed: 7,
            mask_cells: 37,
            mask_open_fraction: 0.5,
            mask_standoff_m: 0.5,
            element_width_m: 0.05,
            theta_grid_deg: 1.0,
            theta_max_deg: 80.0,
            speed_mps: 10.0,

            efficiency: 0.5,

            road_length_m: 2000.0,
            survey_duration_s: 3600.0,
            survey_seed: 1,
            base_rate_cps: 10_000.0,
            modulators: vec![
                Modulator { amplitude: 0.15, wavelength_m: 600.0, phase_rad: 0.0 },
                Modulator { amplitude: 0.05, wavelength_m: 170.0, phase_rad: 1.3 },
            ],
            radius_m: 20.0,

            pid_source_prior_sd: 1e6,

            intensity_min_uci: 0.5,
            intensity_max_uci: 1500.0,
            intensity_points: 16,
            grid_step_m: 1.0,
            max_standoff_m: 40.0,
            neighborhood_halfwidth_m: 10.0,

            bands: PAPER_BANDS.to_vec(),
            replicates_per_band: 2000,
            master_seed: 0,
            methods: Method::ALL.to_vec(),
            fpr_target: 0.001,
            drive_length_m: 200.0,
            threads: 0,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::param(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::param(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        // Constructors check their own invariants.
        self.window()?;
        self.mask()?;
        self.angle_grid()?;
        self.intensity_grid()?;
        self.survey_config()?.validate()?;
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::param("efficiency must lie in (0, 1]"));
        }
        if !(self.radius_m > 0.0 && self.pid_source_prior_sd > 0.0) {
            return Err(Error::param("radius and source prior sd must be positive"));
        }
        if !(self.grid_step_m > 0.0 && self.max_standoff_m >= 1.0 && self.neighborhood_halfwidth_m >= 0.0) {
            return Err(Error::param("invalid fusion grid settings"));
        }
        if self.bands.is_empty() {
            return Err(Error::param("at least one intensity band is required"));
        }
        for (i, &(lo, hi)) in self.bands.iter().enumerate() {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(Error::param(format!("band {i} ({lo}, {hi}) is not ordered")));
            }
            if i > 0 && lo < self.bands[i - 1].1 {
                return Err(Error::param("bands must be increasing and nonoverlapping"));
            }
        }
        if self.replicates_per_band == 0 {
            return Err(Error::param("replicates_per_band must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("at least one method is required"));
        }
        if !(self.fpr_target > 0.0 && self.fpr_target < 1.0) {
            return Err(Error::param("fpr_target must lie in (0, 1)"));
        }
        if !(self.drive_length_m >= self.speed_mps && self.drive_length_m < self.road_length_m) {
            return Err(Error::param("drive_length_m must fit inside the surveyed road"));
        }
        Ok(())
    }

    pub fn binning(&self) -> Result<BinningScheme> {
        BinningScheme::quadratic(self.e_min_kev, self.e_max_kev, self.n_bins)
    }

    pub fn template(&self) -> Result<SpectrumTemplate> {
        make_snm_template(&self.binning()?, self.template_peak_kev, self.template_fwhm_fraction)
    }

    pub fn window(&self) -> Result<SourceWindow> {
        window_from_template(&self.template()?, self.window_coverage)
    }

    pub fn mask(&self) -> Result<MaskModel> {
        MaskModel::random(
            self.mask_cells,
            self.mask_open_fraction,
            self.element_width_m,
            self.mask_standoff_m,
            self.element_width_m,
            self.mask_seed,
        )
    }

    pub fn detector(&self, masked: bool) -> DetectorConfig {
        DetectorConfig::new(self.element_width_m, self.efficiency, masked)
    }

    pub fn angle_grid(&self) -> Result<AngleGrid> {
        AngleGrid::new(self.theta_grid_deg, self.theta_max_deg)
    }

    pub fn intensity_grid(&self) -> Result<IntensityGrid> {
        IntensityGrid::geometric(self.intensity_min_uci, self.intensity_max_uci, self.intensity_points)
    }

    pub fn survey_config(&self) -> Result<SyntheticSurveyConfig> {
        Ok(SyntheticSurveyConfig {
            road_length_m: self.road_length_m,
            duration_s: self.survey_duration_s,
            speed_mps: self.speed_mps,
            base_rate_total: self.base_rate_cps,
            spatial_modulators: self.modulators.clone(),
            base_shape: default_background_shape(&self.binning()?),
            seed: self.survey_seed,
        })
    }

    pub fn fusion_geometry(&self) -> Result<FusionGeometry> {
        Ok(FusionGeometry {
            array_area: self.detector(false).array_area(),
            live_time: 1.0,
            efficiency: self.efficiency,
            window_coverage: self.window()?.mass_coverage(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn parses_partial_toml() {
        let cfg = Config::from_toml_str(
            "replicates_per_band = 5\nmethods = [\"mBA\", \"uWC\"]\nbands = [[1.0, 2.5]]\n",
        )
        .unwrap();
        assert_eq!(cfg.replicates_per_band, 5);
        assert_eq!(cfg.methods, vec![Method::MaskedBa, Method::UnmaskedWc]);
        assert_eq!(cfg.n_bins, 128);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(Config::from_toml_str("n_binz = 3").is_err());
        assert!(Config::from_toml_str("bands = [[5.0, 1.0]]").is_err());
        assert!(Config::from_toml_str("bands = [[1.0, 5.0], [4.0, 6.0]]").is_err());
        assert!(Config::from_toml_str("methods = [\"xBA\"]").is_err());
        let err = Config::from_toml_str("window_coverage = 1.5").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
