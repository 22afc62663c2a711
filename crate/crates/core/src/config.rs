//! Source configuration: strict JSON loading, validation, calibration and
//! the provenance header stamped on every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collection::{CollectionOptics, CollectionSetup, FiberKind, Plane};
use crate::dispersion::DispersionModel;
use crate::error::{Error, Result};
use crate::fourier::GridSpec;
use crate::perfectring::{Ensemble, LayoutSpec, WidthModel};
use crate::phasematch::{calibrate_qpm_offset, CrystalConfig, PumpConfig};
use crate::polarization::{ChshSettings, Exposure, NoiseModel};
use crate::timetag::PairStreamSpec;

/// Everything a command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub crystal: CrystalConfig,
    pub pump: PumpConfig,
    #[serde(default)]
    pub layout: LayoutSpec,
    #[serde(default)]
    pub collection: CollectionConfig,
    #[serde(default)]
    pub width_model: WidthModel,
    #[serde(default)]
    pub vortex: VortexConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub timetag: TimetagConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub ensemble: Ensemble,
    /// `(λp, T0)` anchor for the QPM offset; applied at load time.
    #[serde(default)]
    pub calibration: Option<CalibrationAnchor>,
    /// Sellmeier override file, relative to the config file.
    #[serde(default)]
    pub dispersion_file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationAnchor {
    pub wavelength_nm: f64,
    pub t0_c: f64,
}

/// Couplers for the three scenarios and the shared collection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionConfig {
    /// SMF in the direct (collimated) ring plane.
    pub direct_smf: CollectionOptics,
    /// SMF in the perfect-ring plane.
    pub smf: CollectionOptics,
    /// MMF in the perfect-ring plane.
    pub mmf: CollectionOptics,
    pub filter_fwhm_nm: f64,
    pub pump_waist_m: Option<f64>,
    pub anchor_temperature_c: f64,
    pub n_theta: usize,
    pub sweep: SweepRange,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            direct_smf: CollectionOptics::smf(100e-6),
            smf: CollectionOptics::smf(100e-6),
            mmf: CollectionOptics::mmf(250e-6),
            filter_fwhm_nm: 3.2,
            pump_waist_m: None,
            anchor_temperature_c: 25.0,
            n_theta: 800,
            sweep: SweepRange {
                t_lo: 14.0,
                t_hi: 34.0,
                step: 0.05,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub t_lo: f64,
    pub t_hi: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.t_hi > self.t_lo) || !(self.step > 0.0) || !self.t_lo.is_finite() || !self.t_hi.is_finite() {
            return Err(Error::config(path, "needs t_lo < t_hi and step > 0"));
        }
        Ok(())
    }

    pub fn temperatures(&self) -> Vec<f64> {
        let n = ((self.t_hi - self.t_lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| self.t_lo + k as f64 * self.step).collect()
    }
}

/// The three coupling scenarios, in reporting order.
pub const SCENARIOS: [(&str, Plane); 3] = [
    ("direct-smf", Plane::Direct),
    ("perfect-smf", Plane::Perfect),
    ("perfect-mmf", Plane::Perfect),
];

impl CollectionConfig {
    pub fn optics(&self, scenario: &str) -> Result<CollectionOptics> {
        match scenario {
            "direct-smf" => Ok(self.direct_smf),
            "perfect-smf" => Ok(self.smf),
            "perfect-mmf" => Ok(self.mmf),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, o, kind) in [
            ("collection.direct_smf", &self.direct_smf, FiberKind::Smf),
            ("collection.smf", &self.smf, FiberKind::Smf),
            ("collection.mmf", &self.mmf, FiberKind::Mmf),
        ] {
            o.validate(name)?;
            if o.kind != kind {
                return Err(Error::config(format!("{name}.kind"), "wrong fiber kind for this block"));
            }
        }
        if !(self.filter_fwhm_nm > 0.0 && self.filter_fwhm_nm.is_finite()) {
            return Err(Error::config("collection.filter_fwhm_nm", "must be > 0"));
        }
        if let Some(w) = self.pump_waist_m {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config("collection.pump_waist_m", "must be > 0 or null"));
            }
        }
        if !self.anchor_temperature_c.is_finite() {
            return Err(Error::config("collection.anchor_temperature_c", "must be finite"));
        }
        if self.n_theta < 16 {
            return Err(Error::config("collection.n_theta", "must be >= 16"));
        }
        self.sweep.validate("collection.sweep")
    }
}

/// Temperature-to-vortex-order scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VortexConfig {
    /// Equivalent order per °C below T0.
    pub order_per_degree: f64,
}

impl Default for VortexConfig {
    fn default() -> Self {
        VortexConfig {
            order_per_degree: 50.0 / 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub werner_p: f64,
    pub model: NoiseModel,
    /// Relative phase of the VV term, rad.
    pub phase_rad: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            werner_p: 0.9383,
            model: NoiseModel::Werner,
            phase_rad: std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub pair_flux_hz_per_mw: f64,
    pub power_mw: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            pair_flux_hz_per_mw: 22_580.0,
            power_mw: 1.0,
        }
    }
}

/// Integration times and analysis settings for the polarization commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub fringe_dwell_s: f64,
    pub fringe_step_deg: f64,
    pub chsh_dwell_s: f64,
    pub tomography_dwell_s: f64,
    pub chsh: ChshSettings,
    pub resamples: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            fringe_dwell_s: 1.0,
            fringe_step_deg: 5.0,
            chsh_dwell_s: 0.1,
            tomography_dwell_s: 1.0,
            chsh: ChshSettings::default(),
            resamples: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimetagConfig {
    pub window_s: f64,
    pub pair_rate_hz: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub jitter_s: f64,
    pub duration_s: f64,
}

impl Default for TimetagConfig {
    fn default() -> Self {
        TimetagConfig {
            window_s: crate::timetag::DEFAULT_WINDOW_S,
            pair_rate_hz: 1e5,
            eta_a: 0.07,
            eta_b: 0.07,
            jitter_s: 50e-12,
            duration_s: 10.0,
        }
    }
}

impl TimetagConfig {
    pub fn pair_spec(&self) -> PairStreamSpec {
        PairStreamSpec {
            pair_rate_hz: self.pair_rate_hz,
            eta_a: self.eta_a,
            eta_b: self.eta_b,
            jitter_s: self.jitter_s,
            duration_s: self.duration_s,
        }
    }
}

fn pos(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, "must be > 0"))
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        self.crystal.validate()?;
        self.pump.validate()?;
        self.layout.validate()?;
        self.collection.validate()?;
        self.width_model.validate()?;
        pos("vortex.order_per_degree", self.vortex.order_per_degree)?;
        if !(0.0..=1.0).contains(&self.noise.werner_p) {
            return Err(Error::config("noise.werner_p", "must lie in [0, 1]"));
        }
        if !self.noise.phase_rad.is_finite() {
            return Err(Error::config("noise.phase_rad", "must be finite"));
        }
        pos("rates.pair_flux_hz_per_mw", self.rates.pair_flux_hz_per_mw)?;
        pos("rates.power_mw", self.rates.power_mw)?;
        let m = &self.measurement;
        pos("measurement.fringe_dwell_s", m.fringe_dwell_s)?;
        pos("measurement.fringe_step_deg", m.fringe_step_deg)?;
        pos("measurement.chsh_dwell_s", m.chsh_dwell_s)?;
        pos("measurement.tomography_dwell_s", m.tomography_dwell_s)?;
        if m.resamples < 2 {
            return Err(Error::config("measurement.resamples", "must be >= 2"));
        }
        pos("timetag.window_s", self.timetag.window_s)?;
        self.timetag
            .pair_spec()
            .validate()
            .map_err(|e| Error::config("timetag", e.to_string()))?;
        self.grid.validate()?;
        if !self.ensemble.exact && self.ensemble.realizations == 0 {
            return Err(Error::config("ensemble.realizations", "must be >= 1"));
        }
        if self.ensemble.patches == Some(0) {
            return Err(Error::config("ensemble.patches", "must be >= 1 or null"));
        }
        if let Some(c) = &self.calibration {
            let probe = PumpConfig::new(c.wavelength_nm);
            probe
                .validate()
                .map_err(|_| Error::config("calibration.wavelength_nm", "must lie in [380, 430] nm"))?;
            if !c.t0_c.is_finite() {
                return Err(Error::config("calibration.t0_c", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn collection_setup(&self) -> CollectionSetup {
        CollectionSetup {
            crystal: self.crystal.clone(),
            pump: self.pump,
            layout: self.layout,
            width_model: self.width_model,
            order_per_degree: self.vortex.order_per_degree,
            filter_fwhm_nm: self.collection.filter_fwhm_nm,
            pump_waist_m: self.collection.pump_waist_m,
            anchor_temperature_c: self.collection.anchor_temperature_c,
            n_theta: self.collection.n_theta,
        }
    }

    pub fn exposure(&self, dwell_s: f64) -> Exposure {
        Exposure {
            flux_hz_per_mw: self.rates.pair_flux_hz_per_mw,
            power_mw: self.rates.power_mw,
            dwell_s,
        }
    }

    /// SHA-256 of the canonical JSON of the effective config, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment lines opening every output file.
    pub fn header(&self, command: &str) -> Vec<String> {
        vec![
            format!("ringsource {} {command}", env!("CARGO_PKG_VERSION")),
            format!("config_sha256 {}", self.hash()),
            format!("seed {}", self.seed),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Load-time options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub calibrate: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { calibrate: true }
    }
}

/// Parses and validates a config file, resolves the dispersion override,
/// and calibrates the QPM offset when an anchor is given.
pub fn load_config(path: impl AsRef<Path>, opts: LoadOptions) -> Result<SourceConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg: SourceConfig = serde_json::from_str(&text)?;
    if let Some(file) = &cfg.dispersion_file {
        let resolved = match path.parent() {
            Some(dir) if file.is_relative() => dir.join(file),
            _ => file.clone(),
        };
        cfg.crystal.dispersion = DispersionModel::with_override_file(&resolved)?;
    }
    finish(cfg, opts)
}

/// Same as [`load_config`] for an in-memory document.
pub fn parse_config(json: &str, opts: LoadOptions) -> Result<SourceConfig> {
    let cfg: SourceConfig = serde_json::from_str(json)?;
    if cfg.dispersion_file.is_some() {
        return Err(Error::config("dispersion_file", "needs a config file location"));
    }
    finish(cfg, opts)
}

fn finish(mut cfg: SourceConfig, opts: LoadOptions) -> Result<SourceConfig> {
    cfg.validate()?;
    if opts.calibrate {
        if let Some(anchor) = cfg.calibration {
            calibrate_qpm_offset(&mut cfg.crystal, &PumpConfig::new(anchor.wavelength_nm), anchor.t0_c)?;
        }
    }
    Ok(cfg)
}

/// Contents of `configs/paper.json`.
pub const PAPER_JSON: &str = include_str!("../../../configs/paper.json");
