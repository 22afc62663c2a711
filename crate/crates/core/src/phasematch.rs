//! Quasi-phase-matched type-0 SPDC in a periodically poled crystal.
//!
//! All three waves are polarized along z, so only the extraordinary index
//! enters. Signal and idler are related by energy conservation
//! (`1/λi = 1/λp − 1/λs`) and transverse momentum conservation
//! (`ks sin θs = ki sin θi`, on opposite sides of the pump axis).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dispersion::{Axis, DispersionModel};
use crate::error::{ensure_finite, Error, Result};

/// Linear and quadratic thermal expansion of the poling period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalExpansion {
    pub enabled: bool,
    /// 1/°C
    pub alpha: f64,
    /// 1/°C²
    pub beta: f64,
    /// Temperature at which the nominal period is specified, °C.
    pub t_ref_c: f64,
}

impl Default for ThermalExpansion {
    fn default() -> Self {
        ThermalExpansion {
            enabled: true,
            alpha: 6.7e-6,
            beta: 11e-9,
            t_ref_c: 25.0,
        }
    }
}

/// Periodically poled crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalConfig {
    pub length_m: f64,
    pub grating_period_m: f64,
    #[serde(default = "default_order")]
    pub poling_order: u32,
    pub temperature_c: f64,
    #[serde(default)]
    pub expansion: ThermalExpansion,
    /// Additive calibration to the longitudinal mismatch, rad/m.
    #[serde(default)]
    pub qpm_offset: f64,
    #[serde(skip)]
    pub dispersion: DispersionModel,
}

fn default_order() -> u32 {
    1
}

impl Default for CrystalConfig {
    fn default() -> Self {
        CrystalConfig {
            length_m: 0.020,
            grating_period_m: 3.425e-6,
            poling_order: 1,
            temperature_c: 25.0,
            expansion: ThermalExpansion::default(),
            qpm_offset: 0.0,
            dispersion: DispersionModel::ktp(),
        }
    }
}

impl CrystalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return Err(Error::config("crystal.length_m", "must be > 0"));
        }
        if !(self.grating_period_m > 0.0 && self.grating_period_m.is_finite()) {
            return Err(Error::config("crystal.grating_period", "must be > 0"));
        }
        if self.poling_order == 0 {
            return Err(Error::config("crystal.poling_order", "must be positive"));
        }
        if !self.qpm_offset.is_finite() {
            return Err(Error::config("crystal.qpm_offset", "must be finite"));
        }
        if !self.temperature_c.is_finite() {
            return Err(Error::config("crystal.temperature_c", "must be finite"));
        }
        self.dispersion.require_axis(Axis::Z)
    }

    /// Copy of this crystal at another temperature.
    pub fn at_temperature(&self, temperature_c: f64) -> Self {
        CrystalConfig {
            temperature_c,
            ..self.clone()
        }
    }

    /// Poling period at temperature `t`, m.
    pub fn period_at(&self, t: f64) -> f64 {
        if self.expansion.enabled {
            let d = t - self.expansion.t_ref_c;
            self.grating_period_m * (1.0 + self.expansion.alpha * d + self.expansion.beta * d * d)
        } else {
            self.grating_period_m
        }
    }

    fn grating_k(&self, t: f64) -> f64 {
        2.0 * PI * self.poling_order as f64 / self.period_at(t)
    }

    /// Wavenumber inside the crystal (z polarization), rad/m.
    #[inline]
    fn k(&self, wavelength_m: f64, t: f64) -> f64 {
        2.0 * PI * self.dispersion.nz(wavelength_m * 1e6, t) / wavelength_m
    }

    #[inline]
    pub(crate) fn nz(&self, wavelength_m: f64, t: f64) -> f64 {
        self.dispersion.nz(wavelength_m * 1e6, t)
    }
}

/// Continuous-wave pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    pub wavelength_nm: f64,
    #[serde(default)]
    pub power_mw: f64,
}

impl PumpConfig {
    pub fn new(wavelength_nm: f64) -> Self {
        PumpConfig {
            wavelength_nm,
            power_mw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(380.0..=430.0).contains(&self.wavelength_nm) {
            return Err(Error::config("pump.wavelength_nm", "must lie in [380, 430] nm"));
        }
        if !(self.power_mw >= 0.0 && self.power_mw.is_finite()) {
            return Err(Error::config("pump.power_mw", "must be >= 0"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_nm * 1e-9
    }

    /// Degenerate signal wavelength, m.
    pub fn degenerate_m(&self) -> f64 {
        2.0 * self.wavelength_m()
    }
}

/// One radial sample of a ring profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSample {
    pub r_m: f64,
    pub intensity: f64,
}

/// Annulus descriptor: radius, FWHM width, and peak-normalized radial samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingProfile {
    pub radius_m: f64,
    pub width_fwhm_m: f64,
    pub samples: Vec<RadialSample>,
    /// Peak intensity before normalization, in the producer's units. Lets
    /// callers compare absolute levels between profiles.
    pub peak_scale: f64,
}

impl RingProfile {
    /// Build a profile from raw radial intensities: normalizes to peak 1 and
    /// extracts the radius (refined argmax) and FWHM.
    pub fn from_radial(r: &[f64], intensity: &[f64]) -> Result<Self> {
        if r.len() != intensity.len() || r.len() < 3 {
            return Err(Error::invalid("radial profile needs >= 3 matching samples"));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("radial samples must be strictly increasing in r"));
        }
        let (imax, &peak) = intensity
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::Numerical("radial profile has no positive intensity".into()));
        }
        let norm: Vec<f64> = intensity.iter().map(|v| v / peak).collect();
        let radius = refine_peak(r, &norm, imax);
        let width = radial_fwhm(r, &norm, imax, radius)?;
        let samples = r
            .iter()
            .zip(&norm)
            .map(|(&r_m, &intensity)| RadialSample { r_m, intensity })
            .collect();
        Ok(RingProfile {
            radius_m: radius,
            width_fwhm_m: width,
            samples,
            peak_scale: peak,
        })
    }

    /// Linear interpolation of the normalized intensity at radius `r`
    /// (zero outside the sampled range).
    pub fn intensity_at(&self, r: f64) -> f64 {
        let s = &self.samples;
        if s.is_empty() || r < s[0].r_m || r > s[s.len() - 1].r_m {
            return 0.0;
        }
        let i = s.partition_point(|p| p.r_m <= r).min(s.len() - 1).max(1);
        let (a, b) = (s[i - 1], s[i]);
        let t = (r - a.r_m) / (b.r_m - a.r_m);
        a.intensity + t * (b.intensity - a.intensity)
    }
}

fn refine_peak(r: &[f64], y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= r.len() {
        return r[i];
    }
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom >= 0.0 {
        return r[i];
    }
    let shift = 0.5 * (y0 - y2) / denom;
    let h = 0.5 * (r[i + 1] - r[i - 1]);
    r[i] + shift.clamp(-1.0, 1.0) * h
}

/// FWHM of a peak-normalized radial profile. When the inner flank never
/// drops below half maximum (central lobe), the width is twice the outer
/// half-maximum distance from the peak.
pub(crate) fn radial_fwhm(r: &[f64], y: &[f64], imax: usize, radius: f64) -> Result<f64> {
    let outer = (imax..r.len() - 1)
        .find(|&j| y[j] >= 0.5 && y[j + 1] < 0.5)
        .map(|j| lerp_cross(r[j], y[j], r[j + 1], y[j + 1], 0.5))
        .ok_or(Error::FlankMissing("outer"))?;
    let inner = (1..=imax)
        .rev()
        .find(|&j| y[j] >= 0.5 && y[j - 1] < 0.5)
        .map(|j| lerp_cross(r[j - 1], y[j - 1], r[j], y[j], 0.5));
    Ok(match inner {
        Some(inner) => outer - inner,
        None => 2.0 * (outer - radius),
    })
}

#[inline]
pub(crate) fn lerp_cross(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if (y1 - y0).abs() < f64::MIN_POSITIVE {
        return 0.5 * (x0 + x1);
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

#[inline]
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Idler internal angle for a signal at `theta_s`; `None` when transverse
/// momentum cannot be conserved.
fn idler_angle(ks: f64, ki: f64, theta_s: f64) -> Option<f64> {
    let s = ks * theta_s.sin() / ki;
    (s.abs() <= 1.0).then(|| s.asin())
}

/// Longitudinal phase mismatch Δk_z in rad/m at the crystal's temperature.
pub fn qpm_longitudinal_mismatch(
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    signal_wavelength_nm: f64,
    internal_half_angle: f64,
) -> Result<f64> {
    ensure_finite("signal wavelength", signal_wavelength_nm)?;
    ensure_finite("internal angle", internal_half_angle)?;
    ensure_finite("temperature", crystal.temperature_c)?;
    let lp = pump.wavelength_m();
    let ls = signal_wavelength_nm * 1e-9;
    let inv_i = 1.0 / lp - 1.0 / ls;
    if !(lp > 0.0 && ls > lp && inv_i > 0.0) {
        return Err(Error::Domain(format!(
            "signal {signal_wavelength_nm} nm is not energy-allowed for pump {} nm",
            pump.wavelength_nm
        )));
    }
    mismatch(crystal, lp, ls, 1.0 / inv_i, internal_half_angle, crystal.temperature_c).ok_or_else(|| {
        Error::Domain(format!(
            "no idler satisfies transverse momentum conservation at θs = {internal_half_angle} rad"
        ))
    })
}

#[inline]
fn mismatch(c: &CrystalConfig, lp: f64, ls: f64, li: f64, theta_s: f64, t: f64) -> Option<f64> {
    let kp = c.k(lp, t);
    let ks = c.k(ls, t);
    let ki = c.k(li, t);
    let theta_i = idler_angle(ks, ki, theta_s)?;
    Some(kp - ks * theta_s.cos() - ki * theta_i.cos() - c.grating_k(t) + c.qpm_offset)
}

/// Degenerate collinear mismatch at temperature `t`.
fn collinear_mismatch(c: &CrystalConfig, pump: &PumpConfig, t: f64) -> f64 {
    let lp = pump.wavelength_m();
    let ls = 2.0 * lp;
    c.k(lp, t) - 2.0 * c.k(ls, t) - c.grating_k(t) + c.qpm_offset
}

/// Bracketing window for the collinear degeneracy search, °C.
pub const T0_SEARCH_WINDOW: (f64, f64) = (0.0, 120.0);

/// Temperature at which degenerate collinear emission is phase matched.
pub fn collinear_degenerate_temperature(crystal: &CrystalConfig, pump: &PumpConfig) -> Result<f64> {
    let (lo, hi) = T0_SEARCH_WINDOW;
    bisect(|t| collinear_mismatch(crystal, pump, t), lo, hi, 1e-6).ok_or(Error::NoCollinearDegeneracy { lo, hi })
}

/// Set `qpm_offset` so that the degenerate collinear mismatch vanishes at
/// `(pump, anchor_t0_c)`. Returns the change applied to the offset.
pub fn calibrate_qpm_offset(crystal: &mut CrystalConfig, pump: &PumpConfig, anchor_t0_c: f64) -> Result<f64> {
    ensure_finite("anchor temperature", anchor_t0_c)?;
    ensure_finite("pump wavelength", pump.wavelength_nm)?;
    let residual = collinear_mismatch(crystal, pump, anchor_t0_c);
    if !residual.is_finite() {
        return Err(Error::Numerical("mismatch not finite at calibration anchor".into()));
    }
    crystal.qpm_offset -= residual;
    Ok(-residual)
}

/// Plain bisection; `None` when `f` does not change sign on `[lo, hi]`.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Upper end of the internal-angle search window, rad.
pub const MAX_INTERNAL_ANGLE: f64 = 0.2;

/// Internal degenerate emission half-angle at temperature `t`, rad; zero on
/// the collinear side of degeneracy.
pub fn degenerate_internal_angle(crystal: &CrystalConfig, pump: &PumpConfig, t: f64) -> Result<f64> {
    ensure_finite("temperature", t)?;
    let lp = pump.wavelength_m();
    let ls = 2.0 * lp;
    let f = |theta: f64| mismatch(crystal, lp, ls, ls, theta, t).unwrap_or(f64::NAN);
    if f(0.0) >= 0.0 {
        return Ok(0.0);
    }
    bisect(f, 0.0, MAX_INTERNAL_ANGLE, 1e-12)
        .ok_or_else(|| Error::Domain(format!("opening angle exceeds {MAX_INTERNAL_ANGLE} rad at {t} °C")))
}

/// External (in air) degenerate emission half-angle at temperature `t`, rad.
pub fn degenerate_opening_angle(crystal: &CrystalConfig, pump: &PumpConfig, t: f64) -> Result<f64> {
    let theta_int = degenerate_internal_angle(crystal, pump, t)?;
    let n = crystal.nz(pump.degenerate_m(), t);
    let s = n * theta_int.sin();
    if s >= 1.0 {
        return Err(Error::Domain("emission is totally internally reflected".into()));
    }
    Ok(s.asin())
}

/// Filter-band quadrature: Gaussian transmission of the given FWHM centered
/// on the degenerate wavelength, sampled on `n` uniform nodes over ±1.5 FWHM.
/// Returns `(signal wavelength m, weight)`.
pub fn filter_nodes(pump: &PumpConfig, filter_fwhm_nm: f64, n: usize) -> Vec<(f64, f64)> {
    let center = pump.degenerate_m();
    if filter_fwhm_nm <= 1e-6 || n < 2 {
        return vec![(center, 1.0)];
    }
    let fwhm = filter_fwhm_nm * 1e-9;
    let k = 4.0 * std::f64::consts::LN_2;
    (0..n)
        .map(|i| {
            let u = -1.5 + 3.0 * i as f64 / (n - 1) as f64;
            (center + u * fwhm, (-k * u * u).exp())
        })
        .collect()
}

/// Gaussian filter transmission at `wavelength_m` (1 at the center).
pub fn filter_transmission(pump: &PumpConfig, filter_fwhm_nm: f64, wavelength_m: f64) -> f64 {
    if filter_fwhm_nm <= 1e-6 {
        return 1.0;
    }
    let u = (wavelength_m - pump.degenerate_m()) / (filter_fwhm_nm * 1e-9);
    (-4.0 * std::f64::consts::LN_2 * u * u).exp()
}

/// Number of filter-band quadrature nodes used by the profile builders.
pub const FILTER_NODES: usize = 21;

/// Sampling of the collimated-plane radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGrid {
    pub r_max_m: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn radii(&self) -> Vec<f64> {
        let dr = self.r_max_m / (self.n - 1) as f64;
        (0..self.n).map(|i| i as f64 * dr).collect()
    }
}

impl Default for RadialGrid {
    fn default() -> Self {
        RadialGrid { r_max_m: 8e-3, n: 1601 }
    }
}

/// Single-photon emission intensity per unit area at the collimated plane of
/// a lens of focal length `f1` (crystal at its front focal plane), evaluated
/// on `grid`. Unnormalized.
pub fn collimated_intensity(
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    temperature_c: f64,
    f1: f64,
    filter_fwhm_nm: f64,
    grid: RadialGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_finite("temperature", temperature_c)?;
    if !(f1 > 0.0) {
        return Err(Error::invalid("f1 must be > 0"));
    }
    if grid.n < 3 || !(grid.r_max_m > 0.0) {
        return Err(Error::invalid("radial grid needs n >= 3 and r_max > 0"));
    }
    let lp = pump.wavelength_m();
    let half_l = 0.5 * crystal.length_m;
    let nodes = filter_nodes(pump, filter_fwhm_nm, FILTER_NODES);
    let radii = grid.radii();
    let t = temperature_c;
    let per_node: Vec<(f64, f64, f64, f64)> = nodes
        .iter()
        .map(|&(ls, w)| {
            let li = 1.0 / (1.0 / lp - 1.0 / ls);
            (ls, li, w, crystal.nz(ls, t))
        })
        .collect();
    let intensity = crate::par::map_slice(&radii, |&r| {
        let theta_e = (r / f1).atan();
        let mut acc = 0.0;
        for &(ls, li, w, ns) in &per_node {
            let s = theta_e.sin() / ns;
            if s >= 1.0 {
                continue;
            }
            let theta_i = s.asin();
            let Some(dk) = mismatch(crystal, lp, ls, li, theta_i, t) else {
                continue;
            };
            let amp = sinc(dk * half_l);
            // emission per internal solid angle → per unit area at the lens
            let jac = theta_e.cos().powi(4) / (ns * ns * theta_i.cos() * f1 * f1);
            acc += w * amp * amp * jac;
        }
        acc
    });
    Ok((radii, intensity))
}

/// Radial intensity of the SPDC ring at the collimated plane, normalized.
pub fn ring_profile_at_collimator(
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    temperature_c: f64,
    f1: f64,
    filter_fwhm_nm: f64,
) -> Result<RingProfile> {
    ring_profile_on_grid(crystal, pump, temperature_c, f1, filter_fwhm_nm, RadialGrid::default())
}

pub fn ring_profile_on_grid(
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    temperature_c: f64,
    f1: f64,
    filter_fwhm_nm: f64,
    grid: RadialGrid,
) -> Result<RingProfile> {
    let (r, i) = collimated_intensity(crystal, pump, temperature_c, f1, filter_fwhm_nm, grid)?;
    RingProfile::from_radial(&r, &i)
}

/// A signal/idler pair direction sampled from the emission, mapped onto the
/// collimated plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    /// Emission weight (filter transmission × phase matching × solid angle).
    pub weight: f64,
    pub r_signal_m: f64,
    pub r_idler_m: f64,
}

/// Pair-resolved emission at temperature `t`: one sample per (filter node,
/// internal signal angle) on a uniform angle grid of `n_theta` points up to
/// `theta_max` rad. The idler sits at the opposite azimuth and passes the
/// same filter.
pub fn emission_pairs(
    crystal: &CrystalConfig,
    pump: &PumpConfig,
    temperature_c: f64,
    f1: f64,
    filter_fwhm_nm: f64,
    n_theta: usize,
    theta_max: f64,
) -> Result<Vec<PairSample>> {
    ensure_finite("temperature", temperature_c)?;
    if n_theta < 2 || !(theta_max > 0.0) {
        return Err(Error::invalid("angle grid needs n_theta >= 2 and theta_max > 0"));
    }
    let lp = pump.wavelength_m();
    let t = temperature_c;
    let half_l = 0.5 * crystal.length_m;
    let dtheta = theta_max / (n_theta - 1) as f64;
    let nodes = filter_nodes(pump, filter_fwhm_nm, FILTER_NODES);
    let mut out = Vec::with_capacity(nodes.len() * n_theta);
    for (ls, ws) in nodes {
        let li = 1.0 / (1.0 / lp - 1.0 / ls);
        let w = ws * filter_transmission(pump, filter_fwhm_nm, li);
        let (ks, ki, kp) = (crystal.k(ls, t), crystal.k(li, t), crystal.k(lp, t));
        let (ns, ni) = (crystal.nz(ls, t), crystal.nz(li, t));
        let kg = crystal.grating_k(t) - crystal.qpm_offset;
        for j in 0..n_theta {
            let th_s = j as f64 * dtheta;
            let Some(th_i) = idler_angle(ks, ki, th_s) else {
                break;
            };
            let dk = kp - ks * th_s.cos() - ki * th_i.cos() - kg;
            let amp = sinc(dk * half_l);
            let weight = w * amp * amp * th_s.sin() * dtheta;
            if weight <= 0.0 {
                continue;
            }
            let (es, ei) = (ns * th_s.sin(), ni * th_i.sin());
            if es >= 1.0 || ei >= 1.0 {
                break;
            }
            out.push(PairSample {
                weight,
                r_signal_m: f1 * es.asin().tan(),
                r_idler_m: f1 * ei.asin().tan(),
            });
        }
    }
    Ok(out)
}

/// Bright-ring radius of a Laguerre-Gauss mode of the given order and waist.
pub fn vortex_ring_radius(order: f64, waist_m: f64) -> Result<f64> {
    if !(waist_m > 0.0) || !(order >= 0.0) {
        return Err(Error::invalid("vortex radius needs waist > 0 and order >= 0"));
    }
    Ok(waist_m * (order / 2.0).sqrt())
}

/// Fitted vortex-ring analogy: ring radius `r = w·√(ℓ/2)` with the vortex
/// order linear in the detuning, `ℓ = s·ΔT`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexFit {
    pub waist_m: f64,
    pub order_per_degree: f64,
    /// RMS radius residual of the fit, m.
    pub rms_residual_m: f64,
}

impl VortexFit {
    pub fn order_at(&self, delta_t: f64) -> f64 {
        self.order_per_degree * delta_t.max(0.0)
    }

    pub fn radius_at(&self, delta_t: f64) -> f64 {
        self.waist_m * (self.order_at(delta_t) / 2.0).sqrt()
    }

    /// Vortex order whose ring radius equals `radius_m` for this waist.
    pub fn equivalent_order(&self, radius_m: f64) -> f64 {
        2.0 * (radius_m / self.waist_m).powi(2)
    }
}

/// How the vortex-order axis is tied to the detuning axis. Only the product
/// `w²·s` is identifiable from radius data, so one of the two must be fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderScale {
    /// ℓ = s·ΔT with `s` given.
    PerDegree(f64),
    /// ℓ(ΔT_ref) = ℓ_ref.
    Anchor { delta_t: f64, order: f64 },
}

/// Least-squares waist for `r = w·√(s·ΔT/2)` over `(ΔT °C, radius m)` samples.
pub fn fit_vortex_waist(samples: &[(f64, f64)], scale: OrderScale) -> Result<VortexFit> {
    if samples.len() < 3 {
        return Err(Error::invalid("vortex fit needs at least 3 samples"));
    }
    if samples
        .iter()
        .any(|&(dt, r)| !(dt > 0.0 && dt.is_finite() && r > 0.0 && r.is_finite()))
    {
        return Err(Error::invalid(
            "vortex fit needs ΔT > 0 and radius > 0 for every sample",
        ));
    }
    let s = match scale {
        OrderScale::PerDegree(s) => s,
        OrderScale::Anchor { delta_t, order } => order / delta_t,
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("order scale must be positive"));
    }
    // r_i = w·g_i with g_i = √(s·ΔT_i/2): linear least squares in w.
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), &(dt, r)| {
        let g = (s * dt / 2.0).sqrt();
        (n + r * g, d + g * g)
    });
    let waist = num / den;
    let rss: f64 = samples
        .iter()
        .map(|&(dt, r)| (r - waist * (s * dt / 2.0).sqrt()).powi(2))
        .sum();
    Ok(VortexFit {
        waist_m: waist,
        order_per_degree: s,
        rms_residual_m: (rss / samples.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ANCHOR_NM: f64 = 405.13;
    const ANCHOR_T0: f64 = 28.0;

    fn calibrated() -> (CrystalConfig, PumpConfig) {
        let mut c = CrystalConfig::default();
        let p = PumpConfig::new(ANCHOR_NM);
        calibrate_qpm_offset(&mut c, &p, ANCHOR_T0).unwrap();
        (c, p)
    }

    #[test]
    fn mismatch_vanishes_when_period_matches() {
        let mut c = CrystalConfig::default();
        c.expansion.enabled = false;
        let p = PumpConfig::new(405.0);
        let t = c.temperature_c;
        let lp = p.wavelength_m();
        let kp = 2.0 * PI * c.nz(lp, t) / lp;
        let ks = 2.0 * PI * c.nz(2.0 * lp, t) / (2.0 * lp);
        c.grating_period_m = 2.0 * PI / (kp - 2.0 * ks);
        let dk = qpm_longitudinal_mismatch(&c, &p, 810.0, 0.0).unwrap();
        assert!(dk.abs() < 1e-6, "{dk}");
    }

    #[test]
    fn calibration_zeroes_anchor_and_is_idempotent() {
        let mut c = CrystalConfig::default();
        let p = PumpConfig::new(ANCHOR_NM);
        let first = calibrate_qpm_offset(&mut c, &p, ANCHOR_T0).unwrap();
        assert!(first.is_finite() && first.abs() < 5e5, "{first}");
        let second = calibrate_qpm_offset(&mut c, &p, ANCHOR_T0).unwrap();
        assert!(second.abs() < 1e-6);
        let dk = qpm_longitudinal_mismatch(&c.at_temperature(ANCHOR_T0), &p, 2.0 * ANCHOR_NM, 0.0).unwrap();
        assert!(dk.abs() < 1e-6, "{dk}");
    }

    #[test]
    fn calibration_of_exact_model_is_zero() {
        let (mut c, p) = calibrated();
        assert!(calibrate_qpm_offset(&mut c, &p, ANCHOR_T0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn mismatch_negative_below_t0() {
        let (c, p) = calibrated();
        let dk = qpm_longitudinal_mismatch(&c.at_temperature(21.0), &p, 2.0 * ANCHOR_NM, 0.0).unwrap();
        assert!(dk < 0.0);
    }

    #[test]
    fn mismatch_domain_error_for_steep_signal() {
        let (c, p) = calibrated();
        // short signal: ks > ki, so a steep signal has no idler partner
        assert!(matches!(
            qpm_longitudinal_mismatch(&c, &p, 600.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(qpm_longitudinal_mismatch(&c, &p, 300.0, 0.0).is_err());
    }

    #[test]
    fn t0_at_anchor() {
        let (c, p) = calibrated();
        let t0 = collinear_degenerate_temperature(&c, &p).unwrap();
        assert!((t0 - ANCHOR_T0).abs() < 1e-3, "{t0}");
    }

    #[test]
    fn t0_slope_matches_finite_difference_oracle() {
        // Oracle: ratio of numerical partial derivatives of the collinear
        // mismatch in pump wavelength and temperature.
        let (c, p) = calibrated();
        let h = 1e-3;
        let d_lambda = (collinear_mismatch(&c, &PumpConfig::new(ANCHOR_NM + h), ANCHOR_T0)
            - collinear_mismatch(&c, &PumpConfig::new(ANCHOR_NM - h), ANCHOR_T0))
            / (2.0 * h);
        let d_t = (collinear_mismatch(&c, &p, ANCHOR_T0 + h) - collinear_mismatch(&c, &p, ANCHOR_T0 - h)) / (2.0 * h);
        let oracle = -d_lambda / d_t;
        let lo = collinear_degenerate_temperature(&c, &PumpConfig::new(404.96)).unwrap();
        let slope = (ANCHOR_T0 - lo) / (ANCHOR_NM - 404.96);
        assert!(slope > 0.0);
        assert!((slope - oracle).abs() / oracle < 0.02, "{slope} vs {oracle}");
    }

    #[test]
    fn no_degeneracy_error() {
        let (mut c, p) = calibrated();
        c.qpm_offset += 1e6;
        assert!(matches!(
            collinear_degenerate_temperature(&c, &p),
            Err(Error::NoCollinearDegeneracy { .. })
        ));
    }

    #[test]
    fn opening_angle_zero_at_and_above_t0() {
        let (c, p) = calibrated();
        assert_eq!(degenerate_opening_angle(&c, &p, ANCHOR_T0 + 1.0).unwrap(), 0.0);
        assert!(degenerate_opening_angle(&c, &p, ANCHOR_T0).unwrap() < 1e-5);
    }

    /// Brute-force root: scan Δk(θ) on a fine grid and take the first sign change.
    fn scan_root(c: &CrystalConfig, p: &PumpConfig, t: f64) -> (f64, usize) {
        let lp = p.wavelength_m();
        let step = 1e-4;
        let mut roots = 0;
        let mut first = f64::NAN;
        let mut prev = mismatch(c, lp, 2.0 * lp, 2.0 * lp, 0.0, t).unwrap();
        for i in 1..2000 {
            let th = i as f64 * step;
            let cur = mismatch(c, lp, 2.0 * lp, 2.0 * lp, th, t).unwrap();
            if prev.signum() != cur.signum() {
                roots += 1;
                if first.is_nan() {
                    first = th - step * cur / (cur - prev);
                }
            }
            prev = cur;
        }
        (first, roots)
    }

    #[test]
    fn opening_angle_sqrt_scaling_against_scan() {
        let (c, p) = calibrated();
        let th4 = degenerate_internal_angle(&c, &p, ANCHOR_T0 - 4.0).unwrap();
        let th1 = degenerate_internal_angle(&c, &p, ANCHOR_T0 - 1.0).unwrap();
        assert!((scan_root(&c, &p, ANCHOR_T0 - 4.0).0 - th4).abs() < 2e-5);
        assert!((scan_root(&c, &p, ANCHOR_T0 - 1.0).0 - th1).abs() < 2e-5);
        let e4 = degenerate_opening_angle(&c, &p, ANCHOR_T0 - 4.0).unwrap();
        let e1 = degenerate_opening_angle(&c, &p, ANCHOR_T0 - 1.0).unwrap();
        assert!((e4 / e1 - 2.0).abs() < 0.1, "{}", e4 / e1);
    }

    #[test]
    fn root_is_unique_below_t0() {
        let (c, p) = calibrated();
        for k in 1..=9 {
            let (_, roots) = scan_root(&c, &p, ANCHOR_T0 - k as f64);
            assert_eq!(roots, 1, "ΔT = {k}");
        }
    }

    #[test]
    fn theta_squared_over_detuning_constant() {
        let (c, p) = calibrated();
        let ratios: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
            .iter()
            .map(|&dt| degenerate_internal_angle(&c, &p, ANCHOR_T0 - dt).unwrap().powi(2) / dt)
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for r in ratios {
            assert!((r / mean - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn wavelength_temperature_duality() {
        let (c, p) = calibrated();
        let t0 = collinear_degenerate_temperature(&c, &p).unwrap();
        let shifted = PumpConfig::new(ANCHOR_NM + 0.1);
        let t0s = collinear_degenerate_temperature(&c, &shifted).unwrap();
        for dt in [1.0, 3.0, 5.0] {
            let a = degenerate_opening_angle(&c, &p, t0 - dt).unwrap();
            let b = degenerate_opening_angle(&c, &shifted, t0s - dt).unwrap();
            assert!((a / b - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn ring_profile_collinear_and_growth() {
        let (c, p) = calibrated();
        let mono = ring_profile_at_collimator(&c, &p, ANCHOR_T0, 0.15, 0.0).unwrap();
        assert_eq!(mono.radius_m, 0.0);
        assert!(mono.width_fwhm_m > 0.0);
        // Off-degenerate filter components phase match slightly off axis, which
        // leaves a shallow (< 1%) central dip in the filtered lobe.
        let at_t0 = ring_profile_at_collimator(&c, &p, ANCHOR_T0, 0.15, 3.2).unwrap();
        assert!(at_t0.samples[0].intensity > 0.99);
        assert!(at_t0.radius_m < 0.2 * at_t0.width_fwhm_m);
        let mut prev = 0.0;
        for k in 1..=14 {
            let t = ANCHOR_T0 - 0.5 * k as f64;
            let prof = ring_profile_at_collimator(&c, &p, t, 0.15, 3.2).unwrap();
            assert!(prof.radius_m > prev, "T = {t}");
            prev = prof.radius_m;
            check_profile_invariants(&prof);
        }
        // largest ring is still a ring
        let ext = degenerate_opening_angle(&c, &p, ANCHOR_T0 - 7.0).unwrap();
        assert!((prev - 0.15 * ext.tan()).abs() / prev < 0.03);
    }

    pub(crate) fn check_profile_invariants(p: &RingProfile) {
        assert!(p.radius_m >= 0.0 && p.width_fwhm_m > 0.0);
        assert!(p.samples.windows(2).all(|w| w[0].r_m < w[1].r_m));
        let peak = p.samples.iter().map(|s| s.intensity).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-9);
    }

    #[test]
    fn monochromatic_angular_width() {
        let (c, p) = calibrated();
        let t = ANCHOR_T0 - 5.0;
        let f1 = 0.15;
        let grid = RadialGrid {
            r_max_m: 8e-3,
            n: 16001,
        };
        let prof = ring_profile_on_grid(&c, &p, t, f1, 0.0, grid).unwrap();
        let th = degenerate_internal_angle(&c, &p, t).unwrap();
        let ns = c.nz(p.degenerate_m(), t);
        let ks = 2.0 * PI * ns / p.degenerate_m();
        let expected = 2.78 / (c.length_m * ks * th);
        // Convert radial width at the lens back to internal angle.
        let theta_e = (prof.radius_m / f1).atan();
        let dtheta_e = prof.width_fwhm_m * theta_e.cos().powi(2) / f1;
        let dtheta_i = dtheta_e * theta_e.cos() / (ns * th.cos());
        assert!((dtheta_i / expected - 1.0).abs() < 0.05, "{dtheta_i} vs {expected}");
    }

    #[test]
    fn pairs_follow_ring() {
        let (c, p) = calibrated();
        let pairs = emission_pairs(&c, &p, 25.0, 0.15, 0.0, 4000, 0.04).unwrap();
        let best = pairs.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        let ext = degenerate_opening_angle(&c, &p, 25.0).unwrap();
        assert!((best.r_signal_m - 0.15 * ext.tan()).abs() < 5e-5);
        assert!((best.r_signal_m - best.r_idler_m).abs() < 1e-9);
    }

    #[test]
    fn vortex_radius_examples() {
        assert_eq!(vortex_ring_radius(0.0, 1e-3).unwrap(), 0.0);
        assert!((vortex_ring_radius(50.0, 1e-3).unwrap() - 5e-3).abs() < 1e-15);
        assert!(vortex_ring_radius(1.0, 0.0).is_err());
    }

    #[test]
    fn vortex_fit_exact_recovery() {
        let s = 50.0 / 7.0;
        let samples: Vec<(f64, f64)> = (1..=14)
            .map(|k| {
                let dt = 0.5 * k as f64;
                (dt, vortex_ring_radius(s * dt, 1e-3).unwrap())
            })
            .collect();
        let fit = fit_vortex_waist(&samples, OrderScale::PerDegree(s)).unwrap();
        assert!((fit.waist_m - 1e-3).abs() < 1e-9);
        let anchored = fit_vortex_waist(
            &samples,
            OrderScale::Anchor {
                delta_t: 7.0,
                order: 50.0,
            },
        )
        .unwrap();
        assert!((anchored.waist_m - 1e-3).abs() < 1e-9);
        assert!((anchored.order_at(7.0) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn vortex_fit_noisy_recovery() {
        let s = 50.0 / 7.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<(f64, f64)> = (1..=14)
                .map(|k| {
                    let dt = 0.5 * k as f64;
                    let noise = 1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0);
                    (dt, vortex_ring_radius(s * dt, 1e-3).unwrap() * noise)
                })
                .collect();
            let fit = fit_vortex_waist(&samples, OrderScale::PerDegree(s)).unwrap();
            assert!((fit.waist_m / 1e-3 - 1.0).abs() < 0.10, "seed {seed}");
        }
    }

    #[test]
    fn vortex_fit_rejects_bad_input() {
        assert!(fit_vortex_waist(&[(1.0, 1e-3), (2.0, 1.4e-3)], OrderScale::PerDegree(1.0)).is_err());
        assert!(fit_vortex_waist(&[(1.0, 1e-3), (2.0, 0.0), (3.0, 1e-3)], OrderScale::PerDegree(1.0)).is_err());
    }
}
