//! Axicon + lens "perfect ring": analytic radius, empirical width model,
//! partially coherent simulation, and radius/width metrology of intensity maps.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{apply_axicon, lens_fourier_plane, AxiconSpec, GridSpec, IntensityMap, ScalarField};
use crate::phasematch::{lerp_cross, RingProfile};

/// Optical train after the crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    /// Collimating lens, m.
    pub f1: f64,
    /// Fourier lens, m.
    pub f2: f64,
    #[serde(default)]
    pub axicon: AxiconSpec,
    /// Relay magnification from the f2 focal plane to the observation plane.
    #[serde(default = "unit")]
    pub magnification: f64,
    /// Axicon-to-lens spacing, m. The back-focal-plane intensity does not
    /// depend on it (only the focal phase does); kept for layout bookkeeping.
    #[serde(default)]
    pub axicon_to_lens_m: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec {
            f1: 0.150,
            f2: 0.100,
            axicon: AxiconSpec::default(),
            magnification: 1.0,
            axicon_to_lens_m: 0.0,
        }
    }
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f1 > 0.0 && self.f1.is_finite()) {
            return Err(Error::config("layout.f1", "must be > 0"));
        }
        if !(self.f2 > 0.0 && self.f2.is_finite()) {
            return Err(Error::config("layout.f2", "must be > 0"));
        }
        if !(self.magnification > 0.0 && self.magnification.is_finite()) {
            return Err(Error::config("layout.magnification", "must be > 0"));
        }
        if !(self.axicon_to_lens_m >= 0.0) {
            return Err(Error::config("layout.axicon_to_lens_m", "must be >= 0"));
        }
        self.axicon.validate()
    }
}

/// Ring radius `M·f2·(n−1)·tanβ`, independent of the input beam.
pub fn analytic_perfect_ring_radius(layout: &LayoutSpec) -> f64 {
    layout.magnification * layout.f2 * layout.axicon.deflection()
}

/// Perfect-ring width versus equivalent vortex order,
/// `w0·√(1 + c·max(0, ℓ − ℓk)^p)`. With the defaults `ℓk = 0`, `p = 1` this
/// is the plain two-parameter form; a positive knee holds the width flat at
/// `w0` up to `ℓk`, and `p > 1` softens the onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthModel {
    pub w0_m: f64,
    pub growth: f64,
    #[serde(default)]
    pub knee_order: f64,
    #[serde(default = "unit_power")]
    pub knee_power: f64,
}

fn unit_power() -> f64 {
    1.0
}

impl Default for WidthModel {
    fn default() -> Self {
        WidthModel::from_endpoints(200e-6, 380e-6, 50.0)
    }
}

impl WidthModel {
    /// Pin `w(0) = w0` and `w(order) = w_at`.
    pub fn from_endpoints(w0: f64, w_at: f64, order: f64) -> Self {
        WidthModel::with_knee(w0, w_at, order, 0.0, 1.0)
    }

    /// Same endpoints, flat up to `knee` (< `order`).
    pub fn with_knee(w0: f64, w_at: f64, order: f64, knee: f64, power: f64) -> Self {
        WidthModel {
            w0_m: w0,
            growth: ((w_at / w0).powi(2) - 1.0) / (order - knee).powf(power),
            knee_order: knee,
            knee_power: power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0_m > 0.0 && self.w0_m.is_finite()) {
            return Err(Error::config("width_model.w0_m", "must be > 0"));
        }
        if !(self.growth >= 0.0 && self.growth.is_finite()) {
            return Err(Error::config("width_model.growth", "must be >= 0"));
        }
        if !(self.knee_order >= 0.0 && self.knee_order.is_finite()) {
            return Err(Error::config("width_model.knee_order", "must be >= 0"));
        }
        if !(self.knee_power >= 1.0 && self.knee_power.is_finite()) {
            return Err(Error::config("width_model.knee_power", "must be >= 1"));
        }
        Ok(())
    }
}

pub fn perfect_ring_width(model: &WidthModel, equivalent_order: f64) -> Result<f64> {
    if !(equivalent_order >= 0.0) {
        return Err(Error::invalid("equivalent order must be >= 0"));
    }
    let excess = (equivalent_order - model.knee_order).max(0.0);
    Ok(model.w0_m * (1.0 + model.growth * excess.powf(model.knee_power)).sqrt())
}

/// Partial-coherence ensemble for [`simulate_perfect_ring`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ensemble {
    /// Fixed number of azimuthal segments; `None` picks it per ring with
    /// [`effective_patches`].
    pub patches: Option<usize>,
    pub realizations: usize,
    pub seed: u64,
    /// Replace the random-phase sampling by its expectation, the incoherent
    /// sum of the individual patch patterns. Ignores `realizations`/`seed`.
    pub exact: bool,
}

impl Default for Ensemble {
    fn default() -> Self {
        Ensemble {
            patches: None,
            realizations: 32,
            seed: 0,
            exact: false,
        }
    }
}

/// Segment count for `ring` such that each segment's arc is about the
/// ring's radial FWHM; a central lobe is one coherent patch.
pub fn effective_patches(ring: &RingProfile) -> usize {
    let cells = (2.0 * PI * ring.radius_m / ring.width_fwhm_m).floor();
    cells.max(1.0) as usize
}

/// Ensemble-averaged intensity in the observation plane for an SPDC ring
/// entering the axicon. The input annulus is cut into azimuthal segments
/// with independent uniform random phases; each realization goes through the
/// axicon and the f2 Fourier transform. Output pitch includes the relay
/// magnification. Deterministic for a given seed.
pub fn simulate_perfect_ring(
    layout: &LayoutSpec,
    ring: &RingProfile,
    wavelength: f64,
    grid: GridSpec,
    ensemble: Ensemble,
) -> Result<IntensityMap> {
    layout.validate()?;
    grid.validate().map_err(|e| Error::Grid(e.to_string()))?;
    let patches = ensemble.patches.unwrap_or_else(|| effective_patches(ring));
    if patches == 0 || (!ensemble.exact && ensemble.realizations == 0) {
        return Err(Error::invalid("ensemble needs >= 1 patch and >= 1 realization"));
    }
    let reach = ring
        .samples
        .iter()
        .rev()
        .find(|s| s.intensity > 1e-6)
        .map_or(0.0, |s| s.r_m);
    if reach >= grid.extent_m / 2.0 {
        return Err(Error::Grid(format!(
            "input ring extends to {reach} m, beyond the {} m half-extent",
            grid.extent_m / 2.0
        )));
    }
    let n = grid.n;
    let amplitude = ScalarField::from_fn(n, grid.pitch(), wavelength, |x, y| {
        Complex64::new(ring.intensity_at(x.hypot(y)).max(0.0).sqrt(), 0.0)
    })?;
    let mut amplitude = apply_axicon(&amplitude, &layout.axicon)?;
    amplitude.normalize_power()?;

    let patch_of = |x: f64, y: f64| {
        let phi = y.atan2(x).rem_euclid(2.0 * PI);
        ((phi / (2.0 * PI) * patches as f64) as usize).min(patches - 1)
    };
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let (rounds, scale) = if ensemble.exact {
        (patches, 1.0)
    } else {
        (ensemble.realizations, 1.0 / ensemble.realizations as f64)
    };
    let mut acc = vec![0.0; n * n];
    let mut pitch = 0.0;
    for k in 0..rounds {
        let field = if ensemble.exact {
            amplitude.modulate(|x, y| if patch_of(x, y) == k { one } else { zero })
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(ensemble.seed);
            rng.set_stream(k as u64);
            let phases: Vec<Complex64> = (0..patches)
                .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()))
                .collect();
            amplitude.modulate(|x, y| phases[patch_of(x, y)])
        };
        let focal = lens_fourier_plane(&field, layout.f2)?;
        pitch = focal.pitch();
        for (a, v) in acc.iter_mut().zip(focal.samples()) {
            *a += v.norm_sqr();
        }
    }
    acc.iter_mut().for_each(|v| *v *= scale);
    Ok(IntensityMap {
        n,
        pitch: pitch * layout.magnification,
        data: acc,
    })
}

/// Azimuthally averaged radial profile about a center given in pixels.
/// Bin `k` covers radii `[k, k+1)` pixels; its abscissa is the mean pixel
/// radius inside the bin.
pub fn radial_profile(map: &IntensityMap, cx: f64, cy: f64) -> (Vec<f64>, Vec<f64>) {
    let n = map.n;
    let r_max = cx.min(cy).min(n as f64 - 1.0 - cx).min(n as f64 - 1.0 - cy).max(1.0);
    let bins = r_max.floor() as usize;
    let mut sum = vec![0.0; bins];
    let mut rsum = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for j in 0..n {
        let dy = j as f64 - cy;
        for i in 0..n {
            let dx = i as f64 - cx;
            let r = dx.hypot(dy);
            let b = r as usize;
            if b < bins {
                sum[b] += map.data[j * n + i];
                rsum[b] += r;
                cnt[b] += 1;
            }
        }
    }
    let mut radii = Vec::with_capacity(bins);
    let mut vals = Vec::with_capacity(bins);
    for b in 0..bins {
        if cnt[b] > 0 {
            radii.push(rsum[b] / cnt[b] as f64 * map.pitch);
            vals.push(sum[b] / cnt[b] as f64);
        }
    }
    (radii, vals)
}

/// Ring radius and width of the dominant ring (or central lobe) in a map.
///
/// Center: centroid of pixels above half the map maximum. Radius:
/// intensity-weighted mean over the contiguous above-half-max run around the
/// radial peak (reported as 0 when that run reaches the center). Width: FWHM
/// by linear interpolation on both flanks.
pub fn ring_metrology(map: &IntensityMap) -> Result<RingProfile> {
    if map.data.len() != map.n * map.n || map.n < 8 {
        return Err(Error::invalid("intensity map must be square with n >= 8"));
    }
    let mut sorted = map.data.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let peak = sorted[sorted.len() - 1];
    if !(peak > 2.0 * median && peak > 0.0) {
        return Err(Error::Numerical(
            "featureless map: no sample exceeds twice the median".into(),
        ));
    }
    let thr = median + 0.5 * (peak - median);
    let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for j in 0..map.n {
        for i in 0..map.n {
            let v = map.data[j * map.n + i] - thr;
            if v > 0.0 {
                w += v;
                sx += v * i as f64;
                sy += v * j as f64;
            }
        }
    }
    let (cx, cy) = (sx / w, sy / w);
    let (r, y) = radial_profile(map, cx, cy);
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Numerical("empty radial profile".into()))?;
    let half = 0.5 * ymax;
    let mut lo = imax;
    while lo > 0 && y[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < y.len() && y[hi + 1] >= half {
        hi += 1;
    }
    if hi + 1 >= y.len() {
        return Err(Error::FlankMissing("outer"));
    }
    let outer = lerp_cross(r[hi], y[hi], r[hi + 1], y[hi + 1], half);
    let (radius, width) = if lo == 0 {
        (0.0, 2.0 * outer)
    } else {
        let (num, den) = (lo..=hi).fold((0.0, 0.0), |(n, d), k| (n + r[k] * y[k], d + y[k]));
        let inner = lerp_cross(r[lo - 1], y[lo - 1], r[lo], y[lo], half);
        (num / den, outer - inner)
    };
    let mut prof = RingProfile::from_radial(&r, &y)?;
    prof.radius_m = radius;
    prof.width_fwhm_m = width;
    Ok(prof)
}

/// Gaussian annulus profile of given radius and FWHM, sampled on `[0, r_max]`.
pub fn gaussian_ring(radius: f64, fwhm: f64, r_max: f64, n: usize) -> Result<RingProfile> {
    if !(fwhm > 0.0) || !(radius >= 0.0) || n < 3 {
        return Err(Error::invalid("gaussian ring needs fwhm > 0, radius >= 0, n >= 3"));
    }
    let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
    let r: Vec<f64> = (0..n).map(|i| r_max * i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = r
        .iter()
        .map(|&x| (-(x - radius).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut prof = RingProfile::from_radial(&r, &y)?;
    prof.radius_m = radius;
    prof.width_fwhm_m = fwhm;
    Ok(prof)
}
