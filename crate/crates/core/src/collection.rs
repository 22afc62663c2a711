//! Fiber collection of the pair emission and coincidence rate versus crystal
//! temperature, in the direct (collimated) ring plane or the perfect-ring
//! plane.
//!
//! Pairs are sampled from the emission (signal wavelength × signal angle).
//! The idler lands opposite the signal, displaced by the pump's transverse
//! momentum spread: in the collimated plane `x_i = −x_s·(r_i/r_s) + δ` with
//! `δ` Gaussian, `σ = f1/(k·w_pump)` per axis. Setting `pump_waist_m` to
//! `None` gives exact φ ↔ φ+π correlation.
//!
//! A photon at distance `d` from an SMF coupler center couples with
//! `exp(−2d²/w²)` (mode intensity); an MMF accepts everything inside its
//! acceptance disk. In the perfect-ring plane an SMF also sees the photon's
//! tilt, set by where it crossed the axicon, and is aligned for the anchor
//! temperature.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfectring::{analytic_perfect_ring_radius, perfect_ring_width, LayoutSpec, WidthModel};
use crate::phasematch::{
    collinear_degenerate_temperature, degenerate_internal_angle, emission_pairs, lerp_cross, CrystalConfig, PairSample,
    PumpConfig, RingProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberKind {
    Smf,
    Mmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Direct,
    Perfect,
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Plane::Direct),
            "perfect" => Ok(Plane::Perfect),
            _ => Err(Error::invalid(format!("unknown plane `{s}`"))),
        }
    }
}

/// One fiber coupler (the partner sits at the diametrically opposite point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionOptics {
    pub kind: FiberKind,
    /// SMF mode-field radius in the collection plane, m.
    #[serde(default = "default_mfr")]
    pub mode_field_radius_m: f64,
    /// MMF acceptance disk radius in the collection plane, m.
    #[serde(default = "default_acceptance")]
    pub acceptance_radius_m: f64,
    /// Coupler center distance from the axis; `None` places it on the ring
    /// at the anchor temperature.
    #[serde(default)]
    pub coupler_radius_m: Option<f64>,
    /// Coupler azimuth, rad.
    #[serde(default)]
    pub azimuth_rad: f64,
    /// Lumped transmission × detector efficiency of this arm.
    #[serde(default = "default_eta")]
    pub eta_arm: f64,
}

fn default_mfr() -> f64 {
    100e-6
}
fn default_acceptance() -> f64 {
    250e-6
}
fn default_eta() -> f64 {
    1.0
}

impl CollectionOptics {
    pub fn smf(mode_field_radius_m: f64) -> Self {
        CollectionOptics {
            kind: FiberKind::Smf,
            mode_field_radius_m,
            acceptance_radius_m: default_acceptance(),
            coupler_radius_m: None,
            azimuth_rad: 0.0,
            eta_arm: 1.0,
        }
    }

    pub fn mmf(acceptance_radius_m: f64) -> Self {
        CollectionOptics {
            kind: FiberKind::Mmf,
            acceptance_radius_m,
            ..CollectionOptics::smf(default_mfr())
        }
    }

    pub fn with_coupler_radius(mut self, r: f64) -> Self {
        self.coupler_radius_m = Some(r);
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.mode_field_radius_m) {
            return Err(Error::config(format!("{path}.mode_field_radius_m"), "must be > 0"));
        }
        if !pos(self.acceptance_radius_m) {
            return Err(Error::config(format!("{path}.acceptance_radius_m"), "must be > 0"));
        }
        if let Some(r) = self.coupler_radius_m {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config(format!("{path}.coupler_radius_m"), "must be >= 0"));
            }
        }
        if !(self.eta_arm > 0.0 && self.eta_arm <= 1.0) {
            return Err(Error::config(format!("{path}.eta_arm"), "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Size of the coupler footprint used to bound integrals.
    fn reach(&self) -> f64 {
        match self.kind {
            FiberKind::Smf => 3.5 * self.mode_field_radius_m,
            FiberKind::Mmf => self.acceptance_radius_m,
        }
    }
}

/// Exponentially scaled modified Bessel function `I0(x)·e^{−x}` for x ≥ 0.
pub(crate) fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 3.75 {
        let t = (x / 3.75).powi(2);
        let p = 1.0
            + t * (3.5156229 + t * (3.0899424 + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        p * (-ax).exp()
    } else {
        let t = 3.75 / ax;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706 + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p / ax.sqrt()
    }
}

fn trapezoid_weights(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * (r[k + 1] - r[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Single-photon geometric coupling of an azimuthally symmetric ring into
/// one coupler. SMF: normalized amplitude overlap of `√I` (flat phase) with
/// the Gaussian mode. MMF: fraction of ring power inside the disk.
pub fn coupling_efficiency(ring: &RingProfile, optics: &CollectionOptics) -> Result<f64> {
    if ring.samples.len() < 2 {
        return Err(Error::invalid("ring profile has too few samples"));
    }
    let rc = optics.coupler_radius_m.unwrap_or(ring.radius_m);
    let r: Vec<f64> = ring.samples.iter().map(|s| s.r_m).collect();
    let i: Vec<f64> = ring.samples.iter().map(|s| s.intensity.max(0.0)).collect();
    let w = trapezoid_weights(&r);
    let power: f64 = (0..r.len()).map(|k| w[k] * i[k] * r[k]).sum::<f64>() * 2.0 * PI;
    if !(power > 0.0) {
        return Err(Error::Numerical("ring profile carries no power".into()));
    }
    let eta = match optics.kind {
        FiberKind::Smf => {
            let wm2 = optics.mode_field_radius_m.powi(2);
            let amp: f64 = (0..r.len())
                .map(|k| {
                    let z = 2.0 * r[k] * rc / wm2;
                    w[k] * r[k] * i[k].sqrt() * (-(r[k] - rc).powi(2) / wm2).exp() * 2.0 * PI * bessel_i0e(z)
                })
                .sum();
            amp * amp / (power * PI * wm2 / 2.0)
        }
        FiberKind::Mmf => {
            let a = optics.acceptance_radius_m;
            let inside: f64 = (0..r.len()).map(|k| w[k] * r[k] * i[k] * disk_arc(r[k], rc, a)).sum();
            inside / power
        }
    };
    Ok(eta.clamp(0.0, 1.0))
}

/// Angle subtended by the part of the circle of radius `r` (about the axis)
/// that lies inside a disk of radius `a` centered at distance `c`.
fn disk_arc(r: f64, c: f64, a: f64) -> f64 {
    if c <= 0.0 || r <= 0.0 {
        return if r.max(c) <= a - r.min(c) { 2.0 * PI } else { 0.0 };
    }
    let cosv = (r * r + c * c - a * a) / (2.0 * r * c);
    if cosv <= -1.0 {
        2.0 * PI
    } else if cosv >= 1.0 {
        0.0
    } else {
        2.0 * cosv.acos()
    }
}

/// Coincidence rate versus temperature, peak-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    /// `(T °C, relative rate)`, sorted by T.
    pub samples: Vec<(f64, f64)>,
}

impl RateCurve {
    pub fn from_raw(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty rate curve"));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("rate curve temperatures must increase"));
        }
        let peak = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::Numerical("rate curve has no positive sample".into()));
        }
        Ok(RateCurve {
            samples: samples.into_iter().map(|(t, v)| (t, v / peak)).collect(),
        })
    }

    fn peak_index(&self) -> usize {
        self.samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Peak temperature refined by a parabola through the top three samples.
    pub fn peak_temperature(&self) -> f64 {
        let s = &self.samples;
        let i = self.peak_index();
        if i == 0 || i + 1 >= s.len() {
            return s[i].0;
        }
        let (t0, y0) = s[i - 1];
        let (t1, y1) = s[i];
        let (t2, y2) = s[i + 1];
        let d = y0 - 2.0 * y1 + y2;
        if d >= 0.0 || (t1 - t0 - (t2 - t1)).abs() > 1e-9 * (t2 - t0) {
            return t1;
        }
        t1 + (0.5 * (y0 - y2) / d).clamp(-1.0, 1.0) * (t2 - t1)
    }

    /// Crossings of `level` walking out from the peak: `(lower, upper)`.
    fn crossings(&self, level: f64) -> (Option<f64>, Option<f64>) {
        let s = &self.samples;
        let i = self.peak_index();
        let lower = (1..=i)
            .rev()
            .find(|&j| s[j - 1].1 < level)
            .map(|j| lerp_cross(s[j - 1].0, s[j - 1].1, s[j].0, s[j].1, level));
        let upper = (i..s.len() - 1)
            .find(|&j| s[j + 1].1 < level)
            .map(|j| lerp_cross(s[j].0, s[j].1, s[j + 1].0, s[j + 1].1, level));
        (lower, upper)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "T_C,rate_rel")?;
        for (t, v) in &self.samples {
            writeln!(w, "{t:.4},{v:.9e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Full width at half maximum of a rate curve, °C.
pub fn fwhm(curve: &RateCurve) -> Result<f64> {
    match curve.crossings(0.5) {
        (Some(lo), Some(hi)) => Ok(hi - lo),
        (None, _) => Err(Error::FlankMissing("lower")),
        (_, None) => Err(Error::FlankMissing("upper")),
    }
}

/// Half-width of the largest peak-centered interval over which the rate
/// stays at or above `1 − fraction` of the peak, °C. When the level is never
/// crossed on a side, the curve end bounds the interval.
pub fn stability_range(curve: &RateCurve, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction must lie in (0, 1]"));
    }
    let level = 1.0 - fraction;
    let s = &curve.samples;
    let tp = curve.peak_temperature();
    let (lo, hi) = curve.crossings(level);
    let lo = match lo {
        Some(t) => t,
        None if level <= 0.0 => s[0].0,
        None => return Err(Error::FlankMissing("lower")),
    };
    let hi = match hi {
        Some(t) => t,
        None if level <= 0.0 => s[s.len() - 1].0,
        None => return Err(Error::FlankMissing("upper")),
    };
    Ok((tp - lo).min(hi - tp).max(0.0))
}

/// Heralding ratio of one arm: coincidences / singles of this arm.
pub fn heralding_ratio(other_arm: &CollectionOptics, conditional_geometry: f64) -> f64 {
    other_arm.eta_arm * conditional_geometry
}

/// Everything the coincidence model needs about the source.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionSetup {
    pub crystal: CrystalConfig,
    pub pump: PumpConfig,
    pub layout: LayoutSpec,
    pub width_model: WidthModel,
    /// Equivalent vortex order per °C of detuning below T0.
    pub order_per_degree: f64,
    pub filter_fwhm_nm: f64,
    /// Pump waist at the crystal; `None` for exact pair correlation.
    pub pump_waist_m: Option<f64>,
    /// Temperature at which the couplers are aligned, °C.
    pub anchor_temperature_c: f64,
    /// Signal-angle samples per filter node.
    pub n_theta: usize,
}

impl CollectionSetup {
    /// Correlation blur of the idler position in the collimated plane, m.
    pub fn correlation_sigma(&self) -> f64 {
        match self.pump_waist_m {
            Some(w) if w > 0.0 => {
                let k = 2.0 * PI / self.pump.degenerate_m();
                self.layout.f1 / (k * w)
            }
            _ => 0.0,
        }
    }

    fn theta_max(&self, t_min: f64) -> Result<f64> {
        let th = degenerate_internal_angle(&self.crystal, &self.pump, t_min)?;
        Ok((1.5 * th).max(th + 8e-3))
    }

    /// Direct-ring radius at the anchor temperature: mean signal radius of the
    /// filtered emission.
    pub fn anchor_ring_radius(&self) -> Result<f64> {
        let t = self.anchor_temperature_c;
        let pairs = emission_pairs(
            &self.crystal,
            &self.pump,
            t,
            self.layout.f1,
            self.filter_fwhm_nm,
            self.n_theta,
            self.theta_max(t)?,
        )?;
        let (num, den) = pairs
            .iter()
            .fold((0.0, 0.0), |(n, d), p| (n + p.weight * p.r_signal_m, d + p.weight));
        Ok(num / den)
    }
}

/// Peak-normalized coincidences between two diametrically opposite couplers
/// over `t_lo..=t_hi` in steps of `step`.
pub fn coincidence_curve(
    setup: &CollectionSetup,
    plane: Plane,
    optics: &CollectionOptics,
    t_lo: f64,
    t_hi: f64,
    step: f64,
) -> Result<RateCurve> {
    if !(t_hi >= t_lo) || !(step > 0.0) || !t_lo.is_finite() || !t_hi.is_finite() {
        return Err(Error::invalid("empty temperature range"));
    }
    let count = ((t_hi - t_lo) / step + 1e-9).floor() as usize + 1;
    let temps: Vec<f64> = (0..count).map(|k| t_lo + k as f64 * step).collect();
    let raw = coincidence_rates(setup, plane, optics, &temps)?;
    RateCurve::from_raw(temps.into_iter().zip(raw).collect())
}

/// Unnormalized coincidence rates at the given temperatures.
pub fn coincidence_rates(
    setup: &CollectionSetup,
    plane: Plane,
    optics: &CollectionOptics,
    temps: &[f64],
) -> Result<Vec<f64>> {
    optics.validate("collection")?;
    let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
    let theta_max = setup.theta_max(t_min.min(setup.anchor_temperature_c))?;
    let sigma = setup.correlation_sigma();
    let pairs_at = |t: f64| {
        emission_pairs(
            &setup.crystal,
            &setup.pump,
            t,
            setup.layout.f1,
            setup.filter_fwhm_nm,
            setup.n_theta,
            theta_max,
        )
    };
    match plane {
        Plane::Direct => {
            let rc = match optics.coupler_radius_m {
                Some(r) => r,
                None => setup.anchor_ring_radius()?,
            };
            let rates = crate::par::map_slice(temps, |&t| {
                pairs_at(t).map(|pairs| direct_rate(&pairs, optics, rc, sigma))
            });
            rates.into_iter().collect()
        }
        Plane::Perfect => {
            let t0 = collinear_degenerate_temperature(&setup.crystal, &setup.pump)?;
            let rho = analytic_perfect_ring_radius(&setup.layout);
            let rc = optics.coupler_radius_m.unwrap_or(rho);
            let widest = perfect_ring_width(&setup.width_model, setup.order_per_degree * (t0 - t_min).max(0.0))?;
            let table = DecorrelationTable::new(sigma, theta_max, setup, optics, rho, widest);
            // A photon leaving the collimated plane at radius r meets the
            // perfect ring tilted by r/(f2·M); an SMF aligned at the anchor
            // filters the tilt change as exp(−(π·w·δθ/λ)²).
            let tilt = perfect_tilt(setup, optics)?;
            let rates = crate::par::map_slice(temps, |&t| -> Result<f64> {
                let mut pairs = pairs_at(t)?;
                if let Some((r_a, g)) = tilt {
                    for p in &mut pairs {
                        let es = g * (p.r_signal_m - r_a);
                        let ei = g * (p.r_idler_m - r_a);
                        p.weight *= (-(es * es + ei * ei)).exp();
                    }
                }
                let order = setup.order_per_degree * (t0 - t).max(0.0);
                let width = perfect_ring_width(&setup.width_model, order)?;
                let kernel = AzimuthKernel::new(optics, rho, rc, width);
                Ok(table.rate(&pairs, &kernel))
            });
            rates.into_iter().collect()
        }
    }
}

/// Unnormalized singles rates of the signal arm, same scale as
/// [`coincidence_rates`].
pub fn singles_rates(
    setup: &CollectionSetup,
    plane: Plane,
    optics: &CollectionOptics,
    temps: &[f64],
) -> Result<Vec<f64>> {
    optics.validate("collection")?;
    let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
    let theta_max = setup.theta_max(t_min.min(setup.anchor_temperature_c))?;
    let rates = match plane {
        Plane::Direct => {
            let rc = match optics.coupler_radius_m {
                Some(r) => r,
                None => setup.anchor_ring_radius()?,
            };
            crate::par::map_slice(temps, |&t| -> Result<f64> {
                let pairs = emission_pairs(
                    &setup.crystal,
                    &setup.pump,
                    t,
                    setup.layout.f1,
                    setup.filter_fwhm_nm,
                    setup.n_theta,
                    theta_max,
                )?;
                Ok(pairs
                    .iter()
                    .map(|p| p.weight * single_direct(p.r_signal_m, optics, rc))
                    .sum())
            })
        }
        Plane::Perfect => {
            let t0 = collinear_degenerate_temperature(&setup.crystal, &setup.pump)?;
            let rho = analytic_perfect_ring_radius(&setup.layout);
            let rc = optics.coupler_radius_m.unwrap_or(rho);
            let tilt = perfect_tilt(setup, optics)?;
            crate::par::map_slice(temps, |&t| -> Result<f64> {
                let pairs = emission_pairs(
                    &setup.crystal,
                    &setup.pump,
                    t,
                    setup.layout.f1,
                    setup.filter_fwhm_nm,
                    setup.n_theta,
                    theta_max,
                )?;
                let order = setup.order_per_degree * (t0 - t).max(0.0);
                let kernel = AzimuthKernel::new(optics, rho, rc, perfect_ring_width(&setup.width_model, order)?);
                let k_int: f64 = kernel.values.iter().sum::<f64>() * kernel.dphi;
                Ok(pairs
                    .iter()
                    .map(|p| {
                        let f = tilt.map_or(1.0, |(r_a, g)| (-(g * (p.r_signal_m - r_a)).powi(2)).exp());
                        p.weight * f * k_int
                    })
                    .sum())
            })
        }
    };
    rates.into_iter().collect()
}

/// Coincidences per signal single from geometry alone, at temperature `t`.
pub fn conditional_geometry(setup: &CollectionSetup, plane: Plane, optics: &CollectionOptics, t: f64) -> Result<f64> {
    let c = coincidence_rates(setup, plane, optics, &[t])?[0];
    let s = singles_rates(setup, plane, optics, &[t])?[0];
    if !(s > 0.0) {
        return Err(Error::Numerical("no singles at this temperature".into()));
    }
    Ok(c / s)
}

fn single_direct(r: f64, optics: &CollectionOptics, rc: f64) -> f64 {
    match optics.kind {
        FiberKind::Smf => {
            let ws2 = optics.mode_field_radius_m.powi(2);
            (-2.0 * (r - rc).powi(2) / ws2).exp() * 2.0 * PI * bessel_i0e(4.0 * r * rc / ws2)
        }
        FiberKind::Mmf => disk_arc(r, rc, optics.acceptance_radius_m),
    }
}

/// SMF tilt filter `(anchor radius, π·w/(λ·f2·M))` for the perfect plane.
fn perfect_tilt(setup: &CollectionSetup, optics: &CollectionOptics) -> Result<Option<(f64, f64)>> {
    Ok(match optics.kind {
        FiberKind::Smf => {
            let r_a = setup.anchor_ring_radius()?;
            let g = PI * optics.mode_field_radius_m
                / (setup.pump.degenerate_m() * setup.layout.f2 * setup.layout.magnification);
            Some((r_a, g))
        }
        FiberKind::Mmf => None,
    })
}

/// Gauss–Hermite nodes/weights (probabilists' form, weights sum to 1) for
/// averaging over a standard normal variable.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    // Golub–Welsch: eigenvalues of the Jacobi matrix with off-diagonal √k.
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        m[(k, k - 1)] = b;
        m[(k - 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn direct_rate(pairs: &[PairSample], optics: &CollectionOptics, rc: f64, sigma: f64) -> f64 {
    match optics.kind {
        FiberKind::Smf => {
            let ws2 = optics.mode_field_radius_m.powi(2);
            let wi2 = ws2 + 4.0 * sigma * sigma;
            let amp = ws2 / wi2;
            pairs
                .iter()
                .map(|p| {
                    let e = -2.0 * ((p.r_signal_m - rc).powi(2) / ws2 + (p.r_idler_m - rc).powi(2) / wi2);
                    let z = 4.0 * rc * (p.r_signal_m / ws2 + p.r_idler_m / wi2);
                    p.weight * amp * e.exp() * 2.0 * PI * bessel_i0e(z)
                })
                .sum()
        }
        FiberKind::Mmf => {
            // Signal on a fine azimuth grid; idler blur by Gauss–Hermite.
            let a = optics.acceptance_radius_m;
            let gh = gauss_hermite(12);
            let nphi = 181;
            let phi_max = if rc > a { (a / rc).asin() * 1.2 } else { PI };
            let dphi = 2.0 * phi_max / (nphi - 1) as f64;
            pairs
                .iter()
                .map(|p| {
                    let mut acc = 0.0;
                    for k in 0..nphi {
                        let phi = -phi_max + k as f64 * dphi;
                        let (xs, ys) = (p.r_signal_m * phi.cos(), p.r_signal_m * phi.sin());
                        if (xs - rc).hypot(ys) > a {
                            continue;
                        }
                        let (xi, yi) = (-p.r_idler_m * phi.cos(), -p.r_idler_m * phi.sin());
                        let mut ki = 0.0;
                        for &(u, wu) in &gh {
                            for &(v, wv) in &gh {
                                let (x, y) = (xi + sigma * u, yi + sigma * v);
                                if (x + rc).hypot(y) <= a {
                                    ki += wu * wv;
                                }
                            }
                        }
                        acc += ki * dphi;
                    }
                    p.weight * acc
                })
                .sum()
        }
    }
}

/// Per-photon coupling in the perfect-ring plane as a function of the
/// azimuth offset from the coupler, averaged over the ring's radial profile
/// (Gaussian, FWHM `width`, centered on `rho`).
struct AzimuthKernel {
    /// Sampled on `phi_k = (k − half)·dphi`.
    values: Vec<f64>,
    dphi: f64,
}

/// Azimuth sampling step for the perfect-plane kernels, rad.
const KERNEL_DPHI: f64 = 2e-4;

impl AzimuthKernel {
    fn new(optics: &CollectionOptics, rho: f64, rc: f64, width: f64) -> Self {
        let sr = width / (8.0 * std::f64::consts::LN_2).sqrt();
        let half_span = ((optics.reach() + 3.0 * sr) / rho).min(PI);
        let half = (half_span / KERNEL_DPHI).ceil() as usize;
        let values = (0..=2 * half)
            .map(|k| {
                let phi = (k as f64 - half as f64) * KERNEL_DPHI;
                // Ring treated as locally straight: tangential offset t.
                let t = rho * phi;
                match optics.kind {
                    FiberKind::Smf => {
                        let wm2 = optics.mode_field_radius_m.powi(2);
                        let s2 = wm2 / 4.0 + sr * sr;
                        (wm2 / 4.0 / s2).sqrt() * (-(rho - rc).powi(2) / (2.0 * s2)).exp() * (-2.0 * t * t / wm2).exp()
                    }
                    FiberKind::Mmf => {
                        let a = optics.acceptance_radius_m;
                        if t.abs() >= a {
                            0.0
                        } else {
                            let h = (a * a - t * t).sqrt();
                            let d = rho - rc;
                            0.5 * (erf((h - d) / (std::f64::consts::SQRT_2 * sr))
                                + erf((h + d) / (std::f64::consts::SQRT_2 * sr)))
                        }
                    }
                }
            })
            .collect();
        AzimuthKernel {
            values,
            dphi: KERNEL_DPHI,
        }
    }

    fn half(&self) -> usize {
        self.values.len() / 2
    }

    /// `H(ε) = ∫ K(φ)·K(φ+ε) dφ` at `ε = m·dphi`.
    fn autocorrelation(&self, m: usize) -> f64 {
        let v = &self.values;
        if m >= v.len() {
            return 0.0;
        }
        v[..v.len() - m].iter().zip(&v[m..]).map(|(a, b)| a * b).sum::<f64>() * self.dphi
    }
}

/// Distribution of the idler azimuth offset `ε` from exact anticorrelation,
/// tabulated against the idler's collimated-plane radius.
struct DecorrelationTable {
    sigma: f64,
    r_step: f64,
    /// `prob[j][m]`: probability of `|ε| ∈ [(m−½)·dphi, (m+½)·dphi)` for radius
    /// bin `j`, with `m` up to the kernel reach.
    prob: Vec<Vec<f64>>,
}

impl DecorrelationTable {
    fn new(
        sigma: f64,
        theta_max: f64,
        setup: &CollectionSetup,
        optics: &CollectionOptics,
        rho: f64,
        widest: f64,
    ) -> Self {
        let r_max = setup.layout.f1 * (1.9 * theta_max).tan() + 4.0 * sigma;
        let r_step = 10e-6;
        let nr = (r_max / r_step).ceil() as usize + 2;
        let sr = widest / (8.0 * std::f64::consts::LN_2).sqrt();
        let max_m = ((2.0 * (optics.reach() + 3.0 * sr) / rho).min(2.0 * PI) / KERNEL_DPHI).ceil() as usize + 2;
        if sigma == 0.0 {
            let mut row = vec![0.0; max_m + 1];
            row[0] = 1.0;
            return DecorrelationTable {
                sigma,
                r_step,
                prob: vec![row; nr],
            };
        }
        // 2D Gaussian blur on a polar grid (Rayleigh radius × uniform angle).
        let n_rad = 48;
        let n_ang = 256;
        let rad: Vec<(f64, f64)> = (0..n_rad)
            .map(|k| {
                // equal-probability radial shells of the Rayleigh distribution
                let u0 = k as f64 / n_rad as f64;
                let u1 = (k + 1) as f64 / n_rad as f64;
                let um = 0.5 * (u0 + u1);
                (sigma * (-2.0 * (1.0 - um).ln()).sqrt(), 1.0 / n_rad as f64)
            })
            .collect();
        let prob = crate::par::map_indexed(nr, |j| {
            let r = (j as f64 + 0.5) * r_step;
            let mut row = vec![0.0; max_m + 1];
            for &(d, wd) in &rad {
                for a in 0..n_ang {
                    let ang = (a as f64 + 0.5) / n_ang as f64 * 2.0 * PI;
                    let eps = (d * ang.sin()).atan2(r + d * ang.cos()).abs();
                    let m = (eps / KERNEL_DPHI).round() as usize;
                    if m <= max_m {
                        row[m] += wd / n_ang as f64;
                    }
                }
            }
            row
        });
        DecorrelationTable { sigma, r_step, prob }
    }

    fn rate(&self, pairs: &[PairSample], kernel: &AzimuthKernel) -> f64 {
        let reach = 2 * kernel.half();
        let h: Vec<f64> = (0..=reach).map(|m| kernel.autocorrelation(m)).collect();
        let mut by_bin = vec![0.0; self.prob.len()];
        for p in pairs {
            let j = if self.sigma == 0.0 {
                0
            } else {
                ((p.r_idler_m / self.r_step) as usize).min(self.prob.len() - 1)
            };
            by_bin[j] += p.weight;
        }
        by_bin
            .iter()
            .zip(&self.prob)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, row)| {
                // ±ε contribute equally; bin 0 covers both signs already
                let g: f64 = row.iter().zip(&h).map(|(p, hv)| p * hv).sum();
                w * g
            })
            .sum()
    }
}

/// Error function: Maclaurin series below 2, continued fraction above.
pub(crate) fn erf(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    if x < 2.0 {
        // Maclaurin series, converges quickly on [0, 2)
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut k = 0.0;
        while term.abs() > 1e-17 * sum.abs() {
            k += 1.0;
            term *= -x2 / k;
            sum += term / (2.0 * k + 1.0);
        }
        return s * 2.0 / PI.sqrt() * sum;
    }
    // continued fraction for erfc
    let mut f = 0.0;
    for n in (1..60).rev() {
        f = n as f64 / 2.0 / (x + f);
    }
    s * (1.0 - (-x * x).exp() / PI.sqrt() / (x + f))
}
