//! Scalar diffraction on square complex grids: annulus sources, thin axicon
//! phase, single-FFT lens transform and angular-spectrum propagation.
//!
//! Grids are row-major with the optical axis at pixel `(n/2, n/2)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::par;

/// Square complex amplitude grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    n: usize,
    pitch: f64,
    wavelength: f64,
    data: Vec<Complex64>,
}

/// Square real intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    pub n: usize,
    pub pitch: f64,
    pub data: Vec<f64>,
}

/// Grid sampling of the input plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub extent_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: 2048,
            extent_m: 0.020,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 8 || !self.n.is_power_of_two() {
            return Err(Error::config("grid.n", "must be a power of two >= 8"));
        }
        if !(self.extent_m > 0.0 && self.extent_m.is_finite()) {
            return Err(Error::config("grid.extent_m", "must be > 0"));
        }
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        self.extent_m / self.n as f64
    }
}

/// Thin conical phase element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxiconSpec {
    pub apex_angle_deg: f64,
    /// Refractive index at the field wavelength.
    pub index: f64,
}

impl Default for AxiconSpec {
    fn default() -> Self {
        AxiconSpec {
            apex_angle_deg: 178.4,
            index: 1.4533,
        }
    }
}

impl AxiconSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.apex_angle_deg > 90.0 && self.apex_angle_deg <= 180.0) {
            return Err(Error::config("layout.axicon.apex_angle_deg", "must lie in (90, 180]"));
        }
        if !(self.index > 1.0 && self.index.is_finite()) {
            return Err(Error::config("layout.axicon.index", "must be > 1"));
        }
        Ok(())
    }

    /// Base angle β, rad.
    pub fn base_angle(&self) -> f64 {
        ((180.0 - self.apex_angle_deg) / 2.0).to_radians()
    }

    /// Ray deflection (n−1)·tanβ, rad (paraxial).
    pub fn deflection(&self) -> f64 {
        (self.index - 1.0) * self.base_angle().tan()
    }
}

impl ScalarField {
    pub fn new(n: usize, pitch: f64, wavelength: f64, data: Vec<Complex64>) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Grid(format!("grid size {n} is not a power of two")));
        }
        if data.len() != n * n {
            return Err(Error::Grid(format!("expected {} samples, got {}", n * n, data.len())));
        }
        if !(pitch > 0.0 && pitch.is_finite()) || !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Grid("pitch and wavelength must be > 0".into()));
        }
        Ok(ScalarField {
            n,
            pitch,
            wavelength,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn pitch(&self) -> f64 {
        self.pitch
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn samples(&self) -> &[Complex64] {
        &self.data
    }

    /// Build a field from a function of physical coordinates `(x, y)`.
    pub fn from_fn<F>(n: usize, pitch: f64, wavelength: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Complex64 + Sync + Send,
    {
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        let c = (n / 2) as f64;
        par::for_each_row(&mut data, n, |j, row| {
            let y = (j as f64 - c) * pitch;
            for (i, v) in row.iter_mut().enumerate() {
                *v = f((i as f64 - c) * pitch, y);
            }
        });
        ScalarField::new(n, pitch, wavelength, data)
    }

    /// Σ|u|²·pitch².
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }

    pub fn normalize_power(&mut self) -> Result<()> {
        let p = self.power();
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Numerical("field power is zero or not finite".into()));
        }
        let s = 1.0 / p.sqrt();
        self.data.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn intensity(&self) -> IntensityMap {
        IntensityMap {
            n: self.n,
            pitch: self.pitch,
            data: self.data.iter().map(|v| v.norm_sqr()).collect(),
        }
    }

    /// Multiply pointwise by `f(x, y)`.
    pub fn modulate<F>(&self, f: F) -> ScalarField
    where
        F: Fn(f64, f64) -> Complex64 + Sync + Send,
    {
        let mut out = self.clone();
        let n = self.n;
        let c = (n / 2) as f64;
        let pitch = self.pitch;
        par::for_each_row(&mut out.data, n, |j, row| {
            let y = (j as f64 - c) * pitch;
            for (i, v) in row.iter_mut().enumerate() {
                *v *= f((i as f64 - c) * pitch, y);
            }
        });
        out
    }
}

/// Power-normalized Gaussian annulus `exp(−(r−R)²/(2σ²))` with flat phase.
pub fn build_annulus(grid: GridSpec, radius: f64, radial_sigma: f64, wavelength: f64) -> Result<ScalarField> {
    grid.validate().map_err(|e| Error::Grid(e.to_string()))?;
    if !(radius >= 0.0) || !(radial_sigma > 0.0) {
        return Err(Error::invalid("annulus needs radius >= 0 and sigma > 0"));
    }
    if radius + 3.0 * radial_sigma >= grid.extent_m / 2.0 {
        return Err(Error::Grid(format!(
            "annulus (R = {radius} m, σ = {radial_sigma} m) clipped by a {} m grid",
            grid.extent_m
        )));
    }
    let inv = 1.0 / (2.0 * radial_sigma * radial_sigma);
    let mut f = ScalarField::from_fn(grid.n, grid.pitch(), wavelength, |x, y| {
        let d = x.hypot(y) - radius;
        Complex64::new((-d * d * inv).exp(), 0.0)
    })?;
    f.normalize_power()?;
    Ok(f)
}

/// Multiply by the axicon phase `exp(−i·k·(n−1)·tanβ·r)`.
pub fn apply_axicon(field: &ScalarField, axicon: &AxiconSpec) -> Result<ScalarField> {
    axicon.validate()?;
    let k = 2.0 * PI / field.wavelength;
    let slope = k * axicon.deflection();
    if slope * field.pitch >= PI {
        return Err(Error::Grid(format!(
            "axicon phase aliases: {:.3} rad per pixel",
            slope * field.pitch
        )));
    }
    if slope == 0.0 {
        return Ok(field.clone());
    }
    Ok(field.modulate(|x, y| Complex64::from_polar(1.0, -slope * x.hypot(y))))
}

struct Fft2 {
    n: usize,
    plan: std::sync::Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize, direction: FftDirection) -> Self {
        let plan = FftPlanner::new().plan_fft(n, direction);
        Fft2 { n, plan }
    }

    fn rows(&self, data: &mut [Complex64]) {
        let plan = &self.plan;
        let scratch_len = plan.get_inplace_scratch_len();
        par::for_each_row(data, self.n, |_, row| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
            plan.process_with_scratch(row, &mut scratch);
        });
    }

    /// Unnormalized in-place 2D transform.
    fn process(&self, data: &mut [Complex64]) {
        self.rows(data);
        transpose(data, self.n);
        self.rows(data);
        transpose(data, self.n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in (j + 1)..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

/// Swap quadrants so that pixel (n/2, n/2) moves to (0, 0). For even `n` this
/// is its own inverse.
fn fftshift(data: &mut [Complex64], n: usize) {
    let h = n / 2;
    for j in 0..h {
        for i in 0..n {
            let i2 = (i + h) % n;
            data.swap(j * n + i, (j + h) * n + i2);
        }
    }
}

/// Field in the back focal plane of a thin lens, input at the front focal
/// plane. Output pitch is `λ·f/(N·pitch)`; power is conserved exactly.
pub fn lens_fourier_plane(field: &ScalarField, focal_length: f64) -> Result<ScalarField> {
    if !(focal_length > 0.0 && focal_length.is_finite()) {
        return Err(Error::invalid("focal length must be > 0"));
    }
    let n = field.n;
    let out_pitch = field.wavelength * focal_length / (n as f64 * field.pitch);
    let mut data = field.data.clone();
    fftshift(&mut data, n);
    Fft2::new(n, FftDirection::Forward).process(&mut data);
    fftshift(&mut data, n);
    let scale = field.pitch / (out_pitch * n as f64);
    data.iter_mut().for_each(|v| *v *= scale);
    ScalarField::new(n, out_pitch, field.wavelength, data)
}

/// Free-space propagation by the exact scalar transfer function; evanescent
/// components are dropped.
pub fn angular_spectrum_propagate(field: &ScalarField, distance: f64) -> Result<ScalarField> {
    ensure_finite("propagation distance", distance)?;
    if distance == 0.0 {
        return Ok(field.clone());
    }
    let n = field.n;
    let k = 2.0 * PI / field.wavelength;
    let dk = 2.0 * PI / (n as f64 * field.pitch);
    let freq = |i: usize| {
        let m = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
        m * dk
    };
    let mut data = field.data.clone();
    Fft2::new(n, FftDirection::Forward).process(&mut data);
    let norm = 1.0 / (n * n) as f64;
    par::for_each_row(&mut data, n, |j, row| {
        let ky = freq(j);
        for (i, v) in row.iter_mut().enumerate() {
            let kx = freq(i);
            let kz2 = k * k - kx * kx - ky * ky;
            *v = if kz2 > 0.0 {
                *v * Complex64::from_polar(norm, distance * kz2.sqrt())
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    });
    Fft2::new(n, FftDirection::Inverse).process(&mut data);
    ScalarField::new(n, field.pitch, field.wavelength, data)
}

impl IntensityMap {
    pub fn total(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.pitch * self.pitch
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Write as a 16-bit binary PGM scaled to the map maximum. `header` lines
    /// become comments; the pitch is always recorded.
    pub fn write_pgm(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.encode_pgm(&mut w, header)?;
        w.flush()?;
        Ok(())
    }

    pub fn encode_pgm<W: Write>(&self, w: &mut W, header: &[String]) -> Result<()> {
        writeln!(w, "P5")?;
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# pitch_um {:.6}", self.pitch * 1e6)?;
        writeln!(w, "{} {}", self.n, self.n)?;
        writeln!(w, "65535")?;
        let peak = self.max();
        let scale = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
        let mut buf = Vec::with_capacity(2 * self.data.len());
        for &v in &self.data {
            let q = (v.max(0.0) * scale).round().min(65535.0) as u16;
            buf.extend_from_slice(&q.to_be_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Read back a 16-bit PGM written by [`IntensityMap::write_pgm`]. Pixel values
/// are returned as raw counts; the pitch comes from the `pitch_um` comment.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<IntensityMap> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    let mut pitch = None;
    while tokens.len() < 4 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::invalid("truncated PGM header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| Error::invalid("PGM header not UTF-8"))?;
        pos += end + 1;
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix("pitch_um") {
                pitch = v.trim().parse::<f64>().ok().map(|p| p * 1e-6);
            }
            continue;
        }
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(Error::invalid("only 16-bit P5 PGM is supported"));
    }
    let n: usize = tokens[1].parse().map_err(|_| Error::invalid("bad PGM width"))?;
    let m: usize = tokens[2].parse().map_err(|_| Error::invalid("bad PGM height"))?;
    if n != m {
        return Err(Error::invalid("PGM image is not square"));
    }
    let raw = &bytes[pos..];
    if raw.len() != 2 * n * n {
        return Err(Error::invalid("PGM payload length mismatch"));
    }
    let data = raw
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
        .collect();
    Ok(IntensityMap {
        n,
        pitch: pitch.ok_or_else(|| Error::invalid("PGM lacks a pitch_um comment"))?,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 810e-9;

    fn gaussian(n: usize, extent: f64, w0: f64) -> ScalarField {
        let mut f = ScalarField::from_fn(n, extent / n as f64, LAMBDA, |x, y| {
            Complex64::new((-(x * x + y * y) / (w0 * w0)).exp(), 0.0)
        })
        .unwrap();
        f.normalize_power().unwrap();
        f
    }

    /// 1/e² intensity radius from the second moment of a centered map.
    fn second_moment_waist(m: &IntensityMap) -> f64 {
        let c = (m.n / 2) as f64;
        let (mut s, mut s2) = (0.0, 0.0);
        for j in 0..m.n {
            for i in 0..m.n {
                let v = m.data[j * m.n + i];
                let x = (i as f64 - c) * m.pitch;
                let y = (j as f64 - c) * m.pitch;
                s += v;
                s2 += v * (x * x + y * y);
            }
        }
        // ⟨r²⟩ = w²/2 for exp(−2r²/w²)
        (2.0 * s2 / s).sqrt()
    }

    #[test]
    fn annulus_power_and_clipping() {
        let g = GridSpec { n: 256, extent_m: 0.02 };
        let f = build_annulus(g, 3e-3, 2e-4, LAMBDA).unwrap();
        assert!((f.power() - 1.0).abs() < 1e-12);
        assert!(build_annulus(g, 9.5e-3, 2e-4, LAMBDA).is_err());
        let lobe = build_annulus(g, 0.0, 1e-3, LAMBDA).unwrap();
        let c = 128 * 256 + 128;
        let peak = lobe.intensity().max();
        assert_eq!(lobe.intensity().data[c], peak);
    }

    #[test]
    fn axicon_phase_values() {
        let ax = AxiconSpec::default();
        assert!((ax.deflection() - 6.330e-3).abs() < 2e-6, "{}", ax.deflection());
        let f = ScalarField::from_fn(256, 10e-6, LAMBDA, |_, _| Complex64::new(1.0, 0.0)).unwrap();
        let g = apply_axicon(&f, &ax).unwrap();
        // pixel 100 to the right of center: r = 1 mm
        let v1 = g.samples()[128 * 256 + 228];
        let expected = -2.0 * PI / LAMBDA * ax.deflection() * 1e-3;
        assert!((expected + 49.1).abs() < 0.1, "{expected}");
        let wrapped = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;
        assert!(wrapped(v1.arg() - expected).abs() < 1e-9);
        let flat = AxiconSpec {
            apex_angle_deg: 180.0,
            ..ax
        };
        assert_eq!(apply_axicon(&f, &flat).unwrap(), f);
        assert!((g.power() - f.power()).abs() / f.power() < 1e-12);
    }

    #[test]
    fn axicon_aliasing_error() {
        let f = ScalarField::from_fn(64, 100e-6, LAMBDA, |_, _| Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(apply_axicon(&f, &AxiconSpec::default()), Err(Error::Grid(_))));
    }

    #[test]
    fn lens_parseval_and_focal_waist() {
        let w0 = 1e-3;
        let f_in = gaussian(512, 0.02, w0);
        let out = lens_fourier_plane(&f_in, 0.1).unwrap();
        assert!((out.power() / f_in.power() - 1.0).abs() < 1e-9);
        let expected = LAMBDA * 0.1 / (PI * w0);
        let got = second_moment_waist(&out.intensity());
        assert!((got / expected - 1.0).abs() < 0.02, "{got} vs {expected}");
        assert!((out.pitch() - LAMBDA * 0.1 / 0.02).abs() < 1e-15);
    }

    #[test]
    fn plane_wave_focuses_to_center() {
        let f = ScalarField::from_fn(64, 1e-4, LAMBDA, |_, _| Complex64::new(1.0, 0.0)).unwrap();
        let out = lens_fourier_plane(&f, 0.1).unwrap().intensity();
        let total: f64 = out.data.iter().sum();
        assert!((out.data[32 * 64 + 32] / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn propagation_identity_roundtrip_and_rayleigh() {
        let w0 = 0.5e-3;
        let f = gaussian(512, 0.016, w0);
        assert_eq!(angular_spectrum_propagate(&f, 0.0).unwrap(), f);
        let zr = PI * w0 * w0 / LAMBDA;
        assert!((zr - 0.970).abs() < 1e-3);
        let fwd = angular_spectrum_propagate(&f, zr).unwrap();
        assert!((fwd.power() / f.power() - 1.0).abs() < 1e-9);
        let w = second_moment_waist(&fwd.intensity());
        assert!((w / (w0 * 2f64.sqrt()) - 1.0).abs() < 0.01, "{w}");
        let back = angular_spectrum_propagate(&fwd, -zr).unwrap();
        let err: f64 = back
            .samples()
            .iter()
            .zip(f.samples())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm: f64 = f.samples().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-8, "{}", err / norm);
    }

    #[test]
    fn focal_ring_is_rotationally_symmetric() {
        let g = GridSpec { n: 512, extent_m: 0.01 };
        let a = build_annulus(g, 2e-3, 2e-4, LAMBDA).unwrap();
        let out = lens_fourier_plane(&apply_axicon(&a, &AxiconSpec::default()).unwrap(), 0.1)
            .unwrap()
            .intensity();
        // sample the focal ring radius on the four axes and the diagonals
        let rho = 0.1 * AxiconSpec::default().deflection();
        let c = 256.0;
        let vals: Vec<f64> = (0..8)
            .map(|k| {
                let phi = k as f64 * PI / 4.0;
                let (x, y) = (c + rho * phi.cos() / out.pitch, c + rho * phi.sin() / out.pitch);
                bilinear(&out, x, y)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 8.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!(sd / mean < 1e-3, "{}", sd / mean);
    }

    fn bilinear(m: &IntensityMap, x: f64, y: f64) -> f64 {
        let (i, j) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let at = |i: usize, j: usize| m.data[j * m.n + i];
        at(i, j) * (1.0 - fx) * (1.0 - fy)
            + at(i + 1, j) * fx * (1.0 - fy)
            + at(i, j + 1) * (1.0 - fx) * fy
            + at(i + 1, j + 1) * fx * fy
    }

    #[test]
    fn pgm_roundtrip() {
        let g = GridSpec { n: 64, extent_m: 0.01 };
        let m = build_annulus(g, 2e-3, 3e-4, LAMBDA).unwrap().intensity();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ring.pgm");
        m.write_pgm(&p, &["test".into()]).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back.n, 64);
        assert!((back.pitch - m.pitch).abs() < 1e-12);
        assert_eq!(back.max(), 65535.0);
    }
}
