//! Two-qubit polarization state of the Sagnac source: projections, fringe
//! scans, visibility, CHSH, linear tomography and fidelity.
//!
//! Basis order is `HH, HV, VH, VV`. Analyzer angles are polarizer angles
//! (period 180°), measured from H.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Density = Matrix4<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// A validated density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Density,
}

impl TwoQubitState {
    /// Wraps `rho` after checking Hermiticity, unit trace and PSD.
    pub fn new(rho: Density) -> Result<Self> {
        let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-12 {
            return Err(Error::invalid(format!("density matrix not Hermitian ({herm:.2e})")));
        }
        let tr = rho.trace();
        if (tr - C1).norm() > 1e-12 {
            return Err(Error::invalid(format!("density matrix trace {tr} != 1")));
        }
        let min = eigenvalues(&rho).iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-9 {
            return Err(Error::invalid(format!("density matrix not PSD (eigenvalue {min:.2e})")));
        }
        Ok(TwoQubitState { rho })
    }

    pub fn pure(psi: &Vector4<Complex64>) -> Result<Self> {
        let n = psi.norm();
        if !(n > 0.0) {
            return Err(Error::invalid("zero state vector"));
        }
        let v = psi.unscale(n);
        TwoQubitState::new(hermitize(&(v * v.adjoint())))
    }

    pub fn rho(&self) -> &Density {
        &self.rho
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// Writes real then imaginary parts as `part,row,HH,HV,VH,VV`.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "part,row,HH,HV,VH,VV")?;
        for (part, f) in [
            ("re", (|z: Complex64| z.re) as fn(Complex64) -> f64),
            ("im", |z: Complex64| z.im),
        ] {
            for (i, label) in BASIS.iter().enumerate() {
                let cells: Vec<String> = (0..4).map(|j| format!("{:.12e}", f(self.rho[(i, j)]))).collect();
                writeln!(w, "{part},{label},{}", cells.join(","))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const BASIS: [&str; 4] = ["HH", "HV", "VH", "VV"];

fn hermitize(m: &Density) -> Density {
    (m + m.adjoint()).unscale(2.0)
}

fn eigenvalues(m: &Density) -> Vec<f64> {
    nalgebra::SymmetricEigen::new(hermitize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

/// `(|HH⟩ + e^{iφ}|VV⟩)/√2`.
pub fn bell_state(phase: f64) -> Vector4<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Vector4::new(Complex64::new(s, 0.0), C0, C0, Complex64::from_polar(s, phase))
}

pub fn phi_minus() -> Vector4<Complex64> {
    bell_state(std::f64::consts::PI)
}

pub fn phi_plus() -> Vector4<Complex64> {
    bell_state(0.0)
}

/// Mixing model for the imperfect source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// `p·|ψ⟩⟨ψ| + (1−p)·I/4`.
    #[default]
    Werner,
    /// HH/VV coherence scaled by `p`; populations untouched.
    Dephasing,
}

/// Source state with the Werner mixture.
pub fn sagnac_state(phase: f64, werner_p: f64) -> Result<TwoQubitState> {
    sagnac_state_with(phase, werner_p, NoiseModel::Werner)
}

pub fn sagnac_state_with(phase: f64, p: f64, noise: NoiseModel) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("mixing parameter must lie in [0, 1]"));
    }
    let psi = bell_state(phase);
    let pure = psi * psi.adjoint();
    let rho = match noise {
        NoiseModel::Werner => pure.scale(p) + Density::identity().scale((1.0 - p) / 4.0),
        NoiseModel::Dephasing => {
            let mut m = pure;
            m[(0, 3)] *= p;
            m[(3, 0)] *= p;
            m
        }
    };
    TwoQubitState::new(hermitize(&rho))
}

/// Polarizer setting: an angle from H (degrees) or a named state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyzerSetting {
    Angle(f64),
    H,
    V,
    D,
    A,
    R,
    L,
}

impl AnalyzerSetting {
    /// Jones vector of the transmitted state.
    pub fn jones(&self) -> Vector2<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lin = |deg: f64| {
            let t = deg.to_radians();
            Vector2::new(Complex64::new(t.cos(), 0.0), Complex64::new(t.sin(), 0.0))
        };
        match *self {
            AnalyzerSetting::Angle(deg) => lin(deg),
            AnalyzerSetting::H => lin(0.0),
            AnalyzerSetting::V => lin(90.0),
            AnalyzerSetting::D => lin(45.0),
            AnalyzerSetting::A => lin(-45.0),
            AnalyzerSetting::R => Vector2::new(Complex64::new(s, 0.0), Complex64::new(0.0, -s)),
            AnalyzerSetting::L => Vector2::new(Complex64::new(s, 0.0), Complex64::new(0.0, s)),
        }
    }

    pub fn projector(&self) -> Matrix2<Complex64> {
        let v = self.jones();
        v * v.adjoint()
    }

    /// The orthogonal setting.
    pub fn orthogonal(&self) -> AnalyzerSetting {
        match *self {
            AnalyzerSetting::Angle(deg) => AnalyzerSetting::Angle(deg + 90.0),
            AnalyzerSetting::H => AnalyzerSetting::V,
            AnalyzerSetting::V => AnalyzerSetting::H,
            AnalyzerSetting::D => AnalyzerSetting::A,
            AnalyzerSetting::A => AnalyzerSetting::D,
            AnalyzerSetting::R => AnalyzerSetting::L,
            AnalyzerSetting::L => AnalyzerSetting::R,
        }
    }

    /// Same physical projector (linear angles compared modulo 180°).
    pub fn same_as(&self, other: &AnalyzerSetting) -> bool {
        let (p, q) = (self.projector(), other.projector());
        (p - q).iter().all(|z| z.norm() < 1e-9)
    }
}

impl fmt::Display for AnalyzerSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyzerSetting::Angle(d) => write!(f, "{d}"),
            AnalyzerSetting::H => f.write_str("H"),
            AnalyzerSetting::V => f.write_str("V"),
            AnalyzerSetting::D => f.write_str("D"),
            AnalyzerSetting::A => f.write_str("A"),
            AnalyzerSetting::R => f.write_str("R"),
            AnalyzerSetting::L => f.write_str("L"),
        }
    }
}

impl FromStr for AnalyzerSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "H" => AnalyzerSetting::H,
            "V" => AnalyzerSetting::V,
            "D" => AnalyzerSetting::D,
            "A" => AnalyzerSetting::A,
            "R" => AnalyzerSetting::R,
            "L" => AnalyzerSetting::L,
            other => {
                let deg: f64 = other
                    .parse()
                    .map_err(|_| Error::Format(format!("unknown analyzer setting `{other}`")))?;
                if !deg.is_finite() {
                    return Err(Error::Format(format!("non-finite analyzer angle `{other}`")));
                }
                AnalyzerSetting::Angle(deg)
            }
        })
    }
}

impl Serialize for AnalyzerSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AnalyzerSetting::Angle(d) => s.serialize_f64(*d),
            named => s.serialize_str(&named.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for AnalyzerSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AnalyzerSetting::Angle(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Counts at one pair of analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceRecord {
    pub setting_a: AnalyzerSetting,
    pub setting_b: AnalyzerSetting,
    pub counts: u64,
    pub duration_s: f64,
}

impl CoincidenceRecord {
    pub fn rate(&self) -> f64 {
        self.counts as f64 / self.duration_s
    }
}

fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Density {
    Density::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

/// Born-rule coincidence probability `Tr[ρ (Π_a ⊗ Π_b)]`.
pub fn projection_probability(state: &TwoQubitState, a: &AnalyzerSetting, b: &AnalyzerSetting) -> f64 {
    let op = kron(&a.projector(), &b.projector());
    (state.rho * op).trace().re.clamp(0.0, 1.0)
}

/// Expected or sampled counts at a mean value.
fn draw(mean: f64, rng: Option<&mut ChaCha8Rng>) -> f64 {
    match rng {
        Some(r) if mean > 0.0 => Poisson::new(mean).map(|d| d.sample(r)).unwrap_or(mean),
        Some(_) => 0.0,
        None => mean,
    }
}

/// Source brightness and integration settings for synthetic counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exposure {
    /// Pair flux per pump power, Hz/mW.
    pub flux_hz_per_mw: f64,
    pub power_mw: f64,
    pub dwell_s: f64,
}

impl Exposure {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.flux_hz_per_mw) || !pos(self.power_mw) || !pos(self.dwell_s) {
            return Err(Error::invalid("flux, power and dwell must be > 0"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.flux_hz_per_mw * self.power_mw * self.dwell_s
    }
}

/// Polarization-correlation fringe: `(angle °, counts)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fringe {
    pub samples: Vec<(f64, f64)>,
}

impl Fringe {
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "angle_deg,counts")?;
        for (t, c) in &self.samples {
            writeln!(w, "{t:.4},{c}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Arm A fixed, arm B scanned over `angles` (degrees). The ×2 makes the
/// fringe maximum of a pure state equal the flux. Poisson counts when
/// `seed` is given.
pub fn fringe_scan(
    state: &TwoQubitState,
    fixed: AnalyzerSetting,
    angles: &[f64],
    exposure: &Exposure,
    seed: Option<u64>,
) -> Result<Fringe> {
    exposure.validate()?;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let samples = angles
        .iter()
        .map(|&deg| {
            let p = projection_probability(state, &fixed, &AnalyzerSetting::Angle(deg));
            (deg, draw(2.0 * p * exposure.total(), rng.as_mut()))
        })
        .collect();
    Ok(Fringe { samples })
}

/// Least-squares fit of `A·(1 + V·cos 2(θ − θ0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub amplitude: f64,
    pub visibility: f64,
    pub phase_deg: f64,
}

pub fn fit_fringe(fringe: &Fringe) -> Result<FringeFit> {
    let s = &fringe.samples;
    if s.len() < 3 {
        return Err(Error::invalid("fringe needs >= 3 samples"));
    }
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    if hi - lo < 180.0 - 1e-9 {
        return Err(Error::invalid("fringe must span at least one 180° period"));
    }
    let m = DMatrix::from_fn(s.len(), 3, |i, j| {
        let t = 2.0 * s[i].0.to_radians();
        [1.0, t.cos(), t.sin()][j]
    });
    let y = DVector::from_iterator(s.len(), s.iter().map(|p| p.1));
    let coef = m
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(format!("fringe fit failed: {e}")))?;
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Numerical("fringe fit has non-positive offset".into()));
    }
    let amp = b.hypot(c);
    Ok(FringeFit {
        amplitude: a,
        visibility: (amp / a).min(1.0),
        phase_deg: 0.5 * c.atan2(b).to_degrees(),
    })
}

/// Fitted visibility.
pub fn visibility(fringe: &Fringe) -> Result<f64> {
    fit_fringe(fringe).map(|f| f.visibility)
}

/// `(max − min)/(max + min)` of the samples.
pub fn raw_visibility(fringe: &Fringe) -> Result<f64> {
    let (lo, hi) = fringe
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    if !(hi + lo > 0.0) {
        return Err(Error::invalid("fringe has no counts"));
    }
    Ok((hi - lo) / (hi + lo))
}

/// CHSH analyzer angles (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for ChshSettings {
    fn default() -> Self {
        ChshSettings {
            a: 0.0,
            a_prime: -45.0,
            b: 22.5,
            b_prime: 67.5,
        }
    }
}

impl ChshSettings {
    fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ]
    }
}

const SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

fn combos(ta: f64, tb: f64) -> [(AnalyzerSetting, AnalyzerSetting, f64); 4] {
    let (a, b) = (AnalyzerSetting::Angle(ta), AnalyzerSetting::Angle(tb));
    [
        (a, b, 1.0),
        (a.orthogonal(), b.orthogonal(), 1.0),
        (a, b.orthogonal(), -1.0),
        (a.orthogonal(), b, -1.0),
    ]
}

/// Exact `S = E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)`.
pub fn chsh_exact(state: &TwoQubitState, settings: &ChshSettings) -> f64 {
    settings
        .pairs()
        .iter()
        .zip(SIGNS)
        .map(|(&(ta, tb), sign)| {
            let e: f64 = combos(ta, tb)
                .iter()
                .map(|(a, b, s)| s * projection_probability(state, a, b))
                .sum();
            sign * e
        })
        .sum()
}

/// The 16 records a CHSH run measures (4 per setting pair).
pub fn chsh_counts(
    state: &TwoQubitState,
    settings: &ChshSettings,
    exposure: &Exposure,
    seed: Option<u64>,
) -> Result<Vec<CoincidenceRecord>> {
    exposure.validate()?;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = Vec::with_capacity(16);
    for (ta, tb) in settings.pairs() {
        for (a, b, _) in combos(ta, tb) {
            let mean = exposure.total() * projection_probability(state, &a, &b);
            out.push(CoincidenceRecord {
                setting_a: a,
                setting_b: b,
                counts: draw(mean, rng.as_mut()).round() as u64,
                duration_s: exposure.dwell_s,
            });
        }
    }
    Ok(out)
}

/// S estimated from counts with its Monte-Carlo standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshEstimate {
    pub s: f64,
    pub sigma: f64,
}

impl ChshEstimate {
    /// Violation of the local bound in standard deviations.
    pub fn significance(&self) -> f64 {
        (self.s.abs() - 2.0) / self.sigma
    }
}

fn find_rate(records: &[CoincidenceRecord], a: &AnalyzerSetting, b: &AnalyzerSetting) -> Result<usize> {
    records
        .iter()
        .position(|r| r.setting_a.same_as(a) && r.setting_b.same_as(b))
        .ok_or_else(|| Error::invalid(format!("missing CHSH record ({a}, {b})")))
}

/// S from 16 records; σ_S from `resamples` Poisson resamplings (seeded).
pub fn chsh_from_counts(
    records: &[CoincidenceRecord],
    settings: &ChshSettings,
    resamples: usize,
    seed: u64,
) -> Result<ChshEstimate> {
    if resamples < 2 {
        return Err(Error::invalid("need at least 2 resamples"));
    }
    let mut idx = [[(0usize, 0.0f64); 4]; 4];
    for (k, (ta, tb)) in settings.pairs().into_iter().enumerate() {
        for (c, (a, b, s)) in combos(ta, tb).into_iter().enumerate() {
            idx[k][c] = (find_rate(records, &a, &b)?, s);
        }
    }
    let s_of = |rates: &dyn Fn(usize) -> f64| -> Result<f64> {
        let mut s = 0.0;
        for (k, sign) in SIGNS.iter().enumerate() {
            let (num, den) = idx[k]
                .iter()
                .fold((0.0, 0.0), |(n, d), &(i, sg)| (n + sg * rates(i), d + rates(i)));
            if !(den > 0.0) {
                return Err(Error::invalid("CHSH setting pair has no counts"));
            }
            s += sign * num / den;
        }
        Ok(s)
    };
    let s = s_of(&|i| records[i].rate())?;
    let draws = crate::par::map_indexed(resamples, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let resampled: Vec<f64> = records
            .iter()
            .map(|r| draw(r.counts as f64, Some(&mut rng)) / r.duration_s)
            .collect();
        s_of(&|i| resampled[i])
    });
    let draws: Vec<f64> = draws.into_iter().collect::<Result<_>>()?;
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    Ok(ChshEstimate { s, sigma: var.sqrt() })
}

/// Tomography settings per arm.
pub const TOMO_SETTINGS: [AnalyzerSetting; 4] = [
    AnalyzerSetting::H,
    AnalyzerSetting::V,
    AnalyzerSetting::D,
    AnalyzerSetting::R,
];

/// Counts for the 16 projections `{H,V,D,R}⊗{H,V,D,R}`.
pub fn tomography_counts(
    state: &TwoQubitState,
    exposure: &Exposure,
    seed: Option<u64>,
) -> Result<Vec<CoincidenceRecord>> {
    exposure.validate()?;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = Vec::with_capacity(16);
    for a in TOMO_SETTINGS {
        for b in TOMO_SETTINGS {
            let mean = exposure.total() * projection_probability(state, &a, &b);
            out.push(CoincidenceRecord {
                setting_a: a,
                setting_b: b,
                counts: match rng.as_mut() {
                    Some(r) => draw(mean, Some(r)).round() as u64,
                    None => mean.round() as u64,
                },
                duration_s: exposure.dwell_s,
            });
        }
    }
    Ok(out)
}

/// Expected (non-integer) tomography rates, for exact reconstruction checks.
pub fn tomography_probabilities(state: &TwoQubitState) -> Vec<(AnalyzerSetting, AnalyzerSetting, f64)> {
    TOMO_SETTINGS
        .iter()
        .flat_map(|a| {
            TOMO_SETTINGS
                .iter()
                .map(move |b| (*a, *b, projection_probability(state, a, b)))
        })
        .collect()
}

fn pauli(k: usize) -> Matrix2<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    match k {
        0 => Matrix2::new(C1, C0, C0, C1),
        1 => Matrix2::new(C0, C1, C1, C0),
        2 => Matrix2::new(C0, -i, i, C0),
        _ => Matrix2::new(C1, C0, C0, -C1),
    }
}

/// Solves for ρ from (setting pair, relative rate) data; rates are
/// normalized by the H/V-basis total. No positivity constraint.
pub fn linear_inversion_raw(data: &[(AnalyzerSetting, AnalyzerSetting, f64)]) -> Result<Density> {
    if data.len() != 16 {
        return Err(Error::invalid(format!(
            "tomography needs 16 records, got {}",
            data.len()
        )));
    }
    let hv = [AnalyzerSetting::H, AnalyzerSetting::V];
    let mut norm = 0.0;
    for a in &hv {
        for b in &hv {
            let k = data
                .iter()
                .position(|(x, y, _)| x.same_as(a) && y.same_as(b))
                .ok_or_else(|| Error::invalid(format!("missing tomography record ({a}, {b})")))?;
            norm += data[k].2;
        }
    }
    if !(norm > 0.0) {
        return Err(Error::invalid("tomography counts are all zero in the H/V basis"));
    }
    let gammas: Vec<Density> = (0..16)
        .map(|m| kron(&pauli(m / 4), &pauli(m % 4)).unscale(4.0))
        .collect();
    let projs: Vec<Density> = data
        .iter()
        .map(|(a, b, _)| kron(&a.projector(), &b.projector()))
        .collect();
    let m = DMatrix::from_fn(16, 16, |nu, mu| (projs[nu] * gammas[mu]).trace().re);
    let p = DVector::from_iterator(16, data.iter().map(|d| d.2 / norm));
    let lu = m.lu();
    let c = lu
        .solve(&p)
        .ok_or_else(|| Error::Numerical("tomography system is singular".into()))?;
    let rho = gammas
        .iter()
        .zip(c.iter())
        .fold(Density::zeros(), |acc, (g, &cm)| acc + g.scale(cm));
    Ok(hermitize(&rho))
}

/// Clips negative eigenvalues and renormalizes the trace.
pub fn psd_project(rho: &Density) -> Result<TwoQubitState> {
    let eig = nalgebra::SymmetricEigen::new(hermitize(rho));
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("density matrix has no positive eigenvalue".into()));
    }
    let mut out = Density::zeros();
    for (k, &v) in vals.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        out += (u * u.adjoint()).scale(v / total);
    }
    TwoQubitState::new(hermitize(&out))
}

/// Linear-inversion tomography of 16 count records, PSD-projected.
pub fn linear_inversion(records: &[CoincidenceRecord]) -> Result<TwoQubitState> {
    if records.iter().any(|r| !(r.duration_s > 0.0)) {
        return Err(Error::invalid("record duration must be > 0"));
    }
    if records.iter().all(|r| r.counts == 0) {
        return Err(Error::invalid("tomography counts are all zero"));
    }
    let data: Vec<_> = records.iter().map(|r| (r.setting_a, r.setting_b, r.rate())).collect();
    psd_project(&linear_inversion_raw(&data)?)
}

/// `⟨ψ|ρ|ψ⟩` for a normalized target.
pub fn fidelity(state: &TwoQubitState, target: &Vector4<Complex64>) -> Result<f64> {
    if (target.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("fidelity target must be normalized"));
    }
    Ok((target.adjoint() * state.rho * target)[(0, 0)].re.clamp(0.0, 1.0))
}

/// `½·Σ|λ(ρ − σ)|`.
pub fn trace_distance(a: &Density, b: &Density) -> f64 {
    0.5 * eigenvalues(&(a - b)).iter().map(|v| v.abs()).sum::<f64>()
}

/// Reads `setting_a,setting_b,counts,duration_s` (header and `#` lines skipped).
pub fn read_counts_csv(path: impl AsRef<Path>) -> Result<Vec<CoincidenceRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("setting_a") {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("{}:{}: {msg}", path.display(), n + 1));
        let f: Vec<&str> = t.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let counts: u64 = f[2].parse().map_err(|_| bad("counts must be a non-negative integer"))?;
        let duration_s: f64 = f[3].parse().map_err(|_| bad("bad duration"))?;
        if !(duration_s > 0.0) {
            return Err(bad("duration must be > 0"));
        }
        out.push(CoincidenceRecord {
            setting_a: f[0].parse().map_err(|e: Error| bad(&e.to_string()))?,
            setting_b: f[1].parse().map_err(|e: Error| bad(&e.to_string()))?,
            counts,
            duration_s,
        });
    }
    Ok(out)
}

pub fn write_counts_csv(records: &[CoincidenceRecord], path: impl AsRef<Path>, header: &[String]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "setting_a,setting_b,counts,duration_s")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.setting_a, r.setting_b, r.counts, r.duration_s)?;
    }
    w.flush()?;
    Ok(())
}

/// Random mixed state `G·G†/Tr` from a complex Ginibre matrix.
pub fn random_state(rng: &mut impl rand::Rng) -> TwoQubitState {
    let normal = rand_distr::StandardNormal;
    let g = Density::from_fn(|_, _| {
        let re: f64 = normal.sample(rng);
        let im: f64 = normal.sample(rng);
        Complex64::new(re, im)
    });
    let m = g * g.adjoint();
    let tr = m.trace().re;
    TwoQubitState::new(hermitize(&m.unscale(tr))).expect("Ginibre state is physical")
}
