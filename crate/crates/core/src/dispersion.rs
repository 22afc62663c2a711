//! Refractive index of KTP versus wavelength and temperature.
//!
//! Each crystal axis carries a two-pole Sellmeier term set
//! `n² = A + Σ Bᵢ/(λ² − Cᵢ)` (λ in μm) and a thermo-optic polynomial in
//! `1/λ`, `dn/dT = Σ aⱼ/λʲ`, applied linearly about the model's reference
//! temperature.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Principal dielectric axis of a biaxial crystal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::UnknownAxis(other.to_string())),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        };
        f.write_str(s)
    }
}

/// Coefficients for a single axis, in the override-file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisCoefficients {
    /// `[A, B₁, C₁, B₂, C₂, ...]`.
    pub sellmeier: Vec<f64>,
    /// `[a₀, a₁, a₂, ...]` such that `dn/dT = Σ aⱼ λ⁻ʲ` per °C.
    pub thermo: Vec<f64>,
    /// Published validity window, μm.
    pub valid_um: [f64; 2],
    /// Reference temperature of the Sellmeier fit, °C.
    pub t_ref_c: f64,
}

impl AxisCoefficients {
    fn validate(&self, axis: &str) -> Result<()> {
        if self.sellmeier.is_empty() || self.sellmeier.len().is_multiple_of(2) {
            return Err(Error::config(
                format!("{axis}.sellmeier"),
                "expected [A, B1, C1, ...] with an odd number of terms",
            ));
        }
        if self.sellmeier.iter().chain(&self.thermo).any(|v| !v.is_finite()) || !self.t_ref_c.is_finite() {
            return Err(Error::config(axis.to_string(), "coefficients must be finite"));
        }
        if !(self.valid_um[0] > 0.0 && self.valid_um[1] > self.valid_um[0]) {
            return Err(Error::config(format!("{axis}.valid_um"), "expected 0 < lo < hi"));
        }
        Ok(())
    }

    fn sellmeier_index(&self, lambda_um: f64) -> f64 {
        let l2 = lambda_um * lambda_um;
        let mut n2 = self.sellmeier[0];
        for pair in self.sellmeier[1..].chunks_exact(2) {
            n2 += pair[0] / (l2 - pair[1]);
        }
        n2.sqrt()
    }

    fn dn_dt(&self, lambda_um: f64) -> f64 {
        let inv = 1.0 / lambda_um;
        // Horner in 1/λ.
        self.thermo.iter().rev().fold(0.0, |acc, &a| acc * inv + a)
    }
}

/// Result of an index evaluation together with the extrapolation flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexEvaluation {
    pub index: f64,
    /// Set when the wavelength lies outside the model's validity window.
    pub out_of_window: bool,
}

/// A named, versioned dispersion model for one crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionModel {
    pub name: String,
    pub axes: BTreeMap<Axis, AxisCoefficients>,
}

/// Identifier of the built-in KTP table.
pub const KTP_KATO_2002: &str = "ktp-kato-takaoka-2002/v1";

impl DispersionModel {
    /// Built-in KTP coefficients (Kato & Takaoka, 2002).
    pub fn ktp() -> Self {
        let window = [0.4321, 3.5524];
        let mut axes = BTreeMap::new();
        axes.insert(
            Axis::X,
            AxisCoefficients {
                sellmeier: vec![3.29100, 0.04140, 0.03978, 9.35522, 31.45571],
                thermo: vec![0.1627e-5, 0.8416e-5, -0.5353e-5, 0.1717e-5],
                valid_um: window,
                t_ref_c: 20.0,
            },
        );
        axes.insert(
            Axis::Y,
            AxisCoefficients {
                sellmeier: vec![3.45018, 0.04341, 0.04597, 16.98825, 39.43799],
                thermo: vec![0.5425e-5, 0.5154e-5, -0.4063e-5, 0.1997e-5],
                valid_um: window,
                t_ref_c: 20.0,
            },
        );
        axes.insert(
            Axis::Z,
            AxisCoefficients {
                sellmeier: vec![4.59423, 0.06206, 0.04763, 110.80672, 86.12171],
                thermo: vec![-0.1897e-5, 3.6677e-5, -2.9220e-5, 0.9221e-5],
                valid_um: window,
                t_ref_c: 20.0,
            },
        );
        DispersionModel {
            name: KTP_KATO_2002.to_string(),
            axes,
        }
    }

    /// Start from the built-in table and replace the axes present in the
    /// override file.
    pub fn with_override_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::with_override_json(&text, &path.as_ref().display().to_string())
    }

    /// Same as [`Self::with_override_file`] but from an in-memory JSON string.
    pub fn with_override_json(json: &str, label: &str) -> Result<Self> {
        let raw: BTreeMap<String, AxisCoefficients> = serde_json::from_str(json)?;
        let mut model = Self::ktp();
        for (key, coeffs) in raw {
            let axis: Axis = key.parse()?;
            coeffs.validate(&key)?;
            model.axes.insert(axis, coeffs);
        }
        model.name = format!("{}+override({label})", model.name);
        Ok(model)
    }

    fn coefficients(&self, axis: Axis) -> Result<&AxisCoefficients> {
        self.axes.get(&axis).ok_or_else(|| Error::UnknownAxis(axis.to_string()))
    }

    /// Index along `axis` at `wavelength_um` and `temperature_c`.
    pub fn refractive_index(&self, axis: Axis, wavelength_um: f64, temperature_c: f64) -> Result<IndexEvaluation> {
        ensure_finite("wavelength", wavelength_um)?;
        ensure_finite("temperature", temperature_c)?;
        if wavelength_um <= 0.0 {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {wavelength_um} μm"
            )));
        }
        let c = self.coefficients(axis)?;
        let index = c.sellmeier_index(wavelength_um) + c.dn_dt(wavelength_um) * (temperature_c - c.t_ref_c);
        if !index.is_finite() {
            return Err(Error::Domain(format!(
                "index undefined at {wavelength_um} μm (Sellmeier pole)"
            )));
        }
        let out_of_window = wavelength_um < c.valid_um[0] || wavelength_um > c.valid_um[1];
        Ok(IndexEvaluation { index, out_of_window })
    }

    /// Unchecked z-axis index for inner loops; callers validate inputs once.
    #[inline]
    pub(crate) fn nz(&self, wavelength_um: f64, temperature_c: f64) -> f64 {
        let c = &self.axes[&Axis::Z];
        c.sellmeier_index(wavelength_um) + c.dn_dt(wavelength_um) * (temperature_c - c.t_ref_c)
    }

    pub(crate) fn require_axis(&self, axis: Axis) -> Result<()> {
        self.coefficients(axis).map(|_| ())
    }
}

impl Default for DispersionModel {
    fn default() -> Self {
        Self::ktp()
    }
}
