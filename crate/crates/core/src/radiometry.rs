//! Infrared intensity to temperature, moist adiabatic lapse rate and
//! cloud-base height.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const GRAVITY: f64 = 9.8076;
pub const LATENT_HEAT: f64 = 2_501_000.0;
pub const GAS_CONSTANT_DRY: f64 = 287.0;
pub const GAS_CONSTANT_VAPOR: f64 = 461.5;
pub const MOLAR_RATIO: f64 = 0.622;
pub const SPECIFIC_HEAT_DRY: f64 = 1003.5;

/// Intensity counts per kelvin of the radiometric camera.
pub const COUNTS_PER_KELVIN: f64 = 100.0;

pub fn intensity_to_kelvin(intensity: f64) -> f64 {
    intensity / COUNTS_PER_KELVIN
}

pub fn kelvin_to_intensity(kelvin: f64) -> f64 {
    kelvin * COUNTS_PER_KELVIN
}

pub fn kelvin_to_celsius(kelvin: f64) -> f64 {
    kelvin - 273.15
}

pub fn celsius_to_kelvin(celsius: f64) -> f64 {
    celsius + 273.15
}

/// Per-pixel temperatures in kelvin.
pub fn temperature_frame(intensities: &Array2<f64>) -> Array2<f64> {
    intensities.mapv(intensity_to_kelvin)
}

/// Surface weather sample. Temperatures in kelvin, pressure in pascal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub air_temp: f64,
    pub dew_point: f64,
    pub pressure: f64,
}

/// Leading factor of the saturation vapour pressure expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SaturationFactor {
    /// 6.1078 hPa reference pressure.
    #[default]
    Reference,
    /// The molar-ratio constant in place of the reference pressure.
    MolarRatio,
}

/// Saturation vapour pressure in pascal at a dew point in kelvin.
pub fn saturation_pressure(dew_point: f64, factor: SaturationFactor) -> f64 {
    let td = kelvin_to_celsius(dew_point);
    let lead = match factor {
        SaturationFactor::Reference => 6.1078,
        SaturationFactor::MolarRatio => MOLAR_RATIO,
    };
    lead * (7.5 * td / (273.3 + td)).exp() * 100.0
}

/// Mixing ratio of water vapour to dry air.
pub fn mixing_ratio(w: &WeatherSample, factor: SaturationFactor) -> Result<f64> {
    let e = saturation_pressure(w.dew_point, factor);
    if w.pressure <= e {
        return domain(format!("pressure {} Pa does not exceed vapour pressure {e} Pa", w.pressure));
    }
    Ok(MOLAR_RATIO * e / (w.pressure - e))
}

/// Moist adiabatic lapse rate in K/m for temperature `t` (kelvin) and
/// mixing ratio `r`.
pub fn lapse_rate(t: f64, r: f64) -> f64 {
    let rt2 = GAS_CONSTANT_DRY * t * t;
    GRAVITY * (rt2 + LATENT_HEAT * r * t) / (SPECIFIC_HEAT_DRY * rt2 + LATENT_HEAT * LATENT_HEAT * r * MOLAR_RATIO)
}

pub fn moist_adiabatic_lapse(w: &WeatherSample, factor: SaturationFactor) -> Result<f64> {
    if !(w.air_temp > 0.0) || !(w.dew_point > 0.0) || !(w.pressure > 0.0) {
        return domain("temperatures and pressure must be positive");
    }
    Ok(lapse_rate(w.air_temp, mixing_ratio(w, factor)?))
}

/// Dry adiabatic lapse rate g / c_pd.
pub fn dry_lapse_rate() -> f64 {
    GRAVITY / SPECIFIC_HEAT_DRY
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TempUnit {
    Celsius,
    Fahrenheit,
}

/// Cloud-base height in metres from a temperature/dew-point spread given
/// in the stated unit.
pub fn cloud_base_from_spread(spread: f64, unit: TempUnit) -> Result<f64> {
    if spread < 0.0 {
        return domain(format!("dew point above air temperature (spread {spread})"));
    }
    let per_kft = match unit {
        TempUnit::Celsius => 2.5,
        TempUnit::Fahrenheit => 4.4,
    };
    Ok(spread / per_kft * 304.8)
}

pub fn cloud_base_height(w: &WeatherSample) -> Result<f64> {
    cloud_base_from_spread(w.air_temp - w.dew_point, TempUnit::Celsius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intensity_round_trip() {
        assert_eq!(intensity_to_kelvin(29315.0), 293.15);
        assert_relative_eq!(kelvin_to_intensity(intensity_to_kelvin(12345.0)), 12345.0);
    }

    #[test]
    fn dry_limit_is_dry_adiabat() {
        assert_relative_eq!(lapse_rate(280.0, 0.0), GRAVITY / SPECIFIC_HEAT_DRY, epsilon = 1e-15);
        for r in [1e-3, 1e-6, 1e-9] {
            assert!(lapse_rate(280.0, r) < dry_lapse_rate());
        }
        assert!((lapse_rate(280.0, 1e-9) - dry_lapse_rate()).abs() < 1e-6);
    }

    #[test]
    fn typical_surface_conditions() {
        let w = WeatherSample { air_temp: 293.15, dew_point: 283.15, pressure: 101_325.0 };
        let g = moist_adiabatic_lapse(&w, SaturationFactor::Reference).unwrap();
        assert!((0.0035..=0.0065).contains(&g), "{g}");
    }

    #[test]
    fn saturated_air_rejected() {
        let w = WeatherSample { air_temp: 300.0, dew_point: 299.0, pressure: 500.0 };
        assert!(moist_adiabatic_lapse(&w, SaturationFactor::Reference).is_err());
    }

    #[test]
    fn lapse_decreases_with_humidity() {
        let mut last = dry_lapse_rate();
        for r in [0.001, 0.005, 0.01, 0.02] {
            let g = lapse_rate(290.0, r);
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn cloud_base_from_spreads() {
        let w = WeatherSample { air_temp: 293.15, dew_point: 283.15, pressure: 1e5 };
        assert_relative_eq!(cloud_base_height(&w).unwrap(), 1219.2, epsilon = 1e-9);
        let zero = WeatherSample { dew_point: 293.15, ..w };
        assert_eq!(cloud_base_height(&zero).unwrap(), 0.0);
        let f = cloud_base_from_spread(18.0, TempUnit::Fahrenheit).unwrap();
        assert_relative_eq!(f / 1219.2, (18.0 / 4.4) / (10.0 / 2.5), epsilon = 1e-12);
        assert!(cloud_base_from_spread(-1.0, TempUnit::Celsius).is_err());
    }
}
