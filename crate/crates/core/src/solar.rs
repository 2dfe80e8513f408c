//! Solar position from local civil time using the day-angle approximations
//! for declination and the equation of time.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// Observation site. Angles in degrees, offset in hours east of GMT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub gmt_offset_hours: f64,
    #[serde(default)]
    pub altitude_m: f64,
}

impl Site {
    pub fn new(latitude_deg: f64, longitude_deg: f64, gmt_offset_hours: f64) -> Result<Self> {
        let site = Site {
            latitude_deg,
            longitude_deg,
            gmt_offset_hours,
            altitude_m: 0.0,
        };
        site.validate()?;
        Ok(site)
    }

    pub fn with_altitude(mut self, altitude_m: f64) -> Self {
        self.altitude_m = altitude_m;
        self
    }

    /// University of New Mexico campus, Albuquerque.
    pub fn unm() -> Self {
        Site {
            latitude_deg: 35.0821,
            longitude_deg: -106.6259,
            gmt_offset_hours: -7.0,
            altitude_m: 1641.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude_deg) || !self.latitude_deg.is_finite() {
            return invalid(format!("latitude {} outside [-90, 90]", self.latitude_deg));
        }
        if !(-180.0..=180.0).contains(&self.longitude_deg) || !self.longitude_deg.is_finite() {
            return invalid(format!("longitude {} outside [-180, 180]", self.longitude_deg));
        }
        if !(-12.0..=14.0).contains(&self.gmt_offset_hours) {
            return invalid(format!("gmt offset {} outside [-12, 14]", self.gmt_offset_hours));
        }
        Ok(())
    }

    /// Local standard time meridian in degrees.
    pub fn lstm_deg(&self) -> f64 {
        15.0 * self.gmt_offset_hours
    }
}

/// Sun position in radians. Azimuth is measured clockwise from North.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunPosition {
    pub elevation: f64,
    pub azimuth: f64,
    pub zenith: f64,
    pub hour_angle: f64,
}

fn check_day(day_of_year: u32) -> Result<()> {
    if !(1..=366).contains(&day_of_year) {
        return domain(format!("day of year {day_of_year} outside [1, 366]"));
    }
    Ok(())
}

/// Day angle B = 360/365 (d - 81), in degrees.
pub fn day_angle_deg(day_of_year: u32) -> f64 {
    360.0 / 365.0 * (day_of_year as f64 - 81.0)
}

/// Equation of time in minutes.
pub fn equation_of_time(day_of_year: u32) -> Result<f64> {
    check_day(day_of_year)?;
    let b = day_angle_deg(day_of_year).to_radians();
    Ok(9.87 * (2.0 * b).sin() - 7.53 * b.cos() - 1.5 * b.sin())
}

/// Solar declination in radians.
pub fn declination(day_of_year: u32) -> Result<f64> {
    check_day(day_of_year)?;
    Ok(23.45f64.to_radians() * day_angle_deg(day_of_year).to_radians().sin())
}

/// Time correction factor in minutes.
pub fn time_correction(site: &Site, day_of_year: u32) -> Result<f64> {
    Ok(4.0 * (site.longitude_deg - site.lstm_deg()) + equation_of_time(day_of_year)?)
}

/// Hour angle in degrees for local time `lt_hours`, wrapped to (-180, 180].
pub fn hour_angle_deg(site: &Site, day_of_year: u32, lt_hours: f64) -> Result<f64> {
    let lst = lt_hours + time_correction(site, day_of_year)? / 60.0;
    Ok(wrap_deg(15.0 * (lst - 12.0)))
}

fn wrap_deg(a: f64) -> f64 {
    let mut w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        w = 180.0;
    }
    w
}

/// Elevation and azimuth (radians) from declination, latitude and hour
/// angle, all in radians.
pub fn solar_angles(declination: f64, latitude: f64, hour_angle: f64) -> (f64, f64) {
    let sin_el = declination.sin() * latitude.sin()
        + declination.cos() * latitude.cos() * hour_angle.cos();
    let elevation = sin_el.clamp(-1.0, 1.0).asin();
    let cos_el = elevation.cos();
    let mut azimuth = if cos_el < 1e-12 {
        0.0
    } else {
        let c = (declination.sin() * latitude.cos()
            - declination.cos() * latitude.sin() * hour_angle.cos())
            / cos_el;
        c.clamp(-1.0, 1.0).acos()
    };
    if hour_angle > 0.0 {
        azimuth = std::f64::consts::TAU - azimuth;
    }
    if azimuth >= std::f64::consts::TAU {
        azimuth -= std::f64::consts::TAU;
    }
    (elevation, azimuth)
}

/// Local civil time at the site: (day of year, local time in hours).
pub fn local_time(site: &Site, instant: DateTime<Utc>) -> (u32, f64) {
    let shifted = instant + chrono::Duration::milliseconds((site.gmt_offset_hours * 3.6e6) as i64);
    let naive = shifted.naive_utc();
    let lt = naive.hour() as f64
        + naive.minute() as f64 / 60.0
        + (naive.second() as f64 + naive.nanosecond() as f64 * 1e-9) / 3600.0;
    (naive.ordinal(), lt)
}

pub fn sun_position(site: &Site, instant: DateTime<Utc>) -> Result<SunPosition> {
    site.validate()?;
    let (day, lt) = local_time(site, instant);
    sun_position_local(site, day, lt)
}

pub fn sun_position_unix(site: &Site, unix_seconds: f64) -> Result<SunPosition> {
    let secs = unix_seconds.floor();
    let nanos = ((unix_seconds - secs) * 1e9).round() as u32;
    let instant = DateTime::<Utc>::from_timestamp(secs as i64, nanos.min(999_999_999))
        .ok_or_else(|| Error::InvalidInput(format!("timestamp {unix_seconds} out of range")))?;
    sun_position(site, instant)
}

/// Sun position for local time `lt_hours` on `day_of_year`.
pub fn sun_position_local(site: &Site, day_of_year: u32, lt_hours: f64) -> Result<SunPosition> {
    let hra = hour_angle_deg(site, day_of_year, lt_hours)?.to_radians();
    let dec = declination(day_of_year)?;
    let (elevation, azimuth) = solar_angles(dec, site.latitude_deg.to_radians(), hra);
    Ok(SunPosition {
        elevation,
        azimuth,
        zenith: std::f64::consts::FRAC_PI_2 - elevation,
        hour_angle: hra,
    })
}

/// Sunrise and sunset in local time hours.
pub fn sunrise_sunset(site: &Site, day_of_year: u32) -> Result<(f64, f64)> {
    site.validate()?;
    let dec = declination(day_of_year)?;
    let lat = site.latitude_deg.to_radians();
    let arg = -(lat.sin() * dec.sin()) / (lat.cos() * dec.cos());
    if !(-1.0..=1.0).contains(&arg) || !arg.is_finite() {
        return Err(Error::NoSunrise {
            latitude_deg: site.latitude_deg,
            day_of_year,
        });
    }
    let half = arg.acos().to_degrees() / 15.0;
    let tc = time_correction(site, day_of_year)? / 60.0;
    Ok((12.0 - half - tc, 12.0 + half - tc))
}
