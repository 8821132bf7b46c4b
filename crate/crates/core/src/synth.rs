//! Synthetic hourly weather and heat-demand generator.
//!
//! Weather follows seasonal and diurnal cycles with AR(1) deviations; demand
//! is a heating-degree model driven by an effective temperature that wind
//! lowers and solar irradiance raises.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_csv, HourlyRecord, TimeSeriesTable};
use crate::error::{Error, Result};

/// Hourly demand multipliers for a working day, midnight first.
pub const WORKDAY_PROFILE: [f64; 24] = [
    0.90, 0.89, 0.88, 0.88, 0.90, 0.96, 1.06, 1.12, 1.10, 1.05, 1.02, 1.00, 0.99, 0.98, 0.98,
    0.99, 1.01, 1.04, 1.05, 1.03, 1.00, 0.97, 0.94, 0.92,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_year: i32,
    pub years: u32,
    /// MW.
    pub base_load: f64,
    /// MW per degree of effective temperature below `reference_temp`.
    pub temp_coefficient: f64,
    /// Degrees of effective-temperature drop per m/s of wind.
    pub wind_chill_coefficient: f64,
    /// Degrees of effective-temperature gain per kW/m² of irradiance.
    pub solar_gain_coefficient: f64,
    /// MW.
    pub noise_std: f64,
    /// MW.
    pub demand_floor: f64,
    pub social_profile: Vec<f64>,
    pub reference_temp: f64,
    pub temp_mean: f64,
    pub temp_annual_amplitude: f64,
    pub temp_diurnal_amplitude: f64,
    pub temp_persistence: f64,
    /// Stationary standard deviation of the fast temperature AR(1) deviation.
    pub temp_anomaly_std: f64,
    /// Hourly persistence of the slow (multi-day weather system) temperature deviation.
    pub synoptic_persistence: f64,
    pub synoptic_std: f64,
    /// Standard deviation of a per-year temperature offset.
    pub annual_anomaly_std: f64,
    pub wind_mean: f64,
    pub wind_persistence: f64,
    pub wind_std: f64,
    pub latitude_deg: f64,
    /// Mean clearness: fraction of clear-sky irradiance reaching the ground.
    pub clearness_mean: f64,
    pub clearness_persistence: f64,
    pub clearness_std: f64,
    /// Clear-sky direct irradiance at normal incidence, W/m².
    pub peak_irradiance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2008,
            start_year: 2008,
            years: 4,
            base_load: 70.0,
            temp_coefficient: 12.5,
            wind_chill_coefficient: 0.7,
            solar_gain_coefficient: 6.0,
            noise_std: 3.5,
            demand_floor: 20.0,
            social_profile: WORKDAY_PROFILE.to_vec(),
            reference_temp: 17.0,
            temp_mean: 6.5,
            temp_annual_amplitude: 10.0,
            temp_diurnal_amplitude: 3.0,
            temp_persistence: 0.95,
            temp_anomaly_std: 1.5,
            synoptic_persistence: 0.995,
            synoptic_std: 3.0,
            annual_anomaly_std: 1.5,
            wind_mean: 4.0,
            wind_persistence: 0.8,
            wind_std: 2.0,
            latitude_deg: 59.6,
            clearness_mean: 0.55,
            clearness_persistence: 0.85,
            clearness_std: 0.3,
            peak_irradiance: 850.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.years < 1 {
            return bad("years must be at least 1");
        }
        if !(self.base_load > 0.0) {
            return bad("base_load must be positive");
        }
        if [
            self.noise_std,
            self.temp_anomaly_std,
            self.wind_std,
            self.clearness_std,
            self.synoptic_std,
            self.annual_anomaly_std,
        ]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return bad("standard deviations must be non-negative");
        }
        if self.social_profile.len() != 24 || self.social_profile.iter().any(|&p| !(p > 0.0)) {
            return bad("social_profile needs 24 positive multipliers");
        }
        if !(self.demand_floor >= 0.0) {
            return bad("demand_floor must be non-negative");
        }
        for (name, phi) in [
            ("temp", self.temp_persistence),
            ("wind", self.wind_persistence),
            ("clearness", self.clearness_persistence),
            ("synoptic", self.synoptic_persistence),
        ] {
            if !(0.0..1.0).contains(&phi) {
                return bad(&format!("{name}_persistence must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// First and last calendar dates covered.
    pub fn date_span(&self) -> (NaiveDate, NaiveDate) {
        let start = NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year");
        let end = NaiveDate::from_ymd_opt(self.start_year + self.years as i32 - 1, 12, 31)
            .expect("valid year");
        (start, end)
    }
}

/// Sine of the solar elevation angle.
pub fn solar_elevation_sin(latitude_deg: f64, day_of_year: u32, hour: u32) -> f64 {
    let lat = latitude_deg.to_radians();
    let decl = (23.44f64).to_radians() * (2.0 * PI * (284.0 + day_of_year as f64) / 365.0).sin();
    let hour_angle = (15.0 * (hour as f64 - 12.0)).to_radians();
    lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()
}

fn ar1_innovation(persistence: f64, stationary_std: f64) -> f64 {
    stationary_std * (1.0 - persistence * persistence).sqrt()
}

pub fn generate(cfg: &SynthConfig) -> Result<TimeSeriesTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let temp_innov = ar1_innovation(cfg.temp_persistence, cfg.temp_anomaly_std);
    let wind_innov = ar1_innovation(cfg.wind_persistence, cfg.wind_std);
    let cloud_innov = ar1_innovation(cfg.clearness_persistence, cfg.clearness_std);
    let synoptic_innov = ar1_innovation(cfg.synoptic_persistence, cfg.synoptic_std);

    let (start, end) = cfg.date_span();
    let t0 = start.and_hms_opt(0, 0, 0).expect("midnight");
    let hours = ((end - start).num_days() + 1) * 24;

    let mut temp_dev = cfg.temp_anomaly_std * std_normal.sample(&mut rng);
    let mut wind_dev = cfg.wind_std * std_normal.sample(&mut rng);
    let mut cloud_dev = cfg.clearness_std * std_normal.sample(&mut rng);
    let mut synoptic_dev = cfg.synoptic_std * std_normal.sample(&mut rng);
    let mut year_offset = 0.0;
    let mut records = Vec::with_capacity(hours as usize);
    for h in 0..hours {
        let ts = t0 + Duration::hours(h);
        let doy = ts.ordinal();
        let hour = ts.hour();
        if doy == 1 && hour == 0 {
            year_offset = cfg.annual_anomaly_std * std_normal.sample(&mut rng);
        }
        temp_dev = cfg.temp_persistence * temp_dev + temp_innov * std_normal.sample(&mut rng);
        synoptic_dev =
            cfg.synoptic_persistence * synoptic_dev + synoptic_innov * std_normal.sample(&mut rng);
        let season = -(2.0 * PI * (doy as f64 - 20.0) / 365.25).cos();
        let diurnal = (2.0 * PI * (hour as f64 - 15.0) / 24.0).cos();
        let temp_c = cfg.temp_mean
            + cfg.temp_annual_amplitude * season
            + cfg.temp_diurnal_amplitude * diurnal
            + year_offset
            + synoptic_dev
            + temp_dev;

        wind_dev = cfg.wind_persistence * wind_dev + wind_innov * std_normal.sample(&mut rng);
        let wind_ms = (cfg.wind_mean + wind_dev).max(0.0);

        cloud_dev =
            cfg.clearness_persistence * cloud_dev + cloud_innov * std_normal.sample(&mut rng);
        let clearness = (cfg.clearness_mean + cloud_dev).clamp(0.0, 1.0);
        let elevation = solar_elevation_sin(cfg.latitude_deg, doy, hour);
        let solar_wm2 = if elevation > 0.0 {
            cfg.peak_irradiance * elevation * clearness
        } else {
            0.0
        };

        let effective = temp_c - cfg.wind_chill_coefficient * wind_ms
            + cfg.solar_gain_coefficient * solar_wm2 / 1000.0;
        let heating = cfg.temp_coefficient * (cfg.reference_temp - effective).max(0.0);
        let noise = cfg.noise_std * std_normal.sample(&mut rng);
        let demand_mw =
            ((cfg.base_load + heating) * cfg.social_profile[hour as usize] + noise).max(cfg.demand_floor);

        records.push(HourlyRecord {
            timestamp: ts,
            demand_mw,
            temp_c,
            solar_wm2,
            wind_ms,
        });
    }
    TimeSeriesTable::from_records(records)
}

/// Writes `table` in the canonical CSV schema.
pub fn export_csv(table: &TimeSeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(table, std::io::BufWriter::new(file))
}
