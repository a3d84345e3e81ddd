//! Irradiance and generation time series: CSV ingestion, solar position and
//! a seeded synthetic-site generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{
    DateTime, Datelike, Duration, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solar_model::{
    ac_power, incidence_angle, plane_of_array_irradiance_with, Attenuation, IrradianceComponents,
    PanelParams, SolarPosition, SurfaceOrientation,
};

pub const IRRADIANCE_HEADER: [&str; 7] = [
    "timestamp",
    "ghi",
    "dni",
    "dhi",
    "solar_zenith_deg",
    "solar_azimuth_deg",
    "air_temp_c",
];
pub const GENERATION_HEADER: [&str; 2] = ["timestamp", "power_w"];

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotonicTimestamps { row: usize },
    #[error("sampling interval is not uniform at row {row}")]
    NonUniformSampling { row: usize },
    #[error("empty profile")]
    EmptyProfile,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Latitude/longitude in degrees, longitude positive east.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
}

impl Location {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.latitude) && (-180.0..=180.0).contains(&self.longitude)
    }

    /// Whole-hour standard-time offset nearest to the site's mean solar time.
    /// Calendar days of a site are cut at local midnight of this offset so the
    /// daylight period is never split.
    pub fn standard_offset(&self) -> FixedOffset {
        let hours = (self.longitude / 15.0).round() as i32;
        FixedOffset::east_opt(hours * 3600).expect("offset within ±12h")
    }

    pub fn local_date(&self, timestamp: DateTime<Utc>) -> NaiveDate {
        timestamp
            .with_timezone(&self.standard_offset())
            .date_naive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrradianceRecord {
    pub timestamp: DateTime<Utc>,
    pub ghi: f64,
    pub dni: f64,
    pub dhi: f64,
    pub solar_zenith_deg: f64,
    pub solar_azimuth_deg: f64,
    pub air_temp_c: f64,
}

impl IrradianceRecord {
    pub fn sun(&self) -> SolarPosition {
        SolarPosition {
            zenith_deg: self.solar_zenith_deg,
            azimuth_deg: self.solar_azimuth_deg,
        }
    }

    pub fn is_daylight(&self) -> bool {
        self.solar_zenith_deg < 90.0
    }

    /// Plane-of-array irradiance for a panel with the given orientation.
    pub fn poa(&self, surface: SurfaceOrientation, albedo: f64, attenuation: Attenuation) -> f64 {
        let theta = incidence_angle(self.sun(), surface);
        let irr =
            IrradianceComponents::isotropic(self.dni, self.dhi, self.ghi, surface.tilt_deg, albedo);
        plane_of_array_irradiance_with(theta, irr, attenuation)
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in [("ghi", self.ghi), ("dni", self.dni), ("dhi", self.dhi)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(0.0..180.0).contains(&self.solar_zenith_deg) {
            return Err(format!(
                "solar_zenith_deg = {} outside [0, 180)",
                self.solar_zenith_deg
            ));
        }
        if !(0.0..360.0).contains(&self.solar_azimuth_deg) {
            return Err(format!(
                "solar_azimuth_deg = {} outside [0, 360)",
                self.solar_azimuth_deg
            ));
        }
        if !self.air_temp_c.is_finite() {
            return Err("air_temp_c must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp: DateTime<Utc>,
    pub power_w: f64,
}

/// AC generation of one site, sampled on a uniform lattice (gaps allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub site_id: String,
    pub location: Location,
    pub samples: Vec<PowerSample>,
    pub resolution_per_day: usize,
}

impl PowerProfile {
    /// Builds a profile, checking ordering, sign and lattice regularity.
    pub fn new(
        site_id: impl Into<String>,
        location: Location,
        samples: Vec<PowerSample>,
    ) -> Result<Self, DataError> {
        if samples.is_empty() {
            return Err(DataError::EmptyProfile);
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.power_w.is_finite() || s.power_w < 0.0 {
                return Err(DataError::MalformedRow {
                    row: i + 1,
                    reason: format!("power_w = {} must be finite and >= 0", s.power_w),
                });
            }
        }
        let timestamps: Vec<_> = samples.iter().map(|s| s.timestamp).collect();
        check_increasing(&timestamps)?;
        let interval = sampling_interval(&timestamps)?;
        Ok(Self {
            site_id: site_id.into(),
            location,
            resolution_per_day: (SECONDS_PER_DAY / interval) as usize,
            samples,
        })
    }

    pub fn interval(&self) -> Duration {
        Duration::seconds(SECONDS_PER_DAY / self.resolution_per_day as i64)
    }
}

fn check_increasing(timestamps: &[DateTime<Utc>]) -> Result<(), DataError> {
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(DataError::NonMonotonicTimestamps { row: i + 2 });
        }
    }
    Ok(())
}

/// Base interval of a lattice in seconds: the smallest gap, which must divide
/// every other gap and one day.
fn sampling_interval(timestamps: &[DateTime<Utc>]) -> Result<i64, DataError> {
    if timestamps.len() < 2 {
        return Ok(SECONDS_PER_DAY);
    }
    let gaps: Vec<i64> = timestamps
        .windows(2)
        .map(|w| (w[1] - w[0]).num_seconds())
        .collect();
    let base = *gaps.iter().min().expect("nonempty");
    if base <= 0 || SECONDS_PER_DAY % base != 0 {
        return Err(DataError::NonUniformSampling { row: 2 });
    }
    for (i, g) in gaps.iter().enumerate() {
        if g % base != 0 {
            return Err(DataError::NonUniformSampling { row: i + 2 });
        }
    }
    Ok(base)
}

// ---------------------------------------------------------------------------
// CSV

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&t));
        }
    }
    Err(format!("unparseable timestamp `{s}`"))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn find_column(headers: &csv::StringRecord, aliases: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.to_ascii_lowercase();
        aliases.iter().any(|a| h == *a)
    })
}

fn require_column(headers: &csv::StringRecord, aliases: &[&str]) -> Result<usize, DataError> {
    find_column(headers, aliases).ok_or_else(|| DataError::MissingColumn(aliases[0].to_string()))
}

fn field_f64(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    row: usize,
) -> Result<f64, DataError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<f64>().map_err(|_| DataError::MalformedRow {
        row,
        reason: format!("{name} = `{raw}` is not a number"),
    })
}

/// Timestamp columns: either one ISO-8601 column, or NSRDB-style
/// Year/Month/Day/Hour/Minute.
enum TimeColumns {
    Iso(usize),
    Split([usize; 5]),
}

impl TimeColumns {
    fn locate(headers: &csv::StringRecord) -> Result<Self, DataError> {
        if let Some(i) = find_column(headers, &["timestamp", "time", "datetime", "time_utc"]) {
            return Ok(Self::Iso(i));
        }
        let parts = ["year", "month", "day", "hour", "minute"];
        let found: Vec<_> = parts.iter().map(|p| find_column(headers, &[p])).collect();
        if found.iter().all(Option::is_some) {
            let idx: Vec<usize> = found.into_iter().flatten().collect();
            return Ok(Self::Split([idx[0], idx[1], idx[2], idx[3], idx[4]]));
        }
        Err(DataError::MissingColumn("timestamp".into()))
    }

    fn parse(&self, rec: &csv::StringRecord, row: usize) -> Result<DateTime<Utc>, DataError> {
        let malformed = |reason: String| DataError::MalformedRow { row, reason };
        match self {
            Self::Iso(i) => parse_timestamp(rec.get(*i).unwrap_or("")).map_err(malformed),
            Self::Split(idx) => {
                let mut v = [0u32; 5];
                for (k, &i) in idx.iter().enumerate() {
                    let raw = rec.get(i).unwrap_or("");
                    v[k] = raw
                        .parse::<f64>()
                        .ok()
                        .filter(|x| *x >= 0.0 && x.fract() == 0.0)
                        .map(|x| x as u32)
                        .ok_or_else(|| malformed(format!("bad date component `{raw}`")))?;
                }
                NaiveDate::from_ymd_opt(v[0] as i32, v[1], v[2])
                    .and_then(|d| d.and_hms_opt(v[3], v[4], 0))
                    .map(|t| Utc.from_utc_datetime(&t))
                    .ok_or_else(|| malformed("invalid calendar date".into()))
            }
        }
    }
}

pub fn read_irradiance<R: Read>(input: R) -> Result<Vec<IrradianceRecord>, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let time = TimeColumns::locate(&headers)?;
    let ghi = require_column(&headers, &["ghi", "clearsky ghi"])?;
    let dni = require_column(&headers, &["dni", "clearsky dni"])?;
    let dhi = require_column(&headers, &["dhi", "clearsky dhi"])?;
    let zen = require_column(
        &headers,
        &["solar_zenith_deg", "solar zenith angle", "zenith"],
    )?;
    let azi = require_column(
        &headers,
        &["solar_azimuth_deg", "solar azimuth angle", "azimuth"],
    )?;
    let temp = require_column(&headers, &["air_temp_c", "temperature", "temp_air"])?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let r = IrradianceRecord {
            timestamp: time.parse(&rec, row)?,
            ghi: field_f64(&rec, ghi, "ghi", row)?,
            dni: field_f64(&rec, dni, "dni", row)?,
            dhi: field_f64(&rec, dhi, "dhi", row)?,
            solar_zenith_deg: field_f64(&rec, zen, "solar_zenith_deg", row)?,
            solar_azimuth_deg: field_f64(&rec, azi, "solar_azimuth_deg", row)?,
            air_temp_c: field_f64(&rec, temp, "air_temp_c", row)?,
        };
        r.validate()
            .map_err(|reason| DataError::MalformedRow { row, reason })?;
        out.push(r);
    }
    let ts: Vec<_> = out.iter().map(|r| r.timestamp).collect();
    check_increasing(&ts)?;
    Ok(out)
}

pub fn load_irradiance_csv(path: impl AsRef<Path>) -> Result<Vec<IrradianceRecord>, DataError> {
    read_irradiance(File::open(path)?)
}

pub fn read_generation<R: Read>(
    input: R,
    site_id: &str,
    location: Location,
) -> Result<PowerProfile, DataError> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let time = TimeColumns::locate(&headers)?;
    let power = require_column(&headers, &["power_w", "power", "ac_power"])?;
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        samples.push(PowerSample {
            timestamp: time.parse(&rec, row)?,
            power_w: field_f64(&rec, power, "power_w", row)?,
        });
    }
    PowerProfile::new(site_id, location, samples)
}

pub fn load_generation_csv(
    path: impl AsRef<Path>,
    site_id: &str,
    location: Location,
) -> Result<PowerProfile, DataError> {
    read_generation(File::open(path)?, site_id, location)
}

fn write_comment<W: Write>(out: &mut W, comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

/// Writes records with shortest round-trip float formatting, so a subsequent
/// read reproduces every value bit for bit.
pub fn write_irradiance<W: Write>(
    mut out: W,
    records: &[IrradianceRecord],
    comment: Option<&str>,
) -> Result<(), DataError> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(IRRADIANCE_HEADER)?;
    for r in records {
        w.write_record([
            format_timestamp(r.timestamp),
            r.ghi.to_string(),
            r.dni.to_string(),
            r.dhi.to_string(),
            r.solar_zenith_deg.to_string(),
            r.solar_azimuth_deg.to_string(),
            r.air_temp_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_generation<W: Write>(
    mut out: W,
    profile: &PowerProfile,
    comment: Option<&str>,
) -> Result<(), DataError> {
    write_comment(&mut out, comment)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GENERATION_HEADER)?;
    for s in &profile.samples {
        w.write_record([format_timestamp(s.timestamp), s.power_w.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Solar position

/// Sun position from the NOAA declination / equation-of-time series
/// (Spencer's Fourier fit). Typically within a few tenths of a degree of a
/// full ephemeris for mid latitudes; no refraction correction.
pub fn solar_position(location: Location, timestamp: DateTime<Utc>) -> SolarPosition {
    let days_in_year = if NaiveDate::from_ymd_opt(timestamp.year(), 2, 29).is_some() {
        366.0
    } else {
        365.0
    };
    let hour = timestamp.hour() as f64
        + timestamp.minute() as f64 / 60.0
        + timestamp.second() as f64 / 3600.0;
    let g = 2.0 * std::f64::consts::PI / days_in_year
        * (timestamp.ordinal0() as f64 + (hour - 12.0) / 24.0);

    let eqtime_min = 229.18
        * (0.000075 + 0.001868 * g.cos()
            - 0.032077 * g.sin()
            - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();

    let true_solar_min = hour * 60.0 + eqtime_min + 4.0 * location.longitude;
    let hour_angle = (true_solar_min / 4.0 - 180.0).to_radians();
    let lat = location.latitude.to_radians();

    let east = -decl.cos() * hour_angle.sin();
    let north = decl.sin() * lat.cos() - decl.cos() * hour_angle.cos() * lat.sin();
    let up = decl.sin() * lat.sin() + decl.cos() * hour_angle.cos() * lat.cos();

    let zenith = up.clamp(-1.0, 1.0).acos().to_degrees();
    let azimuth = east.atan2(north).to_degrees().rem_euclid(360.0);
    SolarPosition {
        zenith_deg: zenith.min(179.999_999),
        // rem_euclid can return 360.0 for tiny negative inputs
        azimuth_deg: if azimuth >= 360.0 { 0.0 } else { azimuth },
    }
}

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub orientation: SurfaceOrientation,
    #[serde(default)]
    pub panel: PanelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
}

impl DateRange {
    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

/// Per-day sky condition applied on top of the clear-sky irradiance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CloudModel {
    #[default]
    Clear,
    /// Listed days have no beam component; what remains is diffuse.
    Overcast {
        dates: Vec<NaiveDate>,
        #[serde(default = "default_overcast_transmittance")]
        diffuse_transmittance: f64,
    },
    /// Each day is cloudy with the given probability; on cloudy days every
    /// sample draws a beam transmittance uniformly from `[0, beam_transmittance_max)`,
    /// and part of the blocked beam reappears as diffuse light.
    Stochastic {
        cloudy_probability: f64,
        #[serde(default = "default_beam_max")]
        beam_transmittance_max: f64,
    },
}

fn default_overcast_transmittance() -> f64 {
    0.3
}
fn default_beam_max() -> f64 {
    0.6
}

/// Air temperature as a daily sinusoid peaking at 15:00 local time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub mean_c: f64,
    #[serde(default)]
    pub diurnal_amplitude_c: f64,
}

impl Default for TemperatureModel {
    fn default() -> Self {
        Self {
            mean_c: 20.0,
            diurnal_amplitude_c: 0.0,
        }
    }
}

fn default_resolution() -> usize {
    24
}
fn default_albedo() -> f64 {
    0.2
}
fn default_diffuse_fraction() -> f64 {
    0.15
}
fn default_site_id() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    #[serde(default = "default_site_id")]
    pub site_id: String,
    pub ground_truth: GroundTruth,
    pub location: Location,
    pub date_range: DateRange,
    /// Standard deviation of the multiplicative noise on power.
    pub noise_std: f64,
    pub cloud_model: CloudModel,
    pub rng_seed: u64,
    #[serde(default = "default_resolution")]
    pub resolution_per_day: usize,
    #[serde(default)]
    pub temperature: TemperatureModel,
    /// Cell temperature minus air temperature, °C.
    #[serde(default)]
    pub cell_temp_offset_c: f64,
    #[serde(default = "default_albedo")]
    pub albedo: f64,
    /// Share of clear-sky GHI that arrives as diffuse light.
    #[serde(default = "default_diffuse_fraction")]
    pub diffuse_fraction: f64,
    #[serde(default)]
    pub attenuation: Attenuation,
}

impl SyntheticScenario {
    /// A clear-sky year with default panel parameters.
    pub fn clear_year(
        location: Location,
        year: i32,
        orientation: SurfaceOrientation,
        noise_std: f64,
        rng_seed: u64,
    ) -> Self {
        Self {
            site_id: default_site_id(),
            ground_truth: GroundTruth {
                orientation,
                panel: PanelParams::default(),
            },
            location,
            date_range: DateRange {
                start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
                end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
            },
            noise_std,
            cloud_model: CloudModel::Clear,
            rng_seed,
            resolution_per_day: default_resolution(),
            temperature: TemperatureModel::default(),
            cell_temp_offset_c: 0.0,
            albedo: default_albedo(),
            diffuse_fraction: default_diffuse_fraction(),
            attenuation: Attenuation::Step,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| DataError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidScenario(m.to_string()));
        if !self.ground_truth.orientation.is_valid() {
            return bad("ground_truth.orientation out of range");
        }
        if !self.ground_truth.panel.is_valid() {
            return bad("ground_truth.panel: nameplate_w must be > 0 and derate in (0, 1]");
        }
        if !self.location.is_valid() {
            return bad("location out of range");
        }
        if self.date_range.end < self.date_range.start {
            return bad("date_range.end precedes date_range.start");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0");
        }
        if self.resolution_per_day == 0 || SECONDS_PER_DAY % self.resolution_per_day as i64 != 0 {
            return bad("resolution_per_day must divide 86400");
        }
        if !(0.0..1.0).contains(&self.diffuse_fraction) {
            return bad("diffuse_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.albedo) {
            return bad("albedo must be in [0, 1]");
        }
        match &self.cloud_model {
            CloudModel::Stochastic {
                cloudy_probability,
                beam_transmittance_max,
            } if !(0.0..=1.0).contains(cloudy_probability)
                || !(0.0..=1.0).contains(beam_transmittance_max) =>
            {
                bad("cloud_model probabilities must be in [0, 1]")
            }
            CloudModel::Overcast {
                diffuse_transmittance,
                ..
            } if !(0.0..=1.0).contains(diffuse_transmittance) => {
                bad("cloud_model.diffuse_transmittance must be in [0, 1]")
            }
            _ => Ok(()),
        }
    }

    /// UTC sample instants, starting at local midnight of the first day.
    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        let offset = self.location.standard_offset();
        let step = SECONDS_PER_DAY / self.resolution_per_day as i64;
        let mut out = Vec::new();
        for day in self.date_range.days() {
            let midnight = offset
                .from_local_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"))
                .single()
                .expect("fixed offset is unambiguous")
                .with_timezone(&Utc);
            for k in 0..self.resolution_per_day as i64 {
                out.push(midnight + Duration::seconds(k * step));
            }
        }
        out
    }
}

/// Haurwitz clear-sky global horizontal irradiance, W/m².
pub fn haurwitz_ghi(zenith_deg: f64) -> f64 {
    let cz = zenith_deg.to_radians().cos();
    if cz <= 0.0 {
        0.0
    } else {
        1098.0 * cz * (-0.057 / cz).exp()
    }
}

/// Clear-sky (ghi, dni, dhi) with a fixed diffuse fraction; satisfies
/// `ghi = dni·cos z + dhi`.
pub fn clear_sky(zenith_deg: f64, diffuse_fraction: f64) -> (f64, f64, f64) {
    let ghi = haurwitz_ghi(zenith_deg);
    if ghi <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let cz = zenith_deg.to_radians().cos();
    let dhi = diffuse_fraction * ghi;
    let dni = (ghi - dhi) / cz;
    (ghi, dni, dhi)
}

/// Noise-free generation of a panel for one irradiance record.
pub fn modeled_power(
    record: &IrradianceRecord,
    truth: &GroundTruth,
    cell_temp_offset_c: f64,
    albedo: f64,
    attenuation: Attenuation,
) -> f64 {
    let poa = record.poa(truth.orientation, albedo, attenuation);
    ac_power(poa, record.air_temp_c + cell_temp_offset_c, &truth.panel)
}

/// Generates irradiance and generation series for a scenario. Identical
/// scenarios give bit-identical output.
pub fn synthesize(
    scenario: &SyntheticScenario,
) -> Result<(Vec<IrradianceRecord>, PowerProfile), DataError> {
    scenario.validate()?;
    let mut sky_rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    noise_rng.set_stream(1);

    let overcast: BTreeSet<NaiveDate> = match &scenario.cloud_model {
        CloudModel::Overcast { dates, .. } => dates.iter().copied().collect(),
        _ => BTreeSet::new(),
    };
    let offset = scenario.location.standard_offset();

    let mut records = Vec::new();
    let mut samples = Vec::new();
    let mut current_day: Option<NaiveDate> = None;
    let mut cloudy_today = false;

    for ts in scenario.timestamps() {
        let local = ts.with_timezone(&offset);
        let day = local.date_naive();
        if current_day != Some(day) {
            current_day = Some(day);
            cloudy_today = match &scenario.cloud_model {
                CloudModel::Stochastic {
                    cloudy_probability, ..
                } => sky_rng.random::<f64>() < *cloudy_probability,
                _ => false,
            };
        }

        let sun = solar_position(scenario.location, ts);
        let (mut ghi, mut dni, mut dhi) = clear_sky(sun.zenith_deg, scenario.diffuse_fraction);
        let cz = sun.zenith_deg.to_radians().cos().max(0.0);
        match &scenario.cloud_model {
            CloudModel::Overcast {
                diffuse_transmittance,
                ..
            } if overcast.contains(&day) => {
                ghi *= diffuse_transmittance;
                dni = 0.0;
                dhi = ghi;
            }
            CloudModel::Stochastic {
                beam_transmittance_max,
                ..
            } if cloudy_today => {
                let beam = sky_rng.random::<f64>() * beam_transmittance_max;
                let blocked = (1.0 - beam) * dni * cz;
                dni *= beam;
                dhi += 0.3 * blocked;
                ghi = dni * cz + dhi;
            }
            _ => {}
        }

        let local_hour = local.hour() as f64 + local.minute() as f64 / 60.0;
        let air_temp_c = scenario.temperature.mean_c
            + scenario.temperature.diurnal_amplitude_c
                * (2.0 * std::f64::consts::PI * (local_hour - 9.0) / 24.0).sin();

        let record = IrradianceRecord {
            timestamp: ts,
            ghi,
            dni,
            dhi,
            solar_zenith_deg: sun.zenith_deg,
            solar_azimuth_deg: sun.azimuth_deg,
            air_temp_c,
        };
        let clean = modeled_power(
            &record,
            &scenario.ground_truth,
            scenario.cell_temp_offset_c,
            scenario.albedo,
            scenario.attenuation,
        );
        let power_w = if scenario.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            (clean * (1.0 + scenario.noise_std * z)).max(0.0)
        } else {
            clean
        };
        records.push(record);
        samples.push(PowerSample {
            timestamp: ts,
            power_w,
        });
    }

    let profile = PowerProfile::new(scenario.site_id.clone(), scenario.location, samples)?;
    Ok((records, profile))
}
